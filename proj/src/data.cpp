#include "seglife/data.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace seglife {

Tensor make_batch(const std::vector<const LabelledSlice*>& slices) {
    if (slices.empty()) throw ContractError("make_batch: empty slice list");
    const int H = slices[0]->height, W = slices[0]->width;
    Tensor t({static_cast<int>(slices.size()), 1, H, W});
    for (size_t n = 0; n < slices.size(); ++n) {
        if (slices[n]->height != H || slices[n]->width != W)
            throw ShapeError("make_batch: mixed slice sizes");
        std::copy(slices[n]->image.begin(), slices[n]->image.end(),
                  t.data.begin() + static_cast<long>(n) * H * W);
    }
    return t;
}

std::vector<uint8_t> make_batch_labels(const std::vector<const LabelledSlice*>& slices) {
    std::vector<uint8_t> out;
    for (const auto* s : slices) out.insert(out.end(), s->labels.begin(), s->labels.end());
    return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'E', 'G', 'D', 'A', 'T', 'A', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

struct Reader {
    std::ifstream in;
    std::string path;
    size_t offset = 0;

    void read(void* dst, size_t n, const char* what) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw TruncatedError(path + ": unexpected end while reading " + what + " at offset " +
                                 std::to_string(offset));
        offset += n;
    }
    uint32_t u32(const char* what) {
        uint32_t v;
        read(&v, 4, what);
        return v;
    }
    int32_t i32(const char* what) {
        int32_t v;
        read(&v, 4, what);
        return v;
    }
};

void write_record(std::ostream& os, const LabelledSlice& s) {
    std::vector<char> buf;
    buf.resize(s.image.size() * 4 + s.labels.size());
    for (size_t i = 0; i < s.image.size(); ++i) {
        const float f = static_cast<float>(s.image[i]);
        std::memcpy(buf.data() + i * 4, &f, 4);
    }
    std::memcpy(buf.data() + s.image.size() * 4, s.labels.data(), s.labels.size());
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    put_u32(os, crc);
}

LabelledSlice read_record(Reader& r, int H, int W, int K, int domain) {
    const size_t n = static_cast<size_t>(H) * W;
    std::vector<char> buf(n * 5);
    r.read(buf.data(), buf.size(), "record");
    const uint32_t stored = r.u32("record checksum");
    const uint32_t actual = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    if (stored != actual)
        throw ChecksumError(r.path + ": record checksum mismatch at offset " + std::to_string(r.offset));

    LabelledSlice s;
    s.height = H;
    s.width = W;
    s.domain = domain;
    s.image.resize(n);
    s.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, buf.data() + i * 4, 4);
        s.image[i] = static_cast<double>(f);
    }
    std::memcpy(s.labels.data(), buf.data() + n * 4, n);
    for (uint8_t l : s.labels)
        if (l >= K)
            throw FormatError(r.path + ": label value " + std::to_string(int(l)) +
                              " >= declared class count " + std::to_string(K));
    return s;
}

} // namespace

void write_dataset(const std::string& path, const DomainDataset& ds) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    int H = 0, W = 0;
    const LabelledSlice* any = !ds.train.empty()  ? &ds.train[0]
                               : !ds.val.empty()  ? &ds.val[0]
                               : !ds.test.empty() ? &ds.test[0]
                                                  : nullptr;
    if (!any) throw ContractError("write_dataset: dataset has no slices");
    H = any->height;
    W = any->width;

    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(H));
    put_u32(os, static_cast<uint32_t>(W));
    put_u32(os, static_cast<uint32_t>(ds.num_classes));
    put_i32(os, ds.domain);
    put_u32(os, static_cast<uint32_t>(ds.train.size()));
    put_u32(os, static_cast<uint32_t>(ds.val.size()));
    put_u32(os, static_cast<uint32_t>(ds.test.size()));
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& s : *split) write_record(os, s);
    if (!os) throw IoError("write failed for " + path);
}

DomainDataset read_dataset(const std::string& path) {
    Reader r;
    r.path = path;
    r.in.open(path, std::ios::binary);
    if (!r.in) throw IoError("cannot open " + path);

    char magic[8];
    r.read(magic, 8, "magic");
    if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": bad magic string");
    const uint32_t version = r.u32("version");
    if (version != kVersion)
        throw VersionError(path + ": format version " + std::to_string(version) + ", expected " +
                           std::to_string(kVersion));
    const int H = static_cast<int>(r.u32("height"));
    const int W = static_cast<int>(r.u32("width"));
    const int K = static_cast<int>(r.u32("class count"));
    if (H <= 0 || W <= 0 || K < 2 || K > 255)
        throw FormatError(path + ": implausible header dims " + std::to_string(H) + "x" +
                          std::to_string(W) + ", K=" + std::to_string(K));

    DomainDataset ds;
    ds.domain = r.i32("domain id");
    ds.num_classes = K;
    const uint32_t nt = r.u32("train count"), nv = r.u32("val count"), ns = r.u32("test count");
    ds.train.reserve(nt);
    ds.val.reserve(nv);
    ds.test.reserve(ns);
    for (uint32_t i = 0; i < nt; ++i) ds.train.push_back(read_record(r, H, W, K, ds.domain));
    for (uint32_t i = 0; i < nv; ++i) ds.val.push_back(read_record(r, H, W, K, ds.domain));
    for (uint32_t i = 0; i < ns; ++i) ds.test.push_back(read_record(r, H, W, K, ds.domain));
    return ds;
}

} // namespace seglife
