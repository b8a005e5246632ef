#include "seglife/checkpoint.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cstring>
#include <fstream>

namespace seglife {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'L', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

uint32_t crc_of(const void* data, size_t n) {
    return static_cast<uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

void write_block(std::ostream& os, const std::string& name, const std::vector<double>& data) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, data.size());
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
    put_u32(os, crc_of(data.data(), data.size() * 8));
}

struct Reader {
    std::ifstream in;
    std::string path;
    size_t offset = 0;

    void read(void* dst, size_t n, const char* what) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw TruncatedError(path + ": short read of " + what + " at offset " + std::to_string(offset));
        offset += n;
    }
    uint32_t u32(const char* what) {
        uint32_t v;
        read(&v, 4, what);
        return v;
    }
    uint64_t u64(const char* what) {
        uint64_t v;
        read(&v, 8, what);
        return v;
    }
};

std::vector<double> read_block(Reader& r, std::string& name) {
    const uint32_t nl = r.u32("block name length");
    if (nl > 4096) throw FormatError(r.path + ": implausible block name length");
    name.resize(nl);
    r.read(name.data(), nl, "block name");
    const uint64_t count = r.u64("block element count");
    std::vector<double> data(count);
    r.read(data.data(), count * 8, "block data");
    const uint32_t stored = r.u32("block checksum");
    if (stored != crc_of(data.data(), count * 8))
        throw ChecksumError(r.path + ": block '" + name + "' checksum mismatch");
    return data;
}

json config_to_json(const SegNetConfig& c) {
    return json{{"in_channels", c.in_channels}, {"num_classes", c.num_classes},
                {"enc_channels", c.enc_channels}, {"dec_channels", c.dec_channels},
                {"height", c.height},             {"width", c.width},
                {"bn_eps", c.bn_eps},             {"bn_momentum", c.bn_momentum}};
}

SegNetConfig config_from_json(const json& j) {
    SegNetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
    c.dec_channels = j.at("dec_channels").get<std::vector<int>>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.bn_eps = j.at("bn_eps").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    return c;
}

} // namespace

void save_checkpoint(const SegNet& net, const CheckpointMeta& meta, const std::string& path) {
    json header;
    header["config"] = config_to_json(net.config());
    header["domains"] = net.bank().domain_ids();
    json prov = json::object();
    for (const auto& [d, src] : meta.provenance) prov[std::to_string(d)] = src;
    header["provenance"] = prov;
    header["seed"] = meta.seed;
    header["metrics"] = meta.metrics;
    header["ledger"] = {{"bn_eps", net.config().bn_eps},
                        {"bn_momentum", net.config().bn_momentum},
                        {"bilinear", "align-corners-false"}};
    json seen = json::object();
    for (int d : net.bank().domain_ids()) {
        json arr = json::array();
        for (const auto& l : net.bank().get(d)) arr.push_back(l.state.batches_seen);
        seen[std::to_string(d)] = arr;
    }
    header["batches_seen"] = seen;
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    put_u32(os, crc_of(hs.data(), hs.size()));

    uint32_t nblocks = static_cast<uint32_t>(net.conv_weights().size());
    for (int d : net.bank().domain_ids())
        nblocks += 4 * static_cast<uint32_t>(net.bank().get(d).size());
    put_u32(os, nblocks);

    for (size_t i = 0; i < net.conv_weights().size(); ++i)
        write_block(os, net.conv_names()[i], net.conv_weights()[i].data);
    for (int d : net.bank().domain_ids()) {
        const auto& layers = net.bank().get(d);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string base = "bn." + std::to_string(d) + "." + std::to_string(l);
            write_block(os, base + ".gamma", layers[l].params.gamma.data);
            write_block(os, base + ".beta", layers[l].params.beta.data);
            write_block(os, base + ".running_mean", layers[l].state.running_mean);
            write_block(os, base + ".running_var", layers[l].state.running_var);
        }
    }
    if (!os) throw IoError("write failed for " + path);
}

SegNet load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    Reader r;
    r.path = path;
    r.in.open(path, std::ios::binary);
    if (!r.in) throw IoError("cannot open " + path);

    char magic[8];
    r.read(magic, 8, "magic");
    if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": bad magic string");
    const uint32_t version = r.u32("version");
    if (version != kVersion)
        throw VersionError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                           std::to_string(kVersion));
    const uint64_t hlen = r.u64("header length");
    if (hlen > (1u << 26)) throw FormatError(path + ": implausible header length");
    std::string hs(hlen, '\0');
    r.read(hs.data(), hlen, "header");
    if (r.u32("header checksum") != crc_of(hs.data(), hs.size()))
        throw ChecksumError(path + ": header checksum mismatch");

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw FormatError(path + ": header is not valid JSON: " + e.what());
    }

    const SegNetConfig config = config_from_json(header.at("config"));
    const auto domains = header.at("domains").get<std::vector<int>>();
    SegNet net = SegNet::build(config, domains, 0);

    std::map<std::string, std::vector<double>*> slots;
    for (size_t i = 0; i < net.conv_weights().size(); ++i)
        slots[net.conv_names()[i]] = &net.conv_weights()[i].data;
    for (int d : domains) {
        auto& layers = net.bank().get(d);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string base = "bn." + std::to_string(d) + "." + std::to_string(l);
            slots[base + ".gamma"] = &layers[l].params.gamma.data;
            slots[base + ".beta"] = &layers[l].params.beta.data;
            slots[base + ".running_mean"] = &layers[l].state.running_mean;
            slots[base + ".running_var"] = &layers[l].state.running_var;
        }
    }

    const uint32_t nblocks = r.u32("block count");
    for (uint32_t b = 0; b < nblocks; ++b) {
        std::string name;
        std::vector<double> data = read_block(r, name);
        auto it = slots.find(name);
        if (it == slots.end()) throw FormatError(path + ": unexpected block '" + name + "'");
        if (it->second->size() != data.size())
            throw FormatError(path + ": block '" + name + "' has " + std::to_string(data.size()) +
                              " elements, expected " + std::to_string(it->second->size()));
        *it->second = std::move(data);
        slots.erase(it);
    }
    if (!slots.empty())
        throw FormatError(path + ": missing block '" + slots.begin()->first + "'");

    if (header.contains("batches_seen"))
        for (int d : domains) {
            const auto& arr = header["batches_seen"].at(std::to_string(d));
            auto& layers = net.bank().get(d);
            for (size_t l = 0; l < layers.size(); ++l)
                layers[l].state.batches_seen = arr.at(l).get<long>();
        }

    if (meta) {
        meta->provenance.clear();
        for (const auto& [k, v] : header.at("provenance").items())
            meta->provenance[std::stoi(k)] = v.get<int>();
        meta->seed = header.value("seed", 0ULL);
        meta->metrics.clear();
        if (header.contains("metrics"))
            for (const auto& [k, v] : header["metrics"].items())
                meta->metrics[k] = v.get<double>();
    }
    return net;
}

CheckpointFootprint checkpoint_footprint(const SegNet& net) {
    CheckpointFootprint f;
    for (const auto& w : net.conv_weights()) f.shared_bytes += w.data.size() * sizeof(double);
    const auto ids = net.bank().domain_ids();
    if (!ids.empty())
        for (const auto& l : net.bank().get(ids.front()))
            f.per_domain_bytes += (l.params.gamma.data.size() + l.params.beta.data.size() +
                                   l.state.running_mean.size() + l.state.running_var.size()) *
                                  sizeof(double);
    return f;
}

} // namespace seglife
