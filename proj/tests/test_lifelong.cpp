#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "seglife/checkpoint.hpp"
#include "seglife/lifelong.hpp"
#include "seglife/preproc.hpp"
#include "seglife/synth.hpp"

using namespace seglife;

namespace {

SegNetConfig tiny_config() {
    SegNetConfig c;
    c.num_classes = 4;
    c.enc_channels = {4, 8, 12, 16};
    c.dec_channels = {12, 8, 4};
    c.height = c.width = 32;
    return c;
}

DomainDataset make_domain(int id, const DomainTransform& t, int n_train, int n_val,
                          uint64_t seed) {
    PhantomSpec spec;
    spec.height = spec.width = 32;
    spec.seed = seed;
    auto slices = generate_phantoms(spec, n_train + n_val);
    DomainTransform tt = t;
    tt.domain = id;
    apply_domain(slices, tt);
    for (auto& s : slices) percentile_normalize(s.image);
    DomainDataset ds;
    ds.domain = id;
    ds.num_classes = 4;
    ds.train.assign(slices.begin(), slices.begin() + n_train);
    ds.val.assign(slices.begin() + n_train, slices.end());
    return ds;
}

DomainTransform identity_t() { return DomainTransform{}; }

DomainTransform inverted_t() {
    DomainTransform t;
    t.gamma = 0.7;
    t.scale = -0.9;
    t.offset = 1.0;
    t.seed = 5;
    return t;
}

TrainRegime quick_regime(int steps, uint64_t seed) {
    TrainRegime r;
    r.max_steps = steps;
    r.batch_size = 4;
    r.early_stop.eval_interval = 25;
    r.seed = seed;
    return r;
}

std::vector<std::vector<double>> snapshot_domain(const SegNet& net, int d) {
    std::vector<std::vector<double>> out;
    for (const auto& l : net.bank().get(d)) {
        out.push_back(l.params.gamma.data);
        out.push_back(l.params.beta.data);
        out.push_back(l.state.running_mean);
        out.push_back(l.state.running_var);
    }
    return out;
}

} // namespace

TEST_CASE("training one domain leaves the other domain's BN set bit-identical") {
    SegNet net = SegNet::build(tiny_config(), {1, 2}, 3);
    const auto bn2_before = snapshot_domain(net, 2);
    const auto conv_before = net.conv_weights()[0].data;

    const DomainDataset d1 = make_domain(1, identity_t(), 4, 2, 10);
    train_initial(net, {d1}, quick_regime(4, 1));

    CHECK(snapshot_domain(net, 2) == bn2_before);
    CHECK(net.conv_weights()[0].data != conv_before);
    bool bn1_changed = snapshot_domain(net, 1) != snapshot_domain(net, 2);
    CHECK(bn1_changed);
}

TEST_CASE("round-robin training visits domains cyclically") {
    SegNet net = SegNet::build(tiny_config(), {1, 2, 3}, 4);
    std::vector<DomainDataset> data = {make_domain(1, identity_t(), 2, 1, 11),
                                       make_domain(2, inverted_t(), 2, 1, 12),
                                       make_domain(3, identity_t(), 2, 1, 13)};
    const auto curve = train_initial(net, data, quick_regime(7, 2));
    REQUIRE(curve.size() == 7);
    const std::vector<int> want = {1, 2, 3, 1, 2, 3, 1};
    for (size_t i = 0; i < curve.size(); ++i) CHECK(curve[i].domain == want[i]);
}

TEST_CASE("a short run halves the training loss") {
    SegNet net = SegNet::build(tiny_config(), {1}, 9);
    const DomainDataset d1 = make_domain(1, identity_t(), 6, 2, 21);
    const auto curve = train_initial(net, {d1}, quick_regime(200, 3));
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += curve[static_cast<size_t>(i)].loss;
        tail += curve[curve.size() - 1 - static_cast<size_t>(i)].loss;
    }
    CHECK(tail < 0.5 * head);
}

TEST_CASE("mixed-batch training demands a single shared BN set") {
    SegNet net = SegNet::build(tiny_config(), {1, 2}, 5);
    TrainRegime r = quick_regime(2, 1);
    r.batch_mode = BatchMode::MixedAllDomains;
    const DomainDataset d1 = make_domain(1, identity_t(), 2, 1, 31);
    CHECK_THROWS_AS(train_initial(net, {d1}, r), ContractError);
}

TEST_CASE("empty training splits are rejected before any step runs") {
    SegNet net = SegNet::build(tiny_config(), {1}, 5);
    DomainDataset empty;
    empty.domain = 1;
    empty.num_classes = 4;
    CHECK_THROWS_AS(train_initial(net, {empty}, quick_regime(2, 1)), ContractError);
    CHECK_THROWS_AS(train_initial(net, {}, quick_regime(2, 1)), ContractError);
}

TEST_CASE("adaptation selects the matching source domain and freezes everything else") {
    SegNet net = SegNet::build(tiny_config(), {1, 2}, 7);
    const DomainDataset d1 = make_domain(1, identity_t(), 8, 2, 41);
    const DomainDataset d2 = make_domain(2, inverted_t(), 8, 2, 42);
    TrainRegime r = quick_regime(240, 5);
    train_initial(net, {d1, d2}, r);

    // probe drawn from domain 2 itself: its own BN set must win, and BN-only
    // fine-tuning from it should stay near the existing domain-2 performance
    const DomainDataset probe = make_domain(2, inverted_t(), 2, 2, 77);
    const double self_dice = evaluate_dice(net, probe.val, 2, 4).average;

    const auto conv_before = net.conv_weights();
    const auto bn1_before = snapshot_domain(net, 1);
    const auto bn2_before = snapshot_domain(net, 2);

    TrainRegime ar = quick_regime(50, 6);
    ar.batch_size = 2;
    const AdaptResult res = adapt_new_domain(net, 9, probe, ar);

    CHECK(res.source == 2);
    CHECK(res.selection.scores.size() == 2);
    CHECK(res.selection.scores.at(2) > res.selection.scores.at(1));
    CHECK(res.best_val_dice >= self_dice - 0.02);

    for (size_t i = 0; i < conv_before.size(); ++i)
        CHECK(net.conv_weights()[i].data == conv_before[i].data);
    CHECK(snapshot_domain(net, 1) == bn1_before);
    CHECK(snapshot_domain(net, 2) == bn2_before);
    CHECK(net.bank().has(9));
}

TEST_CASE("adaptation insists on room for at least one validation round") {
    SegNet net = SegNet::build(tiny_config(), {1}, 2);
    const DomainDataset probe = make_domain(1, identity_t(), 2, 2, 50);
    TrainRegime r = quick_regime(10, 1);
    r.early_stop.eval_interval = 25; // > max_steps
    CHECK_THROWS_AS(adapt_new_domain(net, 5, probe, r), ConfigError);
}

TEST_CASE("checkpoints round-trip bit-exactly with their metadata") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "seglife_ckpt_test.ckpt").string();
    SegNet net = SegNet::build(tiny_config(), {1, 2}, 15);
    const DomainDataset d1 = make_domain(1, identity_t(), 4, 2, 60);
    train_initial(net, {d1}, quick_regime(6, 9));

    CheckpointMeta meta;
    meta.seed = 1234;
    meta.provenance[9] = 2;
    meta.metrics["val_dice.1"] = 0.5;
    save_checkpoint(net, meta, path);

    CheckpointMeta back_meta;
    SegNet back = load_checkpoint(path, &back_meta);
    for (size_t i = 0; i < net.conv_weights().size(); ++i)
        CHECK(back.conv_weights()[i].data == net.conv_weights()[i].data);
    for (int d : {1, 2}) CHECK(snapshot_domain(back, d) == snapshot_domain(net, d));
    for (int d : {1, 2})
        for (size_t l = 0; l < net.bank().get(d).size(); ++l)
            CHECK(back.bank().get(d)[l].state.batches_seen ==
                  net.bank().get(d)[l].state.batches_seen);
    CHECK(back_meta.seed == 1234);
    CHECK(back_meta.provenance.at(9) == 2);
    CHECK(back_meta.metrics.at("val_dice.1") == 0.5);

    // saving the loaded net again produces identical bytes
    const std::string path2 = path + "2";
    save_checkpoint(back, back_meta, path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("checkpoint corruption surfaces as distinct error types") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "seglife_ckpt_bad.ckpt").string();
    SegNet net = SegNet::build(tiny_config(), {1}, 16);
    save_checkpoint(net, {}, path);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto rewrite = [&](const std::string& b) {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(b.data(), static_cast<std::streamsize>(b.size()));
    };

    rewrite(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path), TruncatedError);

    std::string flipped = bytes;
    flipped[bytes.size() - 20] ^= 0x01; // inside the last weight block
    rewrite(flipped);
    CHECK_THROWS_AS(load_checkpoint(path), ChecksumError);

    std::string badversion = bytes;
    badversion[8] = 42;
    rewrite(badversion);
    CHECK_THROWS_AS(load_checkpoint(path), VersionError);

    std::string badmagic = bytes;
    badmagic[0] = 'x';
    rewrite(badmagic);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("per-domain storage cost follows the BN channel arithmetic") {
    const SegNetConfig cfg = tiny_config();
    SegNet net = SegNet::build(cfg, {1, 2, 3}, 17);
    const CheckpointFootprint f = checkpoint_footprint(net);

    size_t shared = 0;
    for (const auto& w : net.conv_weights()) {
        size_t n = 1;
        for (int d : w.shape) n *= static_cast<size_t>(d);
        shared += n * sizeof(double);
    }
    size_t per_domain = 0;
    for (int c : SegNet::bn_channels_for(cfg)) per_domain += 4u * static_cast<size_t>(c) * sizeof(double);

    CHECK(f.shared_bytes == shared);
    CHECK(f.per_domain_bytes == per_domain);
    // footprint is independent of how many domains are registered
    SegNet one = SegNet::build(cfg, {1}, 17);
    CHECK(checkpoint_footprint(one).per_domain_bytes == per_domain);
}
