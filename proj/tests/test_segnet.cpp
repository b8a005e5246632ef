#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <random>
#include <set>

#include "seglife/metrics.hpp"
#include "seglife/segnet.hpp"

using namespace seglife;

namespace {

SegNetConfig small_config() {
    SegNetConfig c;
    c.num_classes = 3;
    c.enc_channels = {2, 3, 4, 5};
    c.dec_channels = {4, 3, 2};
    c.height = c.width = 16;
    return c;
}

Tensor random_batch(int n, int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Tensor t({n, 1, h, w});
    for (auto& v : t.data) v = ud(rng);
    return t;
}

} // namespace

TEST_CASE("default architecture has the documented channel plan") {
    SegNetConfig c; // enc {32,64,128,256}, dec {128,64,32}
    SegNet net = SegNet::build(c, {1}, 42);

    REQUIRE(net.conv_weights().size() == 15);
    // (out, in, kernel) per conv, encoder then decoder then the 1x1 head
    const std::vector<std::array<int, 3>> want = {
        {32, 1, 3},    {32, 32, 3},   {64, 32, 3},   {64, 64, 3},  {128, 64, 3},
        {128, 128, 3}, {256, 128, 3}, {256, 256, 3}, {128, 384, 3}, {128, 128, 3},
        {64, 192, 3},  {64, 64, 3},   {32, 96, 3},   {32, 32, 3},  {2, 32, 1}};
    for (size_t i = 0; i < want.size(); ++i) {
        const auto& s = net.conv_weights()[i].shape;
        CHECK(s[0] == want[i][0]);
        CHECK(s[1] == want[i][1]);
        CHECK(s[2] == want[i][2]);
        CHECK(s[3] == want[i][2]);
    }

    const std::vector<int> bn_channels = {32, 32, 64, 64, 128, 128, 256, 256,
                                          128, 128, 64, 64, 32, 32};
    CHECK(SegNet::bn_channels_for(c) == bn_channels);
    CHECK(net.bank().layer_channels() == bn_channels);
    CHECK(net.bank().get(1).size() == bn_channels.size());
}

TEST_CASE("trainable parameter partition by scope") {
    SegNet net = SegNet::build(small_config(), {1, 2}, 7);
    const auto all = net.trainable_params(TrainScope::All, 1);
    const auto bn_only = net.trainable_params(TrainScope::BnOnly, 2);
    CHECK(all.size() == 15 + 2 * 14);
    CHECK(bn_only.size() == 2 * 14);

    // BN-only never touches conv weights, and only domain 2's tensors
    std::set<const Tensor*> convs;
    for (const auto& w : net.conv_weights()) convs.insert(&w);
    std::set<const Tensor*> d1;
    for (auto& l : net.bank().get(1)) {
        d1.insert(&l.params.gamma);
        d1.insert(&l.params.beta);
    }
    for (const Tensor* p : bn_only) {
        CHECK(convs.count(p) == 0);
        CHECK(d1.count(p) == 0);
    }
    CHECK(net.trainable_params(TrainScope::None, 1).empty());
}

TEST_CASE("forward produces per-pixel probability simplices") {
    SegNet net = SegNet::build(small_config(), {1}, 11);
    Tensor batch = random_batch(2, 16, 16, 3);
    Graph g;
    const int probs = net.forward(g, &batch, 1, BnMode::Train, TrainScope::None);
    const Tensor& p = g.value(probs);
    REQUIRE(p.shape == std::vector<int>({2, 3, 16, 16}));
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) {
                double s = 0.0;
                for (int c = 0; c < 3; ++c) {
                    CHECK(p.at4(n, c, i, j) >= 0.0);
                    s += p.at4(n, c, i, j);
                }
                CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
            }
}

TEST_CASE("construction is deterministic in the seed") {
    SegNet a = SegNet::build(small_config(), {1}, 99);
    SegNet b = SegNet::build(small_config(), {1}, 99);
    SegNet c = SegNet::build(small_config(), {1}, 100);
    for (size_t i = 0; i < a.conv_weights().size(); ++i)
        CHECK(a.conv_weights()[i].data == b.conv_weights()[i].data);
    bool any_diff = false;
    for (size_t i = 0; i < a.conv_weights().size(); ++i)
        if (a.conv_weights()[i].data != c.conv_weights()[i].data) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("end-to-end dice-loss gradients pass finite differences") {
    SegNetConfig cfg = small_config();
    cfg.height = cfg.width = 8;
    SegNet net = SegNet::build(cfg, {1}, 13);
    Tensor batch = random_batch(2, 8, 8, 21);
    std::vector<uint8_t> labels(2 * 8 * 8);
    std::mt19937_64 rng(5);
    for (auto& l : labels) l = static_cast<uint8_t>(rng() % 3);

    auto loss_value = [&]() {
        // fresh BN state copy so repeated forwards see identical statistics
        SegNet probe = net;
        Graph g;
        const int probs = probe.forward(g, &batch, 1, BnMode::Train, TrainScope::None);
        return g.value(dice_loss(g, probs, labels)).data[0];
    };

    SegNet work = net;
    Graph g;
    const int probs = work.forward(g, &batch, 1, BnMode::Train, TrainScope::All);
    g.backward(dice_loss(g, probs, labels));

    // spot-check a spread of parameters: conv weights and BN affine terms
    auto fd_check = [&](Tensor& live, Tensor& mirror, size_t idx) {
        const double h = 1e-5;
        const double keep = mirror.data[idx];
        mirror.data[idx] = keep + h;
        const double up = loss_value();
        mirror.data[idx] = keep - h;
        const double dn = loss_value();
        mirror.data[idx] = keep;
        const double fd = (up - dn) / (2 * h);
        REQUIRE(live.grad.has_value());
        const double an = (*live.grad)[idx];
        const double denom = std::max(1e-6, std::abs(fd) + std::abs(an));
        CHECK(std::abs(fd - an) / denom < 1e-4);
    };
    for (size_t w : {size_t(0), size_t(7), size_t(14)})
        for (size_t idx : {size_t(0), size_t(3)})
            fd_check(work.conv_weights()[w], net.conv_weights()[w], idx);
    for (size_t l : {size_t(0), size_t(13)}) {
        fd_check(work.bank().get(1)[l].params.gamma, net.bank().get(1)[l].params.gamma, 0);
        fd_check(work.bank().get(1)[l].params.beta, net.bank().get(1)[l].params.beta, 0);
    }
}

TEST_CASE("argmax decoding breaks ties toward the lower class") {
    // pixel 0 ties classes 0 and 1, pixel 1 ties classes 1 and 2
    Tensor p({1, 3, 1, 2}, {0.4, 0.2, 0.4, 0.4, 0.2, 0.4});
    const auto labels = argmax_channels(p, 0);
    CHECK(labels == std::vector<uint8_t>({0, 1}));
}

TEST_CASE("config validation pins shape constraints with key paths") {
    SegNetConfig c = small_config();
    c.height = 20; // not divisible by 8
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.enc_channels = {2, 3};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("forward rejects an unregistered domain") {
    SegNet net = SegNet::build(small_config(), {1}, 3);
    Tensor batch = random_batch(1, 16, 16, 1);
    CHECK_THROWS_AS(net.forward_eval(batch, 5), LookupError);
}
