#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "seglife/graph.hpp"
#include "seglife/optimizer.hpp"

using namespace seglife;

namespace {

Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> nd(0.0, scale);
    for (auto& v : t.data) v = nd(rng);
    return t;
}

double rel_err(double a, double b) {
    const double denom = std::max(1e-8, std::abs(a) + std::abs(b));
    return std::abs(a - b) / denom;
}

// Central-difference check of d(sum(op_output))/d(leaf) for every leaf with
// requires_grad, against the tape's gradients.
double max_gradcheck_err(const std::function<int(Graph&, std::vector<int>&)>& build,
                         std::vector<Tensor*> leaves, double h = 1e-5) {
    for (Tensor* t : leaves) {
        t->requires_grad = true;
        t->grad.reset();
    }
    {
        Graph g;
        std::vector<int> ids;
        for (Tensor* t : leaves) ids.push_back(g.leaf(t));
        const int loss = sum_all(g, build(g, ids));
        g.backward(loss);
    }
    auto eval = [&]() {
        Graph g;
        std::vector<int> ids;
        for (Tensor* t : leaves) ids.push_back(g.leaf(t));
        const int out = build(g, ids);
        double s = 0.0;
        for (double v : g.value(out).data) s += v;
        return s;
    };
    double worst = 0.0;
    for (Tensor* t : leaves) {
        REQUIRE(t->grad.has_value());
        for (size_t i = 0; i < t->data.size(); ++i) {
            const double keep = t->data[i];
            t->data[i] = keep + h;
            const double up = eval();
            t->data[i] = keep - h;
            const double dn = eval();
            t->data[i] = keep;
            worst = std::max(worst, rel_err((*t->grad)[i], (up - dn) / (2 * h)));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("conv2d matches a naive direct convolution") {
    std::mt19937_64 rng(7);
    Tensor x = randn({2, 3, 5, 4}, rng);
    Tensor w = randn({4, 3, 3, 3}, rng);
    Graph g;
    const int y = conv2d(g, g.leaf(&x), g.leaf(&w));
    const Tensor& out = g.value(y);
    REQUIRE(out.shape == std::vector<int>({2, 4, 5, 4}));
    for (int n = 0; n < 2; ++n)
        for (int co = 0; co < 4; ++co)
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 4; ++j) {
                    double acc = 0.0;
                    for (int ci = 0; ci < 3; ++ci)
                        for (int di = -1; di <= 1; ++di)
                            for (int dj = -1; dj <= 1; ++dj) {
                                const int ii = i + di, jj = j + dj;
                                if (ii < 0 || ii >= 5 || jj < 0 || jj >= 4) continue;
                                acc += x.at4(n, ci, ii, jj) * w.at4(co, ci, di + 1, dj + 1);
                            }
                    CHECK(out.at4(n, co, i, j) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("bilinear 2x upsampling of [0,1] gives the closed form") {
    Tensor x({1, 1, 1, 2}, {0.0, 1.0});
    Graph g;
    const int y = upsample_bilinear2(g, g.leaf(&x));
    const Tensor& out = g.value(y);
    REQUIRE(out.shape == std::vector<int>({1, 1, 2, 4}));
    const std::vector<double> want = {0.0, 0.25, 0.75, 1.0};
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) CHECK(out.at4(0, 0, r, c) == doctest::Approx(want[c]));
}

TEST_CASE("bilinear upsampling is linear") {
    std::mt19937_64 rng(11);
    Tensor a = randn({1, 2, 4, 4}, rng), b = randn({1, 2, 4, 4}, rng);
    auto up = [](const Tensor& t) {
        Tensor c = t;
        Graph g;
        return g.value(upsample_bilinear2(g, g.leaf(&c))).data;
    };
    Tensor sum = a;
    for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] = 3.0 * a.data[i] + b.data[i];
    const auto ua = up(a), ub = up(b), us = up(sum);
    for (size_t i = 0; i < us.size(); ++i)
        CHECK(us[i] == doctest::Approx(3.0 * ua[i] + ub[i]).epsilon(1e-12));
}

TEST_CASE("maxpool picks the window maximum, first occurrence on ties") {
    Tensor x({1, 1, 2, 4}, {1.0, 5.0, 2.0, 2.0, 3.0, 3.0, 0.0, -1.0});
    Graph g;
    const int y = maxpool2(g, g.leaf(&x));
    const Tensor& out = g.value(y);
    REQUIRE(out.shape == std::vector<int>({1, 1, 1, 2}));
    CHECK(out.data[0] == 5.0);
    CHECK(out.data[1] == 2.0);

    // tie in the second window (both 2.0): gradient must go to exactly one cell
    x.requires_grad = true;
    Graph g2;
    const int id = g2.leaf(&x);
    g2.backward(sum_all(g2, maxpool2(g2, id)));
    double total = 0.0;
    for (double v : *x.grad) total += v;
    CHECK(total == 2.0);
    CHECK((*x.grad)[2] + (*x.grad)[3] == 1.0);
}

TEST_CASE("softmax normalizes channels and matches direct computation") {
    std::mt19937_64 rng(3);
    Tensor x = randn({2, 3, 2, 2}, rng, 2.0);
    Graph g;
    const Tensor& p = g.value(softmax_channels(g, g.leaf(&x)));
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                double z = 0.0;
                for (int c = 0; c < 3; ++c) z += std::exp(x.at4(n, c, i, j));
                double s = 0.0;
                for (int c = 0; c < 3; ++c) {
                    CHECK(p.at4(n, c, i, j) ==
                          doctest::Approx(std::exp(x.at4(n, c, i, j)) / z).epsilon(1e-12));
                    s += p.at4(n, c, i, j);
                }
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            }
}

TEST_CASE("finite differences confirm every op gradient over many random trials") {
    std::mt19937_64 rng(123);
    int trials = 0;
    for (int t = 0; t < 6; ++t) {
        Tensor x = randn({1, 2, 4, 4}, rng);
        Tensor w = randn({3, 2, 3, 3}, rng, 0.5);
        double err = max_gradcheck_err(
            [](Graph& g, std::vector<int>& ids) { return conv2d(g, ids[0], ids[1]); }, {&x, &w});
        CHECK(err < 1e-4);
        ++trials;

        // sum(softmax) is constant, so weight the channels through a frozen
        // 1x1 conv to obtain a non-degenerate loss
        Tensor h = randn({2, 3, 2, 2}, rng, 0.7);
        const Tensor mixer = randn({2, 3, 1, 1}, rng);
        err = max_gradcheck_err(
            [mixer](Graph& g, std::vector<int>& ids) {
                return conv1x1(g, softmax_channels(g, ids[0]), g.constant(mixer));
            },
            {&h});
        CHECK(err < 1e-4);
        ++trials;

        Tensor u = randn({1, 2, 4, 4}, rng);
        err = max_gradcheck_err(
            [](Graph& g, std::vector<int>& ids) { return upsample_bilinear2(g, ids[0]); }, {&u});
        CHECK(err < 1e-4);
        ++trials;

        // keep relu/maxpool inputs away from the kinks
        Tensor r = randn({1, 2, 4, 4}, rng);
        for (auto& v : r.data)
            if (std::abs(v) < 0.05) v = 0.1;
        err = max_gradcheck_err([](Graph& g, std::vector<int>& ids) { return relu(g, ids[0]); }, {&r});
        CHECK(err < 1e-4);
        ++trials;

        Tensor m({1, 1, 4, 4});
        for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<double>(i) * 0.37;
        err = max_gradcheck_err([](Graph& g, std::vector<int>& ids) { return maxpool2(g, ids[0]); },
                                {&m});
        CHECK(err < 1e-4);
        ++trials;

        Tensor a = randn({1, 2, 2, 2}, rng), b = randn({1, 3, 2, 2}, rng);
        err = max_gradcheck_err(
            [](Graph& g, std::vector<int>& ids) {
                return concat_channels(g, {relu(g, ids[0]), ids[1]});
            },
            {&a, &b});
        CHECK(err < 1e-4);
        ++trials;

        Tensor xc = randn({2, 3, 4, 4}, rng), wc = randn({2, 3, 1, 1}, rng);
        err = max_gradcheck_err(
            [](Graph& g, std::vector<int>& ids) { return conv1x1(g, ids[0], ids[1]); }, {&xc, &wc});
        CHECK(err < 1e-4);
        ++trials;
    }
    CHECK(trials >= 20);
}

TEST_CASE("gradients accumulate additively across backward calls") {
    Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    x.requires_grad = true;
    for (int pass = 0; pass < 2; ++pass) {
        Graph g;
        g.backward(sum_all(g, relu(g, g.leaf(&x))));
    }
    for (double v : *x.grad) CHECK(v == 2.0);
}

TEST_CASE("frozen tensors never receive a gradient buffer") {
    Tensor x({1, 1, 2, 2}, {1.0, -2.0, 3.0, -4.0});
    Tensor w({1, 1, 3, 3}, std::vector<double>(9, 0.5));
    x.requires_grad = false;
    w.requires_grad = true;
    Graph g;
    g.backward(sum_all(g, conv2d(g, g.leaf(&x), g.leaf(&w))));
    CHECK(!x.grad.has_value());
    CHECK(w.grad.has_value());
}

TEST_CASE("identical graphs produce bit-identical gradients") {
    std::mt19937_64 rng(5);
    Tensor x = randn({1, 2, 8, 8}, rng);
    Tensor w = randn({2, 2, 3, 3}, rng);
    x.requires_grad = w.requires_grad = true;
    auto run = [&]() {
        x.grad.reset();
        w.grad.reset();
        Graph g;
        const int y = relu(g, conv2d(g, g.leaf(&x), g.leaf(&w)));
        g.backward(sum_all(g, softmax_channels(g, y)));
        return std::make_pair(*x.grad, *w.grad);
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("SGD applies p -= lr * g") {
    Tensor p({2}, {0.9, -0.4});
    p.requires_grad = true;
    p.grad = std::vector<double>{0.5, -1.5};
    Optimizer opt(OptimKind::Sgd, 0.1);
    opt.step({&p});
    CHECK(p.data[0] == doctest::Approx(0.9 - 0.1 * 0.5).epsilon(1e-15));
    CHECK(p.data[1] == doctest::Approx(-0.4 + 0.1 * 1.5).epsilon(1e-15));
}

TEST_CASE("Adam's bias-corrected first step matches the closed form") {
    Tensor p({2}, {1.0, -2.0});
    p.requires_grad = true;
    p.grad = std::vector<double>{0.3, -0.7};
    Optimizer opt(OptimKind::Adam, 1e-3);
    opt.step({&p});
    // t=1: m_hat = g, v_hat = g^2  =>  step = lr * g / (|g| + eps)
    for (int i = 0; i < 2; ++i) {
        const double g = (i == 0) ? 0.3 : -0.7;
        const double want = (i == 0 ? 1.0 : -2.0) - 1e-3 * g / (std::abs(g) + 1e-8);
        CHECK(p.data[i] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("optimizer rejects a trainable parameter without a gradient") {
    Tensor p({2}, {1.0, 2.0});
    p.requires_grad = true;
    Optimizer opt(OptimKind::Sgd, 0.1);
    CHECK_THROWS_AS(opt.step({&p}), ContractError);
}

TEST_CASE("backward demands a scalar loss") {
    Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    x.requires_grad = true;
    Graph g;
    const int y = relu(g, g.leaf(&x));
    CHECK_THROWS_AS(g.backward(y), ContractError);
}
