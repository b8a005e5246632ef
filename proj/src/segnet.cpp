#include "seglife/segnet.hpp"

#include <array>
#include <cmath>
#include <random>

namespace seglife {

void SegNetConfig::validate() const {
    if (in_channels < 1) throw ConfigError("network.in_channels must be >= 1");
    if (num_classes < 2) throw ConfigError("network.num_classes must be >= 2");
    if (enc_channels.size() != 4) throw ConfigError("network.enc_channels must list 4 values");
    if (dec_channels.size() != 3) throw ConfigError("network.dec_channels must list 3 values");
    for (int c : enc_channels)
        if (c < 1) throw ConfigError("network.enc_channels entries must be positive");
    for (int c : dec_channels)
        if (c < 1) throw ConfigError("network.dec_channels entries must be positive");
    if (height % 8 != 0 || width % 8 != 0)
        throw ConfigError("network.image size " + std::to_string(height) + "x" + std::to_string(width) +
                          " must be divisible by 8 (three pooling levels)");
    if (bn_eps <= 0) throw ConfigError("network.bn_eps must be positive");
}

namespace {

// (Cout, Cin, k) for every conv in forward order; the last entry is the 1x1 head.
std::vector<std::array<int, 3>> conv_plan(const SegNetConfig& c) {
    const auto& e = c.enc_channels;
    const auto& d = c.dec_channels;
    return {
        {e[0], c.in_channels, 3}, {e[0], e[0], 3},     // encoder level 1
        {e[1], e[0], 3},          {e[1], e[1], 3},     // encoder level 2
        {e[2], e[1], 3},          {e[2], e[2], 3},     // encoder level 3
        {e[3], e[2], 3},          {e[3], e[3], 3},     // bottleneck
        {d[0], e[3] + e[2], 3},   {d[0], d[0], 3},     // decoder level 3
        {d[1], d[0] + e[1], 3},   {d[1], d[1], 3},     // decoder level 2
        {d[2], d[1] + e[0], 3},   {d[2], d[2], 3},     // decoder level 1
        {c.num_classes, d[2], 1},                      // head
    };
}

} // namespace

std::vector<int> SegNet::bn_channels_for(const SegNetConfig& config) {
    auto plan = conv_plan(config);
    std::vector<int> ch;
    for (size_t i = 0; i + 1 < plan.size(); ++i) ch.push_back(plan[i][0]); // head has no BN
    return ch;
}

SegNet SegNet::build(const SegNetConfig& config, const std::vector<int>& initial_domains,
                     uint64_t seed) {
    config.validate();
    SegNet net;
    net.config_ = config;

    std::mt19937_64 rng(seed);
    int idx = 0;
    for (const auto& [cout, cin, k] : conv_plan(config)) {
        Tensor w({cout, cin, k, k});
        const double limit = std::sqrt(6.0 / (cin * k * k)); // He-uniform fan-in
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& v : w.data) v = dist(rng);
        net.conv_weights_.push_back(std::move(w));
        net.conv_names_.push_back("conv." + std::to_string(idx++) + ".weight");
    }

    net.bank_.set_layer_channels(bn_channels_for(config));
    for (int d : initial_domains)
        net.bank_.register_domain(d, config.bn_eps, config.bn_momentum);
    return net;
}

int SegNet::forward(Graph& g, Tensor* batch, int domain, BnMode mode, TrainScope scope) {
    if (batch->ndim() != 4 || batch->dim(1) != config_.in_channels ||
        batch->dim(2) != config_.height || batch->dim(3) != config_.width)
        throw ShapeError("segnet input " + batch->shape_str() + ", expected [N," +
                         std::to_string(config_.in_channels) + "," + std::to_string(config_.height) +
                         "," + std::to_string(config_.width) + "]");
    auto& layers = bank_.get(domain);

    const bool conv_trainable = (scope == TrainScope::All);
    for (Tensor& w : conv_weights_) w.requires_grad = conv_trainable;

    std::vector<int> wid;
    for (Tensor& w : conv_weights_) wid.push_back(g.leaf(&w));

    int bn_idx = 0;
    auto bn_block = [&](int x, int conv_i) {
        BNLayer& layer = layers[static_cast<size_t>(bn_idx)];
        const bool bn_trainable = (scope != TrainScope::None) && layer.params.trainable;
        layer.params.gamma.requires_grad = bn_trainable;
        layer.params.beta.requires_grad = bn_trainable;
        const int gm = g.leaf(&layer.params.gamma);
        const int bt = g.leaf(&layer.params.beta);
        const int y = batchnorm(g, conv2d(g, x, wid[static_cast<size_t>(conv_i)]), gm, bt,
                                layer.params.eps, &layer.state, mode,
                                "bn." + std::to_string(domain) + "." + std::to_string(bn_idx));
        ++bn_idx;
        return relu(g, y);
    };

    const int x = g.leaf(batch);
    const int e1 = bn_block(bn_block(x, 0), 1);
    const int e2 = bn_block(bn_block(maxpool2(g, e1), 2), 3);
    const int e3 = bn_block(bn_block(maxpool2(g, e2), 4), 5);
    const int bott = bn_block(bn_block(maxpool2(g, e3), 6), 7);
    const int d3 = bn_block(bn_block(concat_channels(g, {upsample_bilinear2(g, bott), e3}), 8), 9);
    const int d2 = bn_block(bn_block(concat_channels(g, {upsample_bilinear2(g, d3), e2}), 10), 11);
    const int d1 = bn_block(bn_block(concat_channels(g, {upsample_bilinear2(g, d2), e1}), 12), 13);
    const int logits = conv1x1(g, d1, wid.back());
    return softmax_channels(g, logits);
}

Tensor SegNet::forward_eval(const Tensor& batch, int domain) {
    Graph g;
    Tensor in = batch;
    in.requires_grad = false;
    const int probs = forward(g, &in, domain, BnMode::Eval, TrainScope::None);
    return g.value(probs);
}

std::vector<uint8_t> argmax_channels(const Tensor& probs, int n) {
    const int C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<uint8_t> out(plane);
    const double* base = &probs.data[static_cast<size_t>(n) * C * plane];
    for (size_t p = 0; p < plane; ++p) {
        int best = 0;
        double bv = base[p];
        for (int c = 1; c < C; ++c)
            if (base[c * plane + p] > bv) { // strict: ties go to the lower index
                bv = base[c * plane + p];
                best = c;
            }
        out[p] = static_cast<uint8_t>(best);
    }
    return out;
}

std::vector<uint8_t> SegNet::predict_labels(const Tensor& image, int domain) {
    Tensor in = image;
    if (in.ndim() == 2) in.shape = {1, 1, in.dim(0), in.dim(1)};
    return argmax_channels(forward_eval(in, domain), 0);
}

std::vector<Tensor*> SegNet::trainable_params(TrainScope scope, int domain) {
    std::vector<Tensor*> out;
    if (scope == TrainScope::All)
        for (Tensor& w : conv_weights_) out.push_back(&w);
    if (scope != TrainScope::None)
        for (BNLayer& l : bank_.get(domain))
            if (l.params.trainable) {
                out.push_back(&l.params.gamma);
                out.push_back(&l.params.beta);
            }
    return out;
}

} // namespace seglife
