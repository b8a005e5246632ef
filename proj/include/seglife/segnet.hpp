#ifndef SEGLIFE_SEGNET_HPP
#define SEGLIFE_SEGNET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "seglife/norm_bank.hpp"

namespace seglife {

// Reduced U-Net: three pooling levels, two conv+BN+ReLU blocks per level,
// bilinear upsampling, skip connections, 1x1 softmax head. Convolutions
// carry no bias; each BN's beta supplies the shift.
struct SegNetConfig {
    int in_channels = 1;
    int num_classes = 2;
    std::vector<int> enc_channels = {32, 64, 128, 256}; // contracting path + bottleneck
    std::vector<int> dec_channels = {128, 64, 32};      // expanding path
    int height = 64, width = 64;
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;

    void validate() const;
};

enum class TrainScope { None, All, BnOnly };

class SegNet {
public:
    static SegNet build(const SegNetConfig& config, const std::vector<int>& initial_domains,
                        uint64_t seed);

    const SegNetConfig& config() const { return config_; }
    DomainBNBank& bank() { return bank_; }
    const DomainBNBank& bank() const { return bank_; }
    std::vector<Tensor>& conv_weights() { return conv_weights_; }
    const std::vector<Tensor>& conv_weights() const { return conv_weights_; }
    const std::vector<std::string>& conv_names() const { return conv_names_; }

    // Appends the full network to `g` and returns the softmax-probability
    // node. Train mode uses the selected domain's batch statistics and
    // updates only that domain's running estimates; other domains' BN sets
    // are simply not in the graph.
    int forward(Graph& g, Tensor* batch, int domain, BnMode mode, TrainScope scope);

    Tensor forward_eval(const Tensor& batch, int domain);

    // Per-pixel argmax decode of one [1,1,H,W] (or [H,W]) image, ties broken
    // toward the lower class index.
    std::vector<uint8_t> predict_labels(const Tensor& image, int domain);

    std::vector<Tensor*> trainable_params(TrainScope scope, int domain);

    static std::vector<int> bn_channels_for(const SegNetConfig& config);

private:
    SegNetConfig config_;
    std::vector<Tensor> conv_weights_;
    std::vector<std::string> conv_names_;
    DomainBNBank bank_;
};

std::vector<uint8_t> argmax_channels(const Tensor& probs, int n);

} // namespace seglife

#endif
