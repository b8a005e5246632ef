#ifndef SEGLIFE_NORM_BANK_HPP
#define SEGLIFE_NORM_BANK_HPP

#include <map>
#include <string>
#include <vector>

#include "seglife/graph.hpp"
#include "seglife/tensor.hpp"

namespace seglife {

enum class BnMode { Train, Eval };

// Learnable per-channel scale/shift of one BN layer.
struct BNParams {
    Tensor gamma; // [C], init 1
    Tensor beta;  // [C], init 0
    double eps = 1e-5;
    bool trainable = true;

    static BNParams make(int channels, double eps = 1e-5);
};

// Moving-average population statistics of one BN layer for one domain.
struct BNState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.9;
    long batches_seen = 0;

    static BNState make(int channels, double momentum = 0.9);

    // running <- momentum * running + (1 - momentum) * batch statistic
    void update(const std::vector<double>& batch_mean, const std::vector<double>& batch_var,
                const std::string& layer_label);
};

struct BNLayer {
    BNParams params;
    BNState state;
};

// One complete BN set per domain: the bn_k of the method. Domains are fully
// isolated; training or cloning one never touches another.
class DomainBNBank {
public:
    void set_layer_channels(std::vector<int> channels) { layer_channels_ = std::move(channels); }
    const std::vector<int>& layer_channels() const { return layer_channels_; }
    int layer_count() const { return static_cast<int>(layer_channels_.size()); }

    void register_domain(int id, double eps = 1e-5, double momentum = 0.9);
    void clone_domain(int source, int target);
    bool has(int id) const { return domains_.count(id) > 0; }
    std::vector<int> domain_ids() const;

    std::vector<BNLayer>& get(int id);
    const std::vector<BNLayer>& get(int id) const;

private:
    [[noreturn]] void throw_unknown(int id) const;

    std::vector<int> layer_channels_;
    std::map<int, std::vector<BNLayer>> domains_;
};

// Eq.-style batch normalization as a graph op. Train mode normalizes with
// the batch's per-channel statistics over the N,H,W axes (differentiable
// through the statistics) and updates `state`; eval mode is an affine map
// using the running population estimates.
int batchnorm(Graph& g, int input, int gamma, int beta, double eps, BNState* state, BnMode mode,
              const std::string& layer_label = "bn");

} // namespace seglife

#endif
