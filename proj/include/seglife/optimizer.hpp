#ifndef SEGLIFE_OPTIMIZER_HPP
#define SEGLIFE_OPTIMIZER_HPP

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "seglife/tensor.hpp"

namespace seglife {

enum class OptimKind { Sgd, Adam };

inline OptimKind optim_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimKind::Sgd;
    if (s == "adam") return OptimKind::Adam;
    throw ConfigError("train.optimizer: unknown optimizer '" + s + "'");
}

// Gradient-descent update over an explicit trainable set. Frozen parameters
// are simply never passed in, so they stay bit-identical.
class Optimizer {
public:
    Optimizer(OptimKind kind, double lr) : kind_(kind), lr_(lr) {
        if (lr <= 0) throw ConfigError("learning_rate must be positive");
    }

    void step(const std::vector<Tensor*>& params) {
        ++step_count_;
        for (Tensor* p : params) {
            if (!p->grad)
                throw ContractError("optimizer_step: trainable parameter has no gradient");
            switch (kind_) {
                case OptimKind::Sgd: {
                    const auto& g = *p->grad;
                    for (size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr_ * g[i];
                    break;
                }
                case OptimKind::Adam: {
                    Moments& m = moments_[p];
                    if (m.m.empty()) {
                        m.m.assign(p->data.size(), 0.0);
                        m.v.assign(p->data.size(), 0.0);
                    }
                    ++m.t;
                    const double bc1 = 1.0 - std::pow(beta1_, m.t);
                    const double bc2 = 1.0 - std::pow(beta2_, m.t);
                    const auto& g = *p->grad;
                    for (size_t i = 0; i < p->data.size(); ++i) {
                        m.m[i] = beta1_ * m.m[i] + (1.0 - beta1_) * g[i];
                        m.v[i] = beta2_ * m.v[i] + (1.0 - beta2_) * g[i] * g[i];
                        p->data[i] -= lr_ * (m.m[i] / bc1) / (std::sqrt(m.v[i] / bc2) + eps_);
                    }
                    break;
                }
            }
        }
    }

    static void zero_grads(const std::vector<Tensor*>& params) {
        for (Tensor* p : params) p->zero_grad();
    }

    long step_count() const { return step_count_; }
    OptimKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }

private:
    struct Moments {
        std::vector<double> m, v;
        long t = 0;
    };

    OptimKind kind_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long step_count_ = 0;
    std::unordered_map<const Tensor*, Moments> moments_; // lookup only, never iterated
};

} // namespace seglife

#endif
