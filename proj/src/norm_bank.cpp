#include "seglife/norm_bank.hpp"

#include <cmath>

namespace seglife {

BNParams BNParams::make(int channels, double eps) {
    if (eps <= 0) throw ConfigError("bn.eps must be positive");
    BNParams p;
    p.gamma = Tensor({channels});
    std::fill(p.gamma.data.begin(), p.gamma.data.end(), 1.0);
    p.beta = Tensor({channels});
    p.eps = eps;
    return p;
}

BNState BNState::make(int channels, double momentum) {
    if (momentum <= 0 || momentum > 1) throw ConfigError("bn.momentum must be in (0,1]");
    BNState s;
    s.running_mean.assign(static_cast<size_t>(channels), 0.0);
    s.running_var.assign(static_cast<size_t>(channels), 1.0);
    s.momentum = momentum;
    return s;
}

void BNState::update(const std::vector<double>& batch_mean, const std::vector<double>& batch_var,
                     const std::string& layer_label) {
    for (size_t c = 0; c < running_mean.size(); ++c) {
        if (!std::isfinite(batch_mean[c]) || !std::isfinite(batch_var[c]))
            throw ContractError("non-finite batch statistics in layer " + layer_label);
        running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * batch_mean[c];
        running_var[c] = momentum * running_var[c] + (1.0 - momentum) * batch_var[c];
    }
    ++batches_seen;
}

void DomainBNBank::register_domain(int id, double eps, double momentum) {
    if (domains_.count(id))
        throw ParamError("domain " + std::to_string(id) + " already registered");
    std::vector<BNLayer> layers;
    layers.reserve(layer_channels_.size());
    for (int c : layer_channels_)
        layers.push_back({BNParams::make(c, eps), BNState::make(c, momentum)});
    domains_.emplace(id, std::move(layers));
}

void DomainBNBank::clone_domain(int source, int target) {
    auto it = domains_.find(source);
    if (it == domains_.end()) throw_unknown(source);
    if (domains_.count(target))
        throw ParamError("clone target domain " + std::to_string(target) + " already exists");
    domains_.emplace(target, it->second); // deep copy, bit-identical at creation
}

std::vector<int> DomainBNBank::domain_ids() const {
    std::vector<int> ids;
    ids.reserve(domains_.size());
    for (const auto& [id, _] : domains_) ids.push_back(id);
    return ids;
}

std::vector<BNLayer>& DomainBNBank::get(int id) {
    auto it = domains_.find(id);
    if (it == domains_.end()) throw_unknown(id);
    return it->second;
}

const std::vector<BNLayer>& DomainBNBank::get(int id) const {
    auto it = domains_.find(id);
    if (it == domains_.end()) throw_unknown(id);
    return it->second;
}

void DomainBNBank::throw_unknown(int id) const {
    std::string msg = "unknown domain " + std::to_string(id) + "; registered: {";
    bool first = true;
    for (const auto& [d, _] : domains_) {
        if (!first) msg += ", ";
        msg += std::to_string(d);
        first = false;
    }
    throw LookupError(msg + "}");
}

int batchnorm(Graph& g, int input, int gamma, int beta, double eps, BNState* state, BnMode mode,
              const std::string& layer_label) {
    const Tensor& x = g.value(input);
    const Tensor& gm = g.value(gamma);
    const Tensor& bt = g.value(beta);
    if (x.ndim() != 4) throw ShapeError("batchnorm expects 4-d input, got " + x.shape_str());
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gm.numel() != C || bt.numel() != C)
        throw ShapeError("batchnorm channel mismatch: input " + x.shape_str() + " vs gamma " + gm.shape_str());
    const long M = static_cast<long>(N) * H * W;
    const size_t plane = static_cast<size_t>(H) * W;

    std::vector<double> mean(C), invstd(C);
    if (mode == BnMode::Train) {
        if (M < 2)
            throw ContractError("batchnorm train mode needs >= 2 elements per channel in " + layer_label);
        std::vector<double> var(C);
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = &x.data[(static_cast<size_t>(n) * C + c) * plane];
                for (size_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / M;
            double sv = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = &x.data[(static_cast<size_t>(n) * C + c) * plane];
                for (size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    sv += d * d;
                }
            }
            mean[c] = mu;
            var[c] = sv / M;
            invstd[c] = 1.0 / std::sqrt(var[c] + eps);
        }
        if (state) state->update(mean, var, layer_label);
    } else {
        if (!state) throw ContractError("batchnorm eval mode needs running statistics in " + layer_label);
        for (int c = 0; c < C; ++c) {
            mean[c] = state->running_mean[c];
            invstd[c] = 1.0 / std::sqrt(state->running_var[c] + eps);
        }
    }

    Tensor y({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = &x.data[(static_cast<size_t>(n) * C + c) * plane];
            double* dst = &y.data[(static_cast<size_t>(n) * C + c) * plane];
            const double sc = gm.data[c] * invstd[c];
            const double sh = bt.data[c] - mean[c] * sc;
            for (size_t i = 0; i < plane; ++i) dst[i] = src[i] * sc + sh;
        }

    const bool train = (mode == BnMode::Train);
    return g.make_node(std::move(y), {input, gamma, beta},
                       [input, gamma, beta, mean, invstd, train, N, C, plane, M](Graph& gg, int self) {
                           const auto& dy = gg.node(self).grad;
                           const auto& xv = gg.value(input).data;
                           const auto& gv = gg.value(gamma).data;
                           auto* dx = gg.grad_of(input);
                           auto* dg = gg.grad_of(gamma);
                           auto* db = gg.grad_of(beta);
                           for (int c = 0; c < C; ++c) {
                               double sum_dy = 0.0, sum_dy_xhat = 0.0;
                               for (int n = 0; n < N; ++n) {
                                   const size_t base = (static_cast<size_t>(n) * C + c) * plane;
                                   for (size_t i = 0; i < plane; ++i) {
                                       const double xhat = (xv[base + i] - mean[c]) * invstd[c];
                                       sum_dy += dy[base + i];
                                       sum_dy_xhat += dy[base + i] * xhat;
                                   }
                               }
                               if (db) (*db)[c] += sum_dy;
                               if (dg) (*dg)[c] += sum_dy_xhat;
                               if (dx) {
                                   const double k = gv[c] * invstd[c];
                                   if (train) {
                                       const double mdy = sum_dy / M;
                                       const double mdyx = sum_dy_xhat / M;
                                       for (int n = 0; n < N; ++n) {
                                           const size_t base = (static_cast<size_t>(n) * C + c) * plane;
                                           for (size_t i = 0; i < plane; ++i) {
                                               const double xhat = (xv[base + i] - mean[c]) * invstd[c];
                                               (*dx)[base + i] += k * (dy[base + i] - mdy - xhat * mdyx);
                                           }
                                       }
                                   } else {
                                       for (int n = 0; n < N; ++n) {
                                           const size_t base = (static_cast<size_t>(n) * C + c) * plane;
                                           for (size_t i = 0; i < plane; ++i)
                                               (*dx)[base + i] += k * dy[base + i];
                                       }
                                   }
                               }
                           }
                       });
}

} // namespace seglife
