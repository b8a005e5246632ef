#include "seglife/metrics.hpp"

namespace seglife {

int dice_loss(Graph& g, int probs, const std::vector<uint8_t>& labels, double smooth) {
    const Tensor& p = g.value(probs);
    if (p.ndim() != 4) throw ShapeError("dice_loss expects 4-d probabilities, got " + p.shape_str());
    const int N = p.dim(0), K = p.dim(1), H = p.dim(2), W = p.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    if (labels.size() != static_cast<size_t>(N) * plane)
        throw ShapeError("dice_loss label count " + std::to_string(labels.size()) + " vs probs " + p.shape_str());
    for (uint8_t l : labels)
        if (l >= K) throw ContractError("dice_loss label id " + std::to_string(int(l)) +
                                        " >= num_classes " + std::to_string(K));

    std::vector<double> inter(K, 0.0), denom(K, 0.0);
    for (int k = 0; k < K; ++k) {
        double a = 0.0, psq = 0.0;
        long gcount = 0;
        for (int n = 0; n < N; ++n) {
            const double* pp = &p.data[(static_cast<size_t>(n) * K + k) * plane];
            const uint8_t* ll = &labels[static_cast<size_t>(n) * plane];
            for (size_t i = 0; i < plane; ++i) {
                psq += pp[i] * pp[i];
                if (ll[i] == k) {
                    a += pp[i];
                    ++gcount;
                }
            }
        }
        inter[k] = a;
        denom[k] = psq + static_cast<double>(gcount);
    }
    double total = 0.0;
    for (int k = 0; k < K; ++k) total += (2.0 * inter[k] + smooth) / (denom[k] + smooth);
    Tensor y({1});
    y.data[0] = 1.0 - total / K;

    return g.make_node(std::move(y), {probs},
                       [probs, labels, inter, denom, smooth, N, K, plane](Graph& gg, int self) {
                           auto* dp = gg.grad_of(probs);
                           if (!dp) return;
                           const double gy = gg.node(self).grad[0];
                           const auto& p = gg.value(probs).data;
                           for (int k = 0; k < K; ++k) {
                               const double num = 2.0 * inter[k] + smooth;
                               const double den = denom[k] + smooth;
                               const double c1 = 2.0 / den;
                               const double c2 = 2.0 * num / (den * den);
                               for (int n = 0; n < N; ++n) {
                                   const size_t base = (static_cast<size_t>(n) * K + k) * plane;
                                   const uint8_t* ll = &labels[static_cast<size_t>(n) * plane];
                                   for (size_t i = 0; i < plane; ++i) {
                                       const double gpix = (ll[i] == k) ? 1.0 : 0.0;
                                       const double dT = c1 * gpix - c2 * p[base + i];
                                       (*dp)[base + i] += gy * (-dT / K);
                                   }
                               }
                           }
                       });
}

DiceReport dice_score(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                      int num_classes) {
    if (pred.size() != truth.size())
        throw ShapeError("dice_score: prediction has " + std::to_string(pred.size()) +
                         " pixels, truth has " + std::to_string(truth.size()));
    std::vector<long> np(num_classes, 0), nt(num_classes, 0), ni(num_classes, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        ++np[pred[i]];
        ++nt[truth[i]];
        if (pred[i] == truth[i]) ++ni[pred[i]];
    }
    DiceReport r;
    double fg_sum = 0.0;
    int fg_count = 0;
    for (int k = 0; k < num_classes; ++k) {
        const long den = np[k] + nt[k];
        const double d = (den == 0) ? 1.0 : 2.0 * ni[k] / static_cast<double>(den);
        r.per_class[k] = d;
        if (k > 0) {
            fg_sum += d;
            ++fg_count;
        }
    }
    r.average = fg_count ? fg_sum / fg_count : 0.0;
    return r;
}

} // namespace seglife
