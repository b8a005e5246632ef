#ifndef SEGLIFE_METRICS_HPP
#define SEGLIFE_METRICS_HPP

#include <cstdint>
#include <map>
#include <vector>

#include "seglife/graph.hpp"

namespace seglife {

// Soft dice loss over softmax probabilities: 1 - mean over classes of
// (2*sum(p*g) + s) / (sum(p^2) + sum(g^2) + s), g the one-hot labels.
int dice_loss(Graph& g, int probs, const std::vector<uint8_t>& labels, double smooth = 1e-5);

struct DiceReport {
    std::map<int, double> per_class; // every class, background included
    double average = 0.0;            // mean over foreground classes only
};

// Hard dice 2|A∩B| / (|A|+|B|) per class. A class absent from both maps
// scores 1 by convention.
DiceReport dice_score(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                      int num_classes);

} // namespace seglife

#endif
