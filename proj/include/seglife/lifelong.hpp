#ifndef SEGLIFE_LIFELONG_HPP
#define SEGLIFE_LIFELONG_HPP

#include <map>
#include <vector>

#include "seglife/data.hpp"
#include "seglife/metrics.hpp"
#include "seglife/optimizer.hpp"
#include "seglife/segnet.hpp"

namespace seglife {

enum class BatchMode { PerDomainRoundRobin, MixedAllDomains };

struct EarlyStopRule {
    int patience = 5;      // validation rounds without improvement
    int eval_interval = 50; // steps between validation rounds
};

struct TrainRegime {
    BatchMode batch_mode = BatchMode::PerDomainRoundRobin;
    TrainScope scope = TrainScope::All;
    int max_steps = 600;
    int batch_size = 8;
    EarlyStopRule early_stop;
    OptimKind optimizer = OptimKind::Adam;
    double lr = 1e-3;
    double dice_smooth = 1e-5;
    uint64_t seed = 0;
};

struct CurvePoint {
    int step = 0;
    int domain = 0;
    double loss = 0.0;
    double val_dice = -1.0; // < 0 when no validation ran at this step
};

// Mean dice over slices: per-class dice averaged across slices, `average`
// over foreground classes.
DiceReport evaluate_dice(SegNet& net, const std::vector<LabelledSlice>& slices, int domain,
                         int num_classes);

// Initial multi-domain training. Per-domain round-robin mode puts exactly
// one domain's BN set into each step's graph; mixed mode draws every batch
// from the pooled domains through the single shared BN set.
std::vector<CurvePoint> train_initial(SegNet& net, const std::vector<DomainDataset>& datasets,
                                      const TrainRegime& regime);

struct SelectionResult {
    int best = 0;
    std::map<int, double> scores; // eval-mode mean foreground dice per bn_k
};

// Evaluates the probe under every registered BN set; ties break toward the
// lowest domain id.
SelectionResult select_closest_domain(SegNet& net, const std::vector<LabelledSlice>& probe,
                                      int num_classes);

struct AdaptResult {
    int source = 0; // the selected k*
    double best_val_dice = 0.0;
    SelectionResult selection;
    std::vector<CurvePoint> curve;
};

// The lifelong step: select k*, clone bn_{k*} into the new domain, fine-tune
// only that BN set with validation-based early stopping, restore the best
// snapshot. Shared filters and all old BN sets stay bit-identical.
AdaptResult adapt_new_domain(SegNet& net, int new_domain, const DomainDataset& data,
                             const TrainRegime& regime);

// Catastrophic-forgetting baseline: fine-tune every parameter (shared BN
// included) on the new domain's few images. Old-domain performance is not
// protected.
std::vector<CurvePoint> finetune_all(SegNet& net, int domain, const DomainDataset& new_data,
                                     const TrainRegime& regime);

} // namespace seglife

#endif
