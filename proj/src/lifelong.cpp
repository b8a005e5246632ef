#include "seglife/lifelong.hpp"

#include <algorithm>
#include <memory>
#include <random>

namespace seglife {

namespace {

std::vector<const LabelledSlice*> sample_batch(const std::vector<LabelledSlice>& pool,
                                               int batch_size, std::mt19937_64& rng) {
    std::vector<const LabelledSlice*> batch;
    if (static_cast<int>(pool.size()) <= batch_size) {
        for (const auto& s : pool) batch.push_back(&s);
        return batch;
    }
    std::vector<size_t> idx(pool.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int i = 0; i < batch_size; ++i) batch.push_back(&pool[idx[static_cast<size_t>(i)]]);
    return batch;
}

double train_step(SegNet& net, const std::vector<const LabelledSlice*>& batch, int domain,
                  const TrainRegime& regime, Optimizer& opt, const std::vector<Tensor*>& params) {
    Tensor input = make_batch(batch);
    const std::vector<uint8_t> labels = make_batch_labels(batch);
    Graph g;
    const int probs = net.forward(g, &input, domain, BnMode::Train, regime.scope);
    const int loss = dice_loss(g, probs, labels, regime.dice_smooth);
    Optimizer::zero_grads(params);
    g.backward(loss);
    opt.step(params);
    return g.value(loss).data[0];
}

} // namespace

DiceReport evaluate_dice(SegNet& net, const std::vector<LabelledSlice>& slices, int domain,
                         int num_classes) {
    if (slices.empty()) throw ContractError("evaluate_dice: empty slice list");
    std::map<int, double> sums;
    for (int k = 0; k < num_classes; ++k) sums[k] = 0.0;
    for (const auto& s : slices) {
        Tensor img({1, 1, s.height, s.width}, std::vector<double>(s.image));
        const auto pred = net.predict_labels(img, domain);
        const DiceReport r = dice_score(pred, s.labels, num_classes);
        for (const auto& [k, d] : r.per_class) sums[k] += d;
    }
    DiceReport out;
    double fg = 0.0;
    for (const auto& [k, s] : sums) {
        out.per_class[k] = s / static_cast<double>(slices.size());
        if (k > 0) fg += out.per_class[k];
    }
    out.average = (num_classes > 1) ? fg / (num_classes - 1) : 0.0;
    return out;
}

std::vector<CurvePoint> train_initial(SegNet& net, const std::vector<DomainDataset>& datasets,
                                      const TrainRegime& regime) {
    if (datasets.empty()) throw ContractError("train_initial: no datasets");
    for (const auto& ds : datasets)
        if (ds.train.empty())
            throw ContractError("train_initial: domain " + std::to_string(ds.domain) +
                                " has an empty training split");
    const int K = datasets[0].num_classes;

    const bool mixed = (regime.batch_mode == BatchMode::MixedAllDomains);
    const auto bank_ids = net.bank().domain_ids();
    if (mixed && bank_ids.size() != 1)
        throw ContractError("mixed-batch training expects a single shared BN set, bank has " +
                            std::to_string(bank_ids.size()));

    // Mixed mode pools every domain's slices into one list.
    std::vector<const LabelledSlice*> pooled;
    if (mixed)
        for (const auto& ds : datasets)
            for (const auto& s : ds.train) pooled.push_back(&s);

    std::mt19937_64 rng(regime.seed);
    std::map<int, std::unique_ptr<Optimizer>> opts; // per active domain (round-robin)
    Optimizer shared_opt(regime.optimizer, regime.lr);

    std::vector<CurvePoint> curve;
    for (int step = 1; step <= regime.max_steps; ++step) {
        int domain;
        std::vector<const LabelledSlice*> batch;
        if (mixed) {
            domain = bank_ids[0];
            std::vector<size_t> idx(pooled.size());
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            std::shuffle(idx.begin(), idx.end(), rng);
            for (int i = 0; i < regime.batch_size && i < static_cast<int>(pooled.size()); ++i)
                batch.push_back(pooled[idx[static_cast<size_t>(i)]]);
        } else {
            const auto& ds = datasets[static_cast<size_t>((step - 1) % datasets.size())];
            domain = ds.domain;
            batch = sample_batch(ds.train, regime.batch_size, rng);
        }

        const auto params = net.trainable_params(regime.scope, domain);
        Optimizer* opt = &shared_opt;
        if (!mixed && regime.scope != TrainScope::All) {
            // BN-only round robin would need per-domain moments; not used by
            // the initial regimes but kept correct.
            auto& slot = opts[domain];
            if (!slot) slot = std::make_unique<Optimizer>(regime.optimizer, regime.lr);
            opt = slot.get();
        }
        const double loss = train_step(net, batch, domain, regime, *opt, params);

        CurvePoint p{step, domain, loss, -1.0};
        if (regime.early_stop.eval_interval > 0 && step % regime.early_stop.eval_interval == 0) {
            double sum = 0.0;
            int count = 0;
            for (const auto& ds : datasets) {
                if (ds.val.empty()) continue;
                const int eval_domain = mixed ? bank_ids[0] : ds.domain;
                sum += evaluate_dice(net, ds.val, eval_domain, K).average;
                ++count;
            }
            if (count) p.val_dice = sum / count;
        }
        curve.push_back(p);
    }
    return curve;
}

SelectionResult select_closest_domain(SegNet& net, const std::vector<LabelledSlice>& probe,
                                      int num_classes) {
    if (probe.empty()) throw ContractError("select_closest_domain: empty probe set");
    const auto ids = net.bank().domain_ids();
    if (ids.empty()) throw ContractError("select_closest_domain: no registered domains");

    SelectionResult r;
    bool first = true;
    for (int d : ids) { // ascending, so strict improvement keeps the lowest id on ties
        const double score = evaluate_dice(net, probe, d, num_classes).average;
        r.scores[d] = score;
        if (first || score > r.scores[r.best]) {
            r.best = d;
            first = false;
        }
    }
    return r;
}

AdaptResult adapt_new_domain(SegNet& net, int new_domain, const DomainDataset& data,
                             const TrainRegime& regime) {
    if (data.train.empty() || data.val.empty())
        throw ContractError("adapt_new_domain: new domain needs non-empty train and val splits");
    if (regime.early_stop.eval_interval <= 0 || regime.max_steps < regime.early_stop.eval_interval)
        throw ConfigError("adapt.max_steps must allow at least one validation round");

    AdaptResult result;
    result.selection = select_closest_domain(net, data.train, data.num_classes);
    result.source = result.selection.best;
    net.bank().clone_domain(result.source, new_domain);

    const auto params = net.trainable_params(TrainScope::BnOnly, new_domain);
    Optimizer opt(regime.optimizer, regime.lr);
    std::mt19937_64 rng(regime.seed);

    TrainRegime bn_regime = regime;
    bn_regime.scope = TrainScope::BnOnly;

    std::vector<BNLayer> best_snapshot = net.bank().get(new_domain);
    double best_val = evaluate_dice(net, data.val, new_domain, data.num_classes).average;
    result.best_val_dice = best_val;
    int stale_rounds = 0;

    for (int step = 1; step <= regime.max_steps; ++step) {
        const auto batch = sample_batch(data.train, regime.batch_size, rng);
        const double loss = train_step(net, batch, new_domain, bn_regime, opt, params);
        CurvePoint p{step, new_domain, loss, -1.0};
        if (step % regime.early_stop.eval_interval == 0) {
            const double vd = evaluate_dice(net, data.val, new_domain, data.num_classes).average;
            p.val_dice = vd;
            if (vd > best_val) {
                best_val = vd;
                best_snapshot = net.bank().get(new_domain);
                stale_rounds = 0;
            } else {
                ++stale_rounds;
            }
        }
        result.curve.push_back(p);
        if (stale_rounds >= regime.early_stop.patience) break;
    }

    net.bank().get(new_domain) = std::move(best_snapshot);
    result.best_val_dice = best_val;
    return result;
}

std::vector<CurvePoint> finetune_all(SegNet& net, int domain, const DomainDataset& new_data,
                                     const TrainRegime& regime) {
    if (new_data.train.empty())
        throw ContractError("finetune_all: new domain has an empty training split");
    const auto params = net.trainable_params(TrainScope::All, domain);
    Optimizer opt(regime.optimizer, regime.lr);
    std::mt19937_64 rng(regime.seed);

    TrainRegime ft = regime;
    ft.scope = TrainScope::All;

    std::vector<CurvePoint> curve;
    for (int step = 1; step <= regime.max_steps; ++step) {
        const auto batch = sample_batch(new_data.train, regime.batch_size, rng);
        const double loss = train_step(net, batch, domain, ft, opt, params);
        CurvePoint p{step, domain, loss, -1.0};
        if (regime.early_stop.eval_interval > 0 && step % regime.early_stop.eval_interval == 0 &&
            !new_data.val.empty())
            p.val_dice = evaluate_dice(net, new_data.val, domain, new_data.num_classes).average;
        curve.push_back(p);
    }
    return curve;
}

} // namespace seglife
