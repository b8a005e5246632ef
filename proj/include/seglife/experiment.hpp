#ifndef SEGLIFE_EXPERIMENT_HPP
#define SEGLIFE_EXPERIMENT_HPP

#include <map>
#include <set>
#include <string>
#include <vector>

#include "seglife/checkpoint.hpp"
#include "seglife/lifelong.hpp"
#include "seglife/preproc.hpp"
#include "seglife/synth.hpp"

namespace seglife {

// Full experiment description. Everything here is overridable from the
// config file; a run's config is copied verbatim into its output directory.
struct ExperimentConfig {
    uint64_t seed = 1;
    std::string out = "run";
    std::string config_path; // where the config was loaded from, for the verbatim copy

    PhantomSpec phantom;
    int num_classes = 4;
    std::vector<DomainTransform> transforms; // initial domains first
    int n_initial = 3;
    std::map<int, int> designed_closest; // new domain -> transform designed as nearest

    int n_train_old = 30;
    int n_train_new = 20; // the from-scratch pool for new domains
    int n_val = 4;
    int n_test = 20;
    int n_adapt = 4; // labelled slices available when adapting, split 2/2

    std::vector<int> enc_channels = {32, 64, 128, 256};
    std::vector<int> dec_channels = {128, 64, 32};
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;

    TrainRegime train;    // dedicated nets + initial multi-domain training
    TrainRegime adapt;    // BN-only fine-tuning
    TrainRegime finetune; // full fine-tune baseline
    int hist_bins = 256;
    int jobs = 1;

    static ExperimentConfig load(const std::string& path);

    SegNetConfig net_config() const;
    std::vector<int> initial_domain_ids() const;
    std::vector<int> new_domain_ids() const;
    std::string data_path(int domain) const;
    std::string ckpt_path(const std::string& name) const;
};

// Pipeline stages. Each stage reads only files the previous stage wrote, so
// stages can run as separate CLI invocations.
void cmd_gen(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg, const std::set<std::string>& networks = {});
void cmd_adapt(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
int cmd_report(const ExperimentConfig& cfg); // 0 all verdicts pass, 2 otherwise

struct ReportRow {
    std::string network, test, bn;
    DiceReport dice;
};

struct Verdict {
    std::string id;
    std::string status; // "pass" | "fail" | "not-evaluable"
    std::string detail;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    std::map<int, int> provenance;              // adapted domain -> k*
    std::map<int, std::map<int, double>> probes; // new domain -> bn_k -> probe dice
    std::vector<Verdict> verdicts;
};

ExperimentReport read_report(const ExperimentConfig& cfg);
std::vector<Verdict> pattern_verdicts(const ExperimentConfig& cfg, const ExperimentReport& report);

// Loads a dataset file and applies 98th-percentile intensity normalization
// to every slice.
DomainDataset load_preprocessed(const std::string& path);

void write_pgm(const std::string& path, const std::vector<double>& img, int height, int width);
void write_label_pgm(const std::string& path, const std::vector<uint8_t>& labels, int height,
                     int width, int num_classes);

} // namespace seglife

#endif
