#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "advst/data.hpp"
#include "advst/model.hpp"
#include "advst/rng.hpp"
#include "advst/transforms.hpp"

// Alternating min-max training: per-epoch stochastic gradient descent on the
// classifier interleaved with per-sample gradient ascent over transform
// parameters, feeding a bounded pool of generated domains.

namespace advst {

enum class LrSchedule { Step, Cosine };

struct TrainConfig {
    std::size_t epochs = 10;             // E
    std::size_t batch = 32;              // B
    std::size_t batches_per_epoch = 0;   // N_B; 0 = auto: ceil(|source| / B)
    std::size_t t_max = 5;               // ascent steps per generated sample
    double lambda = 1.0;                 // feature-distance penalty (ascent)
    double beta = 0.2;                   // ascent rate on transform params
    double alpha = 1e-4;                 // descent rate on model params
    double epsilon = 0.0;                // ascent entropy bonus (> 0: ME variant)
    double eta = 1.0;                    // descent entropy bonus
    std::size_t pool_k = 2;              // max stored generated domains
    std::size_t l_max = 3;               // transform chain length cap
    double early_stop_delta = 0.1;       // ascent batch-mean early stop
    LrSchedule lr_schedule = LrSchedule::Step;
    bool use_contrastive = true;         // contrastive term in the descent loss
    std::uint64_t seed = 0;
    bool log_timing = true;              // false: seconds column logged as 0
};

// Source domain plus a ring of at most `k` generated domains. The source is
// never evicted; pushing past the bound drops the oldest generated domain.
struct DomainPool {
    Dataset source;
    std::deque<Dataset> generated;
    std::size_t k = 0;

    void add(Dataset d);
    std::size_t total_samples() const;
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double ce = 0, contrastive = 0, entropy = 0;
    double max_obj_start = 0, max_obj_end = 0;
    double mean_feat_dist = 0;
    std::vector<double> domain_acc;  // aligned with TrainLog::domains
    double seconds = 0;
};

struct TrainLog {
    std::vector<std::string> domains;  // evaluation domain names, CSV order
    std::vector<EpochStats> epochs;
    std::size_t ascent_warnings = 0;   // samples whose ascent hit a non-finite
};

// CSV with header epoch,ce,contrastive,entropy,max_obj_start,max_obj_end,
// mean_feat_dist,acc_<domain>...,seconds and one row per epoch.
std::string train_log_csv(const TrainLog& log);
void write_train_log(const std::string& path, const TrainLog& log);

// Ascent statistics for one generated domain.
struct GenStats {
    double obj_start = 0, obj_end = 0;  // means over the whole domain
    double mean_feat_dist = 0;          // embedding shift of generated samples
    std::size_t warnings = 0;           // non-finite ascent aborts
    std::vector<double> sample_obj_start, sample_obj_end;  // per source sample
};

// Effective descent rate for a 0-based epoch index: step decay multiplies by
// 0.1 from epoch 25 on; cosine anneals over cfg.epochs.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

// One independent transform chain and parameter set per source sample,
// ascended for at most t_max steps of rate beta on the batch-mean objective
// (each sample's parameters see its own gradient scaled by 1/batch); the
// batch stops early when the mean objective moves less than early_stop_delta.
// Model parameters are read, never written. A sample whose objective or
// gradient turns non-finite keeps its last finite iterate and is counted in
// stats->warnings.
Dataset generate_domain(const ModelParams<float>& model, const Dataset& source,
                        const ChainDistribution& dist, const TrainConfig& cfg,
                        Rng& rng, GenStats* stats = nullptr);

// Pixel-space baseline: the learnable object is an additive per-pixel
// perturbation initialized at zero, the image clamped to [0,1]; same
// objective, same schedule.
Dataset generate_domain_pixel(const ModelParams<float>& model, const Dataset& source,
                              const TrainConfig& cfg, Rng& rng,
                              GenStats* stats = nullptr);

struct MinimizeStats {
    double ce = 0, contrastive = 0, entropy = 0;  // means over the batches run
};

// batches_per_epoch descent steps at learning_rate(cfg, epoch), each on a
// batch drawn uniformly (with replacement) from the union of the pool's
// stored samples. batches_per_epoch is taken literally here (0 = no-op).
MinimizeStats minimize_epoch(ModelParams<float>& model, const DomainPool& pool,
                             const TrainConfig& cfg, std::size_t epoch, Rng& rng);

// Fraction of samples whose argmax logit equals the label.
double evaluate(const ModelParams<float>& model, const Dataset& d,
                std::size_t batch = 256);

enum class GenKind { Semantics, Pixel, None };

struct TrainResult {
    ModelParams<float> model;
    TrainLog log;
};

// Full loop: init model from the seed, then per epoch minimize over the pool
// and (unless kind is None) generate a domain with the frozen model and add
// it. eval_domains are scored after every epoch. Deterministic per seed.
TrainResult train(const TrainConfig& cfg, const Dataset& source,
                  const std::vector<Dataset>& eval_domains,
                  GenKind kind = GenKind::Semantics);

// Cross-entropy-only baseline: no generation, no pool growth, no contrastive
// or entropy terms. Equivalent to train with t_max=0, pool_k=0, eta=0,
// use_contrastive=false.
TrainResult train_erm(const TrainConfig& cfg, const Dataset& source,
                      const std::vector<Dataset>& eval_domains);

}  // namespace advst
