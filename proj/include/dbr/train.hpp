#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbr/losses.hpp"
#include "dbr/model.hpp"
#include "dbr/optim.hpp"
#include "dbr/shortcut.hpp"

namespace dbr {

struct StepRecord {
    int step = 0;   // global, 0-based
    int epoch = 0;
    double ce = 0.0;     // batch-mean cross-entropy component
    double jsd = 0.0;    // batch-mean lambda-weighted divergence component
    double total = 0.0;  // ce + jsd
};

struct EpochRecord {
    int epoch = 0;
    double dev_accuracy = -1.0;  // negative when that split was not evaluated
    double ood_accuracy = -1.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;  // not serialized; reports stay byte-stable
};

void save_train_log(const TrainLog& log, const std::string& path);
TrainLog load_train_log(const std::string& path);

struct TrainConfig {
    int epochs = 12;
    int batch_size = 32;
    double lambda = 1.5;
    LossVariant variant = LossVariant::Standard;
    bool poe_literal_sum = false;
    OptimizerConfig optimizer;  // adam, lr 1e-3
    uint64_t seed = 7;
};

// Thrown when a loss or gradient goes non-finite. Carries the parameter
// snapshot from the end of the last completed epoch so callers can persist it.
struct TrainingDiverged : StageError {
    TrainingDiverged(const std::string& msg, std::vector<double> params, int epoch)
        : StageError(msg), last_good_params(std::move(params)), last_good_epoch(epoch) {}
    std::vector<double> last_good_params;
    int last_good_epoch;  // -1 when divergence hit before any epoch finished
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<int> per_class_count;
    std::vector<double> per_class_accuracy;
    double mean_confidence = 0.0;  // mean over examples of max_k p(k)
    double var_confidence = 0.0;   // population variance of the same
};

EvalResult evaluate(const ClassifierModel& model, const std::vector<EncodedExample>& examples);

struct TrainResult {
    ClassifierModel model;
    TrainLog log;
};

// Plain cross-entropy training. Batches are consecutive corpus-order chunks
// of batch_size, identical every epoch; with the same seed and config this
// makes the run bit-reproducible and lets the lambda=0 debiased run retrace
// it exactly.
TrainResult train_identification(const std::vector<EncodedExample>& train,
                                 const std::vector<EncodedExample>& dev,
                                 const std::vector<EncodedExample>& ood, const ModelConfig& arch,
                                 const TrainConfig& config);

// Debiased training over precomputed shortcut profiles. Dispatches on
// config.variant: standard CE, always-masked (dbr-hard), Bernoulli-masked
// with the combined divergence loss (dbr-soft), example reweighting (er), or
// product of experts (poe). Every training example must have a profile.
TrainResult train_debiased(const std::vector<EncodedExample>& train,
                           const std::vector<ShortcutProfile>& profiles,
                           const std::vector<EncodedExample>& dev,
                           const std::vector<EncodedExample>& ood, const ModelConfig& arch,
                           const TrainConfig& config);

}  // namespace dbr
