#pragma once

#include <span>
#include <string>
#include <vector>

#include "dbr/attribution.hpp"
#include "dbr/dataset.hpp"
#include "dbr/model.hpp"
#include "dbr/optim.hpp"

namespace dbr {

// Per-example shortcut statistics, computed once before debiased training.
struct ShortcutProfile {
    std::string example_id;
    std::vector<int> top_indices;  // attribution-rank order
    std::vector<double> p;         // bias-only prediction over the K labels
    double s2 = 0.0;               // unbiased sample variance of p
    double s2_hat = 0.0;           // batch min-max normalized, in [0, 1]
};

// Concatenation of the encoder's token representations at the top-N
// positions, rank order preserved; slots past the available indices stay
// zero. Rejects an untrained encoder.
std::vector<double> build_bias_features(const EncodedExample& ex, const std::vector<int>& top_indices,
                                        const ClassifierModel& encoder, int top_n);

struct BiasTrainResult {
    BiasOnlyModel model;
    std::vector<std::string> warnings;  // e.g. classes absent from the subset
};

// Cross-entropy training of the shortcut-degree MLP on prebuilt features.
// Every example is visited exactly once per epoch, in order.
BiasTrainResult train_bias_only(const std::vector<std::vector<double>>& features,
                                const std::vector<int>& labels, int input_dim, int hidden_dim,
                                int num_labels, int epochs, int batch_size, const OptimizerConfig& opt,
                                uint64_t seed);

// Unbiased sample variance of a probability K-vector, K >= 2.
double sample_variance(std::span<const double> p);

// Min-max normalization within one batch; a degenerate batch (max == min)
// maps to all zeros so that indiscriminate variance masks nothing.
std::vector<double> normalize_batch(std::span<const double> variances);

// Full profile computation: bias-only predictions, variances, and
// normalization over consecutive batches of batch_size in corpus order (the
// same fixed partition the debiased training loop uses).
std::vector<ShortcutProfile> compute_profiles(const std::vector<EncodedExample>& examples,
                                              const std::vector<AttributionResult>& attributions,
                                              const ClassifierModel& encoder, const BiasOnlyModel& bias,
                                              int top_n, int batch_size);

// Same, over features already built for each example.
std::vector<ShortcutProfile> compute_profiles(const std::vector<EncodedExample>& examples,
                                              const std::vector<AttributionResult>& attributions,
                                              const std::vector<std::vector<double>>& features,
                                              const BiasOnlyModel& bias, int batch_size);

void save_profiles(const std::vector<ShortcutProfile>& profiles, const std::string& path);
std::vector<ShortcutProfile> load_profiles(const std::string& path);

}  // namespace dbr
