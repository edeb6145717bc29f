#pragma once

#include <cstdint>
#include <string>

#include "dbr/model.hpp"

namespace dbr {

// Versioned binary model snapshots: fixed header (magic, version, kind,
// trained flag, vocabulary hash, architecture) followed by named parameter
// tensors. Every save also writes a human-readable sidecar at
// path + ".meta.json".

void save_classifier_checkpoint(const ClassifierModel& model, uint64_t vocab_hash,
                                const std::string& path);
void save_bias_checkpoint(const BiasOnlyModel& model, uint64_t vocab_hash, const std::string& path);

struct LoadedClassifier {
    ClassifierModel model;
    uint64_t vocab_hash = 0;
};

struct LoadedBias {
    BiasOnlyModel model;
    uint64_t vocab_hash = 0;
};

LoadedClassifier load_classifier_checkpoint(const std::string& path);
LoadedBias load_bias_checkpoint(const std::string& path);

}  // namespace dbr
