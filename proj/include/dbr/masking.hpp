#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbr/dataset.hpp"

namespace dbr {

// Outcome of one per-(example, epoch) Bernoulli masking draw. A single bit
// gates all top-N positions at once.
struct MaskDecision {
    std::string example_id;
    int epoch = 0;
    bool masked = false;
    std::vector<int> ids;  // equals the original sequence when !masked
};

// Replaces the given positions with the MASK id; everything else untouched.
// Positions must be in range and must not hold reserved ids.
std::vector<int> hard_mask(const std::vector<int>& ids, const std::vector<int>& indices);

// Draws b ~ Bernoulli(s2_hat) keyed by (seed, epoch, example id) — loader
// order cannot change the decision — and applies hard_mask when b = 1.
MaskDecision soft_mask(const std::vector<int>& ids, const std::vector<int>& indices, double s2_hat,
                       uint64_t seed, int epoch, const std::string& example_id);

}  // namespace dbr
