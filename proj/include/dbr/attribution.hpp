#pragma once

#include <functional>
#include <span>
#include <unordered_set>
#include <vector>

#include "dbr/dataset.hpp"
#include "dbr/model.hpp"
#include "dbr/tensor.hpp"

namespace dbr {

struct AttributionResult {
    std::vector<double> g;        // row-major L x d, the input's shape
    std::vector<double> norms;    // length L, l2 norm per row of g
    std::vector<int> top_indices; // distinct positions, attribution-rank order
    int steps = 0;                // path steps used
};

// Scalar-valued function of an [L, d] input, built on the given tape.
using ScalarForwardFn = std::function<Tensor(Tape&, Tensor)>;

// Path-integrated input gradients against an all-zero baseline:
// g = x (.) (1/m) sum_{k=1..m} grad f(k/m * x), right-endpoint Riemann sum.
// Throws on steps < 1 and on non-finite gradients (naming the step).
std::vector<double> integrated_gradients(const ScalarForwardFn& forward, Shape shape,
                                         std::span<const double> x, int steps);

std::vector<double> attribution_norms(std::span<const double> g, int rows, int cols);

// Indices of the n largest norms among eligible positions, ties broken by the
// smaller index; all eligible positions if fewer than n. Throws when nothing
// is eligible.
std::vector<int> top_n_tokens(std::span<const double> norms, int n, const std::vector<uint8_t>& eligible);

// Full attribution of one encoded example against its gold label: the target
// is the classifier's softmax probability of the label. Selection considers
// positions holding real, non-reserved tokens, minus excluded_token_ids
// (the filtered-word mechanism).
AttributionResult attribute_example(const ClassifierModel& model, const EncodedExample& ex, int steps,
                                    int top_n, const std::unordered_set<int>* excluded_token_ids = nullptr);

// attribute_example over many examples; parallel, order-stable output.
std::vector<AttributionResult> attribute_corpus(const ClassifierModel& model,
                                                const std::vector<EncodedExample>& examples, int steps,
                                                int top_n,
                                                const std::unordered_set<int>* excluded_token_ids = nullptr);

}  // namespace dbr
