#include "dbr/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dbr {

std::vector<double> integrated_gradients(const ScalarForwardFn& forward, Shape shape,
                                         std::span<const double> x, int steps) {
    if (steps < 1)
        throw std::invalid_argument("integrated_gradients: steps must be >= 1, got " + std::to_string(steps));
    const int64_t n = numel(shape);
    if (static_cast<int64_t>(x.size()) != n)
        throw std::invalid_argument("integrated_gradients: input has " + std::to_string(x.size()) +
                                    " values, shape " + format_shape(shape) + " needs " + std::to_string(n));

    std::vector<double> grad_sum(n, 0.0);
    std::vector<double> xk(n);
    for (int k = 1; k <= steps; ++k) {
        const double a = static_cast<double>(k) / steps;
        for (int64_t i = 0; i < n; ++i) xk[i] = a * x[i];
        Tape tape;
        Tensor xt = tape.input(shape, xk);
        Tensor target = forward(tape, xt);
        if (target.size() != 1)
            throw std::invalid_argument("integrated_gradients: forward must return a scalar, got shape " +
                                        format_shape(target.shape()));
        tape.backward(target);
        const std::vector<double>& grad = xt.grad();
        for (int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(grad[i]))
                throw std::runtime_error("integrated_gradients: non-finite gradient at path step " +
                                         std::to_string(k) + " of " + std::to_string(steps));
            grad_sum[i] += grad[i];
        }
    }
    std::vector<double> g(n);
    for (int64_t i = 0; i < n; ++i) g[i] = x[i] * (grad_sum[i] / steps);
    return g;
}

std::vector<double> attribution_norms(std::span<const double> g, int rows, int cols) {
    if (static_cast<int64_t>(g.size()) != static_cast<int64_t>(rows) * cols)
        throw std::invalid_argument("attribution_norms: " + std::to_string(g.size()) +
                                    " values do not form " + std::to_string(rows) + "x" + std::to_string(cols));
    std::vector<double> norms(rows);
    for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        const double* row = g.data() + static_cast<int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) s += row[c] * row[c];
        norms[r] = std::sqrt(s);
    }
    return norms;
}

std::vector<int> top_n_tokens(std::span<const double> norms, int n, const std::vector<uint8_t>& eligible) {
    if (n < 1) throw std::invalid_argument("top_n_tokens: n must be >= 1");
    if (eligible.size() != norms.size())
        throw std::invalid_argument("top_n_tokens: eligibility mask length " + std::to_string(eligible.size()) +
                                    " does not match " + std::to_string(norms.size()) + " norms");
    std::vector<int> candidates;
    for (size_t i = 0; i < norms.size(); ++i)
        if (eligible[i]) candidates.push_back(static_cast<int>(i));
    if (candidates.empty()) throw std::invalid_argument("top_n_tokens: no eligible tokens");
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a, int b) { return norms[a] > norms[b]; });
    if (static_cast<int>(candidates.size()) > n) candidates.resize(n);
    return candidates;
}

AttributionResult attribute_example(const ClassifierModel& model, const EncodedExample& ex, int steps,
                                    int top_n, const std::unordered_set<int>* excluded_token_ids) {
    const int d = model.config().embed_dim;
    const int full_len = static_cast<int>(ex.ids.size());
    const int live_len = ex.true_len;
    if (live_len < 1 || live_len > full_len)
        throw std::invalid_argument("attribute_example: bad true_len " + std::to_string(live_len) +
                                    " for example '" + ex.id + "'");
    if (ex.label < 0 || ex.label >= model.config().num_labels)
        throw std::invalid_argument("attribute_example: label " + std::to_string(ex.label) +
                                    " outside model's " + std::to_string(model.config().num_labels) +
                                    " classes (example '" + ex.id + "')");

    // PAD tail rows carry exactly zero attribution (their output gradient is
    // masked out), so the path integral runs on the live prefix only.
    std::vector<int> live_ids(ex.ids.begin(), ex.ids.begin() + live_len);
    std::vector<double> x = model.embed(live_ids);
    std::vector<uint8_t> live_mask(live_len, 1);
    auto forward = [&](Tape& tape, Tensor xt) {
        ClassifierOutput out = model.forward_from_embeddings(tape, xt, live_mask);
        return tape.pick(tape.softmax_rows(out.logits), ex.label);
    };
    std::vector<double> g_live = integrated_gradients(forward, {live_len, d}, x, steps);

    AttributionResult res;
    res.steps = steps;
    res.g.assign(static_cast<size_t>(full_len) * d, 0.0);
    std::copy(g_live.begin(), g_live.end(), res.g.begin());
    res.norms = attribution_norms(res.g, full_len, d);

    std::vector<uint8_t> eligible(full_len, 0);
    for (int t = 0; t < live_len; ++t) {
        if (ex.ids[t] < kNumReserved) continue;
        if (excluded_token_ids != nullptr && excluded_token_ids->count(ex.ids[t])) continue;
        eligible[t] = 1;
    }
    res.top_indices = top_n_tokens(res.norms, top_n, eligible);
    return res;
}

std::vector<AttributionResult> attribute_corpus(const ClassifierModel& model,
                                                const std::vector<EncodedExample>& examples, int steps,
                                                int top_n,
                                                const std::unordered_set<int>* excluded_token_ids) {
    std::vector<AttributionResult> results(examples.size());
    std::vector<std::string> errors(examples.size());
    const int64_t count = static_cast<int64_t>(examples.size());
#pragma omp parallel for schedule(dynamic) if (count > 8)
    for (int64_t i = 0; i < count; ++i) {
        try {
            results[i] = attribute_example(model, examples[i], steps, top_n, excluded_token_ids);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (int64_t i = 0; i < count; ++i)
        if (!errors[i].empty())
            throw StageError("attribute_corpus: example '" + examples[i].id + "': " + errors[i]);
    return results;
}

}  // namespace dbr
