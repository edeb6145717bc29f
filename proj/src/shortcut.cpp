#include "dbr/shortcut.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dbr/losses.hpp"
#include "json.hpp"

namespace dbr {

std::vector<double> build_bias_features(const EncodedExample& ex, const std::vector<int>& top_indices,
                                        const ClassifierModel& encoder, int top_n) {
    if (!encoder.trained())
        throw StageError("build_bias_features: identification model has not been trained");
    if (top_n < 1) throw std::invalid_argument("build_bias_features: top_n must be >= 1");
    if (static_cast<int>(top_indices.size()) > top_n)
        throw std::invalid_argument("build_bias_features: " + std::to_string(top_indices.size()) +
                                    " indices exceed top_n=" + std::to_string(top_n));
    const int d = encoder.config().embed_dim;
    if (ex.true_len < 1)
        throw std::invalid_argument("build_bias_features: example '" + ex.id + "' has no live tokens");

    // Representations are identical whether or not the PAD tail is fed (PAD
    // keys carry zero attention weight), so encode the live prefix only.
    std::vector<int> live_ids(ex.ids.begin(), ex.ids.begin() + ex.true_len);
    Tape tape;
    ClassifierOutput out = encoder.forward(tape, live_ids);
    const std::vector<double>& reps = out.token_reps.value();

    std::vector<double> features(static_cast<size_t>(top_n) * d, 0.0);
    for (size_t r = 0; r < top_indices.size(); ++r) {
        const int t = top_indices[r];
        if (t < 0 || t >= ex.true_len)
            throw std::invalid_argument("build_bias_features: index " + std::to_string(t) +
                                        " outside live length " + std::to_string(ex.true_len) +
                                        " (example '" + ex.id + "')");
        std::copy(reps.begin() + static_cast<int64_t>(t) * d, reps.begin() + static_cast<int64_t>(t + 1) * d,
                  features.begin() + static_cast<int64_t>(r) * d);
    }
    return features;
}

BiasTrainResult train_bias_only(const std::vector<std::vector<double>>& features,
                                const std::vector<int>& labels, int input_dim, int hidden_dim,
                                int num_labels, int epochs, int batch_size, const OptimizerConfig& opt,
                                uint64_t seed) {
    if (features.empty()) throw std::invalid_argument("train_bias_only: empty training subset");
    if (features.size() != labels.size())
        throw std::invalid_argument("train_bias_only: " + std::to_string(features.size()) + " features vs " +
                                    std::to_string(labels.size()) + " labels");
    if (epochs < 1 || batch_size < 1)
        throw std::invalid_argument("train_bias_only: epochs and batch_size must be >= 1");

    BiasTrainResult res{BiasOnlyModel(input_dim, hidden_dim, num_labels, mix_seed(seed, "bias-init")), {}};
    std::vector<int> present(num_labels, 0);
    for (int y : labels) {
        if (y < 0 || y >= num_labels)
            throw std::invalid_argument("train_bias_only: label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(num_labels) + ")");
        ++present[y];
    }
    for (int k = 0; k < num_labels; ++k)
        if (present[k] == 0)
            res.warnings.push_back("bias-only training subset contains no examples of class " +
                                   std::to_string(k));

    Optimizer optim(opt, res.model.params().total_size());
    std::vector<double> grads(res.model.params().total_size());
    const int n = static_cast<int>(features.size());
    for (int e = 0; e < epochs; ++e) {
        for (int start = 0; start < n; start += batch_size) {
            const int end = std::min(n, start + batch_size);
            std::fill(grads.begin(), grads.end(), 0.0);
            for (int i = start; i < end; ++i) {
                Tape tape;
                Tensor loss = cross_entropy(tape, res.model.forward_logits(tape, features[i]), labels[i]);
                tape.backward(loss, res.model.params(), grads);
            }
            const double inv = 1.0 / (end - start);
            for (double& g : grads) g *= inv;
            optim.step(res.model.params(), grads);
        }
    }
    return res;
}

double sample_variance(std::span<const double> p) {
    const int k = static_cast<int>(p.size());
    if (k < 2)
        throw std::invalid_argument("sample_variance: need at least 2 classes, got " + std::to_string(k));
    double sum = 0.0;
    for (double v : p) sum += v;
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("sample_variance: probabilities sum to " + std::to_string(sum));
    const double mean = sum / k;
    double acc = 0.0;
    for (double v : p) acc += (v - mean) * (v - mean);
    return acc / (k - 1);
}

std::vector<double> normalize_batch(std::span<const double> variances) {
    if (variances.empty()) throw std::invalid_argument("normalize_batch: empty batch");
    double mn = variances[0], mx = variances[0];
    for (double v : variances) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    std::vector<double> out(variances.size(), 0.0);
    if (mx > mn)
        for (size_t i = 0; i < variances.size(); ++i) out[i] = (variances[i] - mn) / (mx - mn);
    return out;
}

std::vector<ShortcutProfile> compute_profiles(const std::vector<EncodedExample>& examples,
                                              const std::vector<AttributionResult>& attributions,
                                              const ClassifierModel& encoder, const BiasOnlyModel& bias,
                                              int top_n, int batch_size) {
    if (examples.size() != attributions.size())
        throw std::invalid_argument("compute_profiles: " + std::to_string(examples.size()) +
                                    " examples vs " + std::to_string(attributions.size()) + " attributions");
    const int64_t n = static_cast<int64_t>(examples.size());
    std::vector<std::vector<double>> features(n);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic) if (n > 8)
    for (int64_t i = 0; i < n; ++i) {
        try {
            features[i] = build_bias_features(examples[i], attributions[i].top_indices, encoder, top_n);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (int64_t i = 0; i < n; ++i)
        if (!errors[i].empty())
            throw StageError("compute_profiles: example '" + examples[i].id + "': " + errors[i]);
    return compute_profiles(examples, attributions, features, bias, batch_size);
}

std::vector<ShortcutProfile> compute_profiles(const std::vector<EncodedExample>& examples,
                                              const std::vector<AttributionResult>& attributions,
                                              const std::vector<std::vector<double>>& features,
                                              const BiasOnlyModel& bias, int batch_size) {
    if (examples.size() != attributions.size())
        throw std::invalid_argument("compute_profiles: " + std::to_string(examples.size()) +
                                    " examples vs " + std::to_string(attributions.size()) + " attributions");
    if (examples.size() != features.size())
        throw std::invalid_argument("compute_profiles: " + std::to_string(examples.size()) +
                                    " examples vs " + std::to_string(features.size()) + " feature rows");
    if (batch_size < 1) throw std::invalid_argument("compute_profiles: batch_size must be >= 1");
    const int64_t n = static_cast<int64_t>(examples.size());
    std::vector<ShortcutProfile> profiles(n);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic) if (n > 8)
    for (int64_t i = 0; i < n; ++i) {
        try {
            ShortcutProfile& pr = profiles[i];
            pr.example_id = examples[i].id;
            pr.top_indices = attributions[i].top_indices;
            pr.p = bias.predict_proba(features[i]);
            pr.s2 = sample_variance(pr.p);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (int64_t i = 0; i < n; ++i)
        if (!errors[i].empty())
            throw StageError("compute_profiles: example '" + examples[i].id + "': " + errors[i]);

    // Normalize within consecutive corpus-order batches — the same fixed
    // partition the debiased loop trains on, so degrees are reproducible.
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t end = std::min(n, start + batch_size);
        std::vector<double> s2(end - start);
        for (int64_t i = start; i < end; ++i) s2[i - start] = profiles[i].s2;
        std::vector<double> s2_hat = normalize_batch(s2);
        for (int64_t i = start; i < end; ++i) profiles[i].s2_hat = s2_hat[i - start];
    }
    return profiles;
}

void save_profiles(const std::vector<ShortcutProfile>& profiles, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_profiles: cannot open " + path);
    for (const ShortcutProfile& pr : profiles) {
        nlohmann::ordered_json j;
        j["id"] = pr.example_id;
        j["top_n"] = pr.top_indices;
        j["p"] = pr.p;
        j["s2"] = pr.s2;
        j["s2_hat"] = pr.s2_hat;
        out << j.dump() << '\n';
    }
}

std::vector<ShortcutProfile> load_profiles(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_profiles: cannot open " + path);
    std::vector<ShortcutProfile> profiles;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error("load_profiles: " + path + " line " + std::to_string(lineno) +
                                     ": invalid JSON: " + e.what());
        }
        ShortcutProfile pr;
        for (const char* field : {"id", "top_n", "p", "s2", "s2_hat"}) {
            if (!j.contains(field))
                throw std::runtime_error("load_profiles: " + path + " line " + std::to_string(lineno) +
                                         ": missing field '" + field + "'");
        }
        try {
            pr.example_id = j["id"].get<std::string>();
            pr.top_indices = j["top_n"].get<std::vector<int>>();
            pr.p = j["p"].get<std::vector<double>>();
            pr.s2 = j["s2"].get<double>();
            pr.s2_hat = j["s2_hat"].get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_profiles: " + path + " line " + std::to_string(lineno) +
                                     ": bad field type: " + e.what());
        }
        profiles.push_back(std::move(pr));
    }
    return profiles;
}

}  // namespace dbr
