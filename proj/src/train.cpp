#include "dbr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "dbr/kernels.hpp"
#include "dbr/masking.hpp"
#include "json.hpp"

namespace dbr {

namespace {

std::vector<int> live_prefix(const EncodedExample& ex) {
    return std::vector<int>(ex.ids.begin(), ex.ids.begin() + ex.true_len);
}

struct ExampleLoss {
    double ce = 0.0;
    double jsd = 0.0;  // lambda-weighted divergence component
};

Tensor build_example_loss(Tape& tape, const ClassifierModel& model, const EncodedExample& ex,
                          const ShortcutProfile* profile, const TrainConfig& cfg, int epoch,
                          ExampleLoss& out) {
    const std::vector<int> ids = live_prefix(ex);
    switch (cfg.variant) {
        case LossVariant::Standard: {
            Tensor loss = cross_entropy(tape, model.forward(tape, ids).logits, ex.label);
            out.ce = loss.scalar();
            return loss;
        }
        case LossVariant::DbrHard:
        case LossVariant::DbrSoft: {
            const double s2_hat = cfg.variant == LossVariant::DbrHard ? 1.0 : profile->s2_hat;
            MaskDecision decision =
                soft_mask(ids, profile->top_indices, s2_hat, cfg.seed, epoch, ex.id);
            Tensor logits_orig = model.forward(tape, ids).logits;
            Tensor ce = cross_entropy(tape, logits_orig, ex.label);
            out.ce = ce.scalar();
            if (!decision.masked) return ce;  // p_unbias == p_orig, divergence exactly 0
            Tensor logits_unbias = model.forward(tape, decision.ids).logits;
            Tensor weighted = tape.scale(
                jsd_between(tape, tape.softmax_rows(logits_unbias), tape.softmax_rows(logits_orig)),
                cfg.lambda);
            out.jsd = weighted.scalar();
            return tape.add(ce, weighted);
        }
        case LossVariant::Er: {
            Tensor loss = er_loss(tape, profile->p, model.forward(tape, ids).logits, ex.label);
            out.ce = loss.scalar();
            return loss;
        }
        case LossVariant::Poe: {
            std::vector<double> bias_logits(profile->p.size());
            for (size_t i = 0; i < profile->p.size(); ++i)
                bias_logits[i] = std::log(std::max(profile->p[i], kLogFloor));
            Tensor loss = poe_loss(tape, bias_logits, model.forward(tape, ids).logits, ex.label,
                                   cfg.poe_literal_sum);
            out.ce = loss.scalar();
            return loss;
        }
    }
    throw std::logic_error("build_example_loss: unhandled loss variant");
}

TrainResult run_training(const std::vector<EncodedExample>& train,
                         const std::vector<const ShortcutProfile*>* profiles,
                         const std::vector<EncodedExample>& dev, const std::vector<EncodedExample>& ood,
                         const ModelConfig& arch, const TrainConfig& cfg) {
    if (train.empty()) throw std::invalid_argument("training: corpus is empty");
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw std::invalid_argument("training: epochs and batch_size must be >= 1");
    if (cfg.lambda < 0.0) throw std::invalid_argument("training: lambda must be >= 0");
    for (const EncodedExample& ex : train)
        if (ex.label < 0 || ex.label >= arch.num_labels)
            throw std::invalid_argument("training: label " + std::to_string(ex.label) +
                                        " outside [0, " + std::to_string(arch.num_labels) +
                                        ") (example '" + ex.id + "')");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res{ClassifierModel(arch, mix_seed(cfg.seed, "model-init")), {}};
    ParamStore& params = res.model.params();
    const int64_t total = params.total_size();
    Optimizer optim(cfg.optimizer, total);

    const int n = static_cast<int>(train.size());
    const int slots = std::min(cfg.batch_size, n);
    std::vector<std::vector<double>> ex_grads(slots, std::vector<double>(total));
    std::vector<ExampleLoss> ex_losses(slots);
    std::vector<std::string> ex_errors(slots);
    std::vector<double> grads(total);

    std::vector<double> last_good = params.flat_values();
    int last_good_epoch = -1;
    auto diverged = [&](const std::string& what, int step, int epoch, const std::string& id) {
        params.set_flat_values(last_good);
        std::string where = "step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")";
        if (!id.empty()) where += " example '" + id + "'";
        throw TrainingDiverged("training diverged at " + where + ": " + what +
                                   "; parameters restored to end of epoch " +
                                   std::to_string(last_good_epoch),
                               last_good, last_good_epoch);
    };

    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int start = 0; start < n; start += cfg.batch_size, ++step) {
            const int count = std::min(cfg.batch_size, n - start);
#pragma omp parallel for schedule(dynamic) if (count > 1)
            for (int i = 0; i < count; ++i) {
                try {
                    std::fill(ex_grads[i].begin(), ex_grads[i].end(), 0.0);
                    Tape tape;
                    ExampleLoss el;
                    const ShortcutProfile* profile = profiles ? (*profiles)[start + i] : nullptr;
                    Tensor loss = build_example_loss(tape, res.model, train[start + i], profile, cfg,
                                                     epoch, el);
                    tape.backward(loss, params, ex_grads[i]);
                    ex_losses[i] = el;
                    ex_errors[i].clear();
                } catch (const std::exception& e) {
                    ex_errors[i] = e.what();
                }
            }
            StepRecord rec{step, epoch, 0.0, 0.0, 0.0};
            for (int i = 0; i < count; ++i) {
                if (!ex_errors[i].empty()) diverged(ex_errors[i], step, epoch, train[start + i].id);
                if (!std::isfinite(ex_losses[i].ce) || !std::isfinite(ex_losses[i].jsd))
                    diverged("non-finite loss", step, epoch, train[start + i].id);
                rec.ce += ex_losses[i].ce;
                rec.jsd += ex_losses[i].jsd;
            }
            rec.ce /= count;
            rec.jsd /= count;
            rec.total = rec.ce + rec.jsd;
            res.log.steps.push_back(rec);

            std::fill(grads.begin(), grads.end(), 0.0);
            for (int i = 0; i < count; ++i)
                kernels::serial::axpy(1.0, ex_grads[i].data(), grads.data(), total);
            const double inv = 1.0 / count;
            for (double& g : grads) g *= inv;
            try {
                optim.step(params, grads);
            } catch (const std::runtime_error& e) {
                diverged(e.what(), step, epoch, "");
            }
        }
        last_good = params.flat_values();
        last_good_epoch = epoch;
        EpochRecord er{epoch, -1.0, -1.0};
        if (!dev.empty()) er.dev_accuracy = evaluate(res.model, dev).accuracy;
        if (!ood.empty()) er.ood_accuracy = evaluate(res.model, ood).accuracy;
        res.log.epochs.push_back(er);
    }
    res.model.mark_trained();
    res.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace

EvalResult evaluate(const ClassifierModel& model, const std::vector<EncodedExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("evaluate: empty example set");
    const int k = model.config().num_labels;
    const int64_t n = static_cast<int64_t>(examples.size());
    std::vector<uint8_t> correct(n, 0);
    std::vector<double> confidence(n, 0.0);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic) if (n > 8)
    for (int64_t i = 0; i < n; ++i) {
        try {
            const EncodedExample& ex = examples[i];
            if (ex.label < 0 || ex.label >= k)
                throw std::invalid_argument("label " + std::to_string(ex.label) + " outside [0, " +
                                            std::to_string(k) + ")");
            std::vector<double> p = model.predict_proba(live_prefix(ex));
            int pred = 0;
            for (int c = 1; c < k; ++c)
                if (p[c] > p[pred]) pred = c;
            correct[i] = pred == ex.label;
            confidence[i] = p[pred];
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (int64_t i = 0; i < n; ++i)
        if (!errors[i].empty())
            throw StageError("evaluate: example '" + examples[i].id + "': " + errors[i]);

    EvalResult res;
    res.per_class_count.assign(k, 0);
    std::vector<int> per_class_correct(k, 0);
    double conf_sum = 0.0;
    int hits = 0;
    for (int64_t i = 0; i < n; ++i) {
        const int y = examples[i].label;
        ++res.per_class_count[y];
        per_class_correct[y] += correct[i];
        hits += correct[i];
        conf_sum += confidence[i];
    }
    res.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    res.per_class_accuracy.assign(k, 0.0);
    for (int c = 0; c < k; ++c)
        if (res.per_class_count[c] > 0)
            res.per_class_accuracy[c] = static_cast<double>(per_class_correct[c]) / res.per_class_count[c];
    res.mean_confidence = conf_sum / static_cast<double>(n);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double dlt = confidence[i] - res.mean_confidence;
        acc += dlt * dlt;
    }
    res.var_confidence = acc / static_cast<double>(n);
    return res;
}

TrainResult train_identification(const std::vector<EncodedExample>& train,
                                 const std::vector<EncodedExample>& dev,
                                 const std::vector<EncodedExample>& ood, const ModelConfig& arch,
                                 const TrainConfig& config) {
    TrainConfig cfg = config;
    cfg.variant = LossVariant::Standard;  // identification is always plain CE
    return run_training(train, nullptr, dev, ood, arch, cfg);
}

TrainResult train_debiased(const std::vector<EncodedExample>& train,
                           const std::vector<ShortcutProfile>& profiles,
                           const std::vector<EncodedExample>& dev,
                           const std::vector<EncodedExample>& ood, const ModelConfig& arch,
                           const TrainConfig& config) {
    std::unordered_map<std::string, const ShortcutProfile*> by_id;
    by_id.reserve(profiles.size());
    for (const ShortcutProfile& pr : profiles) by_id[pr.example_id] = &pr;
    std::vector<const ShortcutProfile*> aligned(train.size());
    for (size_t i = 0; i < train.size(); ++i) {
        auto it = by_id.find(train[i].id);
        if (it == by_id.end())
            throw std::invalid_argument("train_debiased: no shortcut profile for example '" +
                                        train[i].id + "'");
        aligned[i] = it->second;
    }
    return run_training(train, &aligned, dev, ood, arch, config);
}

// ---------------------------------------------------------------------------
// TrainLog persistence: one JSON record per line.

void save_train_log(const TrainLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_train_log: cannot open " + path);
    for (const StepRecord& s : log.steps) {
        nlohmann::ordered_json j;
        j["type"] = "step";
        j["step"] = s.step;
        j["epoch"] = s.epoch;
        j["ce"] = s.ce;
        j["jsd"] = s.jsd;
        j["total"] = s.total;
        out << j.dump() << '\n';
    }
    for (const EpochRecord& e : log.epochs) {
        nlohmann::ordered_json j;
        j["type"] = "epoch";
        j["epoch"] = e.epoch;
        j["dev_accuracy"] = e.dev_accuracy;
        j["ood_accuracy"] = e.ood_accuracy;
        out << j.dump() << '\n';
    }
}

TrainLog load_train_log(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_train_log: cannot open " + path);
    TrainLog log;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error("load_train_log: " + path + " line " + std::to_string(lineno) +
                                     ": invalid JSON: " + e.what());
        }
        try {
            const std::string type = j.at("type").get<std::string>();
            if (type == "step") {
                log.steps.push_back({j.at("step").get<int>(), j.at("epoch").get<int>(),
                                     j.at("ce").get<double>(), j.at("jsd").get<double>(),
                                     j.at("total").get<double>()});
            } else if (type == "epoch") {
                log.epochs.push_back({j.at("epoch").get<int>(), j.at("dev_accuracy").get<double>(),
                                      j.at("ood_accuracy").get<double>()});
            } else {
                throw std::runtime_error("unknown record type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_train_log: " + path + " line " + std::to_string(lineno) +
                                     ": bad record: " + e.what());
        }
    }
    return log;
}

}  // namespace dbr
