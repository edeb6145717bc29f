#include "dbr/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dbr/analysis.hpp"
#include "dbr/attribution.hpp"
#include "dbr/checkpoint.hpp"
#include "dbr/common.hpp"
#include "dbr/dataset.hpp"
#include "dbr/shortcut.hpp"
#include "dbr/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace dbr {

namespace {

constexpr StageId kStageOrder[] = {StageId::GenData,   StageId::TrainId,     StageId::ExtractShortcuts,
                                   StageId::TrainBias, StageId::TrainDebias, StageId::Eval,
                                   StageId::Analyze};

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StageError("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StageError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw StageError("write failed for " + path);
}

// Minimal per-example extraction record persisted in shortcuts.jsonl; norms
// cover the live prefix only (PAD rows are identically zero).
struct ShortcutRecord {
    std::string id;
    std::vector<int> top_indices;
    std::vector<double> norms;
};

void save_shortcut_records(const std::vector<ShortcutRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw StageError("cannot open " + path + " for writing");
    for (const ShortcutRecord& r : records) {
        ordered_json j;
        j["id"] = r.id;
        j["top_n"] = r.top_indices;
        j["norms"] = r.norms;
        out << j.dump() << '\n';
    }
    if (!out) throw StageError("write failed for " + path);
}

std::vector<ShortcutRecord> load_shortcut_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StageError("cannot read " + path);
    std::vector<ShortcutRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            ShortcutRecord r;
            r.id = j.at("id").get<std::string>();
            r.top_indices = j.at("top_n").get<std::vector<int>>();
            r.norms = j.at("norms").get<std::vector<double>>();
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw StageError(path + ":" + std::to_string(lineno) + ": bad shortcut record: " + e.what());
        }
    }
    return records;
}

int argmax_first(std::span<const double> p) {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

ordered_json parse_json_file(const std::string& path) {
    try {
        return ordered_json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw StageError(path + ": " + e.what());
    }
}

}  // namespace

const char* stage_name(StageId id) {
    switch (id) {
        case StageId::GenData: return "gen-data";
        case StageId::TrainId: return "train-id";
        case StageId::ExtractShortcuts: return "extract-shortcuts";
        case StageId::TrainBias: return "train-bias";
        case StageId::TrainDebias: return "train-debias";
        case StageId::Eval: return "eval";
        case StageId::Analyze: return "analyze";
    }
    throw std::logic_error("stage_name: bad StageId");
}

std::optional<StageId> stage_from_name(const std::string& name) {
    for (StageId id : kStageOrder)
        if (name == stage_name(id)) return id;
    return std::nullopt;
}

const std::vector<StageId>& all_stages() {
    static const std::vector<StageId> order(std::begin(kStageOrder), std::end(kStageOrder));
    return order;
}

Manifest Manifest::load(const std::string& path) {
    Manifest m;
    if (!fs::exists(path)) return m;
    ordered_json j;
    try {
        j = ordered_json::parse(read_file(path));
        if (j.contains("stages")) {
            for (const auto& [name, rec] : j.at("stages").items()) {
                StageRecord r;
                r.config_fingerprint = rec.at("config_fingerprint").get<std::string>();
                for (const auto& [p, h] : rec.at("inputs").items()) r.inputs[p] = h.get<std::string>();
                for (const auto& [p, h] : rec.at("outputs").items()) r.outputs[p] = h.get<std::string>();
                m.stages[name] = std::move(r);
            }
        }
        if (j.contains("failure")) {
            m.failed_stage = j.at("failure").at("stage").get<std::string>();
            m.failure_error = j.at("failure").at("error").get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw StageError("manifest " + path + " is corrupt: " + e.what());
    }
    return m;
}

void Manifest::save(const std::string& path) const {
    ordered_json j;
    ordered_json stages_j = ordered_json::object();
    for (const auto& [name, rec] : stages) {
        ordered_json r;
        r["config_fingerprint"] = rec.config_fingerprint;
        r["inputs"] = ordered_json::object();
        for (const auto& [p, h] : rec.inputs) r["inputs"][p] = h;
        r["outputs"] = ordered_json::object();
        for (const auto& [p, h] : rec.outputs) r["outputs"][p] = h;
        stages_j[name] = std::move(r);
    }
    j["stages"] = std::move(stages_j);
    if (!failed_stage.empty()) {
        j["failure"] = ordered_json{{"stage", failed_stage}, {"error", failure_error}};
    }
    write_file(path, j.dump(2) + "\n");
}

uint64_t hash_file(const std::string& path) { return fnv1a64(read_file(path)); }

std::string hash_hex(uint64_t h) {
    char buf[17];
    for (int i = 15; i >= 0; --i) {
        buf[i] = "0123456789abcdef"[h & 0xf];
        h >>= 4;
    }
    buf[16] = '\0';
    return std::string(buf);
}

std::string resolve_run_dir(const std::string& configured) {
    if (configured.empty()) throw ConfigError("run.run_dir must not be empty");
    fs::path p(configured);
    if (p.is_absolute()) return p.lexically_normal().string();
    const char* root = std::getenv("DBR_RUN_ROOT");
    if (root != nullptr && root[0] != '\0') return (fs::path(root) / p).lexically_normal().string();
    return p.lexically_normal().string();
}

RunLock::RunLock(const std::string& run_dir) : path_(run_dir + "/lock") {
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST)
            throw StageError("run directory " + run_dir + " is locked (" + path_ +
                             " exists); another invocation may be active — remove the lock file "
                             "if that process is gone");
        throw StageError("cannot create lock file " + path_ + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    // Best effort; the lock's existence is what matters.
    (void)!::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() { ::unlink(path_.c_str()); }

Pipeline::Pipeline(Config config, std::string run_dir) : config_(std::move(config)), dir_(std::move(run_dir)) {
    config_.validate();
    if (dir_.empty()) throw ConfigError("run directory must not be empty");
    fs::create_directories(dir_);
    for (const char* sub : {"data", "checkpoints", "artifacts", "logs", "eval", "analysis"})
        fs::create_directories(fs::path(dir_) / sub);
    manifest_ = Manifest::load(path("manifest.json"));
}

std::string Pipeline::path(const std::string& rel) const { return (fs::path(dir_) / rel).string(); }

std::vector<std::string> Pipeline::stage_config_keys(StageId id) {
    switch (id) {
        case StageId::GenData:
            return {"run.seed",        "data.num_labels", "data.content_per_label",
                    "data.shortcut_per_label", "data.filler_count", "data.rho_train",
                    "data.rho_ood",    "data.shortcut_rate", "data.genuine_signal",
                    "data.len_min",    "data.len_max",    "data.train_size",
                    "data.dev_size",   "data.ood_size"};
        case StageId::TrainId:
            return {"run.seed",        "model.embed_dim", "model.encoder",
                    "model.max_len",   "training.id_epochs", "training.id_batch",
                    "training.lr",     "training.optimizer"};
        case StageId::ExtractShortcuts:
            return {"model.max_len", "attribution.ig_steps", "attribution.top_n",
                    "attribution.use_filtered_words", "analysis.lmi_top_k"};
        case StageId::TrainBias:
            return {"run.seed",           "model.max_len",        "training.bias_epochs",
                    "training.bias_batch", "training.bias_subset", "training.bias_hidden",
                    "training.debias_batch", "training.lr",        "training.optimizer",
                    "attribution.top_n"};
        case StageId::TrainDebias:
            return {"run.seed",          "model.embed_dim",       "model.encoder",
                    "model.max_len",     "training.debias_epochs", "training.debias_batch",
                    "training.lambda",   "training.lr",           "training.optimizer",
                    "training.loss_variant", "training.poe_literal_sum"};
        case StageId::Eval:
            return {"model.max_len"};
        case StageId::Analyze:
            return {"model.max_len",          "attribution.ig_steps",     "attribution.top_n",
                    "training.loss_variant",  "analysis.lmi_top_k",       "analysis.histogram_bins",
                    "analysis.heatmap_examples", "analysis.share_sample", "analysis.ce_threshold",
                    "analysis.threshold_window"};
    }
    throw std::logic_error("stage_config_keys: bad StageId");
}

std::vector<std::string> Pipeline::stage_inputs(StageId id) {
    switch (id) {
        case StageId::GenData: return {};
        case StageId::TrainId:
            return {"data/train.jsonl", "data/dev.jsonl", "data/ood.jsonl", "data/vocab.txt"};
        case StageId::ExtractShortcuts:
            return {"data/train.jsonl", "data/vocab.txt", "checkpoints/identification.ckpt"};
        case StageId::TrainBias:
            return {"data/train.jsonl", "data/vocab.txt", "checkpoints/identification.ckpt",
                    "artifacts/shortcuts.jsonl"};
        case StageId::TrainDebias:
            return {"data/train.jsonl", "data/dev.jsonl", "data/ood.jsonl", "data/vocab.txt",
                    "artifacts/profiles.jsonl"};
        case StageId::Eval:
            return {"data/dev.jsonl", "data/ood.jsonl", "data/vocab.txt",
                    "checkpoints/identification.ckpt", "checkpoints/debiased.ckpt"};
        case StageId::Analyze:
            return {"data/train.jsonl",  "data/dev.jsonl",
                    "data/vocab.txt",    "checkpoints/identification.ckpt",
                    "checkpoints/debiased.ckpt", "artifacts/profiles.jsonl",
                    "logs/train_id.jsonl", "logs/train_debias.jsonl"};
    }
    throw std::logic_error("stage_inputs: bad StageId");
}

std::vector<std::string> Pipeline::stage_outputs(StageId id) {
    switch (id) {
        case StageId::GenData:
            return {"data/train.jsonl", "data/dev.jsonl", "data/ood.jsonl", "data/vocab.txt"};
        case StageId::TrainId:
            return {"checkpoints/identification.ckpt", "checkpoints/identification.ckpt.meta.json",
                    "logs/train_id.jsonl"};
        case StageId::ExtractShortcuts:
            return {"artifacts/shortcuts.jsonl", "artifacts/filtered_words.txt",
                    "artifacts/extract_stats.json"};
        case StageId::TrainBias:
            return {"checkpoints/bias.ckpt", "checkpoints/bias.ckpt.meta.json",
                    "artifacts/profiles.jsonl", "artifacts/bias_holdout.json"};
        case StageId::TrainDebias:
            return {"checkpoints/debiased.ckpt", "checkpoints/debiased.ckpt.meta.json",
                    "logs/train_debias.jsonl"};
        case StageId::Eval: return {"eval/metrics.jsonl"};
        case StageId::Analyze:
            return {"analysis/lmi.tsv",          "analysis/confidence.json",
                    "analysis/trends.json",      "analysis/heatmap_identification.html",
                    "analysis/heatmap_debiased.html", "analysis/loss_curves.html"};
    }
    throw std::logic_error("stage_outputs: bad StageId");
}

std::string Pipeline::fingerprint(StageId id) const {
    return hash_hex(fnv1a64(config_slice(config_, stage_config_keys(id))));
}

namespace {

// Which stage produces a given relative path, if any.
std::optional<StageId> producer_of(const std::string& rel) {
    for (StageId id : all_stages()) {
        const std::vector<std::string> outs = Pipeline::stage_outputs(id);
        if (std::find(outs.begin(), outs.end(), rel) != outs.end()) return id;
    }
    return std::nullopt;
}

}  // namespace

void Pipeline::verify_inputs_fresh(StageId id) const {
    const std::string name = stage_name(id);
    for (const std::string& rel : stage_inputs(id)) {
        std::optional<StageId> prod = producer_of(rel);
        if (!prod) continue;
        const std::string prod_name = stage_name(*prod);
        auto pit = manifest_.stages.find(prod_name);
        if (pit == manifest_.stages.end())
            throw StaleArtifactError(name + ": input " + rel + " has no manifest record from " +
                                     prod_name + "; run that stage first or pass --force");
        auto oit = pit->second.outputs.find(rel);
        if (oit == pit->second.outputs.end())
            throw StaleArtifactError(name + ": manifest record for " + prod_name +
                                     " does not list output " + rel + "; rerun it or pass --force");
        const std::string current = hash_hex(hash_file(path(rel)));
        if (current != oit->second)
            throw StaleArtifactError(name + ": input " + rel + " does not match the hash recorded when " +
                                     prod_name + " produced it (recorded " + oit->second + ", found " +
                                     current + "); rerun upstream stages or pass --force");
    }
}

bool Pipeline::run_stage(StageId id, const PipelineOptions& opts) {
    const std::string name = stage_name(id);

    for (const std::string& rel : stage_inputs(id)) {
        if (fs::exists(path(rel))) continue;
        std::optional<StageId> prod = producer_of(rel);
        std::string msg = name + ": missing input " + rel;
        if (prod) msg += " (produced by " + std::string(stage_name(*prod)) + ")";
        throw StageError(msg);
    }

    std::map<std::string, std::string> in_hashes;
    for (const std::string& rel : stage_inputs(id)) in_hashes[rel] = hash_hex(hash_file(path(rel)));
    const std::string fp = fingerprint(id);

    auto it = manifest_.stages.find(name);
    bool fresh = !opts.force && it != manifest_.stages.end() && it->second.config_fingerprint == fp &&
                 it->second.inputs == in_hashes;
    if (fresh)
        for (const std::string& rel : stage_outputs(id))
            if (!fs::exists(path(rel))) {
                fresh = false;
                break;
            }
    if (fresh) {
        for (const std::string& rel : stage_outputs(id))
            it->second.outputs[rel] = hash_hex(hash_file(path(rel)));
        manifest_.save(path("manifest.json"));
        if (!opts.quiet) std::cout << "[" << name << "] up to date, skipping\n";
        return false;
    }

    if (opts.strict_inputs && !opts.force) verify_inputs_fresh(id);

    if (!opts.quiet) std::cout << "[" << name << "] running\n";
    try {
        execute_stage(id);
    } catch (const std::exception& e) {
        manifest_.failed_stage = name;
        manifest_.failure_error = e.what();
        manifest_.save(path("manifest.json"));
        throw;
    }

    StageRecord rec;
    rec.config_fingerprint = fp;
    rec.inputs = std::move(in_hashes);
    for (const std::string& rel : stage_outputs(id)) rec.outputs[rel] = hash_hex(hash_file(path(rel)));
    manifest_.stages[name] = std::move(rec);
    manifest_.failed_stage.clear();
    manifest_.failure_error.clear();
    manifest_.save(path("manifest.json"));
    if (!opts.quiet) std::cout << "[" << name << "] done\n";
    return true;
}

void Pipeline::run_all(const PipelineOptions& opts) {
    write_config_snapshot();
    for (StageId id : all_stages()) run_stage(id, opts);
    write_report();
    if (!opts.quiet) std::cout << "report written to " << path("report.jsonl") << "\n";
}

void Pipeline::write_config_snapshot() const { write_file(path("config.ini"), serialize_config(config_)); }

void Pipeline::execute_stage(StageId id) {
    switch (id) {
        case StageId::GenData: stage_gen_data(); return;
        case StageId::TrainId: stage_train_id(); return;
        case StageId::ExtractShortcuts: stage_extract_shortcuts(); return;
        case StageId::TrainBias: stage_train_bias(); return;
        case StageId::TrainDebias: stage_train_debias(); return;
        case StageId::Eval: stage_eval(); return;
        case StageId::Analyze: stage_analyze(); return;
    }
    throw std::logic_error("execute_stage: bad StageId");
}

namespace {

void check_vocab_match(const std::string& what, uint64_t ckpt_hash, const Vocabulary& vocab) {
    if (ckpt_hash != vocab.content_hash())
        throw StaleArtifactError(what + " was trained against a different vocabulary (checkpoint " +
                                 hash_hex(ckpt_hash) + ", data/vocab.txt " +
                                 hash_hex(vocab.content_hash()) +
                                 "); regenerate the downstream stages");
}

}  // namespace

void Pipeline::stage_gen_data() {
    GeneratedCorpora corpora = generate_corpus(config_.data_spec());
    save_corpus(corpora.train, path("data/train.jsonl"));
    save_corpus(corpora.dev, path("data/dev.jsonl"));
    save_corpus(corpora.ood, path("data/ood.jsonl"));
    Vocabulary vocab = build_vocabulary({&corpora.train, &corpora.dev, &corpora.ood});
    vocab.save(path("data/vocab.txt"));
}

void Pipeline::stage_train_id() {
    Vocabulary vocab = Vocabulary::load(path("data/vocab.txt"));
    std::vector<EncodedExample> train =
        encode_corpus(load_corpus(path("data/train.jsonl")), vocab, config_.max_len);
    std::vector<EncodedExample> dev =
        encode_corpus(load_corpus(path("data/dev.jsonl")), vocab, config_.max_len);
    std::vector<EncodedExample> ood =
        encode_corpus(load_corpus(path("data/ood.jsonl")), vocab, config_.max_len);

    const ModelConfig arch = config_.model_config(vocab.size());
    TrainResult result = [&] {
        try {
            return train_identification(train, dev, ood, arch, config_.id_train_config());
        } catch (const TrainingDiverged& e) {
            if (e.last_good_epoch >= 0) {
                ClassifierModel snapshot(arch, 0);
                snapshot.params().set_flat_values(e.last_good_params);
                snapshot.mark_trained();
                const std::string p = path("checkpoints/identification.diverged.ckpt");
                save_classifier_checkpoint(snapshot, vocab.content_hash(), p);
                throw StageError(std::string(e.what()) +
                                 "; parameters from the last completed epoch saved to " + p);
            }
            throw StageError(e.what());
        }
    }();
    save_classifier_checkpoint(result.model, vocab.content_hash(), path("checkpoints/identification.ckpt"));
    save_train_log(result.log, path("logs/train_id.jsonl"));
}

void Pipeline::stage_extract_shortcuts() {
    Corpus train_raw = load_corpus(path("data/train.jsonl"));
    Vocabulary vocab = Vocabulary::load(path("data/vocab.txt"));
    LoadedClassifier lc = load_classifier_checkpoint(path("checkpoints/identification.ckpt"));
    check_vocab_match("checkpoints/identification.ckpt", lc.vocab_hash, vocab);

    std::vector<EncodedExample> encoded = encode_corpus(train_raw, vocab, config_.max_len);
    std::vector<AttributionResult> results =
        attribute_corpus(lc.model, encoded, config_.ig_steps, config_.top_n);

    std::set<std::string> filtered;
    if (config_.use_filtered_words) {
        std::vector<ShortcutProfile> pass1(encoded.size());
        for (size_t i = 0; i < encoded.size(); ++i) {
            pass1[i].example_id = encoded[i].id;
            pass1[i].top_indices = results[i].top_indices;
        }
        filtered = filtered_word_list(top_lmi_table(pass1, train_raw, config_.lmi_top_k));
        std::unordered_set<int> excluded;
        for (const std::string& w : filtered)
            if (vocab.contains(w)) excluded.insert(vocab.id(w));
        // Re-select the top positions over the same norms; the path integral
        // itself does not depend on the exclusion set.
        for (size_t i = 0; i < encoded.size(); ++i) {
            const EncodedExample& ex = encoded[i];
            std::vector<uint8_t> eligible(results[i].norms.size(), 0);
            int candidates = 0;
            for (int t = 0; t < ex.true_len; ++t) {
                if (ex.ids[t] < kNumReserved || excluded.count(ex.ids[t])) continue;
                eligible[t] = 1;
                ++candidates;
            }
            // An example whose every token is filtered keeps its unfiltered
            // selection rather than failing the whole stage.
            if (candidates == 0) continue;
            results[i].top_indices = top_n_tokens(results[i].norms, config_.top_n, eligible);
        }
    }

    std::string words;
    for (const std::string& w : filtered) words += w + "\n";
    write_file(path("artifacts/filtered_words.txt"), words);

    std::vector<ShortcutRecord> records(encoded.size());
    int64_t bearing = 0, hit = 0;
    for (size_t i = 0; i < encoded.size(); ++i) {
        records[i].id = encoded[i].id;
        records[i].top_indices = results[i].top_indices;
        records[i].norms.assign(results[i].norms.begin(), results[i].norms.begin() + encoded[i].true_len);
        if (!encoded[i].shortcut_positions.empty()) {
            ++bearing;
            bool found = false;
            for (int p : encoded[i].shortcut_positions)
                if (std::find(results[i].top_indices.begin(), results[i].top_indices.end(), p) !=
                    results[i].top_indices.end())
                    found = true;
            if (found) ++hit;
        }
    }
    save_shortcut_records(records, path("artifacts/shortcuts.jsonl"));

    ordered_json stats;
    stats["examples"] = encoded.size();
    stats["shortcut_bearing"] = bearing;
    stats["planted_hit_rate"] = bearing > 0 ? static_cast<double>(hit) / static_cast<double>(bearing) : 0.0;
    stats["filtered_words"] = filtered.size();
    write_file(path("artifacts/extract_stats.json"), stats.dump(2) + "\n");
}

void Pipeline::stage_train_bias() {
    Corpus train_raw = load_corpus(path("data/train.jsonl"));
    Vocabulary vocab = Vocabulary::load(path("data/vocab.txt"));
    LoadedClassifier lc = load_classifier_checkpoint(path("checkpoints/identification.ckpt"));
    check_vocab_match("checkpoints/identification.ckpt", lc.vocab_hash, vocab);

    std::vector<EncodedExample> encoded = encode_corpus(train_raw, vocab, config_.max_len);
    std::vector<ShortcutRecord> records = load_shortcut_records(path("artifacts/shortcuts.jsonl"));
    if (records.size() != encoded.size())
        throw StageError("train-bias: " + std::to_string(records.size()) + " shortcut records vs " +
                         std::to_string(encoded.size()) + " training examples; rerun extract-shortcuts");
    const int64_t n = static_cast<int64_t>(encoded.size());
    std::vector<AttributionResult> tops(n);
    for (int64_t i = 0; i < n; ++i) {
        if (records[i].id != encoded[i].id)
            throw StageError("train-bias: shortcut record " + std::to_string(i) + " is for '" +
                             records[i].id + "' but the corpus has '" + encoded[i].id +
                             "'; rerun extract-shortcuts");
        tops[i].top_indices = records[i].top_indices;
    }

    const int d = lc.model.config().embed_dim;
    std::vector<std::vector<double>> features(n);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic) if (n > 8)
    for (int64_t i = 0; i < n; ++i) {
        try {
            features[i] = build_bias_features(encoded[i], tops[i].top_indices, lc.model, config_.top_n);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (int64_t i = 0; i < n; ++i)
        if (!errors[i].empty())
            throw StageError("train-bias: example '" + encoded[i].id + "': " + errors[i]);

    const int64_t subset = std::min<int64_t>(config_.bias_subset, n);
    std::vector<std::vector<double>> subset_features(features.begin(), features.begin() + subset);
    std::vector<int> subset_labels(subset);
    for (int64_t i = 0; i < subset; ++i) subset_labels[i] = encoded[i].label;

    BiasTrainResult bias =
        train_bias_only(subset_features, subset_labels, config_.top_n * d, config_.bias_hidden,
                        config_.num_labels, config_.bias_epochs, config_.bias_batch,
                        config_.optimizer_config(), config_.seed);

    std::vector<ShortcutProfile> profiles =
        compute_profiles(encoded, tops, features, bias.model, config_.debias_batch);
    save_profiles(profiles, path("artifacts/profiles.jsonl"));
    save_bias_checkpoint(bias.model, vocab.content_hash(), path("checkpoints/bias.ckpt"));

    // Held-out sanity numbers on the training examples past the fitting
    // subset, overall and restricted to generator-planted shortcut bearers.
    int64_t held = 0, held_ok = 0, bear = 0, bear_ok = 0;
    for (int64_t i = subset; i < n; ++i) {
        const bool ok = argmax_first(profiles[i].p) == encoded[i].label;
        ++held;
        held_ok += ok;
        if (!encoded[i].shortcut_positions.empty()) {
            ++bear;
            bear_ok += ok;
        }
    }
    ordered_json holdout;
    holdout["subset_size"] = subset;
    holdout["holdout_count"] = held;
    holdout["holdout_accuracy"] = held > 0 ? static_cast<double>(held_ok) / held : -1.0;
    holdout["holdout_bearing_count"] = bear;
    holdout["holdout_bearing_accuracy"] = bear > 0 ? static_cast<double>(bear_ok) / bear : -1.0;
    holdout["chance"] = 1.0 / config_.num_labels;
    holdout["warnings"] = bias.warnings;
    write_file(path("artifacts/bias_holdout.json"), holdout.dump(2) + "\n");
}

void Pipeline::stage_train_debias() {
    Vocabulary vocab = Vocabulary::load(path("data/vocab.txt"));
    std::vector<EncodedExample> train =
        encode_corpus(load_corpus(path("data/train.jsonl")), vocab, config_.max_len);
    std::vector<EncodedExample> dev =
        encode_corpus(load_corpus(path("data/dev.jsonl")), vocab, config_.max_len);
    std::vector<EncodedExample> ood =
        encode_corpus(load_corpus(path("data/ood.jsonl")), vocab, config_.max_len);
    std::vector<ShortcutProfile> profiles = load_profiles(path("artifacts/profiles.jsonl"));

    const ModelConfig arch = config_.model_config(vocab.size());
    TrainResult result = [&] {
        try {
            return train_debiased(train, profiles, dev, ood, arch, config_.debias_train_config());
        } catch (const TrainingDiverged& e) {
            if (e.last_good_epoch >= 0) {
                ClassifierModel snapshot(arch, 0);
                snapshot.params().set_flat_values(e.last_good_params);
                snapshot.mark_trained();
                const std::string p = path("checkpoints/debiased.diverged.ckpt");
                save_classifier_checkpoint(snapshot, vocab.content_hash(), p);
                throw StageError(std::string(e.what()) +
                                 "; parameters from the last completed epoch saved to " + p);
            }
            throw StageError(e.what());
        }
    }();
    save_classifier_checkpoint(result.model, vocab.content_hash(), path("checkpoints/debiased.ckpt"));
    save_train_log(result.log, path("logs/train_debias.jsonl"));
}

void Pipeline::stage_eval() {
    Vocabulary vocab = Vocabulary::load(path("data/vocab.txt"));
    std::vector<EncodedExample> dev =
        encode_corpus(load_corpus(path("data/dev.jsonl")), vocab, config_.max_len);
    std::vector<EncodedExample> ood =
        encode_corpus(load_corpus(path("data/ood.jsonl")), vocab, config_.max_len);
    LoadedClassifier id_model = load_classifier_checkpoint(path("checkpoints/identification.ckpt"));
    check_vocab_match("checkpoints/identification.ckpt", id_model.vocab_hash, vocab);
    LoadedClassifier db_model = load_classifier_checkpoint(path("checkpoints/debiased.ckpt"));
    check_vocab_match("checkpoints/debiased.ckpt", db_model.vocab_hash, vocab);

    std::ofstream out(path("eval/metrics.jsonl"), std::ios::binary);
    if (!out) throw StageError("cannot open " + path("eval/metrics.jsonl") + " for writing");
    const std::pair<const char*, const ClassifierModel*> models[] = {
        {"identification", &id_model.model}, {"debiased", &db_model.model}};
    const std::pair<const char*, const std::vector<EncodedExample>*> splits[] = {{"dev", &dev},
                                                                                 {"ood", &ood}};
    for (const auto& [mname, model] : models)
        for (const auto& [sname, split] : splits) {
            EvalResult r = evaluate(*model, *split);
            ordered_json j;
            j["model"] = mname;
            j["split"] = sname;
            j["accuracy"] = r.accuracy;
            j["per_class_accuracy"] = r.per_class_accuracy;
            j["per_class_count"] = r.per_class_count;
            j["mean_confidence"] = r.mean_confidence;
            j["var_confidence"] = r.var_confidence;
            out << j.dump() << '\n';
        }
    if (!out) throw StageError("write failed for " + path("eval/metrics.jsonl"));
}

void Pipeline::stage_analyze() {
    Corpus train_raw = load_corpus(path("data/train.jsonl"));
    Corpus dev_raw = load_corpus(path("data/dev.jsonl"));
    Vocabulary vocab = Vocabulary::load(path("data/vocab.txt"));
    std::vector<ShortcutProfile> profiles = load_profiles(path("artifacts/profiles.jsonl"));
    LoadedClassifier id_model = load_classifier_checkpoint(path("checkpoints/identification.ckpt"));
    check_vocab_match("checkpoints/identification.ckpt", id_model.vocab_hash, vocab);
    LoadedClassifier db_model = load_classifier_checkpoint(path("checkpoints/debiased.ckpt"));
    check_vocab_match("checkpoints/debiased.ckpt", db_model.vocab_hash, vocab);
    TrainLog log_id = load_train_log(path("logs/train_id.jsonl"));
    TrainLog log_db = load_train_log(path("logs/train_debias.jsonl"));

    save_lmi_table(top_lmi_table(profiles, train_raw, config_.lmi_top_k), path("analysis/lmi.tsv"));

    std::vector<EncodedExample> dev = encode_corpus(dev_raw, vocab, config_.max_len);
    if (dev.empty()) throw StageError("analyze: dev split is empty");

    ConfidenceHistogram hist_id = confidence_histogram(id_model.model, dev, config_.histogram_bins);
    ConfidenceHistogram hist_db = confidence_histogram(db_model.model, dev, config_.histogram_bins);
    ordered_json conf;
    conf["bins"] = config_.histogram_bins;
    for (const auto& [name, h] :
         {std::pair<const char*, const ConfidenceHistogram*>{"identification", &hist_id},
          std::pair<const char*, const ConfidenceHistogram*>{"debiased", &hist_db}}) {
        ordered_json hj;
        hj["mean"] = h->mean;
        hj["variance"] = h->variance;
        hj["density"] = h->density;
        conf[name] = std::move(hj);
    }
    write_file(path("analysis/confidence.json"), conf.dump(2) + "\n");

    const int64_t sample = std::min<int64_t>(config_.share_sample, static_cast<int64_t>(dev.size()));
    std::vector<EncodedExample> head(dev.begin(), dev.begin() + sample);
    std::vector<AttributionResult> attr_id =
        attribute_corpus(id_model.model, head, config_.ig_steps, config_.top_n);
    std::vector<AttributionResult> attr_db =
        attribute_corpus(db_model.model, head, config_.ig_steps, config_.top_n);

    const int64_t shown = std::min<int64_t>(config_.heatmap_examples, sample);
    for (const auto& [mname, attrs] :
         {std::pair<const char*, const std::vector<AttributionResult>*>{"identification", &attr_id},
          std::pair<const char*, const std::vector<AttributionResult>*>{"debiased", &attr_db}}) {
        const std::string p = path("analysis/heatmap_" + std::string(mname) + ".html");
        std::ofstream out(p, std::ios::binary);
        if (!out) throw StageError("cannot open " + p + " for writing");
        out << "<!doctype html>\n<html><body>\n<h1>token attribution: " << mname << "</h1>\n";
        for (int64_t i = 0; i < shown; ++i) {
            std::vector<std::string> tokens = dev_raw.examples[i].tokens;
            tokens.resize(std::min<size_t>(tokens.size(), head[i].true_len));
            out << "<p>example " << dev_raw.examples[i].id << ", label " << dev_raw.examples[i].label
                << "</p>\n";
            heatmap_fragment((*attrs)[i], tokens, out);
        }
        out << "</body></html>\n";
        if (!out) throw StageError("write failed for " + p);
    }

    ordered_json trends;
    trends["share_sample"] = sample;
    trends["top1_share"] = ordered_json{{"identification", top1_attribution_share(attr_id)},
                                        {"debiased", top1_attribution_share(attr_db)}};
    trends["mean_confidence"] =
        ordered_json{{"identification", hist_id.mean}, {"debiased", hist_db.mean}};
    trends["confidence_variance"] =
        ordered_json{{"identification", hist_id.variance}, {"debiased", hist_db.variance}};
    trends["steps_to_ce_threshold"] = ordered_json{
        {"threshold", config_.ce_threshold},
        {"window", config_.threshold_window},
        {"identification", steps_to_threshold(log_id, config_.ce_threshold, config_.threshold_window)},
        {"debiased", steps_to_threshold(log_db, config_.ce_threshold, config_.threshold_window)}};
    write_file(path("analysis/trends.json"), trends.dump(2) + "\n");

    loss_curve_report({{"identification", &log_id}, {"debiased-" + config_.loss_variant, &log_db}},
                      config_.ce_threshold, config_.threshold_window, path("analysis/loss_curves.html"));
}

// Fingerprint of everything that can influence results. run_dir is where the
// run lives, not what it computes, so it is excluded: two runs of the same
// config in different directories must report the same fingerprint.
static std::string report_fingerprint(const Config& config) {
    Config c = config;
    c.run_dir.clear();
    return hash_hex(fnv1a64(serialize_config(c)));
}

void Pipeline::write_report() {
    std::vector<ordered_json> lines;

    ordered_json cfg;
    cfg["record"] = "config";
    cfg["fingerprint"] = report_fingerprint(config_);
    cfg["seed"] = config_.seed;
    cfg["loss_variant"] = config_.loss_variant;
    cfg["lambda"] = config_.lambda;
    lines.push_back(std::move(cfg));

    if (fs::exists(path("data/train.jsonl")) && fs::exists(path("data/vocab.txt"))) {
        Vocabulary vocab = Vocabulary::load(path("data/vocab.txt"));
        ordered_json j;
        j["record"] = "data";
        j["train_examples"] = load_corpus(path("data/train.jsonl")).examples.size();
        j["dev_examples"] =
            fs::exists(path("data/dev.jsonl")) ? load_corpus(path("data/dev.jsonl")).examples.size() : 0;
        j["ood_examples"] =
            fs::exists(path("data/ood.jsonl")) ? load_corpus(path("data/ood.jsonl")).examples.size() : 0;
        j["vocab_size"] = vocab.size();
        j["vocab_hash"] = hash_hex(vocab.content_hash());
        lines.push_back(std::move(j));
    }

    const std::pair<const char*, const char*> phases[] = {{"identification", "logs/train_id.jsonl"},
                                                          {"debiased", "logs/train_debias.jsonl"}};
    for (const auto& [phase, rel] : phases) {
        if (!fs::exists(path(rel))) continue;
        TrainLog log = load_train_log(path(rel));
        ordered_json j;
        j["record"] = "train";
        j["phase"] = phase;
        j["steps"] = log.steps.size();
        j["epochs"] = log.epochs.size();
        j["final_ce"] = log.steps.empty() ? -1.0 : log.steps.back().ce;
        j["final_total"] = log.steps.empty() ? -1.0 : log.steps.back().total;
        j["final_dev_accuracy"] = log.epochs.empty() ? -1.0 : log.epochs.back().dev_accuracy;
        j["final_ood_accuracy"] = log.epochs.empty() ? -1.0 : log.epochs.back().ood_accuracy;
        lines.push_back(std::move(j));
    }

    if (fs::exists(path("artifacts/extract_stats.json"))) {
        ordered_json j;
        j["record"] = "extract";
        const ordered_json stats = parse_json_file(path("artifacts/extract_stats.json"));
        for (const auto& [k, v] : stats.items()) j[k] = v;
        lines.push_back(std::move(j));
    }

    if (fs::exists(path("artifacts/bias_holdout.json"))) {
        ordered_json j;
        j["record"] = "bias";
        const ordered_json holdout = parse_json_file(path("artifacts/bias_holdout.json"));
        for (const auto& [k, v] : holdout.items()) j[k] = v;
        lines.push_back(std::move(j));
    }

    if (fs::exists(path("eval/metrics.jsonl"))) {
        std::istringstream in(read_file(path("eval/metrics.jsonl")));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ordered_json parsed;
            try {
                parsed = ordered_json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw StageError(path("eval/metrics.jsonl") + ": " + e.what());
            }
            ordered_json j;
            j["record"] = "eval";
            for (const auto& [k, v] : parsed.items()) j[k] = v;
            lines.push_back(std::move(j));
        }
    }

    if (fs::exists(path("analysis/trends.json"))) {
        ordered_json j;
        j["record"] = "analysis";
        const ordered_json trends = parse_json_file(path("analysis/trends.json"));
        for (const auto& [k, v] : trends.items()) j[k] = v;
        lines.push_back(std::move(j));
    }

    std::string report;
    for (const ordered_json& j : lines) report += j.dump() + "\n";
    write_file(path("report.jsonl"), report);

    // Markdown rollup of the same records.
    std::ostringstream md;
    md << "# run summary\n\n";
    md << "- loss variant: " << config_.loss_variant << " (lambda " << fmt(config_.lambda) << ")\n";
    md << "- seed: " << config_.seed << "\n";
    md << "- config fingerprint: " << report_fingerprint(config_) << "\n";
    for (const ordered_json& j : lines) {
        const std::string rec = j.at("record").get<std::string>();
        if (rec == "data") {
            md << "\n## data\n\n";
            md << "| split | examples |\n|---|---|\n";
            md << "| train | " << j.at("train_examples").get<int64_t>() << " |\n";
            md << "| dev | " << j.at("dev_examples").get<int64_t>() << " |\n";
            md << "| ood | " << j.at("ood_examples").get<int64_t>() << " |\n";
            md << "\nvocabulary: " << j.at("vocab_size").get<int>() << " tokens, hash "
               << j.at("vocab_hash").get<std::string>() << "\n";
        } else if (rec == "train") {
            md << "\n## training: " << j.at("phase").get<std::string>() << "\n\n";
            md << "- steps: " << j.at("steps").get<int64_t>() << ", epochs: "
               << j.at("epochs").get<int64_t>() << "\n";
            md << "- final ce: " << fmt(j.at("final_ce").get<double>()) << "\n";
            md << "- final dev accuracy: " << fmt(j.at("final_dev_accuracy").get<double>()) << "\n";
            md << "- final ood accuracy: " << fmt(j.at("final_ood_accuracy").get<double>()) << "\n";
        } else if (rec == "extract") {
            md << "\n## shortcut extraction\n\n";
            md << "- examples: " << j.at("examples").get<int64_t>() << "\n";
            md << "- planted-shortcut hit rate: " << fmt(j.at("planted_hit_rate").get<double>()) << "\n";
            md << "- filtered words: " << j.at("filtered_words").get<int64_t>() << "\n";
        } else if (rec == "bias") {
            md << "\n## bias-only model\n\n";
            md << "- fit on first " << j.at("subset_size").get<int64_t>() << " training examples\n";
            md << "- holdout accuracy: " << fmt(j.at("holdout_accuracy").get<double>()) << " over "
               << j.at("holdout_count").get<int64_t>() << " examples\n";
            md << "- holdout accuracy on shortcut bearers: "
               << fmt(j.at("holdout_bearing_accuracy").get<double>()) << " over "
               << j.at("holdout_bearing_count").get<int64_t>() << " examples (chance "
               << fmt(j.at("chance").get<double>()) << ")\n";
        }
    }
    bool eval_header = false;
    for (const ordered_json& j : lines) {
        if (j.at("record").get<std::string>() != "eval") continue;
        if (!eval_header) {
            md << "\n## evaluation\n\n";
            md << "| model | split | accuracy | mean confidence |\n|---|---|---|---|\n";
            eval_header = true;
        }
        md << "| " << j.at("model").get<std::string>() << " | " << j.at("split").get<std::string>()
           << " | " << fmt(j.at("accuracy").get<double>()) << " | "
           << fmt(j.at("mean_confidence").get<double>()) << " |\n";
    }
    for (const ordered_json& j : lines) {
        if (j.at("record").get<std::string>() != "analysis") continue;
        md << "\n## analysis\n\n";
        md << "- top-1 attribution share: identification "
           << fmt(j.at("top1_share").at("identification").get<double>()) << ", debiased "
           << fmt(j.at("top1_share").at("debiased").get<double>()) << " (over "
           << j.at("share_sample").get<int64_t>() << " dev examples)\n";
        md << "- steps to ce <= " << fmt(j.at("steps_to_ce_threshold").at("threshold").get<double>())
           << ": identification " << j.at("steps_to_ce_threshold").at("identification").get<int64_t>()
           << ", debiased " << j.at("steps_to_ce_threshold").at("debiased").get<int64_t>()
           << " (-1 = never)\n";
        md << "- details: analysis/lmi.tsv, analysis/confidence.json, analysis/loss_curves.html\n";
    }
    write_file(path("summary.md"), md.str());
}

}  // namespace dbr
