#include "dbr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dbr {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
    for (int i = 0; i < kNumReserved; ++i) {
        tokens_.emplace_back(kReservedTokens[i]);
        index_[tokens_.back()] = i;
    }
}

int Vocabulary::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_[token] = id;
    return id;
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return index_.count(token) > 0; }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("Vocabulary: id out of range: " + std::to_string(id));
    return tokens_[id];
}

uint64_t Vocabulary::content_hash() const {
    std::string joined;
    for (const auto& t : tokens_) {
        joined += t;
        joined += '\n';
    }
    return fnv1a64(joined);
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("Vocabulary::save: cannot open " + path);
    for (int i = kNumReserved; i < size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("Vocabulary::load: cannot open " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) v.add(line);
    }
    return v;
}

// ---------------------------------------------------------------------------
// ShortcutSpec

ShortcutSpec ShortcutSpec::with_pool_sizes(int num_labels, int content_per_label, int shortcut_per_label,
                                           int filler_count) {
    ShortcutSpec spec;
    spec.num_labels = num_labels;
    spec.content_pools.resize(num_labels);
    spec.shortcut_pools.resize(num_labels);
    for (int k = 0; k < num_labels; ++k) {
        for (int i = 0; i < content_per_label; ++i)
            spec.content_pools[k].push_back("c" + std::to_string(k) + "_" + std::to_string(i));
        for (int i = 0; i < shortcut_per_label; ++i)
            spec.shortcut_pools[k].push_back("s" + std::to_string(k) + "_" + std::to_string(i));
    }
    for (int i = 0; i < filler_count; ++i) spec.fillers.push_back("f" + std::to_string(i));
    return spec;
}

void ShortcutSpec::validate() const {
    if (num_labels < 2) throw std::invalid_argument("ShortcutSpec: need at least 2 labels");
    if (static_cast<int>(content_pools.size()) != num_labels ||
        static_cast<int>(shortcut_pools.size()) != num_labels)
        throw std::invalid_argument("ShortcutSpec: pool count must equal num_labels");
    if (rho_train < 0.0 || rho_train > 1.0 || rho_ood < 0.0 || rho_ood > 1.0)
        throw std::invalid_argument("ShortcutSpec: co-occurrence rates must lie in [0,1]");
    if (shortcut_rate < 0.0 || shortcut_rate > 1.0)
        throw std::invalid_argument("ShortcutSpec: shortcut_rate must lie in [0,1]");
    if (genuine_signal <= 0.0)
        throw std::invalid_argument("ShortcutSpec: genuine_signal must be positive");
    if (len_min < 1 || len_max < len_min) throw std::invalid_argument("ShortcutSpec: bad length range");

    std::set<std::string> content_and_fillers;
    for (const auto& pool : content_pools)
        for (const auto& t : pool) content_and_fillers.insert(t);
    for (const auto& t : fillers) content_and_fillers.insert(t);
    std::set<std::string> shortcut_seen;
    for (const auto& pool : shortcut_pools) {
        if (pool.empty()) throw std::invalid_argument("ShortcutSpec: empty shortcut pool");
        for (const auto& t : pool) {
            if (content_and_fillers.count(t))
                throw std::invalid_argument("ShortcutSpec: shortcut token '" + t +
                                            "' overlaps a genuine content/filler pool");
            if (!shortcut_seen.insert(t).second)
                throw std::invalid_argument("ShortcutSpec: shortcut token '" + t +
                                            "' appears in more than one label pool");
        }
    }
    for (const auto& pool : content_pools)
        if (pool.empty()) throw std::invalid_argument("ShortcutSpec: empty content pool");
    std::set<std::string> content_seen;
    for (const auto& pool : content_pools)
        for (const auto& t : pool)
            if (!content_seen.insert(t).second)
                throw std::invalid_argument("ShortcutSpec: content token '" + t +
                                            "' appears in more than one label pool");
    if (fillers.empty()) throw std::invalid_argument("ShortcutSpec: filler pool must not be empty");
}

// ---------------------------------------------------------------------------
// Generation

namespace {

Example generate_example(const ShortcutSpec& spec, double rho, const std::string& id, Rng& rng) {
    Example ex;
    ex.id = id;
    ex.label = rng.uniform_int(spec.num_labels);
    const int len = rng.uniform_range(spec.len_min, spec.len_max);

    bool has_content = false;
    for (int t = 0; t < len; ++t) {
        if (rng.bernoulli(spec.genuine_signal)) {
            ex.tokens.push_back(rng.pick(spec.content_pools[ex.label]));
            has_content = true;
        } else {
            ex.tokens.push_back(rng.pick(spec.fillers));
        }
    }
    // Every sentence must be solvable from content words alone.
    const int rescue_pos = rng.uniform_int(len);
    const std::string rescue_word = rng.pick(spec.content_pools[ex.label]);
    if (!has_content) ex.tokens[rescue_pos] = rescue_word;

    if (rng.bernoulli(spec.shortcut_rate)) {
        int pool = ex.label;
        if (!rng.bernoulli(rho)) {
            // Misaligned plant: uniform over the other labels' pools.
            const int shift = 1 + rng.uniform_int(spec.num_labels - 1);
            pool = (ex.label + shift) % spec.num_labels;
        }
        const std::string token = rng.pick(spec.shortcut_pools[pool]);
        const int pos = rng.uniform_int(static_cast<int>(ex.tokens.size()) + 1);
        ex.tokens.insert(ex.tokens.begin() + pos, token);
        ex.shortcut_positions.push_back(pos);
    }
    return ex;
}

Corpus generate_split(const ShortcutSpec& spec, double rho, int count, const std::string& prefix,
                      uint64_t seed) {
    Rng rng(seed);
    Corpus corpus;
    corpus.examples.reserve(count);
    for (int i = 0; i < count; ++i) {
        std::ostringstream id;
        id << prefix << "-" << i;
        corpus.examples.push_back(generate_example(spec, rho, id.str(), rng));
    }
    return corpus;
}

}  // namespace

GeneratedCorpora generate_corpus(const ShortcutSpec& spec) {
    spec.validate();
    GeneratedCorpora out;
    out.train = generate_split(spec, spec.rho_train, spec.train_size, "train", mix_seed(spec.seed, "train"));
    out.dev = generate_split(spec, spec.rho_train, spec.dev_size, "dev", mix_seed(spec.seed, "dev"));
    out.ood = generate_split(spec, spec.rho_ood, spec.ood_size, "ood", mix_seed(spec.seed, "ood"));
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary construction / encoding

Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora) {
    bool any = false;
    std::set<std::string> tokens;  // sorted: vocabulary independent of corpus order
    for (const Corpus* c : corpora) {
        if (c == nullptr) continue;
        for (const Example& ex : c->examples) {
            any = true;
            tokens.insert(ex.tokens.begin(), ex.tokens.end());
        }
    }
    if (!any) throw std::invalid_argument("build_vocabulary: no examples given");
    Vocabulary v;
    for (const auto& t : tokens) v.add(t);
    return v;
}

EncodedExample encode(const Example& ex, const Vocabulary& vocab, int max_len) {
    if (max_len < 1) throw std::invalid_argument("encode: max_len must be >= 1");
    if (ex.tokens.empty()) throw std::invalid_argument("encode: empty token list (example '" + ex.id + "')");
    EncodedExample enc;
    enc.id = ex.id;
    enc.label = ex.label;
    enc.true_len = std::min<int>(static_cast<int>(ex.tokens.size()), max_len);
    enc.ids.assign(max_len, kPadId);
    for (int t = 0; t < enc.true_len; ++t) enc.ids[t] = vocab.id(ex.tokens[t]);
    for (int p : ex.shortcut_positions)
        if (p < enc.true_len) enc.shortcut_positions.push_back(p);
    return enc;
}

std::vector<EncodedExample> encode_corpus(const Corpus& corpus, const Vocabulary& vocab, int max_len) {
    std::vector<EncodedExample> out;
    out.reserve(corpus.size());
    for (const Example& ex : corpus.examples) out.push_back(encode(ex, vocab, max_len));
    return out;
}

// ---------------------------------------------------------------------------
// Corpus file format: one JSON object per line.

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_corpus: cannot open " + path);
    for (const Example& ex : corpus.examples) {
        nlohmann::ordered_json j;
        j["id"] = ex.id;
        j["tokens"] = ex.tokens;
        j["label"] = ex.label;
        j["shortcut_positions"] = ex.shortcut_positions;
        out << j.dump() << '\n';
    }
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
    Corpus corpus;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error("load_corpus: " + path + " line " + std::to_string(lineno) +
                                     ": invalid JSON: " + e.what());
        }
        Example ex;
        for (const char* field : {"id", "tokens", "label", "shortcut_positions"}) {
            if (!j.contains(field))
                throw std::runtime_error("load_corpus: " + path + " line " + std::to_string(lineno) +
                                         ": missing field '" + field + "'");
        }
        try {
            ex.id = j["id"].get<std::string>();
            ex.tokens = j["tokens"].get<std::vector<std::string>>();
            ex.label = j["label"].get<int>();
            ex.shortcut_positions = j["shortcut_positions"].get<std::vector<int>>();
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_corpus: " + path + " line " + std::to_string(lineno) +
                                     ": bad field type: " + e.what());
        }
        for (int p : ex.shortcut_positions)
            if (p < 0 || p >= static_cast<int>(ex.tokens.size()))
                throw std::runtime_error("load_corpus: " + path + " line " + std::to_string(lineno) +
                                         ": shortcut position " + std::to_string(p) + " out of range");
        corpus.examples.push_back(std::move(ex));
    }
    return corpus;
}

}  // namespace dbr
