#include "dbr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace dbr {

namespace {

int parse_int(const std::string& v, const std::string& key) {
    size_t pos = 0;
    int out = 0;
    try {
        out = std::stoi(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    }
    if (pos != v.size()) throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    return out;
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
    size_t pos = 0;
    unsigned long long out = 0;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
    }
    if (pos != v.size()) throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
    return out;
}

double parse_double(const std::string& v, const std::string& key) {
    size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }
    if (pos != v.size()) throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

// Shortest round-tripping decimal form.
std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

struct Binding {
    std::string section;
    std::string key;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
    std::string full() const { return section + "." + key; }
};

Binding field(const char* sec, const char* key, int Config::* m) {
    std::string full = std::string(sec) + "." + key;
    return {sec, key, [m](const Config& c) { return std::to_string(c.*m); },
            [m, full](Config& c, const std::string& v) { c.*m = parse_int(v, full); }};
}

Binding field(const char* sec, const char* key, uint64_t Config::* m) {
    std::string full = std::string(sec) + "." + key;
    return {sec, key, [m](const Config& c) { return std::to_string(c.*m); },
            [m, full](Config& c, const std::string& v) { c.*m = parse_u64(v, full); }};
}

Binding field(const char* sec, const char* key, double Config::* m) {
    std::string full = std::string(sec) + "." + key;
    return {sec, key, [m](const Config& c) { return format_double(c.*m); },
            [m, full](Config& c, const std::string& v) { c.*m = parse_double(v, full); }};
}

Binding field(const char* sec, const char* key, bool Config::* m) {
    std::string full = std::string(sec) + "." + key;
    return {sec, key, [m](const Config& c) { return c.*m ? "true" : "false"; },
            [m, full](Config& c, const std::string& v) { c.*m = parse_bool(v, full); }};
}

Binding field(const char* sec, const char* key, std::string Config::* m) {
    return {sec, key, [m](const Config& c) { return c.*m; },
            [m](Config& c, const std::string& v) { c.*m = v; }};
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = {
        field("run", "seed", &Config::seed),
        field("run", "run_dir", &Config::run_dir),
        field("data", "num_labels", &Config::num_labels),
        field("data", "content_per_label", &Config::content_per_label),
        field("data", "shortcut_per_label", &Config::shortcut_per_label),
        field("data", "filler_count", &Config::filler_count),
        field("data", "rho_train", &Config::rho_train),
        field("data", "rho_ood", &Config::rho_ood),
        field("data", "shortcut_rate", &Config::shortcut_rate),
        field("data", "genuine_signal", &Config::genuine_signal),
        field("data", "len_min", &Config::len_min),
        field("data", "len_max", &Config::len_max),
        field("data", "train_size", &Config::train_size),
        field("data", "dev_size", &Config::dev_size),
        field("data", "ood_size", &Config::ood_size),
        field("model", "embed_dim", &Config::embed_dim),
        field("model", "encoder", &Config::encoder),
        field("model", "max_len", &Config::max_len),
        field("attribution", "ig_steps", &Config::ig_steps),
        field("attribution", "top_n", &Config::top_n),
        field("attribution", "use_filtered_words", &Config::use_filtered_words),
        field("training", "id_epochs", &Config::id_epochs),
        field("training", "debias_epochs", &Config::debias_epochs),
        field("training", "bias_epochs", &Config::bias_epochs),
        field("training", "id_batch", &Config::id_batch),
        field("training", "debias_batch", &Config::debias_batch),
        field("training", "bias_batch", &Config::bias_batch),
        field("training", "bias_subset", &Config::bias_subset),
        field("training", "bias_hidden", &Config::bias_hidden),
        field("training", "lambda", &Config::lambda),
        field("training", "lr", &Config::lr),
        field("training", "optimizer", &Config::optimizer),
        field("training", "loss_variant", &Config::loss_variant),
        field("training", "poe_literal_sum", &Config::poe_literal_sum),
        field("analysis", "lmi_top_k", &Config::lmi_top_k),
        field("analysis", "histogram_bins", &Config::histogram_bins),
        field("analysis", "heatmap_examples", &Config::heatmap_examples),
        field("analysis", "share_sample", &Config::share_sample),
        field("analysis", "ce_threshold", &Config::ce_threshold),
        field("analysis", "threshold_window", &Config::threshold_window),
    };
    return table;
}

const Binding* find_binding(const std::string& section, const std::string& key) {
    for (const Binding& b : bindings())
        if (b.section == section && b.key == key) return &b;
    return nullptr;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

}  // namespace

ShortcutSpec Config::data_spec() const {
    ShortcutSpec spec =
        ShortcutSpec::with_pool_sizes(num_labels, content_per_label, shortcut_per_label, filler_count);
    spec.rho_train = rho_train;
    spec.rho_ood = rho_ood;
    spec.shortcut_rate = shortcut_rate;
    spec.genuine_signal = genuine_signal;
    spec.len_min = len_min;
    spec.len_max = len_max;
    spec.train_size = train_size;
    spec.dev_size = dev_size;
    spec.ood_size = ood_size;
    spec.seed = seed;
    return spec;
}

ModelConfig Config::model_config(int vocab_size) const {
    return {vocab_size, embed_dim, num_labels, encoder_kind_from_string(encoder)};
}

OptimizerConfig Config::optimizer_config() const {
    OptimizerConfig opt;
    opt.kind = optimizer_kind_from_string(optimizer);
    opt.lr = lr;
    return opt;
}

TrainConfig Config::id_train_config() const {
    TrainConfig cfg;
    cfg.epochs = id_epochs;
    cfg.batch_size = id_batch;
    cfg.lambda = lambda;
    cfg.variant = LossVariant::Standard;
    cfg.optimizer = optimizer_config();
    cfg.seed = seed;
    return cfg;
}

TrainConfig Config::debias_train_config() const {
    TrainConfig cfg;
    cfg.epochs = debias_epochs;
    cfg.batch_size = debias_batch;
    cfg.lambda = lambda;
    cfg.variant = loss_variant_from_string(loss_variant);
    cfg.poe_literal_sum = poe_literal_sum;
    cfg.optimizer = optimizer_config();
    cfg.seed = seed;
    return cfg;
}

void Config::validate() const {
    try {
        data_spec().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config section [data]: ") + e.what());
    }
    encoder_kind_from_string(encoder);
    optimizer_kind_from_string(optimizer);
    loss_variant_from_string(loss_variant);
    require(!run_dir.empty(), "config key 'run.run_dir': must not be empty");
    require(embed_dim >= 1, "config key 'model.embed_dim': must be >= 1");
    require(max_len >= 1, "config key 'model.max_len': must be >= 1");
    require(ig_steps >= 1, "config key 'attribution.ig_steps': must be >= 1");
    require(top_n >= 1, "config key 'attribution.top_n': must be >= 1");
    require(id_epochs >= 1 && debias_epochs >= 1 && bias_epochs >= 1,
            "config section [training]: epoch counts must be >= 1");
    require(id_batch >= 1 && debias_batch >= 1 && bias_batch >= 1,
            "config section [training]: batch sizes must be >= 1");
    require(bias_subset >= 1, "config key 'training.bias_subset': must be >= 1");
    require(bias_hidden >= 1, "config key 'training.bias_hidden': must be >= 1");
    require(lambda >= 0.0, "config key 'training.lambda': must be >= 0");
    require(lr > 0.0, "config key 'training.lr': must be > 0");
    require(lmi_top_k >= 1, "config key 'analysis.lmi_top_k': must be >= 1");
    require(histogram_bins >= 1, "config key 'analysis.histogram_bins': must be >= 1");
    require(heatmap_examples >= 1, "config key 'analysis.heatmap_examples': must be >= 1");
    require(share_sample >= 1, "config key 'analysis.share_sample': must be >= 1");
    require(ce_threshold > 0.0, "config key 'analysis.ce_threshold': must be > 0");
    require(threshold_window >= 1, "config key 'analysis.threshold_window': must be >= 1");
}

Config parse_config(const std::string& text, const Config& base) {
    Config config = base;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            require(t.back() == ']', "config line " + std::to_string(lineno) + ": malformed section header");
            section = t.substr(1, t.size() - 2);
            bool known = false;
            for (const Binding& b : bindings()) known = known || b.section == section;
            require(known, "config line " + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        const size_t eq = t.find('=');
        require(eq != std::string::npos,
                "config line " + std::to_string(lineno) + ": expected key = value");
        require(!section.empty(), "config line " + std::to_string(lineno) + ": key before any [section]");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const Binding* b = find_binding(section, key);
        require(b != nullptr,
                "config line " + std::to_string(lineno) + ": unknown key '" + section + "." + key + "'");
        b->set(config, value);
    }
    return config;
}

Config load_config_file(const std::string& path, const Config& base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), base);
}

void apply_override(Config& config, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    require(eq != std::string::npos, "override '" + assignment + "': expected section.key=value");
    const std::string full = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    const size_t dot = full.find('.');
    require(dot != std::string::npos, "override '" + assignment + "': expected section.key=value");
    const Binding* b = find_binding(full.substr(0, dot), full.substr(dot + 1));
    require(b != nullptr, "override '" + assignment + "': unknown key '" + full + "'");
    b->set(config, value);
}

std::string serialize_config(const Config& config) {
    std::ostringstream out;
    std::string section;
    for (const Binding& b : bindings()) {
        if (b.section != section) {
            if (!section.empty()) out << '\n';
            section = b.section;
            out << '[' << section << "]\n";
        }
        out << b.key << " = " << b.get(config) << '\n';
    }
    return out.str();
}

std::string config_slice(const Config& config, const std::vector<std::string>& keys) {
    std::ostringstream out;
    for (const std::string& full : keys) {
        const size_t dot = full.find('.');
        const Binding* b =
            dot == std::string::npos ? nullptr : find_binding(full.substr(0, dot), full.substr(dot + 1));
        if (b == nullptr) throw std::logic_error("config_slice: unknown key '" + full + "'");
        out << full << '=' << b->get(config) << '\n';
    }
    return out.str();
}

}  // namespace dbr
