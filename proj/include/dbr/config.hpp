#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbr/dataset.hpp"
#include "dbr/losses.hpp"
#include "dbr/model.hpp"
#include "dbr/optim.hpp"
#include "dbr/train.hpp"

namespace dbr {

// Every pipeline knob, grouped by the section it lives under in the config
// file. String fields hold the textual form and are validated on demand.
struct Config {
    // [run]
    uint64_t seed = 7;
    std::string run_dir = "runs/default";

    // [data]
    int num_labels = 3;
    int content_per_label = 12;
    int shortcut_per_label = 4;
    int filler_count = 40;
    double rho_train = 0.95;
    double rho_ood = 0.05;
    double shortcut_rate = 0.9;
    double genuine_signal = 0.1;
    int len_min = 8;
    int len_max = 16;
    int train_size = 10000;
    int dev_size = 2000;
    int ood_size = 2000;

    // [model]
    int embed_dim = 64;
    std::string encoder = "attention";
    int max_len = 32;

    // [attribution]
    int ig_steps = 32;
    int top_n = 3;
    bool use_filtered_words = false;

    // [training]
    int id_epochs = 12;
    int debias_epochs = 12;
    int bias_epochs = 1;
    int id_batch = 32;
    int debias_batch = 18;
    int bias_batch = 18;
    int bias_subset = 2000;
    int bias_hidden = 100;
    double lambda = 1.5;
    double lr = 1e-3;
    std::string optimizer = "adam";
    std::string loss_variant = "dbr-soft";
    bool poe_literal_sum = false;

    // [analysis]
    int lmi_top_k = 10;
    int histogram_bins = 20;
    int heatmap_examples = 4;
    int share_sample = 200;
    double ce_threshold = 0.5;
    int threshold_window = 25;

    // Typed views consumed by the library modules.
    ShortcutSpec data_spec() const;
    ModelConfig model_config(int vocab_size) const;
    OptimizerConfig optimizer_config() const;
    TrainConfig id_train_config() const;
    TrainConfig debias_train_config() const;

    void validate() const;  // throws ConfigError
};

// Parses the flat sectioned key=value format ('#'/';' comments). Unknown
// sections or keys are rejected.
Config parse_config(const std::string& text, const Config& base = Config{});
Config load_config_file(const std::string& path, const Config& base = Config{});

// Applies one "section.key=value" override (the --set mechanism).
void apply_override(Config& config, const std::string& assignment);

// Canonical textual form: every key under its section, fixed order.
std::string serialize_config(const Config& config);

// "section.key=value" lines for the given keys, e.g. for fingerprinting the
// slice of configuration a pipeline stage depends on. Keys must exist.
std::string config_slice(const Config& config, const std::vector<std::string>& keys);

}  // namespace dbr
