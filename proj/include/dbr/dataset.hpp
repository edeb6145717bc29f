#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbr/common.hpp"

namespace dbr {

// Reserved token ids. The pooled marker is reserved for compatibility with
// encoders that prepend a classification token; the default encoders pool by
// masked mean and never emit it.
inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kClsId = 3;
inline constexpr int kNumReserved = 4;

inline const char* kReservedTokens[kNumReserved] = {"<pad>", "<mask>", "<unk>", "<cls>"};

class Vocabulary {
  public:
    Vocabulary();

    int add(const std::string& token);  // idempotent
    int id(const std::string& token) const;  // kUnkId when missing
    bool contains(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

    uint64_t content_hash() const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// One labeled sentence as generated/stored: token strings plus generator
// provenance. shortcut_positions records where shortcut tokens were planted;
// models and masking never read it.
struct Example {
    std::string id;
    std::vector<std::string> tokens;
    int label = 0;
    std::vector<int> shortcut_positions;
};

struct Corpus {
    std::vector<Example> examples;
    size_t size() const { return examples.size(); }
};

// Token-id view of an example, padded/truncated to a fixed length.
struct EncodedExample {
    std::string id;
    std::vector<int> ids;   // length == max_len
    int true_len = 0;
    int label = 0;
    std::vector<int> shortcut_positions;  // positions < true_len only
    std::vector<uint8_t> pad_mask() const {
        std::vector<uint8_t> m(ids.size(), 0);
        for (int t = 0; t < true_len; ++t) m[t] = 1;
        return m;
    }
};

// Control knobs for the synthetic shortcut corpus. Every sentence carries at
// least one label-determining content word; with probability shortcut_rate a
// single shortcut token is additionally planted, drawn from the label's own
// pool with probability rho (co-occurrence rate) and from a random other
// label's pool otherwise.
struct ShortcutSpec {
    int num_labels = 3;
    std::vector<std::vector<std::string>> content_pools;   // per label, disjoint
    std::vector<std::vector<std::string>> shortcut_pools;  // per label, disjoint
    std::vector<std::string> fillers;
    double rho_train = 0.95;
    double rho_ood = 0.05;
    double shortcut_rate = 0.9;    // fraction of examples bearing a planted token
    double genuine_signal = 0.1;   // per-position probability of a content word
    int len_min = 8;
    int len_max = 16;
    int train_size = 10000;
    int dev_size = 2000;
    int ood_size = 2000;
    uint64_t seed = 7;

    // Builds pools with the given sizes using synthetic word stems
    // ("c<label>_<i>", "s<label>_<i>", "f<i>").
    static ShortcutSpec with_pool_sizes(int num_labels, int content_per_label, int shortcut_per_label,
                                        int filler_count);
    void validate() const;
};

struct GeneratedCorpora {
    Corpus train;
    Corpus dev;
    Corpus ood;
};

GeneratedCorpora generate_corpus(const ShortcutSpec& spec);

Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora);

EncodedExample encode(const Example& ex, const Vocabulary& vocab, int max_len);
std::vector<EncodedExample> encode_corpus(const Corpus& corpus, const Vocabulary& vocab, int max_len);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

}  // namespace dbr
