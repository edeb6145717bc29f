#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dbr/attribution.hpp"
#include "dbr/dataset.hpp"
#include "dbr/model.hpp"
#include "dbr/shortcut.hpp"
#include "dbr/train.hpp"

namespace dbr {

// Local mutual information of a (word, label) pair from raw counts:
// p(w,l) * ln(p(l|w) / p(l)) with p(w,l) = count_wl/total,
// p(l|w) = count_wl/count_w, p(l) = count_l/total.
double lmi(int64_t count_wl, int64_t count_w, int64_t count_l, int64_t total);

struct LmiEntry {
    std::string word;
    int label = 0;
    int64_t count_wl = 0;
    int64_t count_w = 0;
    int64_t count_l = 0;
    double value = 0.0;
};

struct LmiTable {
    int64_t total = 0;  // |D|: every top-N occurrence across the profiles
    std::vector<std::vector<LmiEntry>> per_label;  // descending by value, top-k rows
};

// Counts the multiset of top-N words over all profiled examples and ranks
// each label's words by LMI, keeping per_label_top_k rows. Ties break toward
// the lexicographically smaller word; corpus order never matters.
LmiTable top_lmi_table(const std::vector<ShortcutProfile>& profiles, const Corpus& corpus,
                       int per_label_top_k);

// label <TAB> word <TAB> count_wl <TAB> count_w <TAB> count_l <TAB> lmi
void save_lmi_table(const LmiTable& table, const std::string& path);

// Words appearing in the top rows of at least two labels (union of pairwise
// intersections); these become ineligible for masking in a filtered run.
std::set<std::string> filtered_word_list(const LmiTable& table);

struct ConfidenceHistogram {
    std::vector<double> density;  // per-bin fraction over [0, 1]; sums to 1
    double mean = 0.0;
    double variance = 0.0;
};

// Distribution of max_k p(k) over the examples.
ConfidenceHistogram confidence_histogram(const ClassifierModel& model,
                                         const std::vector<EncodedExample>& examples, int bins);

// Self-contained HTML fragment coloring each token on a green scale by its
// min-max-normalized attribution norm. tokens pair with the leading rows of
// the result; trailing PAD rows carry no tokens.
void heatmap_fragment(const AttributionResult& result, const std::vector<std::string>& tokens,
                      std::ostream& out);
void heatmap_export(const AttributionResult& result, const std::vector<std::string>& tokens,
                    const std::string& path);

// sum over examples of the largest token norm, divided by the sum of all
// token norms — the mass share captured by each sentence's top token.
double top1_attribution_share(const std::vector<AttributionResult>& results);

// First step (0-based) whose trailing-window mean of the CE component drops
// below tau; -1 when never reached. The window must be fully populated.
int steps_to_threshold(const TrainLog& log, double tau, int window);

// HTML report: per-step total-loss polylines for the named runs plus a
// steps-to-threshold table.
void loss_curve_report(const std::vector<std::pair<std::string, const TrainLog*>>& logs, double tau,
                       int window, const std::string& path);

}  // namespace dbr
