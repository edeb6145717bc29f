#include "dbr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace dbr {

double lmi(int64_t count_wl, int64_t count_w, int64_t count_l, int64_t total) {
    if (count_wl < 1) throw std::invalid_argument("lmi: count(w,l) must be >= 1");
    if (count_w < 1) throw std::invalid_argument("lmi: count(w) must be >= 1");
    if (count_l < 1 || total < 1) throw std::invalid_argument("lmi: count(l) and total must be >= 1");
    if (count_wl > count_w || count_wl > count_l || count_l > total || count_w > total)
        throw std::invalid_argument("lmi: inconsistent counts");
    const double p_wl = static_cast<double>(count_wl) / static_cast<double>(total);
    const double p_l_given_w = static_cast<double>(count_wl) / static_cast<double>(count_w);
    const double p_l = static_cast<double>(count_l) / static_cast<double>(total);
    return p_wl * std::log(p_l_given_w / p_l);
}

LmiTable top_lmi_table(const std::vector<ShortcutProfile>& profiles, const Corpus& corpus,
                       int per_label_top_k) {
    if (profiles.empty()) throw std::invalid_argument("top_lmi_table: no profiles");
    if (per_label_top_k < 1) throw std::invalid_argument("top_lmi_table: per_label_top_k must be >= 1");

    std::unordered_map<std::string, const Example*> by_id;
    int num_labels = 0;
    for (const Example& ex : corpus.examples) {
        by_id[ex.id] = &ex;
        num_labels = std::max(num_labels, ex.label + 1);
    }

    // word -> per-label occurrence counts inside top-N sets; std::map keeps
    // iteration order independent of corpus order.
    std::map<std::string, std::vector<int64_t>> counts;
    std::vector<int64_t> label_totals(num_labels, 0);
    int64_t total = 0;
    for (const ShortcutProfile& pr : profiles) {
        auto it = by_id.find(pr.example_id);
        if (it == by_id.end())
            throw std::invalid_argument("top_lmi_table: profile '" + pr.example_id +
                                        "' has no corpus example");
        const Example& ex = *it->second;
        for (int idx : pr.top_indices) {
            if (idx < 0 || idx >= static_cast<int>(ex.tokens.size()))
                throw std::invalid_argument("top_lmi_table: index " + std::to_string(idx) +
                                            " outside example '" + ex.id + "'");
            auto& row = counts[ex.tokens[idx]];
            if (row.empty()) row.assign(num_labels, 0);
            ++row[ex.label];
            ++label_totals[ex.label];
            ++total;
        }
    }

    LmiTable table;
    table.total = total;
    table.per_label.resize(num_labels);
    for (const auto& [word, row] : counts) {
        const int64_t count_w = std::accumulate(row.begin(), row.end(), int64_t{0});
        for (int l = 0; l < num_labels; ++l) {
            if (row[l] == 0) continue;
            table.per_label[l].push_back(
                {word, l, row[l], count_w, label_totals[l], lmi(row[l], count_w, label_totals[l], total)});
        }
    }
    for (auto& entries : table.per_label) {
        std::sort(entries.begin(), entries.end(), [](const LmiEntry& a, const LmiEntry& b) {
            if (a.value != b.value) return a.value > b.value;
            return a.word < b.word;
        });
        if (static_cast<int>(entries.size()) > per_label_top_k) entries.resize(per_label_top_k);
    }
    return table;
}

void save_lmi_table(const LmiTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_lmi_table: cannot open " + path);
    out << "label\tword\tcount_wl\tcount_w\tcount_l\tlmi\n";
    for (const auto& entries : table.per_label)
        for (const LmiEntry& e : entries)
            out << e.label << '\t' << e.word << '\t' << e.count_wl << '\t' << e.count_w << '\t'
                << e.count_l << '\t' << e.value << '\n';
}

std::set<std::string> filtered_word_list(const LmiTable& table) {
    const int k = static_cast<int>(table.per_label.size());
    if (k < 2) throw std::invalid_argument("filtered_word_list: need at least 2 labels");
    std::vector<std::set<std::string>> words(k);
    for (int l = 0; l < k; ++l)
        for (const LmiEntry& e : table.per_label[l]) words[l].insert(e.word);
    std::set<std::string> filtered;
    for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b)
            for (const std::string& w : words[a])
                if (words[b].count(w)) filtered.insert(w);
    return filtered;
}

ConfidenceHistogram confidence_histogram(const ClassifierModel& model,
                                         const std::vector<EncodedExample>& examples, int bins) {
    if (examples.empty()) throw std::invalid_argument("confidence_histogram: empty example set");
    if (bins < 1) throw std::invalid_argument("confidence_histogram: bins must be >= 1");
    const int64_t n = static_cast<int64_t>(examples.size());
    std::vector<double> conf(n, 0.0);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic) if (n > 8)
    for (int64_t i = 0; i < n; ++i) {
        try {
            const EncodedExample& ex = examples[i];
            std::vector<int> ids(ex.ids.begin(), ex.ids.begin() + ex.true_len);
            std::vector<double> p = model.predict_proba(ids);
            conf[i] = *std::max_element(p.begin(), p.end());
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (int64_t i = 0; i < n; ++i)
        if (!errors[i].empty())
            throw StageError("confidence_histogram: example '" + examples[i].id + "': " + errors[i]);

    ConfidenceHistogram h;
    h.density.assign(bins, 0.0);
    double sum = 0.0;
    for (double c : conf) {
        int b = std::min(bins - 1, static_cast<int>(c * bins));
        h.density[b] += 1.0;
        sum += c;
    }
    for (double& d : h.density) d /= static_cast<double>(n);
    h.mean = sum / static_cast<double>(n);
    double acc = 0.0;
    for (double c : conf) acc += (c - h.mean) * (c - h.mean);
    h.variance = acc / static_cast<double>(n);
    return h;
}

namespace {

std::string escape_html(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

// Light-to-dark green ramp.
std::string green_shade(double v) {
    const int r = static_cast<int>(std::lround(247 + (0 - 247) * v));
    const int g = static_cast<int>(std::lround(252 + (68 - 252) * v));
    const int b = static_cast<int>(std::lround(245 + (27 - 245) * v));
    std::ostringstream css;
    css << "rgb(" << r << "," << g << "," << b << ")";
    return css.str();
}

}  // namespace

void heatmap_fragment(const AttributionResult& result, const std::vector<std::string>& tokens,
                      std::ostream& out) {
    if (tokens.empty()) throw std::invalid_argument("heatmap_fragment: no tokens");
    if (tokens.size() > result.norms.size())
        throw std::invalid_argument("heatmap_fragment: " + std::to_string(tokens.size()) +
                                    " tokens exceed " + std::to_string(result.norms.size()) + " norms");
    double mn = result.norms[0], mx = result.norms[0];
    for (size_t t = 0; t < tokens.size(); ++t) {
        mn = std::min(mn, result.norms[t]);
        mx = std::max(mx, result.norms[t]);
    }
    out << "<div style=\"font-family:monospace;line-height:1.8\">\n";
    for (size_t t = 0; t < tokens.size(); ++t) {
        const double v = mx > mn ? (result.norms[t] - mn) / (mx - mn) : 0.0;
        const char* fg = v > 0.6 ? "#ffffff" : "#000000";
        out << "<span title=\"" << result.norms[t] << "\" style=\"background-color:" << green_shade(v)
            << ";color:" << fg << ";padding:2px;margin:1px;border-radius:3px\">" << escape_html(tokens[t])
            << "</span>\n";
    }
    out << "</div>\n";
}

void heatmap_export(const AttributionResult& result, const std::vector<std::string>& tokens,
                    const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("heatmap_export: cannot open " + path);
    heatmap_fragment(result, tokens, out);
    if (!out) throw std::runtime_error("heatmap_export: write failed for " + path);
}

double top1_attribution_share(const std::vector<AttributionResult>& results) {
    if (results.empty()) throw std::invalid_argument("top1_attribution_share: no results");
    double top = 0.0, all = 0.0;
    for (const AttributionResult& r : results) {
        if (r.norms.empty()) throw std::invalid_argument("top1_attribution_share: result with no norms");
        top += *std::max_element(r.norms.begin(), r.norms.end());
        for (double v : r.norms) all += v;
    }
    if (all == 0.0) throw std::invalid_argument("top1_attribution_share: zero attribution mass");
    return top / all;
}

int steps_to_threshold(const TrainLog& log, double tau, int window) {
    if (window < 1) throw std::invalid_argument("steps_to_threshold: window must be >= 1");
    const int n = static_cast<int>(log.steps.size());
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += log.steps[i].ce;
        if (i >= window) acc -= log.steps[i - window].ce;
        if (i >= window - 1 && acc / window < tau) return i;
    }
    return -1;
}

void loss_curve_report(const std::vector<std::pair<std::string, const TrainLog*>>& logs, double tau,
                       int window, const std::string& path) {
    if (logs.empty()) throw std::invalid_argument("loss_curve_report: no logs");
    const char* palette[] = {"#1b7837", "#762a83", "#2166ac", "#b2182b", "#e08214", "#35978f"};
    const int width = 900, height = 320, pad = 40;

    size_t max_steps = 0;
    double max_loss = 0.0;
    for (const auto& [name, log] : logs) {
        if (log == nullptr || log->steps.empty())
            throw std::invalid_argument("loss_curve_report: run '" + name + "' has no steps");
        max_steps = std::max(max_steps, log->steps.size());
        for (const StepRecord& s : log->steps) max_loss = std::max(max_loss, s.total);
    }
    if (max_loss <= 0.0) max_loss = 1.0;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("loss_curve_report: cannot open " + path);
    out << "<html><body>\n<h3>Training loss per step</h3>\n";
    out << "<svg width=\"" << width << "\" height=\"" << height
        << "\" style=\"background:#fafafa;border:1px solid #ccc\">\n";
    for (size_t s = 0; s < logs.size(); ++s) {
        const TrainLog& log = *logs[s].second;
        out << "<polyline fill=\"none\" stroke=\"" << palette[s % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < log.steps.size(); ++i) {
            const double x =
                pad + (max_steps > 1 ? static_cast<double>(i) / (max_steps - 1) : 0.0) * (width - 2 * pad);
            const double y = height - pad - (log.steps[i].total / max_loss) * (height - 2 * pad);
            out << x << ',' << y << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << pad + 8 << "\" y=\"" << pad + 16 * (s + 1) << "\" fill=\"" << palette[s % 6]
            << "\" font-size=\"13\">" << escape_html(logs[s].first) << "</text>\n";
    }
    out << "</svg>\n<h3>Steps until trailing-mean CE &lt; " << tau << " (window " << window << ")</h3>\n";
    out << "<table border=\"1\" cellpadding=\"4\"><tr><th>run</th><th>steps</th></tr>\n";
    for (const auto& [name, log] : logs) {
        const int steps = steps_to_threshold(*log, tau, window);
        out << "<tr><td>" << escape_html(name) << "</td><td>"
            << (steps < 0 ? std::string("never") : std::to_string(steps)) << "</td></tr>\n";
    }
    out << "</table>\n</body></html>\n";
    if (!out) throw std::runtime_error("loss_curve_report: write failed for " + path);
}

}  // namespace dbr
