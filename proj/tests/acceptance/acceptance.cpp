// End-to-end acceptance harness. Prints one [PASS]/[FAIL] line per
// criterion and exits nonzero when any fails. Passing criterion numbers as
// arguments runs just those.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dbr/analysis.hpp"
#include "dbr/attribution.hpp"
#include "dbr/common.hpp"
#include "dbr/config.hpp"
#include "dbr/dataset.hpp"
#include "dbr/losses.hpp"
#include "dbr/masking.hpp"
#include "dbr/model.hpp"
#include "dbr/pipeline.hpp"
#include "dbr/shortcut.hpp"
#include "dbr/tensor.hpp"
#include "dbr/train.hpp"
#include "json.hpp"

#include "../temp_dir.hpp"

namespace {

using dbr_test::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using namespace dbr;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Accumulates sub-check outcomes so one criterion line can report every
// failure at once instead of stopping at the first.
struct Checker {
    std::vector<std::string> fails;
    std::vector<std::string> notes;

    void require(bool ok, const std::string& what) {
        if (!ok) fails.push_back(what);
    }
    void note(const std::string& s) { notes.push_back(s); }
    std::string detail() const {
        std::string d;
        for (const auto& f : fails) {
            if (!d.empty()) d += "; ";
            d += "FAILED " + f;
        }
        for (const auto& n : notes) {
            if (!d.empty()) d += "; ";
            d += n;
        }
        return d;
    }
};

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- criterion 1: finite-difference agreement across primitives and losses -

void criterion_gradients(Checker& ck) {
    Rng rng(2024);
    double worst = 0.0;
    int64_t checked = 0, skipped = 0;
    const int cases = 200;
    for (int c = 0; c < cases; ++c) {
        const int V = 5;
        const int L = rng.uniform_range(2, 4);
        const int d = rng.uniform_range(2, 4);
        const int h = rng.uniform_range(2, 5);
        const int K = rng.uniform_range(2, 4);

        ParamStore store;
        Param& E = store.add("E", {V, d});
        Param& W1 = store.add("W1", {d, h});
        Param& b1 = store.add("b1", {h});
        Param& W2 = store.add("W2", {h, K});
        Param& b2 = store.add("b2", {K});
        Param& extra = store.add("extra", {1, K});
        for (const auto& p : store.params()) p->init_uniform(rng, 0.9);

        std::vector<int> ids(L);
        for (int& id : ids) id = rng.uniform_int(V);
        std::vector<uint8_t> mask(L, 0);
        for (auto& m : mask) m = static_cast<uint8_t>(rng.bernoulli(0.7));
        mask[rng.uniform_int(L)] = 1;
        const int gold = rng.uniform_int(K);
        const int pick_idx = rng.uniform_int(K);
        std::vector<double> bias_probs(K);
        double z = 0.0;
        for (double& v : bias_probs) {
            v = 0.05 + rng.uniform();
            z += v;
        }
        for (double& v : bias_probs) v /= z;
        std::vector<double> bias_logits(K);
        for (double& v : bias_logits) v = rng.symmetric(1.5);
        const int head = c % 4;
        const bool literal = (c / 4) % 2 == 1;
        const double lam = 0.3 + rng.uniform();

        // One graph touching every primitive, capped by a rotating loss head.
        auto build = [&](Tape& tape) -> Tensor {
            Tensor x = tape.embedding(E, ids);
            Tensor h1 = tape.relu(tape.row_bias(tape.matmul(x, tape.leaf(W1)), tape.leaf(b1)));
            Tensor pooled = tape.mean_rows(h1, mask);
            Tensor logits = tape.row_bias(tape.matmul(pooled, tape.leaf(W2)), tape.leaf(b2));
            Tensor g1 = tape.mul(logits, tape.leaf(extra));
            Tensor g2 = tape.sub(tape.scale(g1, 0.5), logits);
            Tensor g3 = tape.add(logits, tape.scale(g2, 0.25));
            Tensor soft = tape.softmax_rows(g3);
            Tensor picked = tape.pick(tape.reshape(tape.log_floored(soft), {K, 1}), pick_idx);
            Tensor reg = tape.sum(tape.mul(x, x));
            Tensor reg2 = tape.sum(tape.matmul_nt(h1, h1));
            Tensor loss = [&]() -> Tensor {
                switch (head) {
                    case 0: return cross_entropy(tape, g3, gold);
                    case 1: return combined_loss(tape, logits, g3, gold, lam);
                    case 2: return er_loss(tape, bias_probs, g3, gold);
                    default: return poe_loss(tape, bias_logits, g3, gold, literal);
                }
            }();
            Tensor garnish = tape.add(tape.scale(picked, 0.05),
                                      tape.add(tape.scale(reg, 0.01), tape.scale(reg2, 0.004)));
            return tape.add(loss, garnish);
        };

        FiniteDiffReport rep = finite_diff_check(build, store, 1e-5);
        worst = std::max(worst, rep.max_rel_error);
        checked += rep.checked;
        skipped += rep.skipped_kinks;
    }
    ck.require(worst < 1e-4, "max rel error " + fmt("%.3e", worst) + " >= 1e-4");
    ck.require(checked > 0, "no parameter entries checked");
    ck.note("max rel err " + fmt("%.2e", worst) + " over " + std::to_string(cases) + " graphs, " +
            std::to_string(checked) + " entries (" + std::to_string(skipped) + " kink-skipped)");
}

// --- criterion 2: integrated gradients closed form and completeness --------

void criterion_ig(Checker& ck) {
    // Linear scorer: attribution equals x * w exactly for any step count.
    {
        Rng rng(77);
        const int n = 18;
        std::vector<double> w(n), x(n);
        for (double& v : w) v = rng.symmetric(2.0);
        for (double& v : x) v = rng.symmetric(3.0);
        ScalarForwardFn fn = [&](Tape& tape, Tensor xt) {
            return tape.sum(tape.mul(xt, tape.constant({1, n}, w)));
        };
        double worst = 0.0;
        for (int m : {1, 2, 3, 9, 64, 128}) {
            std::vector<double> g = integrated_gradients(fn, {1, n}, x, m);
            for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(g[j] - x[j] * w[j]));
        }
        ck.require(worst < 1e-12, "linear closed form off by " + fmt("%.2e", worst));
        ck.note("linear exact to " + fmt("%.1e", worst));
    }

    // Completeness on a trained classifier.
    ShortcutSpec spec = ShortcutSpec::with_pool_sizes(3, 12, 4, 20);
    spec.rho_train = 0.9;
    spec.rho_ood = 0.1;
    spec.shortcut_rate = 0.9;
    spec.genuine_signal = 0.3;
    spec.len_min = 5;
    spec.len_max = 9;
    spec.train_size = 900;
    spec.dev_size = 300;
    spec.ood_size = 120;
    spec.seed = 11;
    GeneratedCorpora corpora = generate_corpus(spec);
    Vocabulary vocab = build_vocabulary({&corpora.train, &corpora.dev, &corpora.ood});
    const int max_len = 10;
    auto train = encode_corpus(corpora.train, vocab, max_len);
    auto dev = encode_corpus(corpora.dev, vocab, max_len);
    auto ood = encode_corpus(corpora.ood, vocab, max_len);
    ModelConfig arch{vocab.size(), 16, 3, EncoderKind::Mixer};
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 30;
    tc.variant = LossVariant::Standard;
    tc.seed = 11;
    TrainResult tr = train_identification(train, dev, ood, arch, tc);
    const ClassifierModel& model = tr.model;

    const int sample = 100;
    int nonincreasing = 0;
    double max_err128 = 0.0, sum_err128 = 0.0;
    for (int i = 0; i < sample; ++i) {
        const EncodedExample& ex = dev[i];
        const std::vector<uint8_t> pm = ex.pad_mask();
        ScalarForwardFn fn = [&](Tape& tape, Tensor xt) {
            ClassifierOutput out = model.forward_from_embeddings(tape, xt, pm);
            return tape.pick(tape.softmax_rows(out.logits), ex.label);
        };
        const std::vector<double> x = model.embed(ex.ids);
        auto eval_at = [&](const std::vector<double>& pt) {
            Tape tape;
            Tensor t = tape.input({max_len, arch.embed_dim}, pt, false);
            return fn(tape, t).scalar();
        };
        const double delta = eval_at(x) - eval_at(std::vector<double>(x.size(), 0.0));
        const double denom = std::max(std::abs(delta), 1e-6);
        auto err_at = [&](int m) {
            std::vector<double> g = integrated_gradients(fn, {max_len, arch.embed_dim}, x, m);
            double s = 0.0;
            for (double v : g) s += v;
            return std::abs(s - delta) / denom;
        };
        const double e32 = err_at(32), e128 = err_at(128), e256 = err_at(256);
        sum_err128 += e128;
        max_err128 = std::max(max_err128, e128);
        if (e256 <= e32 + 1e-12) ++nonincreasing;
    }
    const double mean128 = sum_err128 / sample;
    ck.require(max_err128 < 0.05, "worst completeness error at m=128 is " + fmt("%.4f", max_err128));
    ck.require(nonincreasing >= 90,
               "error non-increasing 32->256 on only " + std::to_string(nonincreasing) + "/100");
    ck.note("m=128 completeness err mean " + fmt("%.4f", mean128) + " max " + fmt("%.4f", max_err128) +
            ", non-increasing " + std::to_string(nonincreasing) + "/100");
}

// --- criterion 3: divergence properties ------------------------------------

void criterion_divergences(Checker& ck) {
    Rng rng(5150);
    const int pairs = 10000;
    double min_kld = 1e300, min_jsd = 1e300, max_jsd = -1e300, worst_self = 0.0;
    bool symmetric = true;
    for (int i = 0; i < pairs; ++i) {
        const int K = rng.uniform_range(2, 8);
        auto simplex = [&]() {
            std::vector<double> p(K);
            double z = 0.0;
            for (double& v : p) {
                v = -std::log1p(-rng.uniform());
                z += v;
            }
            if (z <= 0.0) {
                p.assign(K, 1.0 / K);
                return p;
            }
            for (double& v : p) v /= z;
            return p;
        };
        const std::vector<double> p = simplex(), q = simplex();
        const double a = jsd(p, q);
        if (a != jsd(q, p)) symmetric = false;
        min_jsd = std::min(min_jsd, a);
        max_jsd = std::max(max_jsd, a);
        worst_self = std::max(worst_self, jsd(p, p));
        min_kld = std::min(min_kld, std::min(kld(p, q), kld(q, p)));
    }
    const double ln2 = std::log(2.0);
    const std::vector<double> oh1{1.0, 0.0}, oh2{0.0, 1.0};
    const double jsd_onehot = jsd(oh1, oh2);
    ck.require(symmetric, "jsd(p,q) != jsd(q,p)");
    ck.require(min_jsd >= -1e-12, "jsd below 0: " + fmt("%.2e", min_jsd));
    ck.require(max_jsd <= ln2 + 1e-12, "jsd above ln2: " + fmt("%.12f", max_jsd));
    ck.require(worst_self < 1e-12, "jsd(p,p) up to " + fmt("%.2e", worst_self));
    ck.require(min_kld >= -1e-15, "kld negative: " + fmt("%.2e", min_kld));
    ck.require(std::abs(jsd_onehot - ln2) <= 1e-12,
               "one-hot jsd " + fmt("%.15f", jsd_onehot) + " != ln2");
    ck.note("10^4 pairs, jsd range [" + fmt("%.1e", std::max(0.0, min_jsd)) + ", " +
            fmt("%.6f", max_jsd) + "], min kld " + fmt("%.1e", min_kld) + ", jsd(p,p) max " +
            fmt("%.1e", worst_self));
}

// --- criterion 4: shortcut-degree arithmetic --------------------------------

void criterion_shortcut_degree(Checker& ck) {
    double worst_uniform = 0.0;
    for (int K = 2; K <= 6; ++K) {
        std::vector<double> p(K, 1.0 / K);
        worst_uniform = std::max(worst_uniform, std::abs(sample_variance(p)));
    }
    ck.require(worst_uniform <= 1e-15, "uniform variance " + fmt("%.2e", worst_uniform));

    const std::vector<double> onehot{1.0, 0.0, 0.0};
    const double v = sample_variance(onehot);
    ck.require(std::abs(v - 1.0 / 3.0) <= 1e-12, "one-hot K=3 variance " + fmt("%.15f", v));

    Rng rng(88);
    std::vector<double> batch(40);
    for (double& b : batch) b = rng.uniform() * 0.33;
    const std::vector<double> norm = normalize_batch(batch);
    const double mn = *std::min_element(norm.begin(), norm.end());
    const double mx = *std::max_element(norm.begin(), norm.end());
    ck.require(mn == 0.0, "normalized min " + fmt("%.2e", mn) + " != 0");
    ck.require(mx == 1.0, "normalized max " + fmt("%.17f", mx) + " != 1");

    const std::vector<double> flat(17, 0.42);
    const std::vector<double> nflat = normalize_batch(flat);
    const bool zeros = std::all_of(nflat.begin(), nflat.end(), [](double x) { return x == 0.0; });
    ck.require(zeros, "degenerate batch not all zeros");
    ck.note("uniform var " + fmt("%.1e", worst_uniform) + ", one-hot var " + fmt("%.12f", v) +
            ", endpoints exact, degenerate zeroed");
}

// --- criterion 5: soft-mask statistics --------------------------------------

void criterion_soft_mask(Checker& ck) {
    const std::vector<int> ids{5, 6, 7, 8, 9};
    const std::vector<int> idx{1, 3};
    const int N = 10000;
    bool applied_ok = true;
    for (double s2 : {0.1, 0.5, 0.7}) {
        int masked = 0;
        for (int i = 0; i < N; ++i) {
            MaskDecision d = soft_mask(ids, idx, s2, 424242, i % 40, "ex-" + std::to_string(i));
            if (d.masked) {
                ++masked;
                if (d.ids[1] != kMaskId || d.ids[3] != kMaskId || d.ids[0] != ids[0]) applied_ok = false;
            } else if (d.ids != ids) {
                applied_ok = false;
            }
        }
        const double freq = static_cast<double>(masked) / N;
        const double sigma = std::sqrt(s2 * (1.0 - s2) / N);
        ck.require(std::abs(freq - s2) <= 3.0 * sigma,
                   "s2=" + fmt("%.1f", s2) + " freq " + fmt("%.4f", freq) + " outside 3 sigma");
        ck.note("s2=" + fmt("%.1f", s2) + " freq " + fmt("%.4f", freq));
    }
    int m0 = 0, m1 = 0;
    for (int i = 0; i < N; ++i) {
        if (soft_mask(ids, idx, 0.0, 1, i % 10, "a" + std::to_string(i)).masked) ++m0;
        if (soft_mask(ids, idx, 1.0, 1, i % 10, "a" + std::to_string(i)).masked) ++m1;
    }
    ck.require(m0 == 0, "s2=0 masked " + std::to_string(m0) + " times");
    ck.require(m1 == N, "s2=1 masked only " + std::to_string(m1) + "/" + std::to_string(N));
    ck.require(applied_ok, "mask application mangled a sequence");
}

// --- criterion 6: LMI oracle equivalence ------------------------------------

void criterion_lmi(Checker& ck) {
    ShortcutSpec spec = ShortcutSpec::with_pool_sizes(3, 6, 3, 10);
    spec.len_min = 4;
    spec.len_max = 8;
    spec.train_size = 200;
    spec.dev_size = 10;
    spec.ood_size = 10;
    spec.genuine_signal = 0.25;
    spec.shortcut_rate = 0.9;
    spec.rho_train = 0.8;
    spec.rho_ood = 0.2;
    spec.seed = 5;
    const Corpus corpus = generate_corpus(spec).train;

    Rng rng(909);
    std::vector<ShortcutProfile> profiles;
    for (const Example& ex : corpus.examples) {
        ShortcutProfile pr;
        pr.example_id = ex.id;
        const int len = static_cast<int>(ex.tokens.size());
        const int n = std::min(3, len);
        std::set<int> chosen;
        while (static_cast<int>(chosen.size()) < n) chosen.insert(rng.uniform_int(len));
        pr.top_indices.assign(chosen.begin(), chosen.end());
        pr.p = {1.0, 0.0, 0.0};
        profiles.push_back(pr);
    }
    const int k = 7;
    const LmiTable table = top_lmi_table(profiles, corpus, k);

    // Brute-force oracle: count occurrences of words inside top-N sets.
    std::map<std::string, const Example*> by_id;
    for (const Example& ex : corpus.examples) by_id[ex.id] = &ex;
    std::map<std::string, std::vector<int64_t>> counts;
    std::vector<int64_t> label_totals(3, 0);
    int64_t total = 0;
    for (const ShortcutProfile& pr : profiles) {
        const Example& ex = *by_id.at(pr.example_id);
        for (int idx : pr.top_indices) {
            auto& row = counts[ex.tokens[idx]];
            if (row.empty()) row.assign(3, 0);
            ++row[ex.label];
            ++label_totals[ex.label];
            ++total;
        }
    }
    ck.require(table.total == total, "total " + std::to_string(table.total) + " != oracle " +
                                         std::to_string(total));
    struct Row {
        std::string word;
        int64_t cwl, cw;
        double val;
    };
    bool rows_equal = true;
    double worst_val = 0.0;
    for (int l = 0; l < 3; ++l) {
        std::vector<Row> want;
        for (const auto& [word, row] : counts) {
            if (row[l] == 0) continue;
            const int64_t cw = row[0] + row[1] + row[2];
            const double pwl = static_cast<double>(row[l]) / static_cast<double>(total);
            const double val = pwl * std::log((static_cast<double>(row[l]) * static_cast<double>(total)) /
                                              (static_cast<double>(cw) *
                                               static_cast<double>(label_totals[l])));
            want.push_back({word, row[l], cw, val});
        }
        std::sort(want.begin(), want.end(), [](const Row& a, const Row& b) {
            if (a.val != b.val) return a.val > b.val;
            return a.word < b.word;
        });
        if (static_cast<int>(want.size()) > k) want.resize(k);
        const auto& got = table.per_label[l];
        if (got.size() != want.size()) {
            rows_equal = false;
            continue;
        }
        for (size_t r = 0; r < want.size(); ++r) {
            const LmiEntry& e = got[r];
            const Row& w = want[r];
            worst_val = std::max(worst_val, std::abs(e.value - w.val));
            if (e.word != w.word || e.count_wl != w.cwl || e.count_w != w.cw ||
                e.count_l != label_totals[l] || std::abs(e.value - w.val) > 1e-12)
                rows_equal = false;
        }
    }
    ck.require(rows_equal, "table rows differ from oracle");

    const double worked = lmi(4, 5, 10, 20);
    ck.require(std::abs(worked - 0.2 * std::log(1.6)) <= 1e-15,
               "lmi(4,5,10,20) " + fmt("%.17f", worked));
    ck.require(std::abs(worked - 0.0940) <= 5e-5, "worked example not ~0.0940");
    ck.note(std::to_string(total) + " occurrences over 200 examples, max |value diff| " +
            fmt("%.1e", worst_val) + ", lmi(4,5,10,20)=" + fmt("%.6f", worked));
}

// --- criteria 7 and 8: seeded generalization-gap experiment -----------------

struct GapOutcome {
    double id_dev = -1, id_ood = -1, soft_dev = -1, soft_ood = -1, hard_dev = -1, hard_ood = -1;
    double conf_id = -1, conf_soft = -1;
    double top1_id = -1, top1_soft = -1;
    int steps_id = -2, steps_soft = -2;
    double seconds = 0;
};

Config gap_config(const std::string& run_dir) {
    Config c;
    c.seed = 7;
    c.run_dir = run_dir;
    c.num_labels = 3;
    c.content_per_label = 800;
    c.shortcut_per_label = 4;
    c.filler_count = 40;
    c.rho_train = 0.95;
    c.rho_ood = 0.05;
    c.shortcut_rate = 0.9;
    c.genuine_signal = 0.15;
    c.len_min = 6;
    c.len_max = 10;
    c.train_size = 10000;
    c.dev_size = 2000;
    c.ood_size = 2000;
    c.embed_dim = 32;
    c.encoder = "mixer";
    c.max_len = 12;
    c.ig_steps = 8;
    c.top_n = 3;
    c.use_filtered_words = false;
    c.id_epochs = 5;
    c.debias_epochs = 6;
    c.bias_epochs = 1;
    c.id_batch = 32;
    c.debias_batch = 18;
    c.bias_batch = 18;
    c.bias_subset = 2000;
    c.bias_hidden = 100;
    c.lambda = 1.5;
    c.lr = 1e-3;
    c.optimizer = "adam";
    c.loss_variant = "dbr-soft";
    c.lmi_top_k = 10;
    c.histogram_bins = 20;
    c.heatmap_examples = 4;
    c.share_sample = 200;
    c.ce_threshold = 0.5;
    c.threshold_window = 25;
    return c;
}

const GapOutcome& gap_outcome() {
    static GapOutcome out = [] {
        GapOutcome g;
        const auto t0 = Clock::now();
        TempDir td("accept-gap");
        const std::string dir = td.file("run");
        const Config cfg = gap_config(dir);
        fs::create_directories(dir);
        {
            RunLock lock(dir);
            Pipeline p(cfg, dir);
            p.run_all({false, false, true});
        }
        for (const json& r : read_jsonl(dir + "/report.jsonl")) {
            const std::string kind = r.at("record");
            if (kind == "eval") {
                const std::string model = r.at("model"), split = r.at("split");
                const double acc = r.at("accuracy");
                if (model == "identification" && split == "dev") {
                    g.id_dev = acc;
                    g.conf_id = r.at("mean_confidence");
                } else if (model == "identification" && split == "ood") {
                    g.id_ood = acc;
                } else if (model == "debiased" && split == "dev") {
                    g.soft_dev = acc;
                    g.conf_soft = r.at("mean_confidence");
                } else if (model == "debiased" && split == "ood") {
                    g.soft_ood = acc;
                }
            } else if (kind == "analysis") {
                g.top1_id = r.at("top1_share").at("identification");
                g.top1_soft = r.at("top1_share").at("debiased");
                g.steps_id = r.at("steps_to_ce_threshold").at("identification");
                g.steps_soft = r.at("steps_to_ce_threshold").at("debiased");
            }
        }
        // Hard-mask ablation reuses the cached data/attribution stages.
        Config hard = cfg;
        hard.loss_variant = "dbr-hard";
        {
            RunLock lock(dir);
            Pipeline p(hard, dir);
            const PipelineOptions opts{false, false, true};
            p.run_stage(StageId::TrainDebias, opts);
            p.run_stage(StageId::Eval, opts);
        }
        for (const json& r : read_jsonl(dir + "/eval/metrics.jsonl")) {
            if (r.at("model") != "debiased") continue;
            if (r.at("split") == "dev")
                g.hard_dev = r.at("accuracy");
            else if (r.at("split") == "ood")
                g.hard_ood = r.at("accuracy");
        }
        g.seconds = seconds_since(t0);
        return g;
    }();
    return out;
}

void criterion_gap(Checker& ck) {
    const GapOutcome& g = gap_outcome();
    const double gap = g.id_dev - g.id_ood;
    ck.require(gap >= 0.15, "id dev-ood gap " + fmt("%.3f", gap) + " < 0.15");
    ck.require(g.soft_ood - g.id_ood >= 0.05,
               "soft ood " + fmt("%.3f", g.soft_ood) + " not >= id ood + 0.05");
    ck.require(std::abs(g.soft_dev - g.id_dev) <= 0.02 + 1e-12,
               "|soft dev - id dev| " + fmt("%.3f", std::abs(g.soft_dev - g.id_dev)) + " > 0.02");
    ck.require(g.soft_ood >= g.hard_ood - 1e-12,
               "soft ood " + fmt("%.3f", g.soft_ood) + " < hard ood " + fmt("%.3f", g.hard_ood));
    ck.require(g.hard_dev <= g.soft_dev + 1e-12,
               "hard dev " + fmt("%.3f", g.hard_dev) + " > soft dev " + fmt("%.3f", g.soft_dev));
    ck.require(g.seconds < 600.0, "runtime " + fmt("%.0f", g.seconds) + "s >= 600s");
    ck.note("id " + fmt("%.3f", g.id_dev) + "/" + fmt("%.3f", g.id_ood) + ", soft " +
            fmt("%.3f", g.soft_dev) + "/" + fmt("%.3f", g.soft_ood) + ", hard " +
            fmt("%.3f", g.hard_dev) + "/" + fmt("%.3f", g.hard_ood) + " (dev/ood)");
}

void criterion_trends(Checker& ck) {
    const GapOutcome& g = gap_outcome();
    ck.require(g.conf_soft < g.conf_id, "debiased dev confidence " + fmt("%.4f", g.conf_soft) +
                                            " not below identification " + fmt("%.4f", g.conf_id));
    ck.require(g.steps_id >= 0, "identification never reached the CE threshold");
    ck.require(g.steps_soft < 0 || g.steps_id < g.steps_soft,
               "identification steps " + std::to_string(g.steps_id) + " not fewer than debiased " +
                   std::to_string(g.steps_soft));
    ck.require(g.top1_soft < g.top1_id, "top-1 attribution share " + fmt("%.4f", g.top1_soft) +
                                            " not below " + fmt("%.4f", g.top1_id));
    ck.note("confidence " + fmt("%.4f", g.conf_id) + "->" + fmt("%.4f", g.conf_soft) + ", steps " +
            std::to_string(g.steps_id) + " vs " + std::to_string(g.steps_soft) + ", top-1 share " +
            fmt("%.4f", g.top1_id) + "->" + fmt("%.4f", g.top1_soft));
}

// --- criterion 9: determinism ------------------------------------------------

Config det_config(const std::string& run_dir) {
    Config c;
    c.seed = 19;
    c.run_dir = run_dir;
    c.num_labels = 3;
    c.content_per_label = 30;
    c.shortcut_per_label = 3;
    c.filler_count = 15;
    c.rho_train = 0.9;
    c.rho_ood = 0.1;
    c.shortcut_rate = 0.85;
    c.genuine_signal = 0.2;
    c.len_min = 5;
    c.len_max = 8;
    c.train_size = 400;
    c.dev_size = 120;
    c.ood_size = 120;
    c.embed_dim = 16;
    c.encoder = "mixer";
    c.max_len = 10;
    c.ig_steps = 4;
    c.top_n = 2;
    c.id_epochs = 2;
    c.debias_epochs = 2;
    c.bias_epochs = 1;
    c.id_batch = 25;
    c.debias_batch = 20;
    c.bias_batch = 20;
    c.bias_subset = 200;
    c.bias_hidden = 12;
    c.lambda = 1.0;
    c.lr = 1e-3;
    c.optimizer = "adam";
    c.loss_variant = "dbr-soft";
    c.lmi_top_k = 5;
    c.histogram_bins = 8;
    c.heatmap_examples = 2;
    c.share_sample = 40;
    c.ce_threshold = 0.5;
    c.threshold_window = 5;
    return c;
}

void criterion_determinism(Checker& ck) {
    TempDir td("accept-det");
    auto run = [&](const std::string& sub) {
        const std::string dir = td.file(sub);
        fs::create_directories(dir);
        RunLock lock(dir);
        Pipeline p(det_config(dir), dir);
        p.run_all({false, false, true});
        return dir;
    };
    const std::string a = run("a"), b = run("b");
    for (const char* rel : {"report.jsonl", "summary.md", "eval/metrics.jsonl", "analysis/trends.json"}) {
        const std::string ba = slurp(a + std::string("/") + rel);
        const std::string bb = slurp(b + std::string("/") + rel);
        ck.require(!ba.empty(), std::string(rel) + " empty");
        ck.require(ba == bb, std::string(rel) + " differs between runs");
    }
    ck.note("report hash " + hash_hex(fnv1a64(slurp(a + "/report.jsonl"))) + " in both runs");
}

// --- criterion 10: bias-only sanity contrast ---------------------------------

double bias_bearing_accuracy(double rho_train, const std::string& dir) {
    Config c;
    c.seed = 7;
    c.run_dir = dir;
    c.num_labels = 3;
    c.content_per_label = 20000;
    c.shortcut_per_label = 4;
    c.filler_count = 40;
    c.rho_train = rho_train;
    c.rho_ood = 0.05;
    c.shortcut_rate = 0.9;
    c.genuine_signal = 0.05;
    c.len_min = 6;
    c.len_max = 10;
    c.train_size = 10000;
    c.dev_size = 2000;
    c.ood_size = 2000;
    c.embed_dim = 32;
    c.encoder = "mixer";
    c.max_len = 12;
    c.ig_steps = 8;
    c.top_n = 3;
    c.use_filtered_words = false;
    c.id_epochs = 1;
    c.bias_epochs = 1;
    c.id_batch = 32;
    c.bias_batch = 18;
    c.bias_subset = 2000;
    c.bias_hidden = 8;
    c.lr = 1e-3;
    c.optimizer = "adam";
    fs::create_directories(dir);
    RunLock lock(dir);
    Pipeline p(c, dir);
    const PipelineOptions opts{false, false, true};
    p.run_stage(StageId::GenData, opts);
    p.run_stage(StageId::TrainId, opts);
    p.run_stage(StageId::ExtractShortcuts, opts);
    p.run_stage(StageId::TrainBias, opts);
    std::ifstream in(dir + "/artifacts/bias_holdout.json");
    const json j = json::parse(in);
    return j.at("holdout_bearing_accuracy");
}

void criterion_bias_contrast(Checker& ck) {
    TempDir td("accept-bias");
    const double acc95 = bias_bearing_accuracy(0.95, td.file("r95"));
    const double acc13 = bias_bearing_accuracy(1.0 / 3.0, td.file("r13"));
    ck.require(acc95 > 0.90, "rho=0.95 bearing accuracy " + fmt("%.4f", acc95) + " <= 0.90");
    ck.require(std::abs(acc13 - 1.0 / 3.0) <= 0.05,
               "rho=1/3 bearing accuracy " + fmt("%.4f", acc13) + " not within 0.05 of chance");
    ck.note("bearing accuracy " + fmt("%.4f", acc95) + " at rho=0.95, " + fmt("%.4f", acc13) +
            " at rho=1/3 (chance 0.3333)");
}

struct CriterionDef {
    int num;
    const char* name;
    void (*fn)(Checker&);
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    const std::vector<CriterionDef> defs = {
        {1, "gradient integrity", criterion_gradients},
        {2, "integrated gradients", criterion_ig},
        {3, "divergence properties", criterion_divergences},
        {4, "shortcut-degree arithmetic", criterion_shortcut_degree},
        {5, "soft-mask statistics", criterion_soft_mask},
        {6, "lmi oracle equivalence", criterion_lmi},
        {7, "generalization-gap experiment", criterion_gap},
        {8, "debiasing trends", criterion_trends},
        {9, "determinism", criterion_determinism},
        {10, "bias-only contrast", criterion_bias_contrast},
    };
    int failures = 0, ran = 0;
    for (const CriterionDef& def : defs) {
        if (!only.empty() && !only.count(def.num)) continue;
        ++ran;
        Checker ck;
        const auto t0 = Clock::now();
        try {
            def.fn(ck);
        } catch (const std::exception& e) {
            ck.fails.push_back(std::string("exception: ") + e.what());
        }
        const double secs = seconds_since(t0);
        const bool pass = ck.fails.empty();
        if (!pass) ++failures;
        std::printf("[%s] criterion %d: %s (%s; %.1fs)\n", pass ? "PASS" : "FAIL", def.num,
                    def.name, ck.detail().c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("acceptance: %d/%d criteria passed\n", ran - failures, ran);
    return failures == 0 ? 0 : 1;
}
