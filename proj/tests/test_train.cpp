#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "dbr/common.hpp"
#include "dbr/masking.hpp"
#include "dbr/train.hpp"
#include "doctest.h"
#include "temp_dir.hpp"

using namespace dbr;
using dbr_test::TempDir;

namespace {

// Tiny separable task: three "content" words, label = which one appears.
struct Toy {
    std::vector<EncodedExample> train, dev;
    ModelConfig arch;
};

Toy make_toy(int n_train = 30, int n_dev = 12) {
    Toy toy;
    toy.arch.vocab_size = 10;
    toy.arch.embed_dim = 8;
    toy.arch.num_labels = 3;
    toy.arch.encoder = EncoderKind::Mixer;
    Rng rng(mix_seed(77, "toy-corpus"));
    auto make = [&](int i, const char* prefix) {
        EncodedExample ex;
        ex.id = std::string(prefix) + "-" + std::to_string(i);
        ex.label = i % 3;
        const int filler = 7 + rng.uniform_int(3);
        ex.ids = {filler, 4 + ex.label, 7 + rng.uniform_int(3), kPadId};
        ex.true_len = 3;
        ex.shortcut_positions = {1};
        return ex;
    };
    for (int i = 0; i < n_train; ++i) toy.train.push_back(make(i, "tr"));
    for (int i = 0; i < n_dev; ++i) toy.dev.push_back(make(i, "dv"));
    return toy;
}

std::vector<ShortcutProfile> flat_profiles(const std::vector<EncodedExample>& examples, double s2_hat,
                                           std::vector<double> p = {1.0 / 3, 1.0 / 3, 1.0 / 3}) {
    std::vector<ShortcutProfile> out;
    for (const EncodedExample& ex : examples) {
        ShortcutProfile pr;
        pr.example_id = ex.id;
        pr.top_indices = {1};  // the content word's slot
        pr.p = p;
        pr.s2 = 0.0;
        pr.s2_hat = s2_hat;
        out.push_back(pr);
    }
    return out;
}

TrainConfig quick_config(LossVariant variant, int epochs, double lambda = 1.0) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 10;
    cfg.lambda = lambda;
    cfg.variant = variant;
    cfg.optimizer.lr = 0.02;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("plain training learns the separable toy task") {
    Toy toy = make_toy();
    TrainResult res = train_identification(toy.train, toy.dev, {}, toy.arch, quick_config(LossVariant::Standard, 20));
    CHECK(res.model.trained());
    REQUIRE_FALSE(res.log.steps.empty());
    REQUIRE(res.log.epochs.size() == 20);
    CHECK(res.log.steps.back().ce < 0.5 * res.log.steps.front().ce);
    CHECK(res.log.epochs.back().dev_accuracy == 1.0);
    CHECK(res.log.epochs.back().ood_accuracy == -1.0);  // no OOD split given
    CHECK(res.log.steps.front().jsd == 0.0);
    CHECK(res.log.wall_seconds > 0.0);

    EvalResult ev = evaluate(res.model, toy.dev);
    CHECK(ev.accuracy == 1.0);
}

TEST_CASE("training is bit-reproducible and the identification loss ignores the variant field") {
    Toy toy = make_toy(12, 0);
    TrainConfig cfg = quick_config(LossVariant::Standard, 2);
    TrainResult a = train_identification(toy.train, {}, {}, toy.arch, cfg);
    TrainResult b = train_identification(toy.train, {}, {}, toy.arch, cfg);
    CHECK(a.model.params().flat_values() == b.model.params().flat_values());

    TrainConfig er_cfg = cfg;
    er_cfg.variant = LossVariant::Er;  // must be overridden to standard internally
    TrainResult c = train_identification(toy.train, {}, {}, toy.arch, er_cfg);
    CHECK(a.model.params().flat_values() == c.model.params().flat_values());
}

TEST_CASE("dbr-soft at lambda zero retraces the identification run bit for bit") {
    Toy toy = make_toy(20, 6);
    TrainConfig cfg = quick_config(LossVariant::Standard, 3);
    TrainResult id_run = train_identification(toy.train, toy.dev, {}, toy.arch, cfg);

    TrainConfig soft_cfg = quick_config(LossVariant::DbrSoft, 3, /*lambda=*/0.0);
    // Mixed degrees so some draws really mask and the second forward runs.
    std::vector<ShortcutProfile> profiles = flat_profiles(toy.train, 0.7);
    TrainResult soft_run = train_debiased(toy.train, profiles, toy.dev, {}, toy.arch, soft_cfg);

    CHECK(id_run.model.params().flat_values() == soft_run.model.params().flat_values());
    REQUIRE(id_run.log.steps.size() == soft_run.log.steps.size());
    for (size_t i = 0; i < id_run.log.steps.size(); ++i) {
        CHECK(id_run.log.steps[i].ce == soft_run.log.steps[i].ce);
        CHECK(id_run.log.steps[i].total == soft_run.log.steps[i].total);
    }
    for (size_t i = 0; i < id_run.log.epochs.size(); ++i)
        CHECK(id_run.log.epochs[i].dev_accuracy == soft_run.log.epochs[i].dev_accuracy);
}

TEST_CASE("the first dbr step matches a hand-built loss") {
    Toy toy = make_toy(1, 0);
    const EncodedExample& ex = toy.train[0];
    TrainConfig cfg = quick_config(LossVariant::DbrHard, 1, /*lambda=*/2.0);
    cfg.batch_size = 1;
    std::vector<ShortcutProfile> profiles = flat_profiles(toy.train, 0.4);

    // Replicate the init exactly, then the masked/unmasked forwards.
    ClassifierModel model0(toy.arch, mix_seed(cfg.seed, "model-init"));
    std::vector<int> live(ex.ids.begin(), ex.ids.begin() + ex.true_len);
    std::vector<double> p_orig = model0.predict_proba(live);
    std::vector<double> p_unbias = model0.predict_proba(hard_mask(live, profiles[0].top_indices));
    const double expect_ce = -std::log(p_orig[ex.label]);
    const double expect_jsd = cfg.lambda * jsd(p_unbias, p_orig);

    TrainResult res = train_debiased(toy.train, profiles, {}, {}, toy.arch, cfg);
    REQUIRE(res.log.steps.size() == 1);
    CHECK(res.log.steps[0].ce == doctest::Approx(expect_ce).epsilon(1e-12));
    CHECK(res.log.steps[0].jsd == doctest::Approx(expect_jsd).epsilon(1e-12));
    CHECK(res.log.steps[0].total == doctest::Approx(expect_ce + expect_jsd).epsilon(1e-12));
}

TEST_CASE("dbr-soft at degree zero never pays a divergence penalty") {
    Toy toy = make_toy(10, 0);
    std::vector<ShortcutProfile> profiles = flat_profiles(toy.train, 0.0);
    TrainResult res =
        train_debiased(toy.train, profiles, {}, {}, toy.arch, quick_config(LossVariant::DbrSoft, 2, 5.0));
    for (const StepRecord& s : res.log.steps) {
        CHECK(s.jsd == 0.0);
        CHECK(s.total == s.ce);
    }
}

TEST_CASE("dbr-soft masking follows the keyed per-example draws") {
    Toy toy = make_toy(8, 0);
    TrainConfig cfg = quick_config(LossVariant::DbrSoft, 1, 3.0);
    cfg.batch_size = 8;
    std::vector<ShortcutProfile> profiles = flat_profiles(toy.train, 0.5);

    // Predict the batch's divergence component example by example.
    ClassifierModel model0(toy.arch, mix_seed(cfg.seed, "model-init"));
    double expect_jsd = 0.0;
    int masked_count = 0;
    for (const EncodedExample& ex : toy.train) {
        std::vector<int> live(ex.ids.begin(), ex.ids.begin() + ex.true_len);
        MaskDecision d = soft_mask(live, {1}, 0.5, cfg.seed, 0, ex.id);
        if (!d.masked) continue;
        ++masked_count;
        expect_jsd += cfg.lambda * jsd(model0.predict_proba(d.ids), model0.predict_proba(live));
    }
    expect_jsd /= toy.train.size();
    REQUIRE(masked_count > 0);
    REQUIRE(masked_count < 8);

    TrainResult res = train_debiased(toy.train, profiles, {}, {}, toy.arch, cfg);
    REQUIRE(res.log.steps.size() == 1);
    CHECK(res.log.steps[0].jsd == doctest::Approx(expect_jsd).epsilon(1e-12));
}

TEST_CASE("er and poe variants train and shift the parameters away from standard") {
    Toy toy = make_toy(12, 6);
    std::vector<ShortcutProfile> profiles = flat_profiles(toy.train, 0.5, {0.8, 0.1, 0.1});
    TrainResult std_run =
        train_identification(toy.train, {}, {}, toy.arch, quick_config(LossVariant::Standard, 2));
    for (LossVariant v : {LossVariant::Er, LossVariant::Poe}) {
        TrainResult res = train_debiased(toy.train, profiles, toy.dev, {}, toy.arch, quick_config(v, 2));
        CHECK(res.model.trained());
        for (const StepRecord& s : res.log.steps) {
            CHECK(std::isfinite(s.ce));
            CHECK(s.jsd == 0.0);  // these variants fold everything into ce
        }
        CHECK(res.model.params().flat_values() != std_run.model.params().flat_values());
    }
}

TEST_CASE("poe literal probability-sum mode changes the loss") {
    Toy toy = make_toy(6, 0);
    std::vector<ShortcutProfile> profiles = flat_profiles(toy.train, 0.5, {0.7, 0.2, 0.1});
    TrainConfig cfg = quick_config(LossVariant::Poe, 1);
    cfg.batch_size = 6;
    TrainResult log_mode = train_debiased(toy.train, profiles, {}, {}, toy.arch, cfg);
    cfg.poe_literal_sum = true;
    TrainResult sum_mode = train_debiased(toy.train, profiles, {}, {}, toy.arch, cfg);
    CHECK(log_mode.log.steps[0].ce != sum_mode.log.steps[0].ce);
}

TEST_CASE("divergence restores the last completed epoch and reports it") {
    Toy toy = make_toy(8, 0);
    TrainConfig cfg = quick_config(LossVariant::Standard, 3);
    cfg.batch_size = 8;  // one step per epoch
    cfg.optimizer.kind = OptimizerKind::Sgd;
    cfg.optimizer.lr = 1e200;  // first step stays finite, second forward blows up

    try {
        (void)train_identification(toy.train, {}, {}, toy.arch, cfg);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.last_good_epoch == 0);
        CHECK_FALSE(e.last_good_params.empty());
        for (double v : e.last_good_params) CHECK(std::isfinite(v));
        CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    }
}

TEST_CASE("divergence before any epoch completes reports epoch -1 and the init snapshot") {
    Toy toy = make_toy(8, 0);
    TrainConfig cfg = quick_config(LossVariant::Standard, 1);
    cfg.batch_size = 4;  // two steps in epoch 0
    cfg.optimizer.kind = OptimizerKind::Sgd;
    cfg.optimizer.lr = 1e200;

    try {
        (void)train_identification(toy.train, {}, {}, toy.arch, cfg);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.last_good_epoch == -1);
        ClassifierModel init(toy.arch, mix_seed(cfg.seed, "model-init"));
        CHECK(e.last_good_params == init.params().flat_values());
    }
}

TEST_CASE("training validates its inputs") {
    Toy toy = make_toy(4, 0);
    TrainConfig cfg = quick_config(LossVariant::Standard, 1);
    CHECK_THROWS_AS((void)train_identification({}, {}, {}, toy.arch, cfg), std::invalid_argument);

    TrainConfig bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS((void)train_identification(toy.train, {}, {}, toy.arch, bad), std::invalid_argument);
    bad = cfg;
    bad.lambda = -1.0;
    CHECK_THROWS_AS((void)train_identification(toy.train, {}, {}, toy.arch, bad), std::invalid_argument);

    std::vector<EncodedExample> mislabeled = toy.train;
    mislabeled[2].label = 7;
    CHECK_THROWS_AS((void)train_identification(mislabeled, {}, {}, toy.arch, cfg), std::invalid_argument);

    // Debiased training requires a profile for every example.
    std::vector<ShortcutProfile> profiles = flat_profiles(toy.train, 0.5);
    profiles.pop_back();
    CHECK_THROWS_WITH_AS((void)train_debiased(toy.train, profiles, {}, {}, toy.arch,
                                              quick_config(LossVariant::DbrSoft, 1)),
                         doctest::Contains(toy.train.back().id.c_str()), std::invalid_argument);
}

TEST_CASE("evaluate matches a by-hand scoring pass") {
    Toy toy = make_toy(9, 0);
    ClassifierModel model(toy.arch, 99);

    EvalResult ev = evaluate(model, toy.train);
    int hits = 0;
    std::vector<int> count(3, 0), class_hits(3, 0);
    double conf_sum = 0.0;
    std::vector<double> confs;
    for (const EncodedExample& ex : toy.train) {
        std::vector<int> live(ex.ids.begin(), ex.ids.begin() + ex.true_len);
        std::vector<double> p = model.predict_proba(live);
        int pred = 0;
        for (int c = 1; c < 3; ++c)
            if (p[c] > p[pred]) pred = c;
        ++count[ex.label];
        if (pred == ex.label) {
            ++hits;
            ++class_hits[ex.label];
        }
        confs.push_back(p[pred]);
        conf_sum += p[pred];
    }
    CHECK(ev.accuracy == doctest::Approx(static_cast<double>(hits) / 9).epsilon(1e-15));
    CHECK(ev.per_class_count == count);
    for (int c = 0; c < 3; ++c)
        CHECK(ev.per_class_accuracy[c] ==
              doctest::Approx(count[c] ? static_cast<double>(class_hits[c]) / count[c] : 0.0));
    const double mean = conf_sum / 9;
    double var = 0.0;
    for (double v : confs) var += (v - mean) * (v - mean);
    CHECK(ev.mean_confidence == doctest::Approx(mean).epsilon(1e-15));
    CHECK(ev.var_confidence == doctest::Approx(var / 9).epsilon(1e-12));

    CHECK_THROWS_AS((void)evaluate(model, {}), std::invalid_argument);
}

TEST_CASE("train logs round-trip through disk") {
    TempDir dir("trainlog");
    TrainLog log;
    log.steps = {{0, 0, 1.5, 0.25, 1.75}, {1, 0, 1.2, 0.0, 1.2}};
    log.epochs = {{0, 0.75, 0.5}, {1, 1.0, -1.0}};
    save_train_log(log, dir.file("log.jsonl"));
    TrainLog r = load_train_log(dir.file("log.jsonl"));
    REQUIRE(r.steps.size() == 2);
    REQUIRE(r.epochs.size() == 2);
    CHECK(r.steps[0].ce == 1.5);
    CHECK(r.steps[1].total == 1.2);
    CHECK(r.epochs[0].ood_accuracy == 0.5);
    CHECK(r.epochs[1].dev_accuracy == 1.0);

    std::ofstream bad(dir.file("bad.jsonl"), std::ios::binary);
    bad << "{\"type\":\"step\",\"step\":0,\"epoch\":0,\"ce\":1.0,\"jsd\":0.0,\"total\":1.0}\n{oops\n";
    bad.close();
    CHECK_THROWS_WITH_AS((void)load_train_log(dir.file("bad.jsonl")), doctest::Contains("line 2"),
                         std::runtime_error);
    CHECK_THROWS(load_train_log(dir.file("absent.jsonl")));
}
