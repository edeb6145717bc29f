#include "dbr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dbr {

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "standard") return LossVariant::Standard;
    if (s == "dbr-hard") return LossVariant::DbrHard;
    if (s == "dbr-soft") return LossVariant::DbrSoft;
    if (s == "er") return LossVariant::Er;
    if (s == "poe") return LossVariant::Poe;
    throw ConfigError("unknown loss variant '" + s +
                      "' (expected standard, dbr-hard, dbr-soft, er, or poe)");
}

std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::Standard: return "standard";
        case LossVariant::DbrHard: return "dbr-hard";
        case LossVariant::DbrSoft: return "dbr-soft";
        case LossVariant::Er: return "er";
        case LossVariant::Poe: return "poe";
    }
    return "?";
}

namespace {

void check_simplex(std::span<const double> p, const char* who) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0))
            throw std::invalid_argument(std::string(who) + ": negative or non-finite probability " +
                                        std::to_string(v));
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument(std::string(who) + ": probabilities sum to " + std::to_string(sum) +
                                    ", not 1 within 1e-6");
}

double kld_unchecked(std::span<const double> p, std::span<const double> q) {
    double out = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        out += p[i] * std::log(p[i] / std::max(q[i], kLogFloor));
    }
    return out;
}

void check_gold(Tensor logits, int gold, const char* who) {
    const Shape& s = logits.shape();
    if (s.size() != 2 || s[0] != 1)
        throw std::invalid_argument(std::string(who) + ": expected logits of shape [1, K], got " +
                                    format_shape(s));
    if (gold < 0 || gold >= s[1])
        throw std::invalid_argument(std::string(who) + ": gold label " + std::to_string(gold) +
                                    " outside [0, " + std::to_string(s[1]) + ")");
}

}  // namespace

double kld(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw std::invalid_argument("kld: size mismatch " + std::to_string(p.size()) + " vs " +
                                    std::to_string(q.size()));
    check_simplex(p, "kld: first argument");
    check_simplex(q, "kld: second argument");
    return kld_unchecked(p, q);
}

double jsd(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw std::invalid_argument("jsd: size mismatch " + std::to_string(p.size()) + " vs " +
                                    std::to_string(q.size()));
    check_simplex(p, "jsd: first argument");
    check_simplex(q, "jsd: second argument");
    std::vector<double> m(p.size());
    for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    return 0.5 * (kld_unchecked(p, m) + kld_unchecked(q, m));
}

Tensor cross_entropy(Tape& tape, Tensor logits, int gold) {
    check_gold(logits, gold, "cross_entropy");
    Tensor lp = tape.log_floored(tape.softmax_rows(logits));
    return tape.scale(tape.pick(lp, gold), -1.0);
}

Tensor jsd_between(Tape& tape, Tensor p, Tensor q) {
    if (p.shape() != q.shape())
        throw std::invalid_argument("jsd_between: shape mismatch " + format_shape(p.shape()) + " vs " +
                                    format_shape(q.shape()));
    Tensor m = tape.scale(tape.add(p, q), 0.5);
    Tensor lm = tape.log_floored(m);
    Tensor klpm = tape.sum(tape.mul(p, tape.sub(tape.log_floored(p), lm)));
    Tensor klqm = tape.sum(tape.mul(q, tape.sub(tape.log_floored(q), lm)));
    return tape.scale(tape.add(klpm, klqm), 0.5);
}

Tensor combined_loss(Tape& tape, Tensor logits_orig, Tensor logits_unbias, int gold, double lambda) {
    check_gold(logits_orig, gold, "combined_loss");
    if (lambda < 0.0) throw std::invalid_argument("combined_loss: lambda must be >= 0");
    Tensor ce = cross_entropy(tape, logits_orig, gold);
    Tensor p_unbias = tape.softmax_rows(logits_unbias);
    Tensor p_orig = tape.softmax_rows(logits_orig);
    return tape.add(ce, tape.scale(jsd_between(tape, p_unbias, p_orig), lambda));
}

Tensor er_loss(Tape& tape, const std::vector<double>& bias_probs, Tensor debias_logits, int gold) {
    check_gold(debias_logits, gold, "er_loss");
    if (static_cast<int>(bias_probs.size()) != debias_logits.shape()[1])
        throw std::invalid_argument("er_loss: bias vector length " + std::to_string(bias_probs.size()) +
                                    " does not match K=" + std::to_string(debias_logits.shape()[1]));
    check_simplex(bias_probs, "er_loss: bias probabilities");
    Tensor ce = cross_entropy(tape, debias_logits, gold);
    return tape.scale(ce, 1.0 - bias_probs[gold]);
}

Tensor poe_loss(Tape& tape, const std::vector<double>& bias_logits, Tensor debias_logits, int gold,
                bool literal_prob_sum) {
    check_gold(debias_logits, gold, "poe_loss");
    const int k = debias_logits.shape()[1];
    if (static_cast<int>(bias_logits.size()) != k)
        throw std::invalid_argument("poe_loss: bias logit length " + std::to_string(bias_logits.size()) +
                                    " does not match K=" + std::to_string(k));
    // Bias expert is a fixed input here; only the debiased model trains.
    std::vector<double> bias_probs(k);
    double mx = bias_logits[0];
    for (double v : bias_logits) mx = std::max(mx, v);
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += (bias_probs[i] = std::exp(bias_logits[i] - mx));
    for (int i = 0; i < k; ++i) bias_probs[i] /= z;
    Tensor combined;
    if (literal_prob_sum) {
        combined = tape.add(tape.softmax_rows(debias_logits), tape.constant({1, k}, bias_probs));
    } else {
        std::vector<double> log_bias(k);
        for (int i = 0; i < k; ++i) log_bias[i] = std::log(std::max(bias_probs[i], kLogFloor));
        combined = tape.add(tape.log_floored(tape.softmax_rows(debias_logits)),
                            tape.constant({1, k}, log_bias));
    }
    return tape.scale(tape.pick(tape.log_floored(tape.softmax_rows(combined)), gold), -1.0);
}

}  // namespace dbr
