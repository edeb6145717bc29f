#pragma once

#include <span>
#include <string>
#include <vector>

#include "dbr/tensor.hpp"

namespace dbr {

enum class LossVariant { Standard, DbrHard, DbrSoft, Er, Poe };

LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(LossVariant v);

// Scalar divergences over probability vectors. Inputs must be nonnegative and
// sum to 1 within 1e-6. kld uses natural log with 0*ln(0/.) = 0 and the second
// argument floored at kLogFloor; jsd = (kld(p,m) + kld(q,m)) / 2 with
// m = (p+q)/2, symmetric by construction and bounded by ln 2.
double kld(std::span<const double> p, std::span<const double> q);
double jsd(std::span<const double> p, std::span<const double> q);

// Tape-built losses. All return a scalar tensor on the caller's tape.

// -ln softmax(logits)[gold]
Tensor cross_entropy(Tape& tape, Tensor logits, int gold);

// jsd between two probability-row tensors of shape [1, K].
Tensor jsd_between(Tape& tape, Tensor p, Tensor q);

// cross_entropy(logits_orig, gold) + lambda * jsd(softmax(logits_unbias),
// softmax(logits_orig)). Gradients flow through both forwards.
Tensor combined_loss(Tape& tape, Tensor logits_orig, Tensor logits_unbias, int gold, double lambda);

// -(1 - bias_probs[gold]) * ln softmax(debias_logits)[gold]: cross-entropy
// discounted by the bias expert's confidence on the gold label.
Tensor er_loss(Tape& tape, const std::vector<double>& bias_probs, Tensor debias_logits, int gold);

// Product of experts: -ln softmax(log p_bias + log p_debias)[gold]. With
// literal_prob_sum the experts' probabilities are added instead of their
// logs before the final softmax.
Tensor poe_loss(Tape& tape, const std::vector<double>& bias_logits, Tensor debias_logits, int gold,
                bool literal_prob_sum = false);

}  // namespace dbr
