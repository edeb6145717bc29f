#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbr/dataset.hpp"
#include "dbr/tensor.hpp"

namespace dbr {

enum class EncoderKind { Attention, Mixer };

EncoderKind encoder_kind_from_string(const std::string& s);
std::string to_string(EncoderKind k);

struct ModelConfig {
    int vocab_size = 0;
    int embed_dim = 64;
    int num_labels = 3;
    EncoderKind encoder = EncoderKind::Attention;
};

// Everything one forward pass produces, as live tensors on the caller's tape.
struct ClassifierOutput {
    Tensor logits;      // [1, K]
    Tensor pooled;      // [1, d], masked mean of token_reps
    Tensor token_reps;  // [L, d]
};

// Sentence classifier used for both shortcut identification and debiased
// training: embedding -> encoder -> masked mean-pool -> linear head. The
// encoder is a single self-attention block with a residual connection by
// default, or a per-token feed-forward mixer for the fastest tests.
class ClassifierModel {
  public:
    ClassifierModel(ModelConfig config, uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Set by the training loops and restored from checkpoints; consumers that
    // need a trained encoder (bias features) check it.
    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    // Builds the forward graph for one example. Rejects all-PAD sequences.
    ClassifierOutput forward(Tape& tape, const std::vector<int>& ids) const;

    // Same graph from a caller-provided [L, d] tensor in place of the
    // embedding lookup; the attribution path differentiates w.r.t. it.
    ClassifierOutput forward_from_embeddings(Tape& tape, Tensor x,
                                             const std::vector<uint8_t>& pad_mask) const;

    // Embedding rows for the ids, concatenated into an L*d buffer (no tape).
    std::vector<double> embed(const std::vector<int>& ids) const;

    std::vector<double> predict_proba(const std::vector<int>& ids) const;

  private:
    ModelConfig config_;
    ParamStore params_;
    bool trained_ = false;
    const Param* embedding_ = nullptr;
    const Param* wq_ = nullptr;
    const Param* wk_ = nullptr;
    const Param* wv_ = nullptr;
    const Param* wo_ = nullptr;
    const Param* w1_ = nullptr;
    const Param* b1_ = nullptr;
    const Param* head_w_ = nullptr;
    const Param* head_b_ = nullptr;
};

// MLP over the concatenated encoded representations of the top-N attributed
// tokens: (N*d) -> hidden -> K with one ReLU.
class BiasOnlyModel {
  public:
    BiasOnlyModel(int input_dim, int hidden_dim, int num_labels, uint64_t seed);

    int input_dim() const { return input_dim_; }
    int hidden_dim() const { return hidden_dim_; }
    int num_labels() const { return num_labels_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Rejects features whose length differs from input_dim.
    Tensor forward_logits(Tape& tape, const std::vector<double>& features) const;  // [1, K]
    std::vector<double> predict_proba(const std::vector<double>& features) const;

  private:
    int input_dim_;
    int hidden_dim_;
    int num_labels_;
    ParamStore params_;
    const Param* w1_ = nullptr;
    const Param* b1_ = nullptr;
    const Param* w2_ = nullptr;
    const Param* b2_ = nullptr;
};

}  // namespace dbr
