#include "dbr/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dbr {

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "attention") return EncoderKind::Attention;
    if (s == "mixer") return EncoderKind::Mixer;
    throw ConfigError("unknown encoder '" + s + "' (expected attention or mixer)");
}

std::string to_string(EncoderKind k) {
    return k == EncoderKind::Attention ? "attention" : "mixer";
}

namespace {
constexpr double kInitBound = 0.05;
constexpr double kMaskedScore = -1e30;
}  // namespace

ClassifierModel::ClassifierModel(ModelConfig config, uint64_t seed) : config_(config) {
    if (config_.vocab_size < kNumReserved)
        throw ConfigError("ClassifierModel: vocab_size must cover the reserved tokens");
    if (config_.embed_dim < 1 || config_.num_labels < 2)
        throw ConfigError("ClassifierModel: embed_dim must be >= 1 and num_labels >= 2");
    const int d = config_.embed_dim;
    Rng rng(seed);

    embedding_ = &params_.add("embedding", {config_.vocab_size, d});
    params_.find("embedding")->init_uniform(rng, kInitBound);
    if (config_.encoder == EncoderKind::Attention) {
        for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
            params_.add(name, {d, d}).init_uniform(rng, kInitBound);
        wq_ = params_.find("attn.wq");
        wk_ = params_.find("attn.wk");
        wv_ = params_.find("attn.wv");
        wo_ = params_.find("attn.wo");
    } else {
        w1_ = &params_.add("mixer.w1", {d, d});
        params_.find("mixer.w1")->init_uniform(rng, kInitBound);
        b1_ = &params_.add("mixer.b1", {d});
    }
    head_w_ = &params_.add("head.weight", {d, config_.num_labels});
    params_.find("head.weight")->init_uniform(rng, kInitBound);
    head_b_ = &params_.add("head.bias", {config_.num_labels});
}

ClassifierOutput ClassifierModel::forward(Tape& tape, const std::vector<int>& ids) const {
    std::vector<uint8_t> mask(ids.size(), 0);
    bool any = false;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= config_.vocab_size)
            throw std::invalid_argument("ClassifierModel::forward: token id " + std::to_string(ids[i]) +
                                        " outside vocabulary of size " + std::to_string(config_.vocab_size));
        mask[i] = ids[i] != kPadId;
        any = any || mask[i];
    }
    if (!any) throw std::invalid_argument("ClassifierModel::forward: sequence is all PAD");
    Tensor x = tape.embedding(*embedding_, ids);
    return forward_from_embeddings(tape, x, mask);
}

ClassifierOutput ClassifierModel::forward_from_embeddings(Tape& tape, Tensor x,
                                                          const std::vector<uint8_t>& pad_mask) const {
    const Shape& s = x.shape();
    if (s.size() != 2 || s[1] != config_.embed_dim)
        throw std::invalid_argument("ClassifierModel::forward_from_embeddings: expected [L, " +
                                    std::to_string(config_.embed_dim) + "], got " + format_shape(s));
    const int L = s[0];
    if (static_cast<int>(pad_mask.size()) != L)
        throw std::invalid_argument("ClassifierModel::forward_from_embeddings: pad mask length " +
                                    std::to_string(pad_mask.size()) + " does not match L=" + std::to_string(L));
    bool any = false;
    for (uint8_t m : pad_mask) any = any || (m != 0);
    if (!any) throw std::invalid_argument("ClassifierModel::forward_from_embeddings: sequence is all PAD");

    Tensor reps;
    if (config_.encoder == EncoderKind::Attention) {
        Tensor q = tape.matmul(x, tape.leaf(*wq_));
        Tensor k = tape.matmul(x, tape.leaf(*wk_));
        Tensor v = tape.matmul(x, tape.leaf(*wv_));
        Tensor scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(config_.embed_dim)));
        std::vector<double> key_mask(static_cast<size_t>(L) * L, 0.0);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                if (!pad_mask[j]) key_mask[static_cast<size_t>(i) * L + j] = kMaskedScore;
        Tensor attn = tape.softmax_rows(tape.add(scores, tape.constant({L, L}, std::move(key_mask))));
        reps = tape.add(x, tape.matmul(tape.matmul(attn, v), tape.leaf(*wo_)));
    } else {
        reps = tape.relu(tape.row_bias(tape.matmul(x, tape.leaf(*w1_)), tape.leaf(*b1_)));
    }
    Tensor pooled = tape.mean_rows(reps, pad_mask);
    Tensor logits = tape.row_bias(tape.matmul(pooled, tape.leaf(*head_w_)), tape.leaf(*head_b_));
    return {logits, pooled, reps};
}

std::vector<double> ClassifierModel::embed(const std::vector<int>& ids) const {
    const int d = config_.embed_dim;
    std::vector<double> out(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= config_.vocab_size)
            throw std::invalid_argument("ClassifierModel::embed: token id " + std::to_string(ids[i]) +
                                        " outside vocabulary of size " + std::to_string(config_.vocab_size));
        const double* row = embedding_->value.data() + static_cast<size_t>(ids[i]) * d;
        std::copy(row, row + d, out.begin() + static_cast<int64_t>(i) * d);
    }
    return out;
}

std::vector<double> ClassifierModel::predict_proba(const std::vector<int>& ids) const {
    Tape tape;
    ClassifierOutput out = forward(tape, ids);
    return tape.softmax_rows(out.logits).value();
}

// ---------------------------------------------------------------------------

BiasOnlyModel::BiasOnlyModel(int input_dim, int hidden_dim, int num_labels, uint64_t seed)
    : input_dim_(input_dim), hidden_dim_(hidden_dim), num_labels_(num_labels) {
    if (input_dim < 1 || hidden_dim < 1 || num_labels < 2)
        throw ConfigError("BiasOnlyModel: dimensions must be positive and num_labels >= 2");
    Rng rng(seed);
    w1_ = &params_.add("bias.w1", {input_dim, hidden_dim});
    params_.find("bias.w1")->init_uniform(rng, kInitBound);
    b1_ = &params_.add("bias.b1", {hidden_dim});
    w2_ = &params_.add("bias.w2", {hidden_dim, num_labels});
    params_.find("bias.w2")->init_uniform(rng, kInitBound);
    b2_ = &params_.add("bias.b2", {num_labels});
}

Tensor BiasOnlyModel::forward_logits(Tape& tape, const std::vector<double>& features) const {
    if (static_cast<int>(features.size()) != input_dim_)
        throw std::invalid_argument("BiasOnlyModel::forward: expected feature length " +
                                    std::to_string(input_dim_) + ", got " + std::to_string(features.size()));
    Tensor x = tape.constant({1, input_dim_}, features);
    Tensor h = tape.relu(tape.row_bias(tape.matmul(x, tape.leaf(*w1_)), tape.leaf(*b1_)));
    return tape.row_bias(tape.matmul(h, tape.leaf(*w2_)), tape.leaf(*b2_));
}

std::vector<double> BiasOnlyModel::predict_proba(const std::vector<double>& features) const {
    Tape tape;
    return tape.softmax_rows(forward_logits(tape, features)).value();
}

}  // namespace dbr
