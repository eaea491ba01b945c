#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pathmem/checkpoint.hpp"
#include "pathmem/dataset.hpp"
#include "pathmem/model.hpp"
#include "pathmem/rng.hpp"
#include "pathmem/tape.hpp"

namespace pathmem {

struct TrainConfig {
    std::size_t dim = 64;
    std::size_t num_layers = 2;
    std::size_t history_length = 10;
    std::size_t negatives = 64;
    double alpha = 1.0;
    double learning_rate = 5e-4;
    std::size_t max_epochs = 30;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    MsgVariant msg_variant = MsgVariant::multiply;
    MpsVariant mps_variant = MpsVariant::gated;
    double clamp_eps = 1e-7;
    // Stop as soon as the valid filtered MRR reaches this value; negative
    // disables the check and training runs to max_epochs.
    double stop_at_valid_mrr = -1.0;
    std::size_t workers = 1;

    void validate() const {
        if (negatives < 1) throw ConfigError("negatives must be >= 1");
        if (history_length < 1) throw ConfigError("history_length must be >= 1");
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (clamp_eps <= 0.0 || clamp_eps >= 0.5) throw ConfigError("clamp_eps must be in (0, 0.5)");
        model_config().validate();
    }

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.dim = dim;
        mc.num_layers = num_layers;
        mc.msg_variant = msg_variant;
        mc.mps_variant = mps_variant;
        return mc;
    }

    std::string canonical_text() const {
        std::ostringstream os;
        os << "alpha=" << alpha << ";batch_size=" << batch_size << ";clamp_eps=" << clamp_eps
           << ";dim=" << dim << ";history_length=" << history_length
           << ";learning_rate=" << learning_rate << ";max_epochs=" << max_epochs
           << ";mps_variant=" << to_string(mps_variant) << ";msg_variant=" << to_string(msg_variant)
           << ";negatives=" << negatives << ";num_layers=" << num_layers << ";seed=" << seed
           << ";stop_at_valid_mrr=" << stop_at_valid_mrr;
        return os.str();
    }

    std::uint64_t digest() const { return fnv1a64(canonical_text()); }
};

// One corrupted object id, uniform over entities excluding the true object.
inline std::uint32_t sample_negative(RngStream& stream, std::uint32_t true_object,
                                     std::size_t num_entities) {
    if (num_entities < 2) throw ConfigError("sample_negative: need at least 2 entities");
    std::uint64_t draw = stream.next_below(num_entities - 1);
    if (draw >= true_object) ++draw;
    return static_cast<std::uint32_t>(draw);
}

inline std::vector<std::uint32_t> sample_negatives(RngStream& stream, std::uint32_t true_object,
                                                   std::size_t count, std::size_t num_entities) {
    std::vector<std::uint32_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = sample_negative(stream, true_object, num_entities);
    return out;
}

// -log p_pos - (1/n) sum_j log(1 - p_neg_j), with probabilities clamped to
// [eps, 1-eps] first. pos_probs holds one probability per query, neg_probs
// holds num_negatives per query in query-major order; the result is the mean
// over queries.
inline Var negative_sampling_loss(Tape& tape, Var pos_probs, Var neg_probs, std::size_t num_negatives,
                                  double clamp_eps = 1e-7) {
    const std::size_t num_queries = tape.value(pos_probs).size();
    if (num_queries == 0) throw ContractError("negative_sampling_loss: no queries");
    if (tape.value(neg_probs).size() != num_queries * num_negatives)
        throw DimensionError("negative_sampling_loss: negative count mismatch");
    Var pos_term = tape.reduce_sum(tape.log(tape.clamp(pos_probs, clamp_eps, 1.0 - clamp_eps)));
    Var neg_term = tape.reduce_sum(
        tape.log(tape.axpb(tape.clamp(neg_probs, clamp_eps, 1.0 - clamp_eps), -1.0, 1.0)));
    const double inv_q = 1.0 / static_cast<double>(num_queries);
    Var loss_pos = tape.axpb(pos_term, -inv_q, 0.0);
    Var loss_neg = tape.axpb(neg_term, -inv_q / static_cast<double>(num_negatives), 0.0);
    return tape.add(loss_pos, loss_neg);
}

// Frobenius norm of (R^T R - alpha I): pushes the embedding columns toward an
// orthogonal frame.
inline Var orthogonality_penalty(Tape& tape, Var relation_embedding, double alpha = 1.0) {
    const DenseArray& R = tape.value(relation_embedding);
    const std::size_t d = R.cols();
    Var gram = tape.matmul(tape.transpose(relation_embedding), relation_embedding);
    DenseArray eye(Shape{d, d});
    for (std::size_t i = 0; i < d; ++i) eye.at2(i, i) = alpha;
    Var diff = tape.sub(gram, tape.constant(std::move(eye)));
    return tape.sqrt(tape.reduce_sum(tape.mul(diff, diff)));
}

struct AdamConfig {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState make_adam_state(ModelParams& params) {
    AdamState state;
    for_each_param(params, [&](const std::string&, DenseArray& a) {
        state.m.emplace_back(a.shape());
        state.v.emplace_back(a.shape());
    });
    return state;
}

// Bias-corrected Adam update over the parameter list; grads are parallel to
// parameter_refs order.
inline void adam_step(std::vector<DenseArray*>& params, const std::vector<const DenseArray*>& grads,
                      AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ContractError("adam_step: parameter/gradient/moment counts disagree");
    state.step += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t a = 0; a < params.size(); ++a) {
        DenseArray& p = *params[a];
        const DenseArray& g = *grads[a];
        DenseArray& m = state.m[a];
        DenseArray& v = state.v[a];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double valid_mrr = 0.0;
    double valid_hits1 = 0.0;
    double valid_hits3 = 0.0;
    double valid_hits10 = 0.0;
    double seconds = 0.0;
};

struct FitResult {
    Checkpoint best;
    std::size_t best_epoch = 0;
    double best_valid_mrr = 0.0;
    std::vector<EpochMetrics> log;
};

}  // namespace pathmem
