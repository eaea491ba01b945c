#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pathmem/dataset.hpp"
#include "pathmem/rng.hpp"
#include "pathmem/tape.hpp"

namespace pathmem {

// Message generation operator (Table-5 ablation axis).
enum class MsgVariant { multiply, translate, rotate };
// Memory passing strategy between adjacent snapshots (Table-5 ablation axis).
enum class MpsVariant { gated, pmmp, mmp, ipmm };

inline const char* to_string(MsgVariant v) {
    switch (v) {
        case MsgVariant::multiply: return "multiply";
        case MsgVariant::translate: return "translate";
        case MsgVariant::rotate: return "rotate";
    }
    return "?";
}
inline const char* to_string(MpsVariant v) {
    switch (v) {
        case MpsVariant::gated: return "gated";
        case MpsVariant::pmmp: return "pmmp";
        case MpsVariant::mmp: return "mmp";
        case MpsVariant::ipmm: return "ipmm";
    }
    return "?";
}

inline MsgVariant parse_msg_variant(const std::string& s) {
    if (s == "multiply") return MsgVariant::multiply;
    if (s == "translate") return MsgVariant::translate;
    if (s == "rotate") return MsgVariant::rotate;
    throw ConfigError("unknown message variant '" + s + "'; valid: multiply, translate, rotate");
}
inline MpsVariant parse_mps_variant(const std::string& s) {
    if (s == "gated") return MpsVariant::gated;
    if (s == "pmmp") return MpsVariant::pmmp;
    if (s == "mmp") return MpsVariant::mmp;
    if (s == "ipmm") return MpsVariant::ipmm;
    throw ConfigError("unknown memory passing variant '" + s + "'; valid: gated, pmmp, mmp, ipmm");
}

// PNA concretization: 4 aggregators x 3 degree scalers.
inline constexpr std::size_t kNumAggregators = 4;
inline constexpr std::size_t kNumScalers = 3;

struct ModelConfig {
    std::size_t dim = 64;
    std::size_t num_layers = 2;
    MsgVariant msg_variant = MsgVariant::multiply;
    MpsVariant mps_variant = MpsVariant::gated;
    double layer_norm_eps = 1e-5;
    double rotate_modulus_eps = 1e-8;
    // Test instrumentation: plain-sum aggregation with boundary re-injection,
    // identity projection, no normalization, no shortcut. Makes the memory rows
    // literally equal a sum over temporal paths of per-edge weight products.
    bool sum_oracle_mode = false;

    void validate() const {
        if (dim < 2) throw ConfigError("dim must be >= 2");
        if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
        if (msg_variant == MsgVariant::rotate && dim % 2 != 0)
            throw ConfigError("rotate variant requires an even dim, got " + std::to_string(dim));
    }
};

// All learnable arrays. Sized by the relation vocabulary and dim only, never
// by the entity count; that is what makes checkpoints migrate across datasets
// sharing a relation schema.
struct ModelParams {
    std::size_t num_relations = 0;  // 2 * |base relations| after augmentation
    std::size_t dim = 0;
    std::size_t num_layers = 0;

    DenseArray relation_embedding;  // [num_relations x d]

    struct Layer {
        std::vector<DenseArray> proj_weight;  // per relation type: [d x d]
        std::vector<DenseArray> proj_bias;    // per relation type: [d]
        DenseArray pna_weight;                // [12d x d]
        DenseArray pna_bias;                  // [d]
        DenseArray norm_gain;                 // [d]
        DenseArray norm_bias;                 // [d]
    };
    std::vector<Layer> layers;

    DenseArray gate_weight;  // [d x d]
    DenseArray gate_bias;    // [d]
    DenseArray score_w1;     // [d x d]
    DenseArray score_b1;     // [d]
    DenseArray score_w2;     // [d x 1]
    DenseArray score_b2;     // [1]
};

// Deterministic ordered traversal; the same order backs gradients, the Adam
// state, and the checkpoint layout.
template <typename Params, typename Fn>
void for_each_param(Params& p, Fn&& fn) {
    fn("relation_embedding", p.relation_embedding);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        for (std::size_t r = 0; r < layer.proj_weight.size(); ++r)
            fn(prefix + "proj_weight." + std::to_string(r), layer.proj_weight[r]);
        for (std::size_t r = 0; r < layer.proj_bias.size(); ++r)
            fn(prefix + "proj_bias." + std::to_string(r), layer.proj_bias[r]);
        fn(prefix + "pna_weight", layer.pna_weight);
        fn(prefix + "pna_bias", layer.pna_bias);
        fn(prefix + "norm_gain", layer.norm_gain);
        fn(prefix + "norm_bias", layer.norm_bias);
    }
    fn("gate_weight", p.gate_weight);
    fn("gate_bias", p.gate_bias);
    fn("score_w1", p.score_w1);
    fn("score_b1", p.score_b1);
    fn("score_w2", p.score_w2);
    fn("score_b2", p.score_b2);
}

inline std::vector<std::pair<std::string, DenseArray*>> parameter_refs(ModelParams& p) {
    std::vector<std::pair<std::string, DenseArray*>> refs;
    for_each_param(p, [&](const std::string& name, DenseArray& a) { refs.emplace_back(name, &a); });
    return refs;
}

// Seeded initialization: weights ~ uniform(-1/sqrt(d), 1/sqrt(d)), biases
// zero, layer-norm gain one. Each array draws from its own derived stream, so
// the layout of one array never shifts another.
inline ModelParams init_params(std::size_t num_base_relations, std::size_t dim, std::size_t num_layers,
                               std::uint64_t seed) {
    if (dim < 2) throw ConfigError("init_params: dim must be >= 2");
    if (num_layers < 1) throw ConfigError("init_params: num_layers must be >= 1");
    if (num_base_relations < 1) throw ConfigError("init_params: need at least one base relation");

    ModelParams p;
    p.num_relations = 2 * num_base_relations;
    p.dim = dim;
    p.num_layers = num_layers;

    p.relation_embedding = DenseArray(Shape{p.num_relations, dim});
    p.layers.resize(num_layers);
    for (auto& layer : p.layers) {
        layer.proj_weight.assign(p.num_relations, DenseArray(Shape{dim, dim}));
        layer.proj_bias.assign(p.num_relations, DenseArray(Shape{dim}));
        layer.pna_weight = DenseArray(Shape{kNumAggregators * kNumScalers * dim, dim});
        layer.pna_bias = DenseArray(Shape{dim});
        layer.norm_gain = DenseArray::full(Shape{dim}, 1.0);
        layer.norm_bias = DenseArray(Shape{dim});
    }
    p.gate_weight = DenseArray(Shape{dim, dim});
    p.gate_bias = DenseArray(Shape{dim});
    p.score_w1 = DenseArray(Shape{dim, dim});
    p.score_b1 = DenseArray(Shape{dim});
    p.score_w2 = DenseArray(Shape{dim, 1});
    p.score_b2 = DenseArray(Shape{1});

    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    RngStream root = RngStream(seed).derive("init");
    for_each_param(p, [&](const std::string& name, DenseArray& a) {
        const bool is_weight = name.find("bias") == std::string::npos &&
                               name.find("gain") == std::string::npos;
        if (!is_weight) return;  // biases stay zero, gains stay one
        RngStream s = root.derive(name);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = s.uniform(-bound, bound);
    });
    return p;
}

// Tape leaves for one forward pass, aligned with parameter_refs order.
struct BoundParams {
    std::size_t num_relations = 0, dim = 0, num_layers = 0;
    Var relation_embedding;
    struct Layer {
        std::vector<Var> proj_weight, proj_bias;
        Var pna_weight, pna_bias, norm_gain, norm_bias;
    };
    std::vector<Layer> layers;
    Var gate_weight, gate_bias, score_w1, score_b1, score_w2, score_b2;
    std::vector<Var> ordered;  // parameter_refs order
};

inline BoundParams bind_params(Tape& tape, const ModelParams& p) {
    BoundParams b;
    b.num_relations = p.num_relations;
    b.dim = p.dim;
    b.num_layers = p.num_layers;
    b.relation_embedding = tape.leaf(p.relation_embedding);
    b.ordered.push_back(b.relation_embedding);
    b.layers.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        for (const DenseArray& w : p.layers[l].proj_weight) {
            b.layers[l].proj_weight.push_back(tape.leaf(w));
            b.ordered.push_back(b.layers[l].proj_weight.back());
        }
        for (const DenseArray& w : p.layers[l].proj_bias) {
            b.layers[l].proj_bias.push_back(tape.leaf(w));
            b.ordered.push_back(b.layers[l].proj_bias.back());
        }
        b.layers[l].pna_weight = tape.leaf(p.layers[l].pna_weight);
        b.layers[l].pna_bias = tape.leaf(p.layers[l].pna_bias);
        b.layers[l].norm_gain = tape.leaf(p.layers[l].norm_gain);
        b.layers[l].norm_bias = tape.leaf(p.layers[l].norm_bias);
        b.ordered.insert(b.ordered.end(), {b.layers[l].pna_weight, b.layers[l].pna_bias,
                                           b.layers[l].norm_gain, b.layers[l].norm_bias});
    }
    b.gate_weight = tape.leaf(p.gate_weight);
    b.gate_bias = tape.leaf(p.gate_bias);
    b.score_w1 = tape.leaf(p.score_w1);
    b.score_b1 = tape.leaf(p.score_b1);
    b.score_w2 = tape.leaf(p.score_w2);
    b.score_b2 = tape.leaf(p.score_b2);
    b.ordered.insert(b.ordered.end(),
                     {b.gate_weight, b.gate_bias, b.score_w1, b.score_b1, b.score_w2, b.score_b2});
    return b;
}

// Queries sharing one timestamp and one history window.
struct QueryBatch {
    std::vector<std::uint32_t> subjects;
    std::vector<std::uint32_t> relations;
    std::uint32_t t_q = 0;
    std::vector<const SnapshotGraph*> history;  // ascending time, all < t_q

    std::size_t size() const { return subjects.size(); }
};

// Per-query candidate memory, flattened to [batch * num_entities x d]; row
// q * num_entities + o holds the path vector from query q's subject to o.
struct PathMemory {
    Var values;
    std::size_t batch = 0;
    std::size_t num_entities = 0;
    std::size_t dim = 0;

    std::size_t row(std::size_t query, std::size_t entity) const { return query * num_entities + entity; }
};

// H^{0,0}: the query subject's row carries the query relation embedding, all
// other rows are zero.
inline Var indicator_init(Tape& tape, const QueryBatch& batch, const BoundParams& params,
                          std::size_t num_entities) {
    const std::size_t B = batch.size();
    for (std::uint32_t r : batch.relations)
        if (r >= params.num_relations) throw IndexError("indicator_init: relation id out of vocabulary");
    for (std::uint32_t s : batch.subjects)
        if (s >= num_entities) throw IndexError("indicator_init: subject id out of range");
    Var rel_rows = tape.gather_rows(params.relation_embedding,
                                    std::vector<std::uint32_t>(batch.relations.begin(), batch.relations.end()));
    std::vector<std::uint32_t> dest(B);
    for (std::size_t q = 0; q < B; ++q)
        dest[q] = static_cast<std::uint32_t>(q * num_entities + batch.subjects[q]);
    return tape.scatter_rows(rel_rows, std::move(dest), B * num_entities);
}

// Query-relation-aware edge-type representations for one layer:
// w_r(p) = W_p r + b_p for every present type p and every query relation r.
// Rows are laid out slot-major: row(slot(p), q) = slot(p) * batch + q.
struct RelationWeights {
    Var rows;                            // [num_types * batch x d]
    std::vector<std::int32_t> slot_of;   // relation id -> slot, -1 if absent
    std::size_t batch = 0;

    std::size_t row(std::uint32_t rel, std::size_t q) const {
        return static_cast<std::size_t>(slot_of[rel]) * batch + q;
    }
};

inline RelationWeights relation_projection(Tape& tape, const BoundParams& params, std::size_t layer,
                                           Var query_rel_embeddings /* [B x d] */,
                                           const std::vector<std::uint32_t>& types_present,
                                           std::size_t batch) {
    if (layer >= params.num_layers) throw IndexError("relation_projection: layer out of range");
    RelationWeights rw;
    rw.batch = batch;
    rw.slot_of.assign(params.num_relations, -1);
    std::vector<Var> parts;
    parts.reserve(types_present.size());
    for (std::size_t i = 0; i < types_present.size(); ++i) {
        const std::uint32_t p = types_present[i];
        if (p >= params.num_relations) throw IndexError("relation_projection: relation id out of vocabulary");
        rw.slot_of[p] = static_cast<std::int32_t>(i);
        // W_p r as a row transform: r * W_p^T, then + b_p.
        Var wt = tape.transpose(params.layers[layer].proj_weight[p]);
        parts.push_back(tape.add(tape.matmul(query_rel_embeddings, wt), params.layers[layer].proj_bias[p]));
    }
    if (parts.empty()) {
        rw.rows = tape.constant(DenseArray(Shape{0, params.dim}));
    } else {
        rw.rows = tape.concat_rows(parts);
    }
    return rw;
}

// Edge message: scale (multiply), translate (add) or rotate h by the
// relation representation.
inline Var message(Tape& tape, Var h, Var w, MsgVariant variant, double rotate_eps = 1e-8) {
    switch (variant) {
        case MsgVariant::multiply: return tape.mul(h, w);
        case MsgVariant::translate: return tape.add(h, w);
        case MsgVariant::rotate: return tape.complex_rotate(h, w, rotate_eps);
    }
    throw ConfigError("message: unknown variant");
}

namespace detail {

// Batched gather/scatter indices for one snapshot, plus the PNA degree
// scalers; identical for every layer, so computed once per (batch, snapshot).
struct SnapshotPlan {
    std::vector<std::uint32_t> src_idx;   // per (q, edge): q*E + src
    std::vector<std::uint32_t> rel_idx;   // filled per layer from slot map
    std::vector<std::uint32_t> edge_rel;  // per (q, edge): relation type
    std::vector<std::uint32_t> seg_idx;   // per (q, edge): q*E + dst
    std::vector<double> amplification;    // per row of [B*E]
    std::vector<double> attenuation;
};

inline SnapshotPlan plan_snapshot(const SnapshotGraph& snap, std::size_t batch, std::size_t num_entities) {
    SnapshotPlan plan;
    const std::size_t ne = snap.edges.size();
    plan.src_idx.resize(batch * ne);
    plan.edge_rel.resize(batch * ne);
    plan.seg_idx.resize(batch * ne);
    for (std::size_t q = 0; q < batch; ++q) {
        const std::size_t base = q * ne;
        const std::size_t row0 = q * num_entities;
        for (std::size_t e = 0; e < ne; ++e) {
            const auto& edge = snap.edges[e];
            plan.src_idx[base + e] = static_cast<std::uint32_t>(row0 + edge.src);
            plan.edge_rel[base + e] = edge.rel;
            plan.seg_idx[base + e] = static_cast<std::uint32_t>(row0 + edge.dst);
        }
    }

    // Degree scaler: delta_o = log(deg_o + 1) / mean_log_degree, where the
    // mean runs over the snapshot's active entities (in-degree > 0).
    double mean_log = 0.0;
    std::size_t active = 0;
    for (std::uint32_t deg : snap.in_degree) {
        if (deg > 0) {
            mean_log += std::log(static_cast<double>(deg) + 1.0);
            ++active;
        }
    }
    mean_log = active > 0 ? mean_log / static_cast<double>(active) : 1.0;
    mean_log = std::max(mean_log, 1e-12);

    plan.amplification.resize(batch * num_entities);
    plan.attenuation.resize(batch * num_entities);
    for (std::size_t o = 0; o < num_entities; ++o) {
        const double ld = std::log(static_cast<double>(snap.in_degree[o]) + 1.0);
        const double amp = ld / mean_log;
        // A zero-degree entity has a zero aggregate; any finite scaler works,
        // zero keeps the products well defined.
        const double att = ld > 1e-12 ? mean_log / ld : 0.0;
        for (std::size_t q = 0; q < batch; ++q) {
            plan.amplification[q * num_entities + o] = amp;
            plan.attenuation[q * num_entities + o] = att;
        }
    }
    return plan;
}

}  // namespace detail

// One path-aggregation layer over one snapshot: relation-projected messages
// along incoming edges, PNA aggregation (mean/max/min/std x identity/
// amplification/attenuation), learned projection back to d, then
// relu(layer_norm(.)) with a shortcut to the layer input. In oracle mode the
// aggregate is a plain sum, the projection is skipped and the boundary H^{t,0}
// is re-injected instead of the shortcut.
inline Var pau_layer(Tape& tape, Var h_prev, const detail::SnapshotPlan& plan, const RelationWeights& rw,
                     const BoundParams& params, std::size_t layer, const ModelConfig& config,
                     std::size_t batch, std::size_t num_entities, Var boundary) {
    const std::size_t rows = batch * num_entities;

    std::vector<std::uint32_t> rel_rows(plan.edge_rel.size());
    const std::size_t ne = batch == 0 ? 0 : plan.edge_rel.size() / batch;
    for (std::size_t q = 0; q < batch; ++q)
        for (std::size_t e = 0; e < ne; ++e) {
            const std::uint32_t p = plan.edge_rel[q * ne + e];
            rel_rows[q * ne + e] = static_cast<std::uint32_t>(rw.row(p, q));
        }

    Var h_src = tape.gather_rows(h_prev, plan.src_idx);
    Var w_edge = tape.gather_rows(rw.rows, std::move(rel_rows));
    Var msg = message(tape, h_src, w_edge, config.msg_variant, config.rotate_modulus_eps);

    if (config.sum_oracle_mode) {
        Var agg = tape.segment_reduce(SegmentOp::sum, msg, plan.seg_idx, rows);
        return tape.add(agg, boundary);
    }

    const SegmentOp aggs[kNumAggregators] = {SegmentOp::mean, SegmentOp::max, SegmentOp::min,
                                             SegmentOp::std_dev};
    std::vector<Var> blocks;
    blocks.reserve(kNumAggregators * kNumScalers);
    for (SegmentOp op : aggs) {
        Var reduced = tape.segment_reduce(op, msg, plan.seg_idx, rows);
        blocks.push_back(reduced);
        blocks.push_back(tape.row_scale(reduced, plan.amplification));
        blocks.push_back(tape.row_scale(reduced, plan.attenuation));
    }
    Var cat = tape.concat_cols(blocks);
    Var lin = tape.add(tape.matmul(cat, params.layers[layer].pna_weight), params.layers[layer].pna_bias);
    Var normed = tape.layer_norm(lin, params.layers[layer].norm_gain, params.layers[layer].norm_bias,
                                 config.layer_norm_eps);
    return tape.add(tape.relu(normed), h_prev);
}

// Sets H^{t,0} from the indicator H^{0,0} and the previous memory.
inline Var memory_passing(Tape& tape, Var h00, std::optional<Var> m_prev, const BoundParams& params,
                          MpsVariant variant, std::size_t batch, std::size_t num_entities) {
    if (!m_prev.has_value()) return h00;
    switch (variant) {
        case MpsVariant::gated: {
            Var u = tape.sigmoid(tape.add(tape.matmul(*m_prev, params.gate_weight), params.gate_bias));
            Var keep = tape.mul(u, h00);
            Var carry = tape.mul(tape.axpb(u, -1.0, 1.0), *m_prev);
            return tape.add(keep, carry);
        }
        case MpsVariant::ipmm:
            return tape.axpb(tape.add(h00, *m_prev), 0.5, 0.0);
        case MpsVariant::pmmp: {
            // Mean-pool the previous memory per query and broadcast it back.
            std::vector<std::uint32_t> query_of(batch * num_entities);
            for (std::size_t q = 0; q < batch; ++q)
                for (std::size_t o = 0; o < num_entities; ++o)
                    query_of[q * num_entities + o] = static_cast<std::uint32_t>(q);
            Var pooled = tape.segment_reduce(SegmentOp::mean, *m_prev, query_of, batch);
            return tape.gather_rows(pooled, std::move(query_of));
        }
        case MpsVariant::mmp:
            return h00;  // passing dropped; forward averages the per-step memories
    }
    throw ConfigError("memory_passing: unknown variant");
}

// Full forward pass: iterate history snapshots in ascending time, seed each
// with the memory passing strategy, refine with num_layers aggregation layers,
// and return the final memory (for mmp: the mean of every per-step memory).
// An empty history yields the indicator itself.
inline PathMemory forward(Tape& tape, const QueryBatch& batch, const BoundParams& params,
                          const ModelConfig& config, std::size_t num_entities) {
    config.validate();
    if (batch.size() == 0) throw ContractError("forward: empty query batch");
    for (const SnapshotGraph* snap : batch.history)
        if (snap->time >= batch.t_q) throw ContractError("forward: history snapshot at or after t_q");

    const std::size_t B = batch.size();
    Var h00 = indicator_init(tape, batch, params, num_entities);
    Var query_rel = tape.gather_rows(params.relation_embedding,
                                     std::vector<std::uint32_t>(batch.relations.begin(), batch.relations.end()));

    // Relation types present anywhere in the window, projected once per layer.
    std::vector<bool> present(params.num_relations, false);
    for (const SnapshotGraph* snap : batch.history)
        for (const auto& e : snap->edges) {
            if (e.rel >= params.num_relations) throw IndexError("forward: edge relation out of vocabulary");
            present[e.rel] = true;
        }
    std::vector<std::uint32_t> types;
    for (std::uint32_t p = 0; p < params.num_relations; ++p)
        if (present[p]) types.push_back(p);

    std::vector<RelationWeights> weights_per_layer;
    weights_per_layer.reserve(params.num_layers);
    for (std::size_t l = 0; l < params.num_layers; ++l)
        weights_per_layer.push_back(relation_projection(tape, params, l, query_rel, types, B));

    std::optional<Var> memory;
    std::vector<Var> step_memories;  // mmp only
    for (const SnapshotGraph* snap : batch.history) {
        auto plan = detail::plan_snapshot(*snap, B, num_entities);
        Var h = memory_passing(tape, h00, memory, params, config.mps_variant, B, num_entities);
        Var boundary = h;
        for (std::size_t l = 0; l < params.num_layers; ++l)
            h = pau_layer(tape, h, plan, weights_per_layer[l], params, l, config, B, num_entities, boundary);
        memory = h;
        if (config.mps_variant == MpsVariant::mmp) step_memories.push_back(h);
    }

    Var final_memory;
    if (!memory.has_value()) {
        final_memory = h00;
    } else if (config.mps_variant == MpsVariant::mmp) {
        Var acc = step_memories[0];
        for (std::size_t i = 1; i < step_memories.size(); ++i) acc = tape.add(acc, step_memories[i]);
        final_memory = tape.axpb(acc, 1.0 / static_cast<double>(step_memories.size()), 0.0);
    } else {
        final_memory = *memory;
    }

    PathMemory out;
    out.values = final_memory;
    out.batch = B;
    out.num_entities = num_entities;
    out.dim = params.dim;
    return out;
}

// p(o | s, r) = sigmoid(F(m)), F a d -> d -> 1 feed-forward net with relu.
// Returns [batch * num_entities x 1] probabilities.
inline Var score(Tape& tape, const PathMemory& memory, const BoundParams& params) {
    Var hidden = tape.relu(tape.add(tape.matmul(memory.values, params.score_w1), params.score_b1));
    Var logits = tape.add(tape.matmul(hidden, params.score_w2), params.score_b2);
    return tape.sigmoid(logits);
}

// Convenience: forward + score without keeping the tape, for inference.
inline std::vector<double> score_queries(const QueryBatch& batch, const ModelParams& params,
                                         const ModelConfig& config, std::size_t num_entities) {
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    PathMemory mem = forward(tape, batch, bound, config, num_entities);
    Var probs = score(tape, mem, bound);
    return tape.value(probs).values();
}

}  // namespace pathmem
