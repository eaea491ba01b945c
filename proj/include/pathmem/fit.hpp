#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "pathmem/evaluation.hpp"
#include "pathmem/training.hpp"

namespace pathmem {

// Trains on the augmented dataset: per epoch, walk the training timestamps in
// ascending order, batch the queries sharing each timestamp, and for every
// batch minimize the negative-sampling loss plus the orthogonality penalty
// with one Adam step. After each epoch the valid split is scored and the best
// valid filtered-MRR checkpoint is kept.
inline FitResult fit(const TkgDataset& ds, const TrainConfig& cfg,
                     const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    if (!ds.augmented) throw ContractError("fit: dataset must be augmented first");
    if (ds.train.empty()) throw ContractError("fit: empty training split");
    if (ds.num_entities < 2) throw ConfigError("fit: need at least 2 entities");

    const ModelConfig mconfig = cfg.model_config();
    const RngStream root(cfg.seed);

    ModelParams params = init_params(ds.num_base_relations, cfg.dim, cfg.num_layers, cfg.seed);
    AdamState adam = make_adam_state(params);
    AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;

    const std::vector<SnapshotGraph> snapshots = build_snapshots(ds, Split::all);
    const FilterIndex filter = build_filter_index(ds);

    // Queries grouped by timestamp, ascending. The augmented split already
    // holds one quadruple per direction.
    std::map<std::uint32_t, std::vector<Quadruple>> by_time;
    for (const Quadruple& q : ds.train) by_time[q.time].push_back(q);

    EvalOptions eval_opts;
    eval_opts.batch_size = cfg.batch_size;
    eval_opts.history_length = cfg.history_length;
    eval_opts.workers = cfg.workers;
    eval_opts.config_digest = std::to_string(cfg.digest());

    FitResult result;
    result.best_valid_mrr = -1.0;
    std::uint64_t global_step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t loss_count = 0;

        for (auto& [t_q, group] : by_time) {
            // Shuffle within the timestamp group; the timestamp order itself
            // stays ascending.
            std::vector<Quadruple> queries = group;
            RngStream shuffle = root.derive("shuffle", epoch * 1315423911ull + t_q);
            for (std::size_t i = queries.size(); i > 1; --i)
                std::swap(queries[i - 1], queries[shuffle.next_below(i)]);

            const auto history = history_window(snapshots, t_q, cfg.history_length);

            for (std::size_t first = 0; first < queries.size(); first += cfg.batch_size) {
                const std::size_t count = std::min(cfg.batch_size, queries.size() - first);
                QueryBatch qb;
                qb.t_q = t_q;
                qb.history = history;
                for (std::size_t k = 0; k < count; ++k) {
                    qb.subjects.push_back(queries[first + k].subject);
                    qb.relations.push_back(queries[first + k].relation);
                }

                RngStream negs = root.derive("negatives", global_step);
                std::vector<std::uint32_t> pos_rows(count);
                std::vector<std::uint32_t> neg_rows(count * cfg.negatives);
                for (std::size_t k = 0; k < count; ++k) {
                    const std::uint32_t target = queries[first + k].object;
                    pos_rows[k] = static_cast<std::uint32_t>(k * ds.num_entities + target);
                    const auto sampled = sample_negatives(negs, target, cfg.negatives, ds.num_entities);
                    for (std::size_t j = 0; j < cfg.negatives; ++j)
                        neg_rows[k * cfg.negatives + j] =
                            static_cast<std::uint32_t>(k * ds.num_entities + sampled[j]);
                }

                Tape tape;
                BoundParams bound = bind_params(tape, params);
                PathMemory memory = forward(tape, qb, bound, mconfig, ds.num_entities);
                Var probs = score(tape, memory, bound);
                Var pos = tape.gather_rows(probs, std::move(pos_rows));
                Var neg = tape.gather_rows(probs, std::move(neg_rows));
                Var loss_tkg = negative_sampling_loss(tape, pos, neg, cfg.negatives, cfg.clamp_eps);
                Var loss_reg = orthogonality_penalty(tape, bound.relation_embedding, cfg.alpha);
                Var loss = tape.add(loss_tkg, loss_reg);

                const double loss_value = tape.value(loss)[0];
                if (!std::isfinite(loss_value))
                    throw Error("fit: non-finite loss at epoch " + std::to_string(epoch) + ", timestamp " +
                                std::to_string(t_q) + ", batch offset " + std::to_string(first) +
                                ", step " + std::to_string(global_step));
                loss_sum += loss_value;
                ++loss_count;

                tape.backward(loss);

                auto refs = parameter_refs(params);
                std::vector<DenseArray*> plist;
                std::vector<const DenseArray*> glist;
                plist.reserve(refs.size());
                glist.reserve(refs.size());
                for (std::size_t a = 0; a < refs.size(); ++a) {
                    plist.push_back(refs[a].second);
                    glist.push_back(&tape.grad(bound.ordered[a]));
                }
                adam_step(plist, glist, adam, adam_cfg);
                ++global_step;

                for (const auto& [name, arr] : refs)
                    if (!arr->all_finite())
                        throw Error("fit: parameter '" + name + "' became non-finite at step " +
                                    std::to_string(global_step));
            }
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
        if (!ds.valid.empty()) {
            EvalOutcome valid = evaluate(ds, snapshots, filter, params, mconfig, Split::valid, eval_opts);
            em.valid_mrr = valid.filtered.mrr;
            em.valid_hits1 = valid.filtered.hits1;
            em.valid_hits3 = valid.filtered.hits3;
            em.valid_hits10 = valid.filtered.hits10;
        }
        em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        result.log.push_back(em);

        if (em.valid_mrr > result.best_valid_mrr) {
            result.best_valid_mrr = em.valid_mrr;
            result.best_epoch = epoch;
            result.best.params = params;
            result.best.config_echo = cfg.canonical_text();
            result.best.config_digest = cfg.digest();
            result.best.has_moments = false;
        }
        if (on_epoch) on_epoch(em);
        if (cfg.stop_at_valid_mrr >= 0.0 && em.valid_mrr >= cfg.stop_at_valid_mrr) break;
    }
    return result;
}

}  // namespace pathmem
