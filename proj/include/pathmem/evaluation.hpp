#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pathmem/dataset.hpp"
#include "pathmem/model.hpp"

namespace pathmem {

struct MetricReport {
    std::string split;
    std::string mode;  // "raw" or "time-filtered"
    double mrr = 0.0;
    double hits1 = 0.0;
    double hits3 = 0.0;
    double hits10 = 0.0;
    std::size_t num_queries = 0;
    std::string config_digest;
};

struct QueryRecord {
    std::uint32_t subject = 0;
    std::uint32_t relation = 0;
    std::uint32_t target = 0;
    std::uint32_t time = 0;
    bool inverse = false;
    double rank_raw = 0.0;
    double rank_filtered = 0.0;
};

struct EvalOutcome {
    MetricReport raw;
    MetricReport filtered;
    std::vector<QueryRecord> per_query;
};

struct EvalOptions {
    std::size_t batch_size = 32;
    std::size_t history_length = 10;
    std::size_t workers = 1;
    bool keep_per_query = false;
    std::string config_digest;
};

// Mean rank over ties: 1 + |{score > s_t}| + |{score == s_t, i != target}| / 2,
// with candidates in `exclusions` removed first. `exclusions` must be sorted
// and must not contain the target.
inline double rank_of_target(std::span<const double> scores, std::uint32_t target,
                             std::span<const std::uint32_t> exclusions) {
    if (target >= scores.size()) throw IndexError("rank_of_target: target out of range");
    if (std::binary_search(exclusions.begin(), exclusions.end(), target))
        throw ContractError("rank_of_target: target present in the exclusion set");
    const double st = scores[target];
    std::size_t greater = 0, equal = 0;
    std::size_t ex = 0;
    for (std::uint32_t i = 0; i < scores.size(); ++i) {
        while (ex < exclusions.size() && exclusions[ex] < i) ++ex;
        if (ex < exclusions.size() && exclusions[ex] == i) continue;
        if (i == target) continue;
        if (scores[i] > st)
            ++greater;
        else if (scores[i] == st)
            ++equal;
    }
    return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
}

namespace detail {

struct MetricAccum {
    double rr = 0.0, h1 = 0.0, h3 = 0.0, h10 = 0.0;
    std::size_t n = 0;

    void add(double rank) {
        rr += 1.0 / rank;
        h1 += rank <= 1.0 ? 1.0 : 0.0;
        h3 += rank <= 3.0 ? 1.0 : 0.0;
        h10 += rank <= 10.0 ? 1.0 : 0.0;
        ++n;
    }

    MetricReport report(const std::string& split, const std::string& mode,
                        const std::string& digest) const {
        MetricReport r;
        r.split = split;
        r.mode = mode;
        r.num_queries = n;
        if (n > 0) {
            r.mrr = rr / n;
            r.hits1 = h1 / n;
            r.hits3 = h3 / n;
            r.hits10 = h10 / n;
        }
        r.config_digest = digest;
        return r;
    }
};

// Batches of quadruples sharing a timestamp, capped at batch_size.
struct EvalBatch {
    std::uint32_t t_q = 0;
    std::size_t first = 0;  // index into the (time-sorted) query list
    std::size_t count = 0;
};

inline std::vector<EvalBatch> chunk_by_time(const std::vector<Quadruple>& queries, std::size_t batch_size) {
    std::vector<EvalBatch> batches;
    std::size_t i = 0;
    while (i < queries.size()) {
        std::size_t j = i;
        while (j < queries.size() && queries[j].time == queries[i].time &&
               j - i < batch_size)
            ++j;
        batches.push_back(EvalBatch{queries[i].time, i, j - i});
        i = j;
    }
    return batches;
}

template <typename Fn>
void run_batches(std::size_t count, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(count);  // drain remaining work
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min(workers, count);
    pool.reserve(n);
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

// Scores every query of the split (the augmented split already carries both
// directions as separate quadruples) and reports raw plus time-aware filtered
// rankings. `scores_for_batch` maps a QueryBatch to per-query score vectors of
// length num_entities, laid out query-major.
inline EvalOutcome evaluate_batched(
    const TkgDataset& ds, const std::vector<SnapshotGraph>& snapshots, const FilterIndex& filter,
    Split split, const EvalOptions& opts,
    const std::function<std::vector<double>(const QueryBatch&)>& scores_for_batch) {
    if (!ds.augmented) throw ContractError("evaluate: dataset must be augmented");
    if (ds.split(split).empty())
        throw ContractError(std::string("evaluate: split '") + split_name(split) + "' is empty");
    std::vector<Quadruple> queries = ds.split(split);
    std::stable_sort(queries.begin(), queries.end(),
                     [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });

    const std::size_t E = ds.num_entities;
    auto batches = detail::chunk_by_time(queries, opts.batch_size);
    std::vector<QueryRecord> records(queries.size());

    detail::run_batches(batches.size(), opts.workers, [&](std::size_t bi) {
        const auto& b = batches[bi];
        QueryBatch qb;
        qb.t_q = b.t_q;
        qb.history = history_window(snapshots, b.t_q, opts.history_length);
        for (std::size_t k = 0; k < b.count; ++k) {
            qb.subjects.push_back(queries[b.first + k].subject);
            qb.relations.push_back(queries[b.first + k].relation);
        }
        const std::vector<double> scores = scores_for_batch(qb);
        if (scores.size() != b.count * E) throw ContractError("evaluate: scorer returned wrong size");
        for (std::size_t k = 0; k < b.count; ++k) {
            const Quadruple& q = queries[b.first + k];
            std::span<const double> row(scores.data() + k * E, E);
            const auto& truth = filter.objects(q.subject, q.relation, q.time);
            std::vector<std::uint32_t> exclusions;
            exclusions.reserve(truth.size());
            for (std::uint32_t o : truth)
                if (o != q.object) exclusions.push_back(o);
            QueryRecord rec;
            rec.subject = q.subject;
            rec.relation = q.relation;
            rec.target = q.object;
            rec.time = q.time;
            rec.inverse = q.relation >= ds.num_base_relations;
            rec.rank_raw = rank_of_target(row, q.object, {});
            rec.rank_filtered = rank_of_target(row, q.object, exclusions);
            records[b.first + k] = rec;
        }
    });

    detail::MetricAccum raw, filt;
    for (const QueryRecord& r : records) {
        raw.add(r.rank_raw);
        filt.add(r.rank_filtered);
    }
    EvalOutcome out;
    out.raw = raw.report(split_name(split), "raw", opts.config_digest);
    out.filtered = filt.report(split_name(split), "time-filtered", opts.config_digest);
    if (opts.keep_per_query) out.per_query = std::move(records);
    return out;
}

// Model-backed evaluation through the standard forward + score path.
inline EvalOutcome evaluate(const TkgDataset& ds, const std::vector<SnapshotGraph>& snapshots,
                            const FilterIndex& filter, const ModelParams& params,
                            const ModelConfig& config, Split split, const EvalOptions& opts) {
    return evaluate_batched(ds, snapshots, filter, split, opts, [&](const QueryBatch& qb) {
        return score_queries(qb, params, config, ds.num_entities);
    });
}

// Evaluation against an arbitrary per-query scorer (rule oracles, baselines).
inline EvalOutcome evaluate_with_scorer(
    const TkgDataset& ds, const std::vector<SnapshotGraph>& snapshots, const FilterIndex& filter,
    Split split, const EvalOptions& opts,
    const std::function<std::vector<double>(std::uint32_t subject, std::uint32_t relation,
                                            std::uint32_t t_q)>& scorer) {
    return evaluate_batched(ds, snapshots, filter, split, opts, [&](const QueryBatch& qb) {
        std::vector<double> scores;
        scores.reserve(qb.size() * ds.num_entities);
        for (std::size_t k = 0; k < qb.size(); ++k) {
            std::vector<double> row = scorer(qb.subjects[k], qb.relations[k], qb.t_q);
            if (row.size() != ds.num_entities)
                throw ContractError("evaluate_with_scorer: scorer returned wrong size");
            scores.insert(scores.end(), row.begin(), row.end());
        }
        return scores;
    });
}

struct MigrationReport {
    EvalOutcome outcome;
    // metric name -> migrated / direct, present when a direct report was given.
    std::map<std::string, double> ratios;
};

inline MigrationReport migration_ratios(EvalOutcome migrated, const std::optional<MetricReport>& direct) {
    MigrationReport rep;
    rep.outcome = std::move(migrated);
    if (direct.has_value()) {
        auto ratio = [](double a, double b) { return b != 0.0 ? a / b : 0.0; };
        rep.ratios["mrr"] = ratio(rep.outcome.filtered.mrr, direct->mrr);
        rep.ratios["hits1"] = ratio(rep.outcome.filtered.hits1, direct->hits1);
        rep.ratios["hits3"] = ratio(rep.outcome.filtered.hits3, direct->hits3);
        rep.ratios["hits10"] = ratio(rep.outcome.filtered.hits10, direct->hits10);
    }
    return rep;
}

}  // namespace pathmem
