#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "pathmem/evaluation.hpp"
#include "pathmem/fit.hpp"
#include "support/op_checks.hpp"
#include "support/rule_oracle.hpp"

using namespace pathmem;
using namespace pathmem::testing;

namespace {

// Independent comparison-loop evaluator for cross-checking rank_of_target.
double brute_force_rank(const std::vector<double>& scores, std::uint32_t target,
                        const std::set<std::uint32_t>& excluded) {
    double greater = 0, equal = 0;
    for (std::uint32_t i = 0; i < scores.size(); ++i) {
        if (i == target || excluded.count(i)) continue;
        if (scores[i] > scores[target]) greater += 1;
        if (scores[i] == scores[target]) equal += 1;
    }
    return 1.0 + greater + equal / 2.0;
}

}  // namespace

TEST_CASE("rank_of_target examples") {
    CHECK(rank_of_target(std::vector<double>{0.9, 0.5, 0.1}, 0, {}) == 1.0);
    CHECK(rank_of_target(std::vector<double>{0.9, 0.9, 0.5}, 0, {}) == 1.5);
    std::vector<std::uint32_t> filter{1, 2};
    CHECK(rank_of_target(std::vector<double>{0.2, 0.8, 0.9}, 0, filter) == 1.0);

    std::vector<std::uint32_t> bad{0, 2};
    CHECK_THROWS_AS(rank_of_target(std::vector<double>{0.2, 0.8, 0.9}, 0, bad), ContractError);
}

TEST_CASE("rank_of_target agrees exactly with a brute-force loop") {
    RngStream rng(41);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.next_below(40);
        std::vector<double> scores(n);
        for (double& s : scores) s = rng.next_below(8) / 4.0;  // coarse grid forces ties
        const auto target = static_cast<std::uint32_t>(rng.next_below(n));
        std::set<std::uint32_t> excluded;
        for (std::size_t i = 0; i < n / 3; ++i) {
            const auto c = static_cast<std::uint32_t>(rng.next_below(n));
            if (c != target) excluded.insert(c);
        }
        std::vector<std::uint32_t> exclusions(excluded.begin(), excluded.end());
        CHECK(rank_of_target(scores, target, exclusions) == brute_force_rank(scores, target, excluded));
    }
}

namespace {

struct EvalFixture {
    TkgDataset ds;
    std::vector<SnapshotGraph> snapshots;
    FilterIndex filter;

    explicit EvalFixture(std::uint64_t seed, std::size_t entities = 12, std::size_t steps = 12) {
        SyntheticSpec spec;
        spec.num_entities = entities;
        spec.num_timestamps = steps;
        spec.chains_per_step = 2;
        ds = add_inverse_quadruples(generate_synthetic(spec, seed));
        snapshots = build_snapshots(ds, Split::all);
        filter = build_filter_index(ds);
    }
};

}  // namespace

TEST_CASE("an always-right scorer earns MRR and Hits of one") {
    EvalFixture fx(51);
    std::set<Quadruple> facts;
    for (const auto* s : {&fx.ds.train, &fx.ds.valid, &fx.ds.test}) facts.insert(s->begin(), s->end());

    EvalOptions opts;
    // Strictly top score on every true object of this (s, r, t).
    auto outcome = evaluate_with_scorer(fx.ds, fx.snapshots, fx.filter, Split::test, opts,
                                        [&](std::uint32_t s, std::uint32_t r, std::uint32_t t) {
                                            std::vector<double> scores(fx.ds.num_entities, 0.0);
                                            for (std::uint32_t o = 0; o < fx.ds.num_entities; ++o)
                                                if (facts.count(Quadruple{s, r, o, t})) scores[o] = 1.0;
                                            return scores;
                                        });
    // Raw mode can tie among the (s, r, t) truths; the filtered mode must be
    // perfect.
    CHECK(outcome.filtered.mrr == 1.0);
    CHECK(outcome.filtered.hits1 == 1.0);
    CHECK(outcome.filtered.hits10 == 1.0);
    CHECK(outcome.raw.num_queries == 2 * (fx.ds.test.size() / 2));
}

TEST_CASE("constant scores give the tie-policy rank") {
    EvalFixture fx(52);
    const std::size_t E = fx.ds.num_entities;
    EvalOptions opts;
    opts.keep_per_query = true;
    auto outcome = evaluate_with_scorer(
        fx.ds, fx.snapshots, fx.filter, Split::test, opts,
        [&](std::uint32_t, std::uint32_t, std::uint32_t) { return std::vector<double>(E, 0.7); });
    const double expected = 1.0 + (static_cast<double>(E) - 1.0) / 2.0;
    for (const QueryRecord& r : outcome.per_query) CHECK(r.rank_raw == expected);
}

TEST_CASE("the rule oracle reaches filtered MRR 1.0 through the evaluation module") {
    EvalFixture fx(7, 20, 30);
    RuleOracle oracle(fx.ds);
    EvalOptions opts;
    auto outcome = evaluate_with_scorer(fx.ds, fx.snapshots, fx.filter, Split::test, opts, oracle);
    CHECK(outcome.filtered.mrr == 1.0);
    auto valid = evaluate_with_scorer(fx.ds, fx.snapshots, fx.filter, Split::valid, opts, oracle);
    CHECK(valid.filtered.mrr == 1.0);
}

TEST_CASE("filtered rank never exceeds raw rank and report invariants hold") {
    EvalFixture fx(53);
    ModelParams params = init_params(fx.ds.num_base_relations, 8, 1, 4);
    ModelConfig config;
    config.dim = 8;
    config.num_layers = 1;
    EvalOptions opts;
    opts.history_length = 3;
    opts.keep_per_query = true;
    auto outcome = evaluate(fx.ds, fx.snapshots, fx.filter, params, config, Split::test, opts);

    for (const QueryRecord& r : outcome.per_query) CHECK(r.rank_filtered <= r.rank_raw);
    for (const MetricReport* rep : {&outcome.raw, &outcome.filtered}) {
        CHECK(rep->hits1 <= rep->hits3);
        CHECK(rep->hits3 <= rep->hits10);
        CHECK(rep->hits10 <= 1.0);
        CHECK(rep->mrr >= rep->hits1);
    }
    CHECK(outcome.filtered.mrr >= outcome.raw.mrr);
}

TEST_CASE("evaluation is invariant to batch size and worker count") {
    EvalFixture fx(54);
    ModelParams params = init_params(fx.ds.num_base_relations, 8, 1, 6);
    ModelConfig config;
    config.dim = 8;
    config.num_layers = 1;

    EvalOptions one;
    one.batch_size = 1;
    one.history_length = 3;
    one.keep_per_query = true;
    EvalOptions many;
    many.batch_size = 32;
    many.history_length = 3;
    many.keep_per_query = true;
    EvalOptions threaded = many;
    threaded.workers = 4;

    auto a = evaluate(fx.ds, fx.snapshots, fx.filter, params, config, Split::test, one);
    auto b = evaluate(fx.ds, fx.snapshots, fx.filter, params, config, Split::test, many);
    auto c = evaluate(fx.ds, fx.snapshots, fx.filter, params, config, Split::test, threaded);

    REQUIRE(a.per_query.size() == b.per_query.size());
    for (std::size_t i = 0; i < a.per_query.size(); ++i) {
        CHECK(a.per_query[i].rank_raw == b.per_query[i].rank_raw);
        CHECK(a.per_query[i].rank_filtered == b.per_query[i].rank_filtered);
        CHECK(b.per_query[i].rank_raw == c.per_query[i].rank_raw);
        CHECK(b.per_query[i].rank_filtered == c.per_query[i].rank_filtered);
    }
    CHECK(a.filtered.mrr == b.filtered.mrr);
    CHECK(b.filtered.mrr == c.filtered.mrr);
}

TEST_CASE("evaluating an empty split is a contract error") {
    EvalFixture fx(55);
    TkgDataset stripped = fx.ds;
    stripped.valid.clear();
    ModelParams params = init_params(fx.ds.num_base_relations, 8, 1, 2);
    ModelConfig config;
    config.dim = 8;
    config.num_layers = 1;
    EvalOptions opts;
    CHECK_THROWS_AS(evaluate(stripped, fx.snapshots, fx.filter, params, config, Split::valid, opts),
                    ContractError);
}

TEST_CASE("self-migration ratios are exactly one") {
    MetricReport direct;
    direct.mrr = 0.4;
    direct.hits1 = 0.3;
    direct.hits3 = 0.45;
    direct.hits10 = 0.6;
    EvalOutcome migrated;
    migrated.filtered = direct;
    MigrationReport rep = migration_ratios(migrated, direct);
    for (const auto& [k, v] : rep.ratios) CHECK(v == 1.0);
}

TEST_CASE("migration onto an entity-relabeled clone reproduces the metrics") {
    SyntheticSpec spec;
    spec.num_entities = 14;
    spec.num_timestamps = 12;
    spec.chains_per_step = 2;
    TkgDataset base = generate_synthetic(spec, 61);

    RngStream rng(62);
    std::vector<std::uint32_t> perm(spec.num_entities);
    for (std::uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.next_below(i)]);
    TkgDataset clone = relabel_entities(base, perm);

    TkgDataset a = add_inverse_quadruples(base);
    TkgDataset b = add_inverse_quadruples(clone);
    ModelParams params = init_params(spec.num_base_relations, 8, 1, 63);
    ModelConfig config;
    config.dim = 8;
    config.num_layers = 1;
    EvalOptions opts;
    opts.history_length = 3;

    auto snaps_a = build_snapshots(a, Split::all);
    auto snaps_b = build_snapshots(b, Split::all);
    auto direct = evaluate(a, snaps_a, build_filter_index(a), params, config, Split::test, opts);
    auto moved = evaluate(b, snaps_b, build_filter_index(b), params, config, Split::test, opts);

    CHECK(std::fabs(direct.filtered.mrr - moved.filtered.mrr) < 1e-9);
    CHECK(std::fabs(direct.filtered.hits1 - moved.filtered.hits1) < 1e-9);
    CHECK(std::fabs(direct.raw.mrr - moved.raw.mrr) < 1e-9);
}
