// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Each criterion pins its tolerance and runtime budget in code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pathmem/evaluation.hpp"
#include "pathmem/fit.hpp"
#include "support/model_checks.hpp"
#include "support/op_checks.hpp"
#include "support/rule_oracle.hpp"

using namespace pathmem;
using namespace pathmem::testing;
namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fs::path scratch_dir() {
    fs::path dir = fs::temp_directory_path() / "pathmem_acceptance";
    fs::create_directories(dir);
    return dir;
}

std::string fail(const std::string& reason) { return reason; }

// ---- criterion 1: full-scale benchmark runs are out of scope --------------

std::string criterion_reference_scope() {
    // Training on the full public benchmarks (ICEWS18, GDELT, WIKI, YAGO) is
    // supported by the data layer but is not an acceptance target; everything
    // below must run self-contained, with no external dataset present.
    const char* externals[] = {"ICEWS18", "GDELT", "WIKI", "YAGO"};
    for (const char* name : externals) {
        if (fs::exists(fs::path("data") / name))
            return fail("unexpectedly found external benchmark data; suite must not depend on it");
    }
    return "";
}

// ---- criterion 2: gradient suite -----------------------------------------

std::string criterion_gradient_suite() {
    const auto start = std::chrono::steady_clock::now();

    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        for (const OpCase& c : make_op_cases(seed)) {
            const double err = check_op_gradients(c, seed + 5000);
            if (err >= 1e-4)
                return fail("op " + c.name + " seed " + std::to_string(seed) + ": rel err " +
                            std::to_string(err));
        }
    }

    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        RandomInstance inst = make_random_instance(seed, 5, 2, 2, 2);
        ModelParams params = init_params(2, 8, 2, seed + 900);
        randomize_params(params, seed + 900);
        ModelConfig config;
        config.dim = 8;
        const double err = model_gradient_check(params, config, inst.batch, 5, seed + 9000);
        if (err >= 1e-3)
            return fail("whole model seed " + std::to_string(seed) + ": rel err " + std::to_string(err));
    }

    const double elapsed = seconds_since(start);
    if (elapsed >= 60.0) return fail("runtime " + std::to_string(elapsed) + "s exceeds 60s");
    return "";
}

// ---- criterion 3: dense-loop oracle equivalence ---------------------------

std::string criterion_dense_loop() {
    const auto start = std::chrono::steady_clock::now();
    const MsgVariant msgs[] = {MsgVariant::multiply, MsgVariant::translate, MsgVariant::rotate};
    const MpsVariant mpss[] = {MpsVariant::gated, MpsVariant::pmmp, MpsVariant::mmp, MpsVariant::ipmm};

    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        RngStream rng(seed);
        const std::size_t entities = 5 + rng.next_below(16);       // <= 20
        const std::size_t base_relations = 1 + rng.next_below(4);  // <= 4
        const std::size_t snapshots = 1 + rng.next_below(3);       // <= 3
        RandomInstance inst =
            make_random_instance(seed, entities, base_relations, snapshots, 2 + rng.next_below(3));

        ModelParams params = init_params(base_relations, 8, 2, seed + 300);
        randomize_params(params, seed + 300);
        ModelConfig config;
        config.dim = 8;
        config.msg_variant = msgs[seed % 3];
        config.mps_variant = mpss[seed % 4];

        const double diff = compare_forward_to_reference(params, config, inst.batch, entities);
        if (diff >= 1e-9)
            return fail("seed " + std::to_string(seed) + ": max abs diff " + std::to_string(diff));
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 120.0) return fail("runtime " + std::to_string(elapsed) + "s exceeds 120s");
    return "";
}

// ---- criterion 4: path-semantics oracle -----------------------------------

std::string criterion_path_semantics() {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        RngStream rng(seed * 31 + 7);
        const std::size_t entities = 3 + rng.next_below(6);  // <= 8
        std::vector<SnapshotGraph::Edge> edges;
        const std::size_t ne = 4 + rng.next_below(8);
        for (std::size_t i = 0; i < ne; ++i)
            edges.push_back({static_cast<std::uint32_t>(rng.next_below(entities)),
                             static_cast<std::uint32_t>(rng.next_below(4)),
                             static_cast<std::uint32_t>(rng.next_below(entities))});

        SnapshotGraph snap;
        snap.time = 0;
        snap.edges = std::move(edges);
        std::sort(snap.edges.begin(), snap.edges.end(), [](const auto& a, const auto& b) {
            return std::tie(a.dst, a.rel, a.src) < std::tie(b.dst, b.rel, b.src);
        });
        snap.in_degree.assign(entities, 0);
        for (const auto& e : snap.edges) ++snap.in_degree[e.dst];
        snap.dst_offsets.assign(entities + 1, 0);
        for (const auto& e : snap.edges) ++snap.dst_offsets[e.dst + 1];
        for (std::size_t i = 1; i < snap.dst_offsets.size(); ++i)
            snap.dst_offsets[i] += snap.dst_offsets[i - 1];

        ModelParams params = init_params(2, 6, 2, seed + 600);
        randomize_params(params, seed + 600);
        ModelConfig config;
        config.dim = 6;
        config.sum_oracle_mode = true;

        QueryBatch batch;
        batch.subjects = {static_cast<std::uint32_t>(rng.next_below(entities))};
        batch.relations = {static_cast<std::uint32_t>(rng.next_below(4))};
        batch.t_q = 1;
        batch.history = {&snap};

        Tape tape;
        BoundParams bound = bind_params(tape, params);
        PathMemory mem = forward(tape, batch, bound, config, entities);
        const DenseArray& got = tape.value(mem.values);
        Mat expected =
            enumerate_paths(params, entities, batch.subjects[0], batch.relations[0], snap, 2);
        for (std::size_t o = 0; o < entities; ++o)
            for (std::size_t j = 0; j < params.dim; ++j)
                if (std::fabs(got.at2(o, j) - expected[o][j]) >= 1e-9)
                    return fail("seed " + std::to_string(seed) + " entity " + std::to_string(o) +
                                ": diff " + std::to_string(std::fabs(got.at2(o, j) - expected[o][j])));
    }
    return "";
}

// ---- criterion 5: entity-relabeling equivariance ---------------------------

std::string criterion_equivariance() {
    SyntheticSpec spec;
    spec.num_entities = 16;
    spec.num_timestamps = 14;
    spec.chains_per_step = 3;
    TkgDataset base = generate_synthetic(spec, 101);
    TkgDataset aug = add_inverse_quadruples(base);
    auto snaps = build_snapshots(aug, Split::all);

    ModelParams params = init_params(spec.num_base_relations, 16, 2, 102);
    ModelConfig config;
    config.dim = 16;

    RngStream rng(103);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::uint32_t> perm(spec.num_entities);
        for (std::uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.next_below(i)]);
        auto snaps_p = build_snapshots(add_inverse_quadruples(relabel_entities(base, perm)), Split::all);

        for (std::size_t qi = 0; qi < 6 && qi < aug.test.size(); ++qi) {
            const Quadruple& q = aug.test[qi];
            QueryBatch qa;
            qa.subjects = {q.subject};
            qa.relations = {q.relation};
            qa.t_q = q.time;
            qa.history = history_window(snaps, q.time, 4);
            auto scores = score_queries(qa, params, config, spec.num_entities);

            QueryBatch qb;
            qb.subjects = {perm[q.subject]};
            qb.relations = {q.relation};
            qb.t_q = q.time;
            qb.history = history_window(snaps_p, q.time, 4);
            auto scores_p = score_queries(qb, params, config, spec.num_entities);

            for (std::uint32_t o = 0; o < spec.num_entities; ++o)
                if (std::fabs(scores[o] - scores_p[perm[o]]) >= 1e-9)
                    return fail("trial " + std::to_string(trial) + ": diff " +
                                std::to_string(std::fabs(scores[o] - scores_p[perm[o]])));
        }
    }
    return "";
}

// ---- criteria 6 and 7: learnability, then migration of the same model -----

struct TrainedArtifacts {
    TkgDataset dataset;  // augmented synthetic A
    TkgDataset raw;      // pre-augmentation form
    FitResult result;
    TrainConfig config;
    bool ready = false;
};

TrainedArtifacts g_trained;

std::string criterion_learnability() {
    const auto start = std::chrono::steady_clock::now();
    SyntheticSpec spec;
    spec.num_entities = 20;
    spec.num_base_relations = 2;
    spec.num_timestamps = 30;
    g_trained.raw = generate_synthetic(spec, 7);
    g_trained.dataset = add_inverse_quadruples(g_trained.raw);

    TrainConfig cfg;
    cfg.dim = 32;
    cfg.num_layers = 2;
    cfg.history_length = 3;
    cfg.seed = 7;
    cfg.max_epochs = 200;
    cfg.stop_at_valid_mrr = 0.9;
    g_trained.config = cfg;

    g_trained.result = fit(g_trained.dataset, cfg);
    g_trained.ready = true;

    const double elapsed = seconds_since(start);
    if (g_trained.result.best_valid_mrr < 0.9)
        return fail("valid filtered MRR " + std::to_string(g_trained.result.best_valid_mrr) +
                    " after " + std::to_string(g_trained.result.log.size()) + " epochs");
    if (g_trained.result.log.size() > 200) return fail("needed more than 200 epochs");
    if (elapsed >= 300.0) return fail("runtime " + std::to_string(elapsed) + "s exceeds 5 minutes");
    return "";
}

std::string criterion_migration() {
    if (!g_trained.ready) return fail("skipped: learnability training did not produce a model");
    const ModelParams& params = g_trained.result.best.params;
    ModelConfig mc = g_trained.config.model_config();

    EvalOptions opts;
    opts.history_length = g_trained.config.history_length;
    opts.config_digest = std::to_string(g_trained.config.digest());

    auto snaps = build_snapshots(g_trained.dataset, Split::all);
    auto filter = build_filter_index(g_trained.dataset);
    EvalOutcome direct = evaluate(g_trained.dataset, snaps, filter, params, mc, Split::test, opts);

    // Entity-relabeled clone A'.
    RngStream rng(104);
    std::vector<std::uint32_t> perm(g_trained.raw.num_entities);
    for (std::uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.next_below(i)]);
    TkgDataset clone = add_inverse_quadruples(relabel_entities(g_trained.raw, perm));
    auto snaps_c = build_snapshots(clone, Split::all);
    auto filter_c = build_filter_index(clone);
    EvalOutcome moved = evaluate(clone, snaps_c, filter_c, params, mc, Split::test, opts);

    const double pairs[][2] = {{direct.filtered.mrr, moved.filtered.mrr},
                               {direct.filtered.hits1, moved.filtered.hits1},
                               {direct.filtered.hits3, moved.filtered.hits3},
                               {direct.filtered.hits10, moved.filtered.hits10},
                               {direct.raw.mrr, moved.raw.mrr}};
    for (const auto& p : pairs)
        if (std::fabs(p[0] - p[1]) >= 1e-9)
            return fail("metric differs by " + std::to_string(std::fabs(p[0] - p[1])));

    // Checkpoint bytes must not depend on the entity count: one short training
    // run each on datasets that differ only in |E|.
    SyntheticSpec small;
    small.num_entities = 20;
    small.num_timestamps = 12;
    SyntheticSpec big = small;
    big.num_entities = 35;
    TrainConfig mini;
    mini.dim = 8;
    mini.num_layers = 1;
    mini.history_length = 2;
    mini.negatives = 8;
    mini.max_epochs = 1;
    mini.seed = 3;

    const fs::path dir = scratch_dir();
    const fs::path pa = dir / "entity20.ckpt";
    const fs::path pb = dir / "entity35.ckpt";
    save_checkpoint(fit(add_inverse_quadruples(generate_synthetic(small, 3)), mini).best, pa);
    save_checkpoint(fit(add_inverse_quadruples(generate_synthetic(big, 3)), mini).best, pb);
    if (fs::file_size(pa) != fs::file_size(pb))
        return fail("checkpoint sizes differ: " + std::to_string(fs::file_size(pa)) + " vs " +
                    std::to_string(fs::file_size(pb)));

    // No parameter array may be sized by the entity count.
    ModelParams probe = params;
    for (const auto& [name, arr] : parameter_refs(probe))
        for (std::size_t d : arr->shape())
            if (d == g_trained.raw.num_entities)
                return fail("array " + name + " has an entity-sized dimension");
    return "";
}

// ---- criterion 8: ablation harness ----------------------------------------

std::string criterion_ablation() {
    if (!g_trained.ready) return fail("skipped: learnability training did not run");
    const TkgDataset& ds = g_trained.dataset;
    auto snaps = build_snapshots(ds, Split::all);
    auto filter = build_filter_index(ds);

    double gated_multiply_mrr = -1.0;
    std::vector<std::pair<std::string, double>> degraded;

    for (MpsVariant mps : {MpsVariant::gated, MpsVariant::pmmp, MpsVariant::mmp, MpsVariant::ipmm}) {
        for (MsgVariant msg : {MsgVariant::multiply, MsgVariant::translate, MsgVariant::rotate}) {
            TrainConfig cfg = g_trained.config;
            cfg.max_epochs = 12;
            cfg.stop_at_valid_mrr = 0.98;
            cfg.msg_variant = msg;
            cfg.mps_variant = mps;

            FitResult result = fit(ds, cfg);
            EvalOptions opts;
            opts.history_length = cfg.history_length;
            opts.config_digest = std::to_string(cfg.digest());
            EvalOutcome outcome =
                evaluate(ds, snaps, filter, result.best.params, cfg.model_config(), Split::test, opts);

            const std::string name = std::string(to_string(mps)) + "+" + to_string(msg);
            std::printf("         ablation %-20s test filtered MRR %.4f\n", name.c_str(),
                        outcome.filtered.mrr);
            std::fflush(stdout);
            if (mps == MpsVariant::gated && msg == MsgVariant::multiply)
                gated_multiply_mrr = outcome.filtered.mrr;
            if (mps != MpsVariant::gated) degraded.emplace_back(name, outcome.filtered.mrr);
        }
    }

    if (gated_multiply_mrr < 0.0) return fail("gated+multiply run missing");
    for (const auto& [name, mrr] : degraded)
        if (gated_multiply_mrr < mrr - 0.05)
            return fail("gated+multiply MRR " + std::to_string(gated_multiply_mrr) +
                        " below MPS-degraded " + name + " MRR " + std::to_string(mrr) + " - 0.05");
    return "";
}

// ---- criterion 9: metric correctness ---------------------------------------

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

std::string criterion_metrics() {
    // 1000 random score vectors against the brute-force evaluator, exactly.
    RngStream rng(401);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.next_below(60);
        std::vector<double> scores(n);
        for (double& s : scores) s = static_cast<double>(rng.next_below(10)) / 5.0;
        const auto target = static_cast<std::uint32_t>(rng.next_below(n));
        std::set<std::uint32_t> excluded;
        for (std::size_t i = 0; i < n / 4; ++i) {
            const auto c = static_cast<std::uint32_t>(rng.next_below(n));
            if (c != target) excluded.insert(c);
        }
        std::vector<std::uint32_t> exclusions(excluded.begin(), excluded.end());
        if (rank_of_target(scores, target, exclusions) != brute_force_rank(scores, target, excluded))
            return fail("rank mismatch at trial " + std::to_string(trial));
    }

    // Filtered rank <= raw rank on every query of a model evaluation.
    if (!g_trained.ready) return fail("skipped: no trained model available");
    EvalOptions opts;
    opts.history_length = g_trained.config.history_length;
    opts.keep_per_query = true;
    auto snaps = build_snapshots(g_trained.dataset, Split::all);
    auto filter = build_filter_index(g_trained.dataset);
    EvalOutcome outcome = evaluate(g_trained.dataset, snaps, filter, g_trained.result.best.params,
                                   g_trained.config.model_config(), Split::test, opts);
    for (const QueryRecord& r : outcome.per_query)
        if (r.rank_filtered > r.rank_raw) return fail("filtered rank exceeded raw rank");

    // Statistics on files shaped like the public YAGO subset reproduce its
    // counts exactly: |E|=10,623, |R|=10, splits 161,540/19,523/20,026, 189
    // snapshots.
    const fs::path dir = scratch_dir() / "yago_shaped";
    fs::create_directories(dir);
    {
        std::ofstream stat(dir / "stat.txt");
        stat << "10623 10 189\n";
        auto write_split = [&](const char* name, std::size_t lines, std::uint32_t t_lo,
                               std::uint32_t t_hi) {
            std::ofstream out(dir / (std::string(name) + ".txt"));
            RngStream r(fnv1a64(name));
            for (std::size_t i = 0; i < lines; ++i) {
                const std::uint32_t t = t_lo + static_cast<std::uint32_t>(i % (t_hi - t_lo + 1));
                out << r.next_below(10623) << '\t' << r.next_below(10) << '\t' << r.next_below(10623)
                    << '\t' << t << '\n';
            }
        };
        write_split("train", 161540, 0, 150);
        write_split("valid", 19523, 151, 169);
        write_split("test", 20026, 170, 188);
    }

    TkgDataset ds = load_dataset(dir);
    std::set<std::uint32_t> times;
    for (const auto* s : {&ds.train, &ds.valid, &ds.test})
        for (const Quadruple& q : *s) times.insert(q.time);
    if (ds.num_entities != 10623 || ds.num_base_relations != 10 || ds.train.size() != 161540 ||
        ds.valid.size() != 19523 || ds.test.size() != 20026 || times.size() != 189)
        return fail("library statistics do not match the known YAGO subset counts");

#ifdef PATHMEM_CLI_PATH
    // The statistics command itself must print the same numbers.
    const fs::path out_file = scratch_dir() / "prepare_out.txt";
    const std::string cmd = std::string(PATHMEM_CLI_PATH) + " prepare --data " + dir.string() +
                            " > " + out_file.string() + " 2>/dev/null";
    if (std::system(cmd.c_str()) != 0) return fail("prepare command failed");
    std::ifstream in(out_file);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    for (const char* needle :
         {"entities         10623", "base relations   10", "train facts      161540",
          "valid facts      19523", "test facts       20026", "timestamps       189"}) {
        if (text.find(needle) == std::string::npos)
            return fail(std::string("prepare output missing '") + needle + "'");
    }
#endif
    return "";
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<std::string()> run;
    };
    const std::vector<Criterion> criteria = {
        {"full-scale-benchmarks-out-of-scope", criterion_reference_scope},
        {"gradient-suite", criterion_gradient_suite},
        {"dense-loop-oracle-equivalence", criterion_dense_loop},
        {"path-semantics-oracle", criterion_path_semantics},
        {"entity-relabeling-equivariance", criterion_equivariance},
        {"synthetic-learnability", criterion_learnability},
        {"migration-property", criterion_migration},
        {"ablation-harness", criterion_ablation},
        {"metric-correctness", criterion_metrics},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string reason;
        try {
            reason = c.run();
        } catch (const std::exception& e) {
            reason = std::string("exception: ") + e.what();
        }
        const double elapsed = seconds_since(start);
        if (reason.empty()) {
            std::printf("[PASS] %-36s (%.1fs)\n", c.name, elapsed);
        } else {
            std::printf("[FAIL] %-36s (%.1fs) %s\n", c.name, elapsed, reason.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
