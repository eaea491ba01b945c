// Command-line front end: dataset preparation and statistics, synthetic data
// generation, training, evaluation, model migration and the ablation matrix.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pathmem/evaluation.hpp"
#include "pathmem/fit.hpp"

using json = nlohmann::json;
using namespace pathmem;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string data_dir;
    std::string out_dir;
    std::string config_file;
    std::uint64_t seed = 0;
    std::size_t dim = 64;
    std::size_t layers = 2;
    int history_length = -1;  // -1: per-dataset default
    std::size_t negatives = 64;
    double alpha = 1.0;
    double lr = 5e-4;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::string msg_variant = "multiply";
    std::string mps_variant = "gated";
    std::size_t workers = 1;
    bool deterministic = false;
    double stop_at_mrr = -1.0;
};

void add_model_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--seed", o.seed, "Root seed for all derived random streams");
    cmd->add_option("--dim", o.dim, "Embedding dimension d");
    cmd->add_option("--layers", o.layers, "Aggregation layers per snapshot");
    cmd->add_option("--history-length", o.history_length,
                    "History window length (default: per-dataset)");
    cmd->add_option("--negatives", o.negatives, "Negative samples per query");
    cmd->add_option("--alpha", o.alpha, "Orthogonality regularizer target scale");
    cmd->add_option("--lr", o.lr, "Adam learning rate");
    cmd->add_option("--epochs", o.epochs, "Max training epochs");
    cmd->add_option("--batch-size", o.batch_size, "Queries per forward pass");
    cmd->add_option("--msg-variant", o.msg_variant, "multiply|translate|rotate (comma list for ablate)");
    cmd->add_option("--mps-variant", o.mps_variant, "gated|pmmp|mmp|ipmm (comma list for ablate)");
    cmd->add_option("--workers", o.workers, "Evaluation worker threads");
    cmd->add_flag("--deterministic", o.deterministic, "Zero wall-clock fields in outputs");
    cmd->add_option("--stop-at-mrr", o.stop_at_mrr, "Stop training once valid MRR reaches this");
    cmd->add_option("--config", o.config_file, "key=value file; explicit flags win");
}

// Applies `key=value` lines from the run config file to every option the user
// did not set on the command line.
void apply_config_file(const CLI::App* cmd, CommonOpts& o, SyntheticSpec& synth) {
    if (o.config_file.empty()) return;
    std::ifstream in(o.config_file);
    if (!in) throw IoError("cannot open config file " + o.config_file);

    auto flag_given = [&](const std::string& flag) {
        return cmd->get_option_no_throw(flag) != nullptr && cmd->count(flag) > 0;
    };
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
            line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        const std::size_t eq = line.find('=', start);
        if (eq == std::string::npos)
            throw ConfigError(o.config_file + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = line.substr(start, eq - start);
        const std::string value = line.substr(eq + 1);

        if (flag_given("--" + key)) continue;  // explicit flags win
        try {
            if (key == "data") o.data_dir = value;
            else if (key == "out") o.out_dir = value;
            else if (key == "seed") o.seed = std::stoull(value);
            else if (key == "dim") o.dim = std::stoul(value);
            else if (key == "layers") o.layers = std::stoul(value);
            else if (key == "history-length") o.history_length = std::stoi(value);
            else if (key == "negatives") o.negatives = std::stoul(value);
            else if (key == "alpha") o.alpha = std::stod(value);
            else if (key == "lr") o.lr = std::stod(value);
            else if (key == "epochs") o.epochs = std::stoul(value);
            else if (key == "batch-size") o.batch_size = std::stoul(value);
            else if (key == "msg-variant") o.msg_variant = value;
            else if (key == "mps-variant") o.mps_variant = value;
            else if (key == "workers") o.workers = std::stoul(value);
            else if (key == "deterministic") o.deterministic = value == "1" || value == "true";
            else if (key == "stop-at-mrr") o.stop_at_mrr = std::stod(value);
            else if (key == "entities") synth.num_entities = std::stoul(value);
            else if (key == "base-relations") synth.num_base_relations = std::stoul(value);
            else if (key == "timestamps") synth.num_timestamps = std::stoul(value);
            else if (key == "chains-per-step") synth.chains_per_step = std::stoul(value);
            else if (key == "lifetime") synth.chain_lifetime = std::stoul(value);
            else
                throw ConfigError(o.config_file + ":" + std::to_string(line_no) + ": unknown key '" +
                                  key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError(o.config_file + ":" + std::to_string(line_no) + ": bad value for '" +
                              key + "'");
        }
    }
}

std::size_t resolve_history_length(const CommonOpts& o) {
    if (o.history_length >= 1) return static_cast<std::size_t>(o.history_length);
    return default_history_length(fs::path(o.data_dir).filename().string());
}

TrainConfig to_train_config(const CommonOpts& o) {
    TrainConfig cfg;
    cfg.dim = o.dim;
    cfg.num_layers = o.layers;
    cfg.history_length = resolve_history_length(o);
    cfg.negatives = o.negatives;
    cfg.alpha = o.alpha;
    cfg.learning_rate = o.lr;
    cfg.max_epochs = o.epochs;
    cfg.batch_size = o.batch_size;
    cfg.seed = o.seed;
    cfg.msg_variant = parse_msg_variant(o.msg_variant);
    cfg.mps_variant = parse_mps_variant(o.mps_variant);
    cfg.stop_at_valid_mrr = o.stop_at_mrr;
    cfg.workers = o.workers;
    return cfg;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    for (char c : csv) {
        if (c == ',') {
            if (!item.empty()) out.push_back(item);
            item.clear();
        } else {
            item += c;
        }
    }
    if (!item.empty()) out.push_back(item);
    return out;
}

json report_to_json(const MetricReport& r) {
    return json{{"split", r.split},       {"mode", r.mode},
                {"mrr", r.mrr},           {"hits1", r.hits1},
                {"hits3", r.hits3},       {"hits10", r.hits10},
                {"num_queries", r.num_queries}, {"config_digest", r.config_digest}};
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_per_query_csv(const fs::path& path, const std::vector<QueryRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "subject,relation,object,time,direction,rank_raw,rank_filtered\n";
    for (const QueryRecord& r : records)
        out << r.subject << ',' << r.relation << ',' << r.target << ',' << r.time << ','
            << (r.inverse ? "inverse" : "forward") << ',' << r.rank_raw << ',' << r.rank_filtered
            << '\n';
}

TkgDataset load_prepared(const std::string& dir) {
    TkgDataset ds = load_dataset(dir);
    for (const std::string& w : ds.warnings) std::cerr << "warning: " << w << '\n';
    return add_inverse_quadruples(std::move(ds));
}

// Variants and the history length are recorded in the checkpoint's config
// echo; flags still win.
void variants_from_checkpoint(const Checkpoint& ckpt, CommonOpts& o, const CLI::App* cmd) {
    auto find_value = [&](const std::string& key) -> std::optional<std::string> {
        const std::string& echo = ckpt.config_echo;
        const std::string needle = key + "=";
        std::size_t pos = echo.find(needle);
        if (pos == std::string::npos) return std::nullopt;
        pos += needle.size();
        const std::size_t end = echo.find(';', pos);
        return echo.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    };
    if (cmd->count("--msg-variant") == 0)
        if (auto v = find_value("msg_variant")) o.msg_variant = *v;
    if (cmd->count("--mps-variant") == 0)
        if (auto v = find_value("mps_variant")) o.mps_variant = *v;
    if (cmd->count("--history-length") == 0 && o.history_length < 0)
        if (auto v = find_value("history_length")) o.history_length = std::stoi(*v);
}

ModelConfig eval_model_config(const Checkpoint& ckpt, const CommonOpts& o) {
    ModelConfig mc;
    mc.dim = ckpt.params.dim;
    mc.num_layers = ckpt.params.num_layers;
    mc.msg_variant = parse_msg_variant(o.msg_variant);
    mc.mps_variant = parse_mps_variant(o.mps_variant);
    mc.validate();
    return mc;
}

int cmd_prepare(const CommonOpts& o) {
    TkgDataset raw = load_dataset(o.data_dir);
    for (const std::string& w : raw.warnings) std::cerr << "warning: " << w << '\n';
    std::set<std::uint32_t> times;
    for (const auto* s : {&raw.train, &raw.valid, &raw.test})
        for (const Quadruple& q : *s) times.insert(q.time);
    const double e_avg = average_entities_per_snapshot(raw);

    std::printf("dataset          %s\n", o.data_dir.c_str());
    std::printf("entities         %zu\n", raw.num_entities);
    std::printf("base relations   %zu\n", raw.num_base_relations);
    std::printf("train facts      %zu\n", raw.train.size());
    std::printf("valid facts      %zu\n", raw.valid.size());
    std::printf("test facts       %zu\n", raw.test.size());
    std::printf("timestamps       %zu\n", times.size());
    std::printf("granularity      %llu raw units per step\n",
                static_cast<unsigned long long>(raw.time_granularity));
    std::printf("avg entities per snapshot  %.2f\n", e_avg);
    if (e_avg > 0.0)
        std::printf("density |E|/|E_avg|        %.2f\n",
                    static_cast<double>(raw.num_entities) / e_avg);

    // Index pass proves the full pipeline, not just parsing.
    TkgDataset aug = add_inverse_quadruples(std::move(raw));
    auto snapshots = build_snapshots(aug, Split::all);
    auto filter = build_filter_index(aug);
    std::printf("snapshots        %zu\n", snapshots.size());
    std::printf("filter keys      %zu\n", filter.size());
    return 0;
}

int cmd_synth(const CommonOpts& o, const SyntheticSpec& spec) {
    TkgDataset ds = generate_synthetic(spec, o.seed);
    save_dataset(ds, o.out_dir);
    std::printf("wrote synthetic dataset to %s (train %zu, valid %zu, test %zu facts)\n",
                o.out_dir.c_str(), ds.train.size(), ds.valid.size(), ds.test.size());
    return 0;
}

int cmd_train(const CommonOpts& o) {
    TkgDataset ds = load_prepared(o.data_dir);
    TrainConfig cfg = to_train_config(o);
    fs::create_directories(o.out_dir);

    std::ofstream metrics(fs::path(o.out_dir) / "metrics.jsonl");
    if (!metrics) throw IoError("cannot write metrics.jsonl");
    FitResult result = fit(ds, cfg, [&](const EpochMetrics& em) {
        json j{{"epoch", em.epoch},
               {"train_loss", em.train_loss},
               {"valid_mrr", em.valid_mrr},
               {"valid_hits1", em.valid_hits1},
               {"valid_hits3", em.valid_hits3},
               {"valid_hits10", em.valid_hits10},
               {"seconds", o.deterministic ? 0.0 : em.seconds}};
        metrics << j.dump() << '\n';
        std::printf("epoch %zu  loss %.6f  valid MRR %.4f\n", em.epoch, em.train_loss, em.valid_mrr);
        std::fflush(stdout);
    });

    const fs::path ckpt_path = fs::path(o.out_dir) / "checkpoint.ckpt";
    save_checkpoint(result.best, ckpt_path);
    write_json(fs::path(o.out_dir) / "train_summary.json",
               json{{"best_epoch", result.best_epoch},
                    {"best_valid_mrr", result.best_valid_mrr},
                    {"epochs_run", result.log.size()},
                    {"config", cfg.canonical_text()},
                    {"config_digest", std::to_string(cfg.digest())},
                    {"checkpoint", ckpt_path.string()}});
    std::printf("best epoch %zu (valid MRR %.4f); checkpoint at %s\n", result.best_epoch,
                result.best_valid_mrr, ckpt_path.string().c_str());
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint_path, const std::string& splits_csv,
             bool per_query_csv) {
    TkgDataset ds = load_prepared(o.data_dir);
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    validate_checkpoint_for(ckpt, ds);

    ModelConfig mc = eval_model_config(ckpt, o);
    auto snapshots = build_snapshots(ds, Split::all);
    auto filter = build_filter_index(ds);

    EvalOptions eopts;
    eopts.batch_size = o.batch_size;
    eopts.history_length = resolve_history_length(o);
    eopts.workers = o.workers;
    eopts.keep_per_query = per_query_csv;
    eopts.config_digest = std::to_string(ckpt.config_digest);

    fs::create_directories(o.out_dir);
    for (const std::string& name : split_list(splits_csv)) {
        Split split;
        if (name == "valid")
            split = Split::valid;
        else if (name == "test")
            split = Split::test;
        else if (name == "train")
            split = Split::train;
        else
            throw ConfigError("unknown split '" + name + "'; valid: train, valid, test");
        if (ds.split(split).empty()) {
            std::cerr << "warning: split '" << name << "' is empty, skipped\n";
            continue;
        }
        EvalOutcome outcome = evaluate(ds, snapshots, filter, ckpt.params, mc, split, eopts);
        write_json(fs::path(o.out_dir) / ("report_" + name + "_raw.json"), report_to_json(outcome.raw));
        write_json(fs::path(o.out_dir) / ("report_" + name + "_filtered.json"),
                   report_to_json(outcome.filtered));
        if (per_query_csv)
            write_per_query_csv(fs::path(o.out_dir) / ("per_query_" + name + ".csv"),
                                outcome.per_query);
        std::printf("%s: raw MRR %.4f | filtered MRR %.4f H@1 %.4f H@3 %.4f H@10 %.4f (%zu queries)\n",
                    name.c_str(), outcome.raw.mrr, outcome.filtered.mrr, outcome.filtered.hits1,
                    outcome.filtered.hits3, outcome.filtered.hits10, outcome.filtered.num_queries);
    }
    return 0;
}

int cmd_migrate(const CommonOpts& o, const std::string& checkpoint_path,
                const std::string& direct_report_path) {
    TkgDataset ds = load_prepared(o.data_dir);
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    validate_checkpoint_for(ckpt, ds);

    ModelConfig mc = eval_model_config(ckpt, o);
    auto snapshots = build_snapshots(ds, Split::all);
    auto filter = build_filter_index(ds);

    EvalOptions eopts;
    eopts.batch_size = o.batch_size;
    eopts.history_length = resolve_history_length(o);
    eopts.workers = o.workers;
    eopts.config_digest = std::to_string(ckpt.config_digest);

    EvalOutcome outcome = evaluate(ds, snapshots, filter, ckpt.params, mc, Split::test, eopts);

    std::optional<MetricReport> direct;
    if (!direct_report_path.empty()) {
        std::ifstream in(direct_report_path);
        if (!in) throw IoError("cannot open direct report " + direct_report_path);
        json j = json::parse(in);
        MetricReport r;
        r.mrr = j.at("mrr").get<double>();
        r.hits1 = j.at("hits1").get<double>();
        r.hits3 = j.at("hits3").get<double>();
        r.hits10 = j.at("hits10").get<double>();
        direct = r;
    }
    MigrationReport rep = migration_ratios(outcome, direct);

    json j{{"migrated_raw", report_to_json(rep.outcome.raw)},
           {"migrated_filtered", report_to_json(rep.outcome.filtered)}};
    if (!rep.ratios.empty()) {
        json ratios;
        for (const auto& [k, v] : rep.ratios) ratios[k] = v;
        j["migration_ratio"] = ratios;
    }
    fs::create_directories(o.out_dir);
    write_json(fs::path(o.out_dir) / "migration_report.json", j);

    std::printf("migrated filtered MRR %.4f", rep.outcome.filtered.mrr);
    if (rep.ratios.count("mrr")) std::printf("  (%.2f%% of direct)", 100.0 * rep.ratios.at("mrr"));
    std::printf("\n");
    return 0;
}

int cmd_ablate(const CommonOpts& o) {
    TkgDataset ds = load_prepared(o.data_dir);
    auto snapshots = build_snapshots(ds, Split::all);
    auto filter = build_filter_index(ds);
    fs::create_directories(o.out_dir);

    json table = json::array();
    std::printf("%-10s %-10s %8s %8s %8s %8s\n", "mps", "msg", "MRR", "H@1", "H@3", "H@10");
    for (const std::string& mps : split_list(o.mps_variant)) {
        for (const std::string& msg : split_list(o.msg_variant)) {
            CommonOpts vo = o;
            vo.mps_variant = mps;
            vo.msg_variant = msg;
            TrainConfig cfg = to_train_config(vo);
            FitResult result = fit(ds, cfg);

            EvalOptions eopts;
            eopts.batch_size = o.batch_size;
            eopts.history_length = cfg.history_length;
            eopts.workers = o.workers;
            eopts.config_digest = std::to_string(cfg.digest());
            EvalOutcome outcome = evaluate(ds, snapshots, filter, result.best.params,
                                           cfg.model_config(), Split::test, eopts);

            std::printf("%-10s %-10s %8.4f %8.4f %8.4f %8.4f\n", mps.c_str(), msg.c_str(),
                        outcome.filtered.mrr, outcome.filtered.hits1, outcome.filtered.hits3,
                        outcome.filtered.hits10);
            std::fflush(stdout);
            table.push_back(json{{"mps_variant", mps},
                                 {"msg_variant", msg},
                                 {"best_epoch", result.best_epoch},
                                 {"filtered", report_to_json(outcome.filtered)},
                                 {"raw", report_to_json(outcome.raw)}});
        }
    }
    write_json(fs::path(o.out_dir) / "ablation_report.json", table);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entity-independent temporal knowledge graph reasoner"};
    app.require_subcommand(1);

    CommonOpts opts;
    SyntheticSpec synth_spec;
    std::string checkpoint_path, direct_report_path, splits_csv = "test";
    bool per_query_csv = false;

    CLI::App* prepare = app.add_subcommand("prepare", "Load, validate and index a dataset");
    prepare->add_option("--data", opts.data_dir, "Dataset directory");
    prepare->add_option("--config", opts.config_file, "key=value file; explicit flags win");

    CLI::App* synth = app.add_subcommand("synth", "Generate a deterministic rule dataset");
    synth->add_option("--out", opts.out_dir, "Output directory");
    synth->add_option("--seed", opts.seed, "Generator seed");
    synth->add_option("--entities", synth_spec.num_entities, "Entity count");
    synth->add_option("--base-relations", synth_spec.num_base_relations, "Base relation count");
    synth->add_option("--timestamps", synth_spec.num_timestamps, "Snapshot count");
    synth->add_option("--chains-per-step", synth_spec.chains_per_step, "New chains per train step");
    synth->add_option("--lifetime", synth_spec.chain_lifetime, "Chain lifetime in steps");
    synth->add_option("--config", opts.config_file, "key=value file; explicit flags win");

    CLI::App* train = app.add_subcommand("train", "Train and keep the best-valid checkpoint");
    train->add_option("--data", opts.data_dir, "Dataset directory");
    train->add_option("--out", opts.out_dir, "Output directory");
    add_model_flags(train, opts);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--data", opts.data_dir, "Dataset directory");
    eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    eval->add_option("--out", opts.out_dir, "Output directory");
    eval->add_option("--splits", splits_csv, "Comma list of splits (default: test)");
    eval->add_flag("--per-query-csv", per_query_csv, "Write per-query ranks as CSV");
    add_model_flags(eval, opts);

    CLI::App* migrate = app.add_subcommand("migrate", "Evaluate a foreign-trained checkpoint");
    migrate->add_option("--data", opts.data_dir, "Target dataset directory");
    migrate->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    migrate->add_option("--out", opts.out_dir, "Output directory");
    migrate->add_option("--direct-report", direct_report_path,
                        "Filtered report JSON of the direct run, for ratios");
    add_model_flags(migrate, opts);

    CLI::App* ablate = app.add_subcommand("ablate", "Train/evaluate a variant cross product");
    ablate->add_option("--data", opts.data_dir, "Dataset directory");
    ablate->add_option("--out", opts.out_dir, "Output directory");
    add_model_flags(ablate, opts);

    try {
        app.parse(argc, argv);
        const CLI::App* active = app.get_subcommands().front();
        apply_config_file(active, opts, synth_spec);

        const bool needs_data = !prepare->parsed() && !synth->parsed();
        if ((needs_data || prepare->parsed()) && opts.data_dir.empty())
            throw ConfigError("--data is required (flag or config file)");
        if (!prepare->parsed() && opts.out_dir.empty())
            throw ConfigError("--out is required (flag or config file)");

        if (eval->parsed() || migrate->parsed()) {
            Checkpoint peek = load_checkpoint(checkpoint_path);
            variants_from_checkpoint(peek, opts, eval->parsed() ? eval : migrate);
        }
        if (prepare->parsed()) return cmd_prepare(opts);
        if (synth->parsed()) return cmd_synth(opts, synth_spec);
        if (train->parsed()) return cmd_train(opts);
        if (eval->parsed()) return cmd_eval(opts, checkpoint_path, splits_csv, per_query_csv);
        if (migrate->parsed()) return cmd_migrate(opts, checkpoint_path, direct_report_path);
        if (ablate->parsed()) return cmd_ablate(opts);
        return 2;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
