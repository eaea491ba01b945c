#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pathmem/errors.hpp"
#include "pathmem/rng.hpp"

namespace pathmem {

// One timestamped directed fact in integer-id space. `time` is a normalized
// snapshot index, not a raw timestamp.
struct Quadruple {
    std::uint32_t subject = 0;
    std::uint32_t relation = 0;
    std::uint32_t object = 0;
    std::uint32_t time = 0;

    bool operator==(const Quadruple&) const = default;
    auto operator<=>(const Quadruple&) const = default;
};

enum class Split { train, valid, test, all };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
        case Split::all: return "all";
    }
    return "?";
}

struct TkgDataset {
    std::size_t num_entities = 0;
    std::size_t num_base_relations = 0;
    std::vector<Quadruple> train, valid, test;
    // Raw units per snapshot index, echoed from ingestion.
    std::uint64_t time_granularity = 1;
    std::uint64_t min_raw_time = 0;
    bool augmented = false;
    std::map<std::string, std::string> metadata;
    std::vector<std::string> warnings;

    std::size_t num_relations() const {
        return augmented ? 2 * num_base_relations : num_base_relations;
    }

    const std::vector<Quadruple>& split(Split s) const {
        switch (s) {
            case Split::train: return train;
            case Split::valid: return valid;
            case Split::test: return test;
            default: throw ContractError("split(): no single container for 'all'");
        }
    }

    std::size_t total_facts() const { return train.size() + valid.size() + test.size(); }

    std::uint32_t max_time() const {
        std::uint32_t t = 0;
        for (const auto* s : {&train, &valid, &test})
            for (const Quadruple& q : *s) t = std::max(t, q.time);
        return t;
    }

    bool operator==(const TkgDataset& o) const {
        return num_entities == o.num_entities && num_base_relations == o.num_base_relations &&
               train == o.train && valid == o.valid && test == o.test && augmented == o.augmented;
    }
};

// All edges of one snapshot, sorted by (destination, relation, source) so that
// aggregation order is reproducible. Edges include inverse directions.
struct SnapshotGraph {
    struct Edge {
        std::uint32_t src = 0;
        std::uint32_t rel = 0;
        std::uint32_t dst = 0;
    };

    std::uint32_t time = 0;
    std::vector<Edge> edges;
    // dst_offsets[o]..dst_offsets[o+1] delimit the edges ending at entity o.
    std::vector<std::uint32_t> dst_offsets;
    std::vector<std::uint32_t> in_degree;

    std::span<const Edge> edges_into(std::uint32_t dst) const {
        return {edges.data() + dst_offsets[dst], edges.data() + dst_offsets[dst + 1]};
    }
};

// (subject, relation, time) -> sorted object ids known true at exactly that
// time, across all splits.
class FilterIndex {
public:
    FilterIndex() = default;

    void insert(std::uint32_t s, std::uint32_t r, std::uint32_t t, std::uint32_t o) {
        map_[key(s, r, t)].push_back(o);
    }

    void finalize() {
        for (auto& [k, v] : map_) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
        }
    }

    const std::vector<std::uint32_t>& objects(std::uint32_t s, std::uint32_t r, std::uint32_t t) const {
        static const std::vector<std::uint32_t> empty;
        auto it = map_.find(key(s, r, t));
        return it == map_.end() ? empty : it->second;
    }

    std::size_t size() const { return map_.size(); }

private:
    static std::uint64_t key(std::uint64_t s, std::uint64_t r, std::uint64_t t) {
        if (s >= (1ull << 26) || r >= (1ull << 22) || t >= (1ull << 16))
            throw IndexError("FilterIndex: id exceeds packing bounds");
        return (s << 38) | (r << 16) | t;
    }

    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> map_;
};

namespace detail {

inline std::uint64_t parse_u64_token(const std::string& tok, const std::string& file, std::size_t line_no) {
    if (tok.empty()) throw ParseError(file + ":" + std::to_string(line_no) + ": empty token");
    std::uint64_t v = 0;
    for (char c : tok) {
        if (c < '0' || c > '9')
            throw ParseError(file + ":" + std::to_string(line_no) + ": non-integer token '" + tok + "'");
        v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return v;
}

struct RawFact {
    std::uint64_t s, r, o, t;
};

inline std::vector<RawFact> read_fact_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<RawFact> facts;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::vector<std::string> toks;
        std::string tok;
        while (ls >> tok) toks.push_back(tok);
        if (toks.empty()) continue;
        if (toks.size() < 4)
            throw ParseError(path.filename().string() + ":" + std::to_string(line_no) +
                             ": expected at least 4 columns, got " + std::to_string(toks.size()));
        // Columns beyond the fourth are ignored; public benchmark files
        // sometimes carry an extra one.
        RawFact f;
        f.s = parse_u64_token(toks[0], path.filename().string(), line_no);
        f.r = parse_u64_token(toks[1], path.filename().string(), line_no);
        f.o = parse_u64_token(toks[2], path.filename().string(), line_no);
        f.t = parse_u64_token(toks[3], path.filename().string(), line_no);
        facts.push_back(f);
    }
    return facts;
}

inline std::uint64_t gcd_u64(std::uint64_t a, std::uint64_t b) {
    while (b) {
        a %= b;
        std::swap(a, b);
    }
    return a;
}

}  // namespace detail

// Loads train.txt/valid.txt/test.txt (whitespace-separated integers: s r o t)
// plus stat.txt (num_entities num_base_relations [num_timestamps]). Raw
// timestamps are normalized to snapshot indices by subtracting the minimum and
// dividing by the gcd of consecutive gaps.
inline TkgDataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw IoError("dataset directory not found: " + dir.string());

    std::ifstream stat(dir / "stat.txt");
    if (!stat) throw IoError("cannot open " + (dir / "stat.txt").string());
    std::string stat_line;
    if (!std::getline(stat, stat_line)) throw ParseError("stat.txt: empty file");
    std::istringstream ss(stat_line);
    std::uint64_t num_entities = 0, num_relations = 0, declared_timestamps = 0;
    if (!(ss >> num_entities >> num_relations))
        throw ParseError("stat.txt: expected 'num_entities num_relations [num_timestamps]'");
    const bool has_declared_ts = static_cast<bool>(ss >> declared_timestamps);

    TkgDataset ds;
    ds.num_entities = num_entities;
    ds.num_base_relations = num_relations;

    auto train_raw = detail::read_fact_file(dir / "train.txt");
    auto valid_raw = detail::read_fact_file(dir / "valid.txt");
    auto test_raw = detail::read_fact_file(dir / "test.txt");

    // Validate ids against stat.txt, with line numbers.
    auto validate = [&](const std::vector<detail::RawFact>& facts, const char* name) {
        for (std::size_t i = 0; i < facts.size(); ++i) {
            const auto& f = facts[i];
            if (f.s >= num_entities || f.o >= num_entities)
                throw ValidationError(std::string(name) + ".txt:" + std::to_string(i + 1) +
                                      ": entity id >= declared count " + std::to_string(num_entities));
            if (f.r >= num_relations)
                throw ValidationError(std::string(name) + ".txt:" + std::to_string(i + 1) +
                                      ": relation id >= declared count " + std::to_string(num_relations));
        }
    };
    validate(train_raw, "train");
    validate(valid_raw, "valid");
    validate(test_raw, "test");

    // Timestamp normalization over the union of all splits.
    std::set<std::uint64_t> raw_times;
    for (const auto* v : {&train_raw, &valid_raw, &test_raw})
        for (const auto& f : *v) raw_times.insert(f.t);

    std::uint64_t min_raw = raw_times.empty() ? 0 : *raw_times.begin();
    std::uint64_t granularity = 0;
    std::uint64_t prev = 0;
    bool first = true;
    for (std::uint64_t t : raw_times) {
        if (!first) granularity = detail::gcd_u64(granularity, t - prev);
        prev = t;
        first = false;
    }
    if (granularity == 0) granularity = 1;
    ds.time_granularity = granularity;
    ds.min_raw_time = min_raw;

    auto normalize = [&](const std::vector<detail::RawFact>& raw, std::vector<Quadruple>& out) {
        out.reserve(raw.size());
        for (const auto& f : raw) {
            out.push_back(Quadruple{static_cast<std::uint32_t>(f.s), static_cast<std::uint32_t>(f.r),
                                    static_cast<std::uint32_t>(f.o),
                                    static_cast<std::uint32_t>((f.t - min_raw) / granularity)});
        }
    };
    normalize(train_raw, ds.train);
    normalize(valid_raw, ds.valid);
    normalize(test_raw, ds.test);

    // Split-order convention: train times < valid times < test times.
    auto time_range = [](const std::vector<Quadruple>& v) -> std::pair<std::uint32_t, std::uint32_t> {
        std::uint32_t lo = UINT32_MAX, hi = 0;
        for (const Quadruple& q : v) {
            lo = std::min(lo, q.time);
            hi = std::max(hi, q.time);
        }
        return {lo, hi};
    };
    if (!ds.train.empty() && !ds.valid.empty() && time_range(ds.train).second >= time_range(ds.valid).first)
        throw ValidationError("split convention violated: max(train time) >= min(valid time)");
    if (!ds.valid.empty() && !ds.test.empty() && time_range(ds.valid).second >= time_range(ds.test).first)
        throw ValidationError("split convention violated: max(valid time) >= min(test time)");
    if (!ds.train.empty() && ds.valid.empty() && !ds.test.empty() &&
        time_range(ds.train).second >= time_range(ds.test).first)
        throw ValidationError("split convention violated: max(train time) >= min(test time)");

    if (ds.valid.empty()) ds.warnings.push_back("valid split is empty");
    if (ds.test.empty()) ds.warnings.push_back("test split is empty");

    if (has_declared_ts) {
        std::set<std::uint32_t> norm_times;
        for (const auto* v : {&ds.train, &ds.valid, &ds.test})
            for (const Quadruple& q : *v) norm_times.insert(q.time);
        if (declared_timestamps != norm_times.size())
            ds.warnings.push_back("stat.txt declares " + std::to_string(declared_timestamps) +
                                  " timestamps, observed " + std::to_string(norm_times.size()));
    }

    // Relations that never occur in train score with untrained projections;
    // surface it rather than guessing intent.
    std::vector<bool> seen(num_relations, false);
    for (const Quadruple& q : ds.train) seen[q.relation] = true;
    std::set<std::uint32_t> unseen;
    for (const auto* v : {&ds.valid, &ds.test})
        for (const Quadruple& q : *v)
            if (!seen[q.relation]) unseen.insert(q.relation);
    if (!unseen.empty())
        ds.warnings.push_back(std::to_string(unseen.size()) +
                              " relation(s) appear in valid/test but never in train");

    // Optional JSON sidecar carries synthetic-rule metadata.
    std::ifstream meta(dir / "dataset.json");
    if (meta) {
        std::string key, val;
        // Parsed lazily by the CLI with a real JSON reader; here we only keep
        // the raw text so round-trips preserve it.
        std::stringstream buf;
        buf << meta.rdbuf();
        ds.metadata["dataset_json"] = buf.str();
    }
    return ds;
}

// For every (s, r, o, t) adds (o, r + num_base_relations, s, t). Doubles the
// relation vocabulary.
inline TkgDataset add_inverse_quadruples(TkgDataset ds) {
    if (ds.augmented) throw ContractError("add_inverse_quadruples: dataset already augmented");
    const std::uint32_t offset = static_cast<std::uint32_t>(ds.num_base_relations);
    for (auto* split : {&ds.train, &ds.valid, &ds.test}) {
        const std::size_t n = split->size();
        split->reserve(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const Quadruple& q = (*split)[i];
            split->push_back(Quadruple{q.object, q.relation + offset, q.subject, q.time});
        }
    }
    ds.augmented = true;
    return ds;
}

// One SnapshotGraph per distinct snapshot index present in the selected
// splits, ascending; edges sorted by (dst, rel, src).
inline std::vector<SnapshotGraph> build_snapshots(const TkgDataset& ds, Split selector = Split::all) {
    if (!ds.augmented) throw ContractError("build_snapshots: dataset must be augmented first");
    std::map<std::uint32_t, std::vector<SnapshotGraph::Edge>> by_time;
    auto take = [&](const std::vector<Quadruple>& v) {
        for (const Quadruple& q : v)
            by_time[q.time].push_back(SnapshotGraph::Edge{q.subject, q.relation, q.object});
    };
    if (selector == Split::all || selector == Split::train) take(ds.train);
    if (selector == Split::all || selector == Split::valid) take(ds.valid);
    if (selector == Split::all || selector == Split::test) take(ds.test);

    std::vector<SnapshotGraph> snapshots;
    snapshots.reserve(by_time.size());
    for (auto& [t, edges] : by_time) {
        SnapshotGraph g;
        g.time = t;
        g.edges = std::move(edges);
        std::sort(g.edges.begin(), g.edges.end(), [](const auto& a, const auto& b) {
            return std::tie(a.dst, a.rel, a.src) < std::tie(b.dst, b.rel, b.src);
        });
        g.in_degree.assign(ds.num_entities, 0);
        for (const auto& e : g.edges) ++g.in_degree[e.dst];
        g.dst_offsets.assign(ds.num_entities + 1, 0);
        for (const auto& e : g.edges) ++g.dst_offsets[e.dst + 1];
        for (std::size_t i = 1; i < g.dst_offsets.size(); ++i) g.dst_offsets[i] += g.dst_offsets[i - 1];
        snapshots.push_back(std::move(g));
    }
    return snapshots;
}

// The up-to-L snapshots with largest time strictly below t_q, ascending. May
// be shorter than L near the start; empty is allowed.
inline std::vector<const SnapshotGraph*> history_window(const std::vector<SnapshotGraph>& snapshots,
                                                        std::uint32_t t_q, std::size_t length) {
    if (length < 1) throw ConfigError("history_window: length must be >= 1");
    auto end = std::lower_bound(snapshots.begin(), snapshots.end(), t_q,
                                [](const SnapshotGraph& g, std::uint32_t t) { return g.time < t; });
    auto begin = end - std::min<std::ptrdiff_t>(end - snapshots.begin(), static_cast<std::ptrdiff_t>(length));
    std::vector<const SnapshotGraph*> window;
    for (auto it = begin; it != end; ++it) window.push_back(&*it);
    return window;
}

// Per-dataset defaults for the history window length.
inline std::size_t default_history_length(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    if (name.find("icews18") != std::string::npos) return 25;
    if (name.find("gdelt") != std::string::npos) return 15;
    return 10;  // WIKI, YAGO, everything else
}

inline FilterIndex build_filter_index(const TkgDataset& ds) {
    if (!ds.augmented) throw ContractError("build_filter_index: dataset must be augmented first");
    FilterIndex idx;
    for (const auto* split : {&ds.train, &ds.valid, &ds.test})
        for (const Quadruple& q : *split) idx.insert(q.subject, q.relation, q.time, q.object);
    idx.finalize();
    return idx;
}

// Applies a bijection over entity ids; relations and times untouched.
inline TkgDataset relabel_entities(TkgDataset ds, const std::vector<std::uint32_t>& permutation) {
    if (permutation.size() != ds.num_entities)
        throw ValidationError("relabel_entities: permutation size " + std::to_string(permutation.size()) +
                              " != num_entities " + std::to_string(ds.num_entities));
    std::vector<bool> hit(ds.num_entities, false);
    for (std::uint32_t v : permutation) {
        if (v >= ds.num_entities || hit[v]) throw ValidationError("relabel_entities: map is not a bijection");
        hit[v] = true;
    }
    for (auto* split : {&ds.train, &ds.valid, &ds.test})
        for (Quadruple& q : *split) {
            q.subject = permutation[q.subject];
            q.object = permutation[q.object];
        }
    return ds;
}

// ---- synthetic rule dataset ----

// Deterministic rule stream for acceptance-scale experiments. Chains of facts
// alternate between r_seed and r_next on a fixed (subject, object) pair: a
// chain injected as (a, r_seed, b, t0) implies (a, r_next, b, t0+1), which
// implies (a, r_seed, b, t0+2), and so on. Injections and chain expiries
// happen at train times only, so every valid/test fact is implied by the fact
// one step earlier and a rule-following scorer can reach filtered MRR 1.0.
struct SyntheticSpec {
    std::size_t num_entities = 20;
    std::size_t num_base_relations = 2;
    std::size_t num_timestamps = 30;
    std::size_t chains_per_step = 3;
    std::size_t chain_lifetime = 6;
    double train_fraction = 0.8;
    double valid_fraction = 0.1;
};

inline TkgDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.num_timestamps < 3) throw ValidationError("generate_synthetic: need at least 3 timestamps");
    if (spec.num_entities < 2) throw ValidationError("generate_synthetic: need at least 2 entities");
    if (spec.num_base_relations < 2) throw ValidationError("generate_synthetic: need at least 2 base relations");
    if (spec.chains_per_step < 1 || spec.chain_lifetime < 2)
        throw ValidationError("generate_synthetic: chains_per_step >= 1 and chain_lifetime >= 2 required");

    const std::size_t T = spec.num_timestamps;
    const auto train_end = static_cast<std::size_t>(spec.train_fraction * T);  // first valid time
    const auto valid_end = static_cast<std::size_t>((spec.train_fraction + spec.valid_fraction) * T);
    if (train_end < 1 || valid_end <= train_end || valid_end >= T)
        throw ValidationError("generate_synthetic: split fractions leave an empty split");

    RngStream rng = RngStream(seed).derive("synthetic");

    struct Chain {
        std::uint32_t a, b;
        std::size_t start, end;  // fact at times [start, end)
    };
    std::vector<Chain> chains;
    for (std::size_t t0 = 0; t0 < train_end; ++t0) {
        for (std::size_t c = 0; c < spec.chains_per_step; ++c) {
            const auto a = static_cast<std::uint32_t>(rng.next_below(spec.num_entities));
            auto b = static_cast<std::uint32_t>(rng.next_below(spec.num_entities - 1));
            if (b >= a) ++b;
            std::size_t end = t0 + spec.chain_lifetime;
            // A chain may only expire at a train time; otherwise it runs to the
            // last timestamp so the eval splits stay fully rule-implied.
            if (end >= train_end) end = T;
            chains.push_back(Chain{a, b, t0, end});
        }
    }

    const std::uint32_t r_seed = 0, r_next = 1;
    std::set<Quadruple> facts;
    for (const Chain& c : chains) {
        for (std::size_t t = c.start; t < c.end; ++t) {
            const std::uint32_t rel = ((t - c.start) % 2 == 0) ? r_seed : r_next;
            facts.insert(Quadruple{c.a, rel, c.b, static_cast<std::uint32_t>(t)});
        }
    }

    TkgDataset ds;
    ds.num_entities = spec.num_entities;
    ds.num_base_relations = spec.num_base_relations;
    for (const Quadruple& q : facts) {
        if (q.time < train_end)
            ds.train.push_back(q);
        else if (q.time < valid_end)
            ds.valid.push_back(q);
        else
            ds.test.push_back(q);
    }
    ds.metadata["rule"] = "alternating_implication";
    ds.metadata["rule_r_seed"] = std::to_string(r_seed);
    ds.metadata["rule_r_next"] = std::to_string(r_next);
    ds.metadata["chains_per_step"] = std::to_string(spec.chains_per_step);
    ds.metadata["chain_lifetime"] = std::to_string(spec.chain_lifetime);
    ds.metadata["seed"] = std::to_string(seed);
    return ds;
}

// ---- serialization ----

// Writes the canonical on-disk form: stat.txt, the three fact tables with
// normalized times, and dataset.json (versioned header + metadata).
inline void save_dataset(const TkgDataset& ds, const std::filesystem::path& dir) {
    if (ds.augmented) throw ContractError("save_dataset: refuse to serialize the augmented form");
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream stat(dir / "stat.txt");
        if (!stat) throw IoError("cannot write " + (dir / "stat.txt").string());
        std::set<std::uint32_t> times;
        for (const auto* v : {&ds.train, &ds.valid, &ds.test})
            for (const Quadruple& q : *v) times.insert(q.time);
        stat << ds.num_entities << '\t' << ds.num_base_relations << '\t' << times.size() << '\n';
    }
    auto write_split = [&](const std::vector<Quadruple>& v, const char* name) {
        std::ofstream out(dir / (std::string(name) + ".txt"));
        if (!out) throw IoError(std::string("cannot write ") + name + ".txt");
        for (const Quadruple& q : v)
            out << q.subject << '\t' << q.relation << '\t' << q.object << '\t' << q.time << '\n';
    };
    write_split(ds.train, "train");
    write_split(ds.valid, "valid");
    write_split(ds.test, "test");

    std::ofstream meta(dir / "dataset.json");
    if (!meta) throw IoError("cannot write dataset.json");
    meta << "{\n  \"format_version\": 1,\n  \"num_entities\": " << ds.num_entities
         << ",\n  \"num_base_relations\": " << ds.num_base_relations << ",\n  \"metadata\": {";
    bool first = true;
    for (const auto& [k, v] : ds.metadata) {
        if (k == "dataset_json") continue;
        if (!first) meta << ',';
        meta << "\n    \"" << k << "\": \"" << v << '"';
        first = false;
    }
    meta << "\n  }\n}\n";
}

// Average number of entities touching each snapshot (Table-4-style density).
inline double average_entities_per_snapshot(const TkgDataset& ds) {
    std::map<std::uint32_t, std::set<std::uint32_t>> per_time;
    for (const auto* v : {&ds.train, &ds.valid, &ds.test})
        for (const Quadruple& q : *v) {
            per_time[q.time].insert(q.subject);
            per_time[q.time].insert(q.object);
        }
    if (per_time.empty()) return 0.0;
    double total = 0.0;
    for (const auto& [t, ents] : per_time) total += static_cast<double>(ents.size());
    return total / static_cast<double>(per_time.size());
}

}  // namespace pathmem
