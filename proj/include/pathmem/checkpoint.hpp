#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pathmem/errors.hpp"
#include "pathmem/model.hpp"
#include "pathmem/rng.hpp"

namespace pathmem {

// Adam first/second moments, parallel to parameter_refs order.
struct AdamState {
    std::vector<DenseArray> m, v;
    std::uint64_t step = 0;
};

// Portable trained-model container. Contains no entity-indexed array, so the
// file size depends only on the relation vocabulary, dim and layer count.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string config_echo;  // canonical key=value text of the producing run
    std::uint64_t config_digest = 0;
    ModelParams params;
    bool has_moments = false;
    AdamState moments;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'P', 'M', 'C', 'K', 'P', 'T', '0', '\n'};

struct ByteSink {
    std::string bytes;

    void write_raw(const void* p, std::size_t n) {
        bytes.append(static_cast<const char*>(p), n);
    }
    void write_u32(std::uint32_t v) { write_raw(&v, 4); }
    void write_u64(std::uint64_t v) { write_raw(&v, 8); }
    void write_string(const std::string& s) {
        write_u64(s.size());
        write_raw(s.data(), s.size());
    }
    void write_array(const DenseArray& a) {
        write_u32(static_cast<std::uint32_t>(a.rank()));
        for (std::size_t d : a.shape()) write_u64(d);
        write_raw(a.data(), a.size() * sizeof(double));
    }
};

struct ByteSource {
    const std::string& bytes;
    std::size_t pos = 0;

    void read_raw(void* p, std::size_t n) {
        if (pos + n > bytes.size()) throw CheckpointError("checkpoint truncated");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    std::uint32_t read_u32() {
        std::uint32_t v;
        read_raw(&v, 4);
        return v;
    }
    std::uint64_t read_u64() {
        std::uint64_t v;
        read_raw(&v, 8);
        return v;
    }
    std::string read_string() {
        const std::uint64_t n = read_u64();
        if (pos + n > bytes.size()) throw CheckpointError("checkpoint truncated");
        std::string s(bytes.data() + pos, n);
        pos += n;
        return s;
    }
    DenseArray read_array() {
        const std::uint32_t rank = read_u32();
        if (rank > 4) throw CheckpointError("checkpoint array rank implausible");
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) shape[i] = read_u64();
        DenseArray a(shape);
        read_raw(a.data(), a.size() * sizeof(double));
        return a;
    }
};

inline std::uint64_t bytes_digest(const std::string& s) { return fnv1a64(s); }

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    detail::ByteSink sink;
    sink.write_raw(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    sink.write_u32(Checkpoint::kVersion);
    sink.write_u64(ckpt.config_digest);
    sink.write_string(ckpt.config_echo);
    sink.write_u64(ckpt.params.num_relations);
    sink.write_u64(ckpt.params.dim);
    sink.write_u64(ckpt.params.num_layers);

    std::vector<std::pair<std::string, const DenseArray*>> arrays;
    for_each_param(const_cast<ModelParams&>(ckpt.params),
                   [&](const std::string& name, DenseArray& a) { arrays.emplace_back(name, &a); });
    sink.write_u64(arrays.size());
    for (const auto& [name, arr] : arrays) {
        sink.write_string(name);
        sink.write_array(*arr);
    }

    sink.write_u32(ckpt.has_moments ? 1 : 0);
    if (ckpt.has_moments) {
        if (ckpt.moments.m.size() != arrays.size() || ckpt.moments.v.size() != arrays.size())
            throw ContractError("save_checkpoint: moment count does not match parameter count");
        sink.write_u64(ckpt.moments.step);
        for (const DenseArray& a : ckpt.moments.m) sink.write_array(a);
        for (const DenseArray& a : ckpt.moments.v) sink.write_array(a);
    }

    const std::uint64_t checksum = detail::bytes_digest(sink.bytes);
    sink.write_u64(checksum);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(sink.bytes.data(), static_cast<std::streamsize>(sink.bytes.size()));
    if (!out) throw IoError("short write on checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(detail::kCheckpointMagic) + 8) throw CheckpointError("checkpoint too small");

    const std::string payload = bytes.substr(0, bytes.size() - 8);
    std::uint64_t stored_checksum;
    std::memcpy(&stored_checksum, bytes.data() + bytes.size() - 8, 8);
    if (detail::bytes_digest(payload) != stored_checksum)
        throw CheckpointError("checkpoint checksum mismatch (file corrupted)");

    detail::ByteSource src{payload};
    char magic[sizeof(detail::kCheckpointMagic)];
    src.read_raw(magic, sizeof(magic));
    if (std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
        throw CheckpointError("not a checkpoint file");
    const std::uint32_t version = src.read_u32();
    if (version != Checkpoint::kVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(Checkpoint::kVersion) + ")");

    Checkpoint ckpt;
    ckpt.config_digest = src.read_u64();
    ckpt.config_echo = src.read_string();
    const std::uint64_t num_relations = src.read_u64();
    const std::uint64_t dim = src.read_u64();
    const std::uint64_t num_layers = src.read_u64();
    if (num_relations % 2 != 0) throw CheckpointError("checkpoint relation vocabulary must be even");

    ckpt.params = init_params(num_relations / 2, dim, num_layers, /*seed=*/0);
    const std::uint64_t array_count = src.read_u64();
    auto refs = parameter_refs(ckpt.params);
    if (array_count != refs.size()) throw CheckpointError("checkpoint array count mismatch");
    for (auto& [name, arr] : refs) {
        const std::string stored_name = src.read_string();
        if (stored_name != name)
            throw CheckpointError("checkpoint array '" + stored_name + "' where '" + name + "' expected");
        DenseArray a = src.read_array();
        if (!a.same_shape(*arr))
            throw CheckpointError("checkpoint array '" + name + "' has shape " + shape_str(a.shape()) +
                                  ", expected " + shape_str(arr->shape()));
        *arr = std::move(a);
    }

    ckpt.has_moments = src.read_u32() != 0;
    if (ckpt.has_moments) {
        ckpt.moments.step = src.read_u64();
        ckpt.moments.m.reserve(refs.size());
        ckpt.moments.v.reserve(refs.size());
        for (std::size_t i = 0; i < refs.size(); ++i) ckpt.moments.m.push_back(src.read_array());
        for (std::size_t i = 0; i < refs.size(); ++i) ckpt.moments.v.push_back(src.read_array());
    }
    if (src.pos != payload.size()) throw CheckpointError("checkpoint has trailing bytes");
    return ckpt;
}

// Guard for applying a checkpoint to a dataset: entity counts may differ by
// design, the relation schema may not.
inline void validate_checkpoint_for(const Checkpoint& ckpt, const TkgDataset& ds) {
    const std::size_t expected = 2 * ds.num_base_relations;
    if (ckpt.params.num_relations != expected)
        throw ValidationError("checkpoint relation vocabulary " + std::to_string(ckpt.params.num_relations) +
                              " does not match dataset's " + std::to_string(expected));
}

}  // namespace pathmem
