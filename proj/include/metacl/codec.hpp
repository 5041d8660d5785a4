#pragma once
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metacl/tensor.hpp"

namespace metacl {

// One named parameter tensor. Names ending in ".running_mean"/".running_var"
// hold batch-norm statistics and are excluded from gradient-based updates but
// flattened, chunked and checkpointed along with everything else.
struct ParamEntry {
    std::string name;
    Tensor value;
    bool trainable = true;
};

bool trainable_by_name(std::string_view name);

// An ordered collection of named parameters. The entry order is the layout
// manifest: it is fixed at construction and defines the flattening order.
struct ParamSet {
    std::vector<ParamEntry> entries;

    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;
    bool has(std::string_view name) const;
    int64_t total_len() const;
};

bool bitwise_equal(const ParamSet& a, const ParamSet& b);

// The full parameter collection of one Semi-ACGAN instance.
using ModelParams = ParamSet;

struct ManifestEntry {
    std::string name;
    Shape shape;
    bool operator==(const ManifestEntry&) const = default;
};

struct WeightVector {
    std::vector<double> values;
    std::vector<ManifestEntry> manifest;
    int64_t total_len() const { return int64_t(values.size()); }
};

struct ChunkSet {
    int64_t chunk_size = 0;
    std::vector<std::vector<double>> chunks;  // every chunk has length chunk_size
    int64_t pad_len = 0;                      // trailing zeros in the last chunk
    std::vector<ManifestEntry> manifest;      // carried along for reassembly
};

WeightVector flatten(const ParamSet& params);
ParamSet unflatten(const WeightVector& w);

ChunkSet chunk(const WeightVector& w, int64_t chunk_size);
WeightVector unchunk(const ChunkSet& c);

// Binary checkpoint container: magic "MCWT", version u16, manifest
// (u32 entry count; per entry u16 name length + UTF-8 bytes, u8 rank,
// u32 dims), then all values as little-endian 64-bit floats in manifest
// order.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace metacl
