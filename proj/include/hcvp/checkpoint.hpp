#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcvp/adamw.hpp"
#include "hcvp/params.hpp"

namespace hcvp {

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

/// Everything needed to resume a run bit-exactly or evaluate it later.
///
/// On-disk layout (all integers and floats little-endian):
///   magic "HCVPCKPT" | u32 version | u64 step | u64 best_step | f64 best_val_accuracy
///   | str config_hash | str config_text
///   | u64 tensor_count | per tensor: str name, u32 rank, u64 dims[rank], f64 values[...]
///   | u64 adam_step | u64 moment_count | per moment pair: u64 n, f64 m[n], f64 v[n]
/// where str is u32 byte length followed by the bytes.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint64_t step = 0;
    std::uint64_t best_step = 0;
    double best_val_accuracy = 0.0;
    std::string config_hash;
    std::string config_text;
    std::vector<StoredTensor> tensors;
    AdamW::State optimizer;

    const StoredTensor* find(const std::string& name) const;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

std::vector<StoredTensor> store(const ParamList& params);
/// Copies stored values into matching tensors; every tensor in `params` must be present.
void restore(const std::vector<StoredTensor>& stored, const ParamList& params);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& text);
std::string file_hash(const std::filesystem::path& path);

} // namespace hcvp
