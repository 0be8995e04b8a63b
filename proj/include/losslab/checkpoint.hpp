#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "losslab/direction.hpp"
#include "losslab/model.hpp"

namespace losslab {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// On-disk unit of the binary container (bit-exact layout in docs/formats.md):
/// magic "LLABCKPT", u32 version, u64 spec-hash, i64 epoch, u64 count,
/// count little-endian f64 values, then a key/value metadata table.
struct CheckpointData {
    uint64_t spec_hash = 0;
    int64_t epoch = 0;
    std::vector<double> values;
    std::map<std::string, std::string> metadata;  // sorted keys give canonical bytes
};

void save_checkpoint(const std::string& path, const CheckpointData& c);
CheckpointData load_checkpoint(const std::string& path);

/// θ snapshot (weights and BN running buffers together).
void save_param_vector(const std::string& path, const ParamVector& theta, int64_t epoch,
                       std::map<std::string, std::string> extra = {});
/// Validates the stored spec hash against the model before rebinding metadata.
ParamVector load_param_vector(const std::string& path, const Model& model);

/// Directions reuse the container; scheme/seed/ignore ride in the metadata.
void save_direction(const std::string& path, const Direction& d);
Direction load_direction(const std::string& path, const Model& model);

}  // namespace losslab
