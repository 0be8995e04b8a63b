#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "losslab/tensor.hpp"

namespace losslab {

struct Dataset {
    Tensor features;  // [N,D] or [N,C,H,W]
    std::vector<int> labels;
    int64_t classes = 2;
    std::string split = "train";

    int64_t size() const { return features.dim(0); }
    int64_t sample_numel() const { return features.numel() / features.dim(0); }
};

struct Batch {
    Tensor x;
    std::vector<int> labels;
};

/// Rows at the given indices, in the given order.
Batch gather(const Dataset& d, std::span<const size_t> idx);
/// Contiguous rows [begin, begin+count).
Batch chunk(const Dataset& d, int64_t begin, int64_t count);
/// The first min(n, size) rows as a dataset; the deterministic subsample
/// used by surface and curvature evaluation.
Dataset prefix(const Dataset& d, int64_t n);

enum class SyntheticKind { two_moons, gaussian_blobs, spirals };

SyntheticKind synthetic_kind_from(const std::string& name);
const char* to_string(SyntheticKind k);

/// Deterministic 2-class point clouds in the plane. Classes are balanced
/// (|n0 - n1| <= 1, class 0 first) and the draw order is fixed, so a seed
/// pins the dataset bit-for-bit.
Dataset make_synthetic(SyntheticKind kind, int64_t n, double noise, uint64_t seed,
                       std::string split = "train");

struct TrainTest {
    Dataset train, test;
};

/// Train/test pair from one seed; the two splits use decorrelated sub-seeds
/// so they are disjoint draws of the same distribution.
TrainTest make_synthetic_pair(SyntheticKind kind, int64_t n_train, int64_t n_test, double noise,
                              uint64_t seed);

// IDX loader failure kinds, distinct so callers can tell a wrong file from a
// damaged one
struct IdxError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IdxBadMagic : IdxError {
    using IdxError::IdxError;
};
struct IdxTruncated : IdxError {
    using IdxError::IdxError;
};
struct IdxCountMismatch : IdxError {
    using IdxError::IdxError;
};

/// IDX image+label pair (the MNIST container format): big-endian headers,
/// magic 0x00000803 (images) / 0x00000801 (labels). Pixels scale to [0,1]
/// by /255; features come out as [N,1,H,W].
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::string split = "train");

}  // namespace losslab
