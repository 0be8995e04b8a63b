#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "losslab/data.hpp"
#include "losslab/direction.hpp"
#include "losslab/model.hpp"

namespace losslab {

/// Uniformly spaced closed interval, endpoints included.
struct AxisSpec {
    double min = -1.0;
    double max = 1.0;
    int64_t steps = 401;

    void validate() const;  // min < max, steps >= 2
    double at(int64_t i) const {
        const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
        return min * (1.0 - t) + max * t;
    }
    /// "min:max:steps" with 17-significant-digit floats; parse() inverts it.
    std::string str() const;
    static AxisSpec parse(const std::string& s);

    bool operator==(const AxisSpec&) const = default;
};

struct CellStats {
    double train_loss = 0.0, train_err = 0.0;
    double test_loss = 0.0, test_err = 0.0;
};

/// Non-finite losses are recorded as this sentinel with the cell flagged;
/// renderers treat flagged cells as above every contour level.
constexpr double kOverflowSentinel = 1e30;

enum class DirType : uint8_t { weights, states };
const char* to_string(DirType t);
DirType dir_type_from(const std::string& name);

struct DirProvenance {
    uint64_t seed = 0;
    std::string scheme = "none";
    std::string ignore = "biasbn";
    std::string source = "sampled";  // sampled | difference | pca
};

struct GridMeta {
    uint64_t model_hash = 0;
    uint64_t theta_digest = 0;  // fnv-1a over the center θ bytes
    DirType dirtype = DirType::weights;
    std::vector<DirProvenance> dirs;
    std::string note;
};

/// Loss and error per grid cell, row-major with axis 0 outermost.
struct LossGrid {
    std::vector<AxisSpec> axes;  // size 1 or 2
    std::vector<double> train_loss, train_err, test_loss, test_err;
    std::vector<uint8_t> overflow;  // per-cell flag, same layout as the values
    int64_t overflow_cells = 0;
    GridMeta meta;

    int64_t cells() const;
    size_t at(int64_t i, int64_t j = 0) const;  // flat index
};

struct EvalOptions {
    bool parallel = true;    // OpenMP over cells; serial path is the test reference
    int64_t chunk = 512;     // dataset evaluation chunk size
    int64_t subsample = 0;   // 0 = full dataset, else a deterministic prefix per split
};

/// The geometry kernel: f(α) or f(α, β) sampled over the axes. The callable
/// owns the parameter construction and dataset evaluation; it must be
/// re-entrant, since cells are independent work items. Overflow capping and
/// flagging happen here so every public op shares one contract.
using SliceFn = std::function<CellStats(double alpha, double beta)>;

LossGrid eval_slice_1d(AxisSpec axis, const SliceFn& fn, bool parallel = true);
LossGrid eval_slice_2d(AxisSpec ax0, AxisSpec ax1, const SliceFn& fn, bool parallel = true);

/// Linear path (1-α)θ_a + αθ_b evaluated per cell. dirtype weights pins BN
/// running buffers to θ_a's values along the whole path; dirtype states
/// interpolates them with everything else, giving f(1) = L(θ_b) exactly.
LossGrid interpolate_1d(const Model& model, const ParamVector& theta_a, const ParamVector& theta_b,
                        AxisSpec axis, const TrainTest& data, DirType dirtype = DirType::states,
                        const EvalOptions& opts = {});

/// f(α) = L(θ* + αδ). BN running buffers ride along unperturbed because
/// directions never carry running-stat components.
LossGrid ray_1d(const Model& model, const ParamVector& center, const Direction& delta,
                AxisSpec axis, const TrainTest& data, const EvalOptions& opts = {});

/// f(α, β) = L(θ* + αδ + βη). Rejects a degenerate plane: identical seeds
/// with identical sampling settings, or bitwise-equal direction vectors.
LossGrid grid_2d(const Model& model, const ParamVector& center, const Direction& delta,
                 const Direction& eta, AxisSpec ax0, AxisSpec ax1, const TrainTest& data,
                 const EvalOptions& opts = {});

/// One filter-normalized ray per seed around the same center. Duplicate
/// seeds are allowed and produce identical grids.
std::vector<LossGrid> repeat_study(const Model& model, const ParamVector& center,
                                   std::span<const uint64_t> seeds, AxisSpec axis,
                                   const TrainTest& data, const EvalOptions& opts = {});

/// Self-describing text header ('#'-prefixed key = value lines, axes, seeds,
/// hashes) followed by a CSV body `alpha[,beta],train_loss,train_err,
/// test_loss,test_err` at 17 significant digits. Writing is byte-deterministic
/// and read_grid_csv() restores every value bit-exactly.
void write_grid_csv(const std::string& path, const LossGrid& grid);
LossGrid read_grid_csv(const std::string& path);

struct GridFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace losslab
