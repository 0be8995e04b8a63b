#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "losslab/data.hpp"
#include "losslab/direction.hpp"
#include "losslab/model.hpp"
#include "losslab/surface.hpp"

namespace losslab {

/// y = H x for a symmetric linear operator; must be re-entrant.
using HvpFn = std::function<std::vector<double>(std::span<const double>)>;

struct LanczosSettings {
    int64_t iterations = 100;  // capped at the operator dimension
    double tol = 1e-6;         // relative residual for the extremal Ritz pairs
    uint64_t seed = 0;
    int max_fresh_starts = 8;  // fresh vectors drawn after Krylov breakdowns

    std::string str() const;  // "k=.. tol=.. seed=.." for metadata lines
};

struct Extremal {
    double lmin = 0.0;
    double lmax = 0.0;
    double residual_min = 0.0;  // relative residuals of the returned pairs
    double residual_max = 0.0;
    int64_t iterations_used = 0;
    bool converged = false;
};

/// Extremal eigenvalues by Lanczos with full reorthogonalization. On Krylov
/// breakdown before the space is exhausted, a fresh random vector orthogonal
/// to the existing basis continues the factorization (the tridiagonal matrix
/// becomes block diagonal and its Ritz values stay exact), bounded by
/// max_fresh_starts. A non-symmetric oracle (uᵀHv vs vᵀHu drift beyond 1e-8
/// relative) throws.
Extremal lanczos_extremal(const HvpFn& hvp, int64_t dim, const LanczosSettings& s = {});

/// Number of weight-kind coordinates; the Hessian is defined over these only.
int64_t weight_dim(const ParamMeta& meta);

/// HVP oracle of the mean training loss at θ, restricted to weight-kind
/// coordinates (inference-mode evaluation, BN buffers and biases held
/// constant). Chunked over the dataset with exact mean recombination.
HvpFn weight_hessian_oracle(const Model& model, const ParamVector& theta, const Dataset& data,
                            int64_t chunk = 512);

struct EigRatioMap {
    std::vector<AxisSpec> axes;  // always 2
    std::vector<double> lmin, lmax, ratio;
    std::vector<uint8_t> converged;
    LanczosSettings settings;
    GridMeta meta;

    int64_t cells() const { return axes[0].steps * axes[1].steps; }
    size_t at(int64_t i, int64_t j) const { return static_cast<size_t>(i * axes[1].steps + j); }
};

/// |λ_min/λ_max| per cell of the plane θ* + αδ + βη, evaluated on the given
/// split. When a companion LossGrid is passed, its plane (axes, center
/// digest, direction provenance) must match exactly. ratio is 0 when both
/// eigenvalues are 0 and +inf when only λ_max is.
EigRatioMap ratio_map(const Model& model, const ParamVector& center, const Direction& delta,
                      const Direction& eta, AxisSpec ax0, AxisSpec ax1, const Dataset& data,
                      const LanczosSettings& ls = {}, const EvalOptions& opts = {},
                      const LossGrid* companion = nullptr);

/// Same container shape as the grid CSV with value columns lmin,lmax,ratio.
/// Per-cell convergence flags are summarized as a header count and are not
/// recoverable from the file; the reader marks every cell converged.
void write_ratio_csv(const std::string& path, const EigRatioMap& map);
EigRatioMap read_ratio_csv(const std::string& path);

}  // namespace losslab
