#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "losslab/direction.hpp"
#include "losslab/surface.hpp"
#include "losslab/trainer.hpp"

namespace losslab {

/// An optimizer path projected onto its two most explanatory directions.
/// The final checkpoint is the origin. Directions live on weight-kind
/// entries only and are orthonormal; projection always happens in this
/// exact basis, and filter normalization touches only the copies used to
/// render a surface.
struct PCAProjection {
    Direction dir1, dir2;         // unit length, mutually orthogonal
    std::vector<int64_t> epochs;  // one entry per checkpoint, final included
    std::vector<double> u, v;     // coordinates; the final checkpoint is (0,0)
    double var1 = 0.0, var2 = 0.0;   // explained-variance fractions
    std::vector<int64_t> lr_drops;   // epochs at whose start a drop fired
    bool degenerate = false;  // fewer than two nonzero singular values
};

/// Top-2 right singular directions of the difference matrix
/// [θ_0 − θ_n; …; θ_{n−1} − θ_n] over weight-kind entries, computed through
/// the small n×n Gram matrix. Needs at least 3 checkpoints. Variance
/// fractions are σ_k²/Σσ_i². A rank-deficient path sets degenerate and
/// leaves dir2 zero.
PCAProjection pca_directions(const TrajectoryRecord& rec);

struct Coords2D {
    std::vector<double> u, v;
};

/// (u_i, v_i) = ((θ_i − θ_n)·e1, (θ_i − θ_n)·e2) for every checkpoint; the
/// final point maps to the origin. The pair must be orthonormal.
Coords2D project(const TrajectoryRecord& rec, const Direction& e1, const Direction& e2);

/// Fraction of the path's total squared deviation from θ_n (over weight-kind
/// entries) captured by the plane of the orthonormal pair. Equals
/// var1 + var2 for the PCA pair; 0 for a zero-length path.
double captured_variance(const TrajectoryRecord& rec, const Direction& e1, const Direction& e2);

struct TrajSurface {
    LossGrid grid;  // over the PCA plane; 1d along dir1 when degenerate
    std::vector<int64_t> epochs;
    std::vector<double> u, v;  // exact projection coordinates for overlay
    std::vector<uint8_t> is_lr_drop;
    double var1 = 0.0, var2 = 0.0;
};

/// Loss surface over the PCA plane through θ_n, evaluated along
/// filter-normalized copies of the directions (rendering only; the overlay
/// keeps the exact orthonormal coordinates). A degenerate projection falls
/// back to a 1D slice along dir1 and ax1 is ignored.
TrajSurface trajectory_surface(const Model& model, const TrajectoryRecord& rec,
                               const PCAProjection& proj, AxisSpec ax0, AxisSpec ax1,
                               const TrainTest& data, const EvalOptions& opts = {});

/// CSV `epoch,u,v,is_lr_drop` with the variance fractions in the header.
/// Directions are not stored here (persist them with save_direction); the
/// reader leaves dir1/dir2 empty.
void write_projection_csv(const std::string& path, const PCAProjection& proj);
PCAProjection read_projection_csv(const std::string& path);

}  // namespace losslab
