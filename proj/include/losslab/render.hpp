#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "losslab/curvature.hpp"
#include "losslab/surface.hpp"
#include "losslab/trainer.hpp"
#include "losslab/trajectory.hpp"

namespace losslab {

// Deterministic SVG renderers for the artifacts the rest of the library
// produces: 1d profiles, 2d contour and heat maps, eigenvalue-ratio maps,
// trajectory overlays, weight histograms, and norm curves. Every emitter is
// a pure function of its inputs; identical inputs give byte-identical SVG.

enum class PlotKind : uint8_t {
    line_1d,
    contour_2d,
    heat_2d,
    trajectory_overlay,
    histogram,
    norm_curve,
};
const char* to_string(PlotKind k);
PlotKind plot_kind_from(const std::string& name);

enum class Transform : uint8_t { linear, log };
const char* to_string(Transform t);
Transform transform_from(const std::string& name);

// Which of the four per-cell statistics a renderer reads.
enum class GridChannel : uint8_t { train_loss, train_err, test_loss, test_err };
const char* to_string(GridChannel c);
GridChannel channel_from(const std::string& name);
const std::vector<double>& channel_values(const LossGrid& grid, GridChannel c);

struct RenderSpec {
    PlotKind kind = PlotKind::contour_2d;

    /// Explicit contour levels, strictly increasing. Empty means derive
    /// level_count levels between the grid minimum and level_cap.
    std::vector<double> levels;
    int level_count = 9;
    double level_cap = 10.0;

    /// log spaces derived levels geometrically and scales heat ramps and 1d
    /// y axes logarithmically; it requires the plotted values to be
    /// positive. Overflow-flagged cells are excluded from that check.
    Transform transform = Transform::linear;

    GridChannel channel = GridChannel::train_loss;

    std::string title;
    int width = 720;
    int height = 560;

    /// Throws std::invalid_argument on out-of-range sizes, a non-increasing
    /// level list, or a non-finite cap.
    void validate() const;
};

/// One isoline in axis coordinates. closed means the last point connects
/// back to the first (the first point is not repeated).
struct Polyline {
    std::vector<std::pair<double, double>> pts;
    bool closed = false;
};

/// Marching-squares isolines of one channel at one level, in axis
/// coordinates. Overflow-flagged cells count as above every level. The
/// saddle ambiguity is resolved by the cell-center average. Crossings on an
/// edge shared by two cells are computed once in a canonical orientation,
/// so segment endpoints match bitwise and chain into maximal polylines.
std::vector<Polyline> contour_lines(const LossGrid& grid, double level,
                                    GridChannel channel = GridChannel::train_loss);

/// Levels derived from the data: level_count values strictly between the
/// channel minimum and level_cap, geometrically spaced under log and evenly
/// under linear. Throws when the grid has no unflagged finite cells or when
/// log is requested on non-positive data.
std::vector<double> default_levels(const LossGrid& grid, const RenderSpec& spec);

/// Length of the maximal contiguous interval around alpha = 0 where
/// train_loss stays below level, crossings linearly interpolated between
/// grid points. The profile point nearest alpha = 0 must lie below the
/// level, otherwise std::invalid_argument. Sides that never rise to the
/// level extend to the axis bounds.
double width_at_level(const LossGrid& grid, double level);

std::string line_svg(const LossGrid& grid, const RenderSpec& spec);
std::string contour_svg(const LossGrid& grid, const RenderSpec& spec);
std::string heat_svg(const LossGrid& grid, const RenderSpec& spec);
std::string ratio_heat_svg(const EigRatioMap& map, const RenderSpec& spec);
std::string trajectory_svg(const TrajSurface& ts, const RenderSpec& spec);
std::string histogram_svg(const Histogram& h, const RenderSpec& spec);
std::string norm_curve_svg(const std::vector<double>& norms, const RenderSpec& spec);

}  // namespace losslab
