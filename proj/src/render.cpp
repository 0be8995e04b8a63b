#include "losslab/render.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "losslab/util.hpp"

namespace losslab {

const char* to_string(PlotKind k) {
    switch (k) {
        case PlotKind::line_1d: return "line-1d";
        case PlotKind::contour_2d: return "contour-2d";
        case PlotKind::heat_2d: return "heat-2d";
        case PlotKind::trajectory_overlay: return "trajectory-overlay";
        case PlotKind::histogram: return "histogram";
        case PlotKind::norm_curve: return "norm-curve";
    }
    return "?";
}

PlotKind plot_kind_from(const std::string& name) {
    if (name == "line-1d") return PlotKind::line_1d;
    if (name == "contour-2d") return PlotKind::contour_2d;
    if (name == "heat-2d") return PlotKind::heat_2d;
    if (name == "trajectory-overlay") return PlotKind::trajectory_overlay;
    if (name == "histogram") return PlotKind::histogram;
    if (name == "norm-curve") return PlotKind::norm_curve;
    throw std::invalid_argument("unknown plot kind: " + name);
}

const char* to_string(Transform t) { return t == Transform::log ? "log" : "linear"; }

Transform transform_from(const std::string& name) {
    if (name == "linear") return Transform::linear;
    if (name == "log") return Transform::log;
    throw std::invalid_argument("unknown transform: " + name);
}

const char* to_string(GridChannel c) {
    switch (c) {
        case GridChannel::train_loss: return "train_loss";
        case GridChannel::train_err: return "train_err";
        case GridChannel::test_loss: return "test_loss";
        case GridChannel::test_err: return "test_err";
    }
    return "?";
}

GridChannel channel_from(const std::string& name) {
    if (name == "train_loss") return GridChannel::train_loss;
    if (name == "train_err") return GridChannel::train_err;
    if (name == "test_loss") return GridChannel::test_loss;
    if (name == "test_err") return GridChannel::test_err;
    throw std::invalid_argument("unknown grid channel: " + name);
}

const std::vector<double>& channel_values(const LossGrid& grid, GridChannel c) {
    switch (c) {
        case GridChannel::train_loss: return grid.train_loss;
        case GridChannel::train_err: return grid.train_err;
        case GridChannel::test_loss: return grid.test_loss;
        case GridChannel::test_err: return grid.test_err;
    }
    return grid.train_loss;
}

void RenderSpec::validate() const {
    if (width < 64 || width > 8192 || height < 64 || height > 8192)
        throw std::invalid_argument("render: canvas size out of range [64, 8192]");
    if (level_count < 1 || level_count > 64)
        throw std::invalid_argument("render: level_count out of range [1, 64]");
    if (!std::isfinite(level_cap)) throw std::invalid_argument("render: level_cap must be finite");
    for (double l : levels)
        if (!std::isfinite(l)) throw std::invalid_argument("render: levels must be finite");
    for (size_t i = 0; i + 1 < levels.size(); ++i)
        if (!(levels[i] < levels[i + 1]))
            throw std::invalid_argument("render: levels must be strictly increasing");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct P {
    double x = 0.0, y = 0.0;
};

// Segment endpoints are matched on exact bit patterns: both cells sharing an
// edge compute the crossing with identical operands, so chained polylines
// need no tolerance.
struct PKey {
    uint64_t x, y;
    bool operator==(const PKey&) const = default;
};

struct PKeyHash {
    size_t operator()(const PKey& k) const {
        return static_cast<size_t>(fnv1a64(&k, sizeof(k)));
    }
};

PKey key_of(const P& p) { return {std::bit_cast<uint64_t>(p.x), std::bit_cast<uint64_t>(p.y)}; }

struct Seg {
    P a, b;
};

std::vector<Polyline> chain_segments(const std::vector<Seg>& segs) {
    std::unordered_map<PKey, std::vector<int>, PKeyHash> at_point;
    for (size_t s = 0; s < segs.size(); ++s) {
        at_point[key_of(segs[s].a)].push_back(static_cast<int>(s));
        at_point[key_of(segs[s].b)].push_back(static_cast<int>(s));
    }
    std::vector<char> used(segs.size(), 0);
    auto take_at = [&](const PKey& k, P& next) {
        auto it = at_point.find(k);
        if (it == at_point.end()) return false;
        for (int sid : it->second) {
            if (used[sid]) continue;
            used[sid] = 1;
            next = (key_of(segs[sid].a) == k) ? segs[sid].b : segs[sid].a;
            return true;
        }
        return false;
    };

    std::vector<Polyline> out;
    for (size_t s0 = 0; s0 < segs.size(); ++s0) {
        if (used[s0]) continue;
        used[s0] = 1;
        std::deque<P> pts{segs[s0].a, segs[s0].b};
        bool closed = false;
        while (true) {
            P next;
            if (!take_at(key_of(pts.back()), next)) break;
            if (key_of(next) == key_of(pts.front())) {
                closed = true;
                break;
            }
            pts.push_back(next);
        }
        while (!closed) {
            P next;
            if (!take_at(key_of(pts.front()), next)) break;
            if (key_of(next) == key_of(pts.back())) {
                closed = true;
                break;
            }
            pts.push_front(next);
        }
        Polyline pl;
        pl.pts.reserve(pts.size());
        for (const P& p : pts) pl.pts.emplace_back(p.x, p.y);
        pl.closed = closed;
        out.push_back(std::move(pl));
    }
    return out;
}

}  // namespace

std::vector<Polyline> contour_lines(const LossGrid& grid, double level, GridChannel channel) {
    if (grid.axes.size() != 2)
        throw std::invalid_argument("contour_lines: a 2d grid is required");
    if (!std::isfinite(level)) throw std::invalid_argument("contour_lines: level must be finite");
    const std::vector<double>& vals = channel_values(grid, channel);
    const AxisSpec& ax0 = grid.axes[0];
    const AxisSpec& ax1 = grid.axes[1];

    auto value = [&](int64_t i, int64_t j) {
        const size_t idx = grid.at(i, j);
        if (grid.overflow[idx]) return kInf;
        const double v = vals[idx];
        return std::isnan(v) ? kInf : v;
    };
    // Canonical orientation: horizontal edges left-to-right, vertical edges
    // bottom-to-top, no matter which cell asks. On a horizontal edge the two
    // y operands are equal, so the interpolated y is exactly the grid line
    // (and likewise x on vertical edges): every vertex lies on a cell edge.
    auto crossing = [&](int64_t ia, int64_t ja, int64_t ib, int64_t jb) {
        const double va = value(ia, ja), vb = value(ib, jb);
        // a flagged corner is infinitely above the level: the crossing sits
        // on the finite endpoint
        const double t = std::isinf(va) ? 1.0
                         : std::isinf(vb) ? 0.0
                                          : std::clamp((level - va) / (vb - va), 0.0, 1.0);
        const double xa = ax0.at(ia), xb = ax0.at(ib);
        const double ya = ax1.at(ja), yb = ax1.at(jb);
        return P{xa + t * (xb - xa), ya + t * (yb - ya)};
    };

    std::vector<Seg> segs;
    for (int64_t i = 0; i + 1 < ax0.steps; ++i) {
        for (int64_t j = 0; j + 1 < ax1.steps; ++j) {
            const double va = value(i, j), vb = value(i + 1, j);
            const double vc = value(i + 1, j + 1), vd = value(i, j + 1);
            const bool A = va >= level, B = vb >= level, C = vc >= level, D = vd >= level;
            // edge order: 0 = ab (bottom), 1 = bc (right), 2 = cd (top), 3 = da (left)
            const bool cross[4] = {A != B, B != C, C != D, D != A};
            P pt[4];
            if (cross[0]) pt[0] = crossing(i, j, i + 1, j);
            if (cross[1]) pt[1] = crossing(i + 1, j, i + 1, j + 1);
            if (cross[2]) pt[2] = crossing(i, j + 1, i + 1, j + 1);
            if (cross[3]) pt[3] = crossing(i, j, i, j + 1);

            const int ncross = cross[0] + cross[1] + cross[2] + cross[3];
            auto add = [&](int e0, int e1) {
                if (key_of(pt[e0]) == key_of(pt[e1])) return;  // grazing corner
                segs.push_back({pt[e0], pt[e1]});
            };
            if (ncross == 2) {
                int e0 = -1, e1 = -1;
                for (int e = 0; e < 4; ++e)
                    if (cross[e]) (e0 < 0 ? e0 : e1) = e;
                add(e0, e1);
            } else if (ncross == 4) {
                // Saddle: the cell-center average decides which diagonal the
                // above-level region connects across.
                const bool center_above = 0.25 * (va + vb + vc + vd) >= level;
                const bool connect_ac = (A && C) == center_above;
                if (connect_ac) {
                    add(0, 1);  // isoline hugs corner b
                    add(2, 3);  // and corner d
                } else {
                    add(0, 3);  // hugs corner a
                    add(1, 2);  // and corner c
                }
            }
        }
    }
    return chain_segments(segs);
}

std::vector<double> default_levels(const LossGrid& grid, const RenderSpec& spec) {
    const std::vector<double>& vals = channel_values(grid, spec.channel);
    double vmin = kInf, vmax = -kInf;
    for (size_t i = 0; i < vals.size(); ++i) {
        if (grid.overflow[i] || !std::isfinite(vals[i])) continue;
        vmin = std::min(vmin, vals[i]);
        vmax = std::max(vmax, vals[i]);
    }
    if (!std::isfinite(vmin))
        throw std::invalid_argument("default_levels: the grid has no unflagged cells");
    if (spec.transform == Transform::log && vmin <= 0.0)
        throw std::invalid_argument("render: log transform requires positive values");
    double hi = spec.level_cap;
    if (!(hi > vmin)) hi = (vmax > vmin) ? vmax : vmin + std::max(1.0, std::fabs(vmin));

    std::vector<double> levels;
    levels.reserve(static_cast<size_t>(spec.level_count));
    for (int k = 1; k <= spec.level_count; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(spec.level_count + 1);
        if (spec.transform == Transform::log)
            levels.push_back(std::exp(std::log(vmin) + t * (std::log(hi) - std::log(vmin))));
        else
            levels.push_back(vmin + t * (hi - vmin));
    }
    return levels;
}

double width_at_level(const LossGrid& grid, double level) {
    if (grid.axes.size() != 1)
        throw std::invalid_argument("width_at_level: a 1d profile is required");
    if (!std::isfinite(level)) throw std::invalid_argument("width_at_level: level must be finite");
    const AxisSpec& ax = grid.axes[0];
    auto value = [&](int64_t i) {
        return grid.overflow[grid.at(i)] ? kInf : grid.train_loss[grid.at(i)];
    };

    int64_t i0 = 0;
    for (int64_t i = 1; i < ax.steps; ++i)
        if (std::fabs(ax.at(i)) < std::fabs(ax.at(i0))) i0 = i;
    if (!(value(i0) < level))
        throw std::invalid_argument("width_at_level: the profile center is not below the level (" +
                                    fmt17(value(i0)) + " >= " + fmt17(level) + ")");

    auto cross_at = [&](int64_t in, int64_t out) {
        const double vin = value(in), vout = value(out);
        const double t = std::clamp((level - vin) / (vout - vin), 0.0, 1.0);
        return ax.at(in) + t * (ax.at(out) - ax.at(in));
    };
    double left = ax.min;
    for (int64_t i = i0; i > 0; --i) {
        if (value(i - 1) >= level) {
            left = cross_at(i, i - 1);
            break;
        }
    }
    double right = ax.max;
    for (int64_t i = i0; i + 1 < ax.steps; ++i) {
        if (value(i + 1) >= level) {
            right = cross_at(i, i + 1);
            break;
        }
    }
    return right - left;
}

// ---------------------------------------------------------------------------
// SVG emission. Every number goes through a fixed snprintf format and no
// emitter reads anything but its arguments, so output bytes are a pure
// function of the inputs.

namespace {

std::string fpx(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fg4(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string esc(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '&')
            out += "&amp;";
        else if (c == '<')
            out += "&lt;";
        else if (c == '>')
            out += "&gt;";
        else
            out += c;
    }
    return out;
}

struct Frame {
    double x0, x1, y0, y1;      // data ranges
    double px, py, pw, ph;      // plot rectangle in pixels
    double X(double x) const { return px + (x - x0) / (x1 - x0) * pw; }
    double Y(double y) const { return py + (y1 - y) / (y1 - y0) * ph; }
};

Frame make_frame(const RenderSpec& spec, double x0, double x1, double y0, double y1) {
    const double ml = 56.0, mr = 16.0, mb = 40.0;
    const double mt = spec.title.empty() ? 16.0 : 34.0;
    return Frame{x0, x1, y0, y1, ml, mt, spec.width - ml - mr, spec.height - mt - mb};
}

std::string svg_open(const RenderSpec& spec) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(spec.width) + "\" height=\"" + std::to_string(spec.height) +
                    "\" viewBox=\"0 0 " + std::to_string(spec.width) + " " +
                    std::to_string(spec.height) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    if (!spec.title.empty())
        s += "<text x=\"" + fpx(spec.width / 2.0) +
             "\" y=\"20\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"13\">" +
             esc(spec.title) + "</text>\n";
    return s;
}

std::string text_at(double x, double y, const std::string& anchor, const std::string& content,
                    const std::string& fill = "#333333") {
    return "<text x=\"" + fpx(x) + "\" y=\"" + fpx(y) + "\" text-anchor=\"" + anchor +
           "\" font-family=\"monospace\" font-size=\"11\" fill=\"" + fill + "\">" + content +
           "</text>\n";
}

std::string frame_box(const Frame& f, const std::string& xlab, const std::string& ylab) {
    std::string s = "<rect x=\"" + fpx(f.px) + "\" y=\"" + fpx(f.py) + "\" width=\"" + fpx(f.pw) +
                    "\" height=\"" + fpx(f.ph) +
                    "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    s += text_at(f.px, f.py + f.ph + 16.0, "middle", fg4(f.x0));
    s += text_at(f.px + f.pw, f.py + f.ph + 16.0, "middle", fg4(f.x1));
    s += text_at(f.px + f.pw / 2.0, f.py + f.ph + 30.0, "middle", esc(xlab));
    s += text_at(f.px - 6.0, f.py + f.ph, "end", fg4(f.y0));
    s += text_at(f.px - 6.0, f.py + 10.0, "end", fg4(f.y1));
    s += text_at(f.px - 6.0, f.py + f.ph / 2.0, "end", esc(ylab));
    return s;
}

std::string rgb(double r, double g, double b) {
    auto q = [](double v) { return std::to_string(static_cast<int>(std::lround(v))); };
    return "rgb(" + q(r) + "," + q(g) + "," + q(b) + ")";
}

// blue -> red, indexed by level rank
std::string level_color(size_t k, size_t n) {
    const double t = n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 0.5;
    return rgb(33.0 + t * (178.0 - 33.0), 102.0 + t * (24.0 - 102.0), 172.0 + t * (43.0 - 172.0));
}

// dark violet -> teal -> yellow, for heat maps; t in [0,1]
std::string heat_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    if (t < 0.5) {
        const double u = t / 0.5;
        return rgb(68.0 + u * (33.0 - 68.0), 1.0 + u * (145.0 - 1.0), 84.0 + u * (140.0 - 84.0));
    }
    const double u = (t - 0.5) / 0.5;
    return rgb(33.0 + u * (253.0 - 33.0), 145.0 + u * (231.0 - 145.0), 140.0 + u * (37.0 - 140.0));
}

std::string path_of(const Polyline& pl, const Frame& f, const std::string& color, double width) {
    std::string d;
    for (size_t i = 0; i < pl.pts.size(); ++i) {
        d += (i == 0 ? "M" : " L");
        d += fpx(f.X(pl.pts[i].first));
        d += " ";
        d += fpx(f.Y(pl.pts[i].second));
    }
    if (pl.closed) d += " Z";
    return "<path d=\"" + d + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" +
           fpx(width) + "\"/>\n";
}

// contour isolines plus legend; shared by contour_svg and trajectory_svg
std::string contour_body(const LossGrid& grid, const RenderSpec& spec, const Frame& f,
                         const std::vector<double>& levels) {
    std::string s;
    size_t total = 0;
    for (size_t k = 0; k < levels.size(); ++k) {
        const auto lines = contour_lines(grid, levels[k], spec.channel);
        total += lines.size();
        const std::string color = level_color(k, levels.size());
        for (const Polyline& pl : lines) s += path_of(pl, f, color, 1.2);
    }
    for (size_t k = 0; k < levels.size() && k < 12; ++k)
        s += text_at(f.px + f.pw - 8.0, f.py + 14.0 + 13.0 * static_cast<double>(k), "end",
                     fg4(levels[k]), level_color(k, levels.size()));
    if (total == 0) {
        s += "<!-- warning: empty contour set -->\n";
        s += text_at(f.px + f.pw / 2.0, f.py + f.ph / 2.0, "middle",
                     "no contours within the level range", "#b2182b");
    }
    return s;
}

// 1d profile polylines, split where cells are overflow-flagged
std::string line_body(const LossGrid& grid, const RenderSpec& spec, Frame& f) {
    const std::vector<double>& vals = channel_values(grid, spec.channel);
    const AxisSpec& ax = grid.axes[0];
    auto height = [&](double v) { return spec.transform == Transform::log ? std::log10(v) : v; };

    double ylo = kInf, yhi = -kInf;
    for (int64_t i = 0; i < ax.steps; ++i) {
        if (grid.overflow[grid.at(i)]) continue;
        const double v = vals[grid.at(i)];
        if (spec.transform == Transform::log && v <= 0.0)
            throw std::invalid_argument("render: log transform requires positive values");
        ylo = std::min(ylo, height(v));
        yhi = std::max(yhi, height(v));
    }
    if (!std::isfinite(ylo))
        throw std::invalid_argument("line_svg: the profile has no unflagged cells");
    double pad = 0.05 * (yhi - ylo);
    if (pad == 0.0) pad = std::max(0.5, std::fabs(ylo) * 0.1);
    f.y0 = ylo - pad;
    f.y1 = yhi + pad;

    std::string s;
    Polyline run;
    auto flush = [&]() {
        if (run.pts.size() >= 2) s += path_of(run, f, "#1f77b4", 1.5);
        run.pts.clear();
    };
    for (int64_t i = 0; i < ax.steps; ++i) {
        if (grid.overflow[grid.at(i)]) {
            flush();
            continue;
        }
        run.pts.emplace_back(ax.at(i), height(vals[grid.at(i)]));
    }
    flush();
    return s;
}

std::string ylabel_of(const RenderSpec& spec) {
    std::string lab = to_string(spec.channel);
    if (spec.transform == Transform::log) lab += " (log10)";
    return lab;
}

}  // namespace

std::string line_svg(const LossGrid& grid, const RenderSpec& spec) {
    spec.validate();
    if (grid.axes.size() != 1) throw std::invalid_argument("line_svg: a 1d grid is required");
    Frame f = make_frame(spec, grid.axes[0].min, grid.axes[0].max, 0.0, 1.0);
    std::string body = line_body(grid, spec, f);  // sets the y range
    std::string s = svg_open(spec);
    s += frame_box(f, "alpha", ylabel_of(spec));
    s += body;
    s += "</svg>\n";
    return s;
}

std::string contour_svg(const LossGrid& grid, const RenderSpec& spec) {
    spec.validate();
    if (grid.axes.size() != 2) throw std::invalid_argument("contour_svg: a 2d grid is required");
    const std::vector<double> levels =
        spec.levels.empty() ? default_levels(grid, spec) : spec.levels;
    const Frame f =
        make_frame(spec, grid.axes[0].min, grid.axes[0].max, grid.axes[1].min, grid.axes[1].max);
    std::string s = svg_open(spec);
    s += frame_box(f, "alpha", "beta");
    s += contour_body(grid, spec, f, levels);
    s += "</svg>\n";
    return s;
}

namespace {

// shared by heat_svg and ratio_heat_svg; values laid out row-major over the
// two axes, with NaN/inf (and overflow-flagged) cells drawn gray
std::string heat_cells(const std::vector<AxisSpec>& axes, const std::vector<double>& vals,
                       const std::vector<uint8_t>& skip, const RenderSpec& spec, const Frame& f,
                       bool log_skips_nonpositive) {
    const int64_t n0 = axes[0].steps, n1 = axes[1].steps;
    const bool logt = spec.transform == Transform::log;
    auto usable = [&](size_t idx) {
        if (skip[idx] || !std::isfinite(vals[idx])) return false;
        if (logt && vals[idx] <= 0.0) {
            if (!log_skips_nonpositive)
                throw std::invalid_argument("render: log transform requires positive values");
            return false;
        }
        return true;
    };
    double lo = kInf, hi = -kInf;
    for (size_t idx = 0; idx < vals.size(); ++idx) {
        if (!usable(idx)) continue;
        const double h = logt ? std::log10(vals[idx]) : vals[idx];
        lo = std::min(lo, h);
        hi = std::max(hi, h);
    }
    const double cw = f.pw / static_cast<double>(n0);
    const double ch = f.ph / static_cast<double>(n1);
    std::string s;
    for (int64_t i = 0; i < n0; ++i) {
        for (int64_t j = 0; j < n1; ++j) {
            const size_t idx = static_cast<size_t>(i * n1 + j);
            std::string fill = "#999999";
            if (usable(idx)) {
                const double h = logt ? std::log10(vals[idx]) : vals[idx];
                fill = heat_color(hi > lo ? (h - lo) / (hi - lo) : 0.5);
            }
            s += "<rect x=\"" + fpx(f.px + cw * static_cast<double>(i)) + "\" y=\"" +
                 fpx(f.py + f.ph - ch * static_cast<double>(j + 1)) + "\" width=\"" +
                 fpx(cw) + "\" height=\"" + fpx(ch) + "\" fill=\"" + fill + "\"/>\n";
        }
    }
    if (std::isfinite(lo)) {
        s += text_at(f.px, f.py - 4.0, "start", "min " + fg4(logt ? std::pow(10.0, lo) : lo));
        s += text_at(f.px + f.pw, f.py - 4.0, "end", "max " + fg4(logt ? std::pow(10.0, hi) : hi));
    }
    return s;
}

}  // namespace

std::string heat_svg(const LossGrid& grid, const RenderSpec& spec) {
    spec.validate();
    if (grid.axes.size() != 2) throw std::invalid_argument("heat_svg: a 2d grid is required");
    const Frame f =
        make_frame(spec, grid.axes[0].min, grid.axes[0].max, grid.axes[1].min, grid.axes[1].max);
    std::string s = svg_open(spec);
    s += heat_cells(grid.axes, channel_values(grid, spec.channel), grid.overflow, spec, f, false);
    s += frame_box(f, "alpha", "beta");
    return s + "</svg>\n";
}

std::string ratio_heat_svg(const EigRatioMap& map, const RenderSpec& spec) {
    spec.validate();
    // A zero ratio marks a cell with vanishing negative curvature; under log
    // those cells are drawn gray instead of failing the whole map.
    std::vector<uint8_t> skip(map.converged.size());
    for (size_t i = 0; i < skip.size(); ++i) skip[i] = map.converged[i] ? 0 : 1;
    const Frame f = make_frame(spec, map.axes[0].min, map.axes[0].max, map.axes[1].min,
                               map.axes[1].max);
    std::string s = svg_open(spec);
    s += heat_cells(map.axes, map.ratio, skip, spec, f, true);
    s += frame_box(f, "alpha", "beta");
    return s + "</svg>\n";
}

std::string trajectory_svg(const TrajSurface& ts, const RenderSpec& spec) {
    spec.validate();
    const LossGrid& grid = ts.grid;
    std::string s;
    Frame f{};
    if (grid.axes.size() == 2) {
        const std::vector<double> levels =
            spec.levels.empty() ? default_levels(grid, spec) : spec.levels;
        f = make_frame(spec, grid.axes[0].min, grid.axes[0].max, grid.axes[1].min,
                       grid.axes[1].max);
        s = svg_open(spec);
        s += frame_box(f, "pca-1", "pca-2");
        s += contour_body(grid, spec, f, levels);
    } else {
        // degenerate projection: profile along the single direction, with the
        // checkpoints marked on the alpha axis
        f = make_frame(spec, grid.axes[0].min, grid.axes[0].max, 0.0, 1.0);
        std::string body = line_body(grid, spec, f);
        s = svg_open(spec);
        s += frame_box(f, "pca-1", ylabel_of(spec));
        s += body;
    }

    std::string d;
    for (size_t i = 0; i < ts.u.size(); ++i) {
        const double y = grid.axes.size() == 2 ? ts.v[i] : f.y0;
        d += (i == 0 ? "M" : " L");
        d += fpx(f.X(ts.u[i]));
        d += " ";
        d += fpx(grid.axes.size() == 2 ? f.Y(y) : f.py + f.ph);
    }
    if (!d.empty())
        s += "<path d=\"" + d + "\" fill=\"none\" stroke=\"#111111\" stroke-width=\"1.5\"/>\n";
    for (size_t i = 0; i < ts.u.size(); ++i) {
        const double cx = f.X(ts.u[i]);
        const double cy = grid.axes.size() == 2 ? f.Y(ts.v[i]) : f.py + f.ph;
        const bool drop = i < ts.is_lr_drop.size() && ts.is_lr_drop[i];
        const bool last = i + 1 == ts.u.size();
        const char* fill = drop ? "#d62728" : (last ? "#1f77b4" : "#111111");
        const double r = drop ? 3.5 : (last ? 4.0 : 2.0);
        s += "<circle cx=\"" + fpx(cx) + "\" cy=\"" + fpx(cy) + "\" r=\"" + fpx(r) +
             "\" fill=\"" + std::string(fill) + "\"/>\n";
    }
    s += text_at(f.px, spec.height - 6.0, "start",
                 "captured variance " + fg4(ts.var1 + ts.var2) + " (pca-1 " + fg4(ts.var1) +
                     ", pca-2 " + fg4(ts.var2) + ")");
    return s + "</svg>\n";
}

std::string histogram_svg(const Histogram& h, const RenderSpec& spec) {
    spec.validate();
    if (h.counts.empty()) throw std::invalid_argument("histogram_svg: no bins");
    int64_t maxc = 0;
    for (int64_t c : h.counts) maxc = std::max(maxc, c);
    const Frame f = make_frame(spec, h.lo, h.hi, 0.0, static_cast<double>(std::max<int64_t>(maxc, 1)));
    std::string s = svg_open(spec);
    const double bw = f.pw / static_cast<double>(h.counts.size());
    for (size_t k = 0; k < h.counts.size(); ++k) {
        const double bh = f.ph * static_cast<double>(h.counts[k]) /
                          static_cast<double>(std::max<int64_t>(maxc, 1));
        if (h.counts[k] <= 0) continue;
        s += "<rect x=\"" + fpx(f.px + bw * static_cast<double>(k)) + "\" y=\"" +
             fpx(f.py + f.ph - bh) + "\" width=\"" + fpx(std::max(bw - 1.0, 0.5)) +
             "\" height=\"" + fpx(bh) + "\" fill=\"#1f77b4\"/>\n";
    }
    s += frame_box(f, "weight value", "count");
    if (h.total() == 0)
        s += text_at(f.px + f.pw / 2.0, f.py + f.ph / 2.0, "middle", "empty histogram",
                     "#b2182b");
    return s + "</svg>\n";
}

std::string norm_curve_svg(const std::vector<double>& norms, const RenderSpec& spec) {
    spec.validate();
    if (norms.empty()) throw std::invalid_argument("norm_curve_svg: no data");
    double ylo = kInf, yhi = -kInf;
    for (double v : norms) {
        ylo = std::min(ylo, v);
        yhi = std::max(yhi, v);
    }
    double pad = 0.05 * (yhi - ylo);
    if (pad == 0.0) pad = std::max(0.5, std::fabs(ylo) * 0.1);
    const double xmax = static_cast<double>(norms.size() - 1);
    const Frame f = make_frame(spec, 0.0, std::max(xmax, 1.0), ylo - pad, yhi + pad);
    std::string s = svg_open(spec);
    s += frame_box(f, "step", "|w|");
    Polyline pl;
    for (size_t i = 0; i < norms.size(); ++i)
        pl.pts.emplace_back(static_cast<double>(i), norms[i]);
    if (pl.pts.size() >= 2)
        s += path_of(pl, f, "#1f77b4", 1.5);
    else
        s += "<circle cx=\"" + fpx(f.X(0.0)) + "\" cy=\"" + fpx(f.Y(norms[0])) +
             "\" r=\"2.5\" fill=\"#1f77b4\"/>\n";
    return s + "</svg>\n";
}

}  // namespace losslab
