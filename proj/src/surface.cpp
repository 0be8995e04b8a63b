#include "losslab/surface.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "losslab/eval.hpp"
#include "losslab/util.hpp"

namespace losslab {
namespace {

double parse_double(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw std::invalid_argument(what + ": cannot parse number '" + s + "'");
    return v;
}

int64_t parse_int(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw std::invalid_argument(what + ": cannot parse integer '" + s + "'");
    return v;
}

// The overflow flag tracks non-finite losses only; it survives the CSV
// round-trip because flagged cells store exactly the sentinel. Error rates
// are clamped if somehow non-finite but do not flag.
void finalize_cell(LossGrid& g, size_t idx, CellStats s) {
    bool over = false;
    auto cap_loss = [&over](double v) {
        if (std::isfinite(v)) return v;
        over = true;
        return kOverflowSentinel;
    };
    auto cap_err = [](double v) { return std::isfinite(v) ? v : 1.0; };
    g.train_loss[idx] = cap_loss(s.train_loss);
    g.train_err[idx] = cap_err(s.train_err);
    g.test_loss[idx] = cap_loss(s.test_loss);
    g.test_err[idx] = cap_err(s.test_err);
    g.overflow[idx] = over ? 1 : 0;
}

void count_overflow(LossGrid& g) {
    g.overflow_cells = 0;
    for (uint8_t f : g.overflow) g.overflow_cells += f;
}

void size_grid(LossGrid& g, size_t n) {
    g.train_loss.resize(n);
    g.train_err.resize(n);
    g.test_loss.resize(n);
    g.test_err.resize(n);
    g.overflow.assign(n, 0);
}

// Dataset views honoring the subsample option: a deterministic prefix of
// each split, or the original datasets untouched (no copies).
struct DataView {
    Dataset train_store, test_store;
    const Dataset* train = nullptr;
    const Dataset* test = nullptr;
};

DataView make_view(const TrainTest& data, const EvalOptions& opts) {
    DataView v;
    if (opts.subsample > 0) {
        v.train_store = prefix(data.train, opts.subsample);
        v.test_store = prefix(data.test, opts.subsample);
        v.train = &v.train_store;
        v.test = &v.test_store;
    } else {
        v.train = &data.train;
        v.test = &data.test;
    }
    return v;
}

CellStats eval_theta(const Model& model, const ParamVector& theta, const DataView& d,
                     int64_t chunk_size) {
    const EvalStats tr = evaluate_dataset(model, theta, *d.train, chunk_size);
    const EvalStats te = evaluate_dataset(model, theta, *d.test, chunk_size);
    return {tr.loss, tr.error, te.loss, te.error};
}

void check_direction(const Model& model, const Direction& d, const char* who) {
    const auto& meta = model.meta();
    if (!d.meta || d.meta->spec_hash != meta.spec_hash)
        throw std::invalid_argument(std::string(who) + ": direction was built for a different model spec");
    if (d.values.size() != static_cast<size_t>(meta.total))
        throw std::invalid_argument(std::string(who) + ": dimension mismatch, direction has " +
                                    std::to_string(d.values.size()) + " entries, model has " +
                                    std::to_string(meta.total));
}

DirProvenance provenance_of(const Direction& d) {
    return {d.seed, to_string(d.scheme), to_string(d.ignore), "sampled"};
}

}  // namespace

void AxisSpec::validate() const {
    if (!(min < max))
        throw std::invalid_argument("axis: need min < max, got " + fmt17(min) + ":" + fmt17(max));
    if (steps < 2) throw std::invalid_argument("axis: need steps >= 2, got " + std::to_string(steps));
}

std::string AxisSpec::str() const {
    return fmt17(min) + ":" + fmt17(max) + ":" + std::to_string(steps);
}

AxisSpec AxisSpec::parse(const std::string& s) {
    const size_t c1 = s.find(':');
    const size_t c2 = c1 == std::string::npos ? std::string::npos : s.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || s.find(':', c2 + 1) != std::string::npos)
        throw std::invalid_argument("axis '" + s + "': want min:max:steps");
    AxisSpec a;
    a.min = parse_double(s.substr(0, c1), "axis");
    a.max = parse_double(s.substr(c1 + 1, c2 - c1 - 1), "axis");
    a.steps = parse_int(s.substr(c2 + 1), "axis");
    a.validate();
    return a;
}

const char* to_string(DirType t) { return t == DirType::weights ? "weights" : "states"; }

DirType dir_type_from(const std::string& name) {
    if (name == "weights") return DirType::weights;
    if (name == "states") return DirType::states;
    throw std::invalid_argument("unknown dir-type '" + name + "' (want weights or states)");
}

int64_t LossGrid::cells() const {
    int64_t n = 1;
    for (const auto& a : axes) n *= a.steps;
    return n;
}

size_t LossGrid::at(int64_t i, int64_t j) const {
    if (axes.size() == 1) return static_cast<size_t>(i);
    return static_cast<size_t>(i * axes[1].steps + j);
}

LossGrid eval_slice_1d(AxisSpec axis, const SliceFn& fn, bool parallel) {
    axis.validate();
    LossGrid g;
    g.axes = {axis};
    const int64_t n = axis.steps;
    size_grid(g, static_cast<size_t>(n));
#ifdef LOSSLAB_OPENMP
#pragma omp parallel for schedule(dynamic) if (parallel)
#endif
    for (int64_t i = 0; i < n; ++i) finalize_cell(g, static_cast<size_t>(i), fn(axis.at(i), 0.0));
    (void)parallel;
    count_overflow(g);
    return g;
}

LossGrid eval_slice_2d(AxisSpec ax0, AxisSpec ax1, const SliceFn& fn, bool parallel) {
    ax0.validate();
    ax1.validate();
    LossGrid g;
    g.axes = {ax0, ax1};
    const int64_t n0 = ax0.steps, n1 = ax1.steps;
    size_grid(g, static_cast<size_t>(n0 * n1));
#ifdef LOSSLAB_OPENMP
#pragma omp parallel for schedule(dynamic) if (parallel)
#endif
    for (int64_t c = 0; c < n0 * n1; ++c)
        finalize_cell(g, static_cast<size_t>(c), fn(ax0.at(c / n1), ax1.at(c % n1)));
    (void)parallel;
    count_overflow(g);
    return g;
}

LossGrid interpolate_1d(const Model& model, const ParamVector& theta_a, const ParamVector& theta_b,
                        AxisSpec axis, const TrainTest& data, DirType dirtype,
                        const EvalOptions& opts) {
    const auto& meta = model.meta();
    if (!theta_a.meta || !theta_b.meta || theta_a.meta->spec_hash != meta.spec_hash ||
        theta_b.meta->spec_hash != meta.spec_hash)
        throw std::invalid_argument("interpolate_1d: spec-hash mismatch between endpoints and model");

    // with dirtype weights, BN running buffers stay at theta_a's values along
    // the whole path; with states they interpolate like everything else
    std::vector<uint8_t> pinned(theta_a.values.size(), 0);
    if (dirtype == DirType::weights)
        for (size_t i = 0; i < pinned.size(); ++i)
            pinned[i] = meta.kind_of[i] == ParamKind::bn_running_stat;

    const DataView view = make_view(data, opts);
    auto fn = [&](double a, double) {
        ParamVector th = theta_a;
        for (size_t i = 0; i < th.values.size(); ++i)
            if (!pinned[i]) th.values[i] = (1.0 - a) * theta_a.values[i] + a * theta_b.values[i];
        return eval_theta(model, th, view, opts.chunk);
    };
    LossGrid g = eval_slice_1d(axis, fn, opts.parallel);
    g.meta.model_hash = meta.spec_hash;
    g.meta.theta_digest = fnv1a64_doubles(theta_a.values);
    g.meta.dirtype = dirtype;
    g.meta.dirs = {{0, "none", "none", "difference"}};
    return g;
}

LossGrid ray_1d(const Model& model, const ParamVector& center, const Direction& delta,
                AxisSpec axis, const TrainTest& data, const EvalOptions& opts) {
    check_direction(model, delta, "ray_1d");
    const DataView view = make_view(data, opts);
    auto fn = [&](double a, double) {
        ParamVector th = center;
        for (size_t i = 0; i < th.values.size(); ++i) th.values[i] += a * delta.values[i];
        return eval_theta(model, th, view, opts.chunk);
    };
    LossGrid g = eval_slice_1d(axis, fn, opts.parallel);
    g.meta.model_hash = model.meta().spec_hash;
    g.meta.theta_digest = fnv1a64_doubles(center.values);
    g.meta.dirs = {provenance_of(delta)};
    return g;
}

LossGrid grid_2d(const Model& model, const ParamVector& center, const Direction& delta,
                 const Direction& eta, AxisSpec ax0, AxisSpec ax1, const TrainTest& data,
                 const EvalOptions& opts) {
    check_direction(model, delta, "grid_2d");
    check_direction(model, eta, "grid_2d");
    if (delta.seed == eta.seed && delta.scheme == eta.scheme && delta.ignore == eta.ignore)
        throw std::invalid_argument("grid_2d: directions share seed " + std::to_string(delta.seed) +
                                    " and sampling settings; the plane is degenerate");
    if (delta.values == eta.values)
        throw std::invalid_argument("grid_2d: the two directions are identical; the plane is degenerate");

    const DataView view = make_view(data, opts);
    auto fn = [&](double a, double b) {
        ParamVector th = center;
        for (size_t i = 0; i < th.values.size(); ++i)
            th.values[i] += a * delta.values[i] + b * eta.values[i];
        return eval_theta(model, th, view, opts.chunk);
    };
    LossGrid g = eval_slice_2d(ax0, ax1, fn, opts.parallel);
    g.meta.model_hash = model.meta().spec_hash;
    g.meta.theta_digest = fnv1a64_doubles(center.values);
    g.meta.dirs = {provenance_of(delta), provenance_of(eta)};
    return g;
}

std::vector<LossGrid> repeat_study(const Model& model, const ParamVector& center,
                                   std::span<const uint64_t> seeds, AxisSpec axis,
                                   const TrainTest& data, const EvalOptions& opts) {
    if (seeds.size() < 2)
        throw std::invalid_argument("repeat_study: need at least 2 seeds, got " +
                                    std::to_string(seeds.size()));
    std::vector<LossGrid> out;
    out.reserve(seeds.size());
    for (uint64_t seed : seeds) {
        Direction d = filter_normalize(sample_gaussian(center, seed, IgnorePolicy::biasbn), center);
        out.push_back(ray_1d(model, center, d, axis, data, opts));
    }
    return out;
}

void write_grid_csv(const std::string& path, const LossGrid& grid) {
    if (grid.axes.empty() || grid.axes.size() > 2)
        throw GridFileError("grid must have 1 or 2 axes");
    const bool two = grid.axes.size() == 2;
    std::string out;
    out += "# losslab grid v1\n";
    out += "# model_hash = " + fmt_hex64(grid.meta.model_hash) + "\n";
    out += "# theta_digest = " + fmt_hex64(grid.meta.theta_digest) + "\n";
    out += "# dirtype = " + std::string(to_string(grid.meta.dirtype)) + "\n";
    for (size_t a = 0; a < grid.axes.size(); ++a)
        out += "# axis" + std::to_string(a) + " = " + grid.axes[a].str() + "\n";
    for (size_t d = 0; d < grid.meta.dirs.size(); ++d) {
        const auto& p = grid.meta.dirs[d];
        out += "# dir" + std::to_string(d) + " = seed=" + std::to_string(p.seed) + " scheme=" +
               p.scheme + " ignore=" + p.ignore + " source=" + p.source + "\n";
    }
    if (!grid.meta.note.empty()) out += "# note = " + grid.meta.note + "\n";
    out += "# overflow_cells = " + std::to_string(grid.overflow_cells) + "\n";
    out += two ? "alpha,beta,train_loss,train_err,test_loss,test_err\n"
               : "alpha,train_loss,train_err,test_loss,test_err\n";

    const int64_t n0 = grid.axes[0].steps;
    const int64_t n1 = two ? grid.axes[1].steps : 1;
    for (int64_t i = 0; i < n0; ++i) {
        for (int64_t j = 0; j < n1; ++j) {
            const size_t idx = grid.at(i, j);
            out += fmt17(grid.axes[0].at(i));
            if (two) out += "," + fmt17(grid.axes[1].at(j));
            out += "," + fmt17(grid.train_loss[idx]) + "," + fmt17(grid.train_err[idx]) + "," +
                   fmt17(grid.test_loss[idx]) + "," + fmt17(grid.test_err[idx]) + "\n";
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw GridFileError("cannot open for write: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw GridFileError("write failed: " + path);
}

LossGrid read_grid_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw GridFileError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "# losslab grid v1")
        throw GridFileError(path + ": not a losslab grid file");

    LossGrid g;
    int64_t declared_overflow = 0;
    std::string columns;
    while (std::getline(f, line)) {
        if (line.rfind("# ", 0) != 0) {
            columns = line;
            break;
        }
        const std::string body = line.substr(2);
        const size_t eq = body.find(" = ");
        if (eq == std::string::npos) throw GridFileError(path + ": malformed header line '" + line + "'");
        const std::string key = body.substr(0, eq);
        const std::string val = body.substr(eq + 3);
        if (key == "model_hash") g.meta.model_hash = std::stoull(val, nullptr, 16);
        else if (key == "theta_digest") g.meta.theta_digest = std::stoull(val, nullptr, 16);
        else if (key == "dirtype") g.meta.dirtype = dir_type_from(val);
        else if (key == "note") g.meta.note = val;
        else if (key == "overflow_cells") declared_overflow = parse_int(val, "overflow_cells");
        else if (key.rfind("axis", 0) == 0) g.axes.push_back(AxisSpec::parse(val));
        else if (key.rfind("dir", 0) == 0) {
            DirProvenance p;
            std::istringstream ss(val);
            std::string tok;
            while (ss >> tok) {
                const size_t e = tok.find('=');
                if (e == std::string::npos) throw GridFileError(path + ": malformed " + key);
                const std::string k = tok.substr(0, e), v = tok.substr(e + 1);
                if (k == "seed") p.seed = std::stoull(v);
                else if (k == "scheme") p.scheme = v;
                else if (k == "ignore") p.ignore = v;
                else if (k == "source") p.source = v;
            }
            g.meta.dirs.push_back(p);
        }
        // unknown keys are tolerated so newer writers stay readable
    }
    if (g.axes.empty() || g.axes.size() > 2)
        throw GridFileError(path + ": expected 1 or 2 axis header lines");
    const bool two = g.axes.size() == 2;
    const std::string want_cols = two ? "alpha,beta,train_loss,train_err,test_loss,test_err"
                                      : "alpha,train_loss,train_err,test_loss,test_err";
    if (columns != want_cols)
        throw GridFileError(path + ": unexpected column header '" + columns + "'");

    const size_t n = static_cast<size_t>(g.cells());
    size_grid(g, n);
    size_t row = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (row >= n) throw GridFileError(path + ": more data rows than grid cells");
        std::vector<std::string> parts;
        size_t start = 0;
        while (true) {
            const size_t comma = line.find(',', start);
            parts.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        const size_t want = two ? 6 : 5;
        if (parts.size() != want)
            throw GridFileError(path + ": row " + std::to_string(row) + " has " +
                                std::to_string(parts.size()) + " fields, want " + std::to_string(want));
        const size_t off = two ? 2 : 1;
        g.train_loss[row] = parse_double(parts[off + 0], "train_loss");
        g.train_err[row] = parse_double(parts[off + 1], "train_err");
        g.test_loss[row] = parse_double(parts[off + 2], "test_loss");
        g.test_err[row] = parse_double(parts[off + 3], "test_err");
        g.overflow[row] =
            (g.train_loss[row] == kOverflowSentinel || g.test_loss[row] == kOverflowSentinel) ? 1 : 0;
        ++row;
    }
    if (row != n)
        throw GridFileError(path + ": " + std::to_string(row) + " data rows for " +
                            std::to_string(n) + " grid cells");
    count_overflow(g);
    if (g.overflow_cells != declared_overflow)
        throw GridFileError(path + ": header declares " + std::to_string(declared_overflow) +
                            " overflow cells, body shows " + std::to_string(g.overflow_cells));
    return g;
}

}  // namespace losslab
