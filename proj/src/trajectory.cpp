#include "losslab/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "losslab/eval.hpp"
#include "losslab/util.hpp"

namespace losslab {
namespace {

// Cyclic Jacobi eigendecomposition for the small symmetric Gram matrix.
// a: n*n row-major, destroyed. d: eigenvalues out (unsorted). v: n*n out,
// columns are eigenvectors.
void jacobi_eig(int64_t n, std::vector<double>& a, std::vector<double>& d,
                std::vector<double>& v) {
    v.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
    double frob2 = 0.0;
    for (double x : a) frob2 += x * x;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int64_t p = 0; p < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) off += 2.0 * a[p * n + q] * a[p * n + q];
        if (off <= 1e-28 * std::max(frob2, 1e-300)) break;
        for (int64_t p = 0; p + 1 < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t =
                    (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int64_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (int64_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (int64_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    d.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) d[static_cast<size_t>(i)] = a[static_cast<size_t>(i * n + i)];
}

std::vector<size_t> weight_map(const ParamMeta& meta) {
    std::vector<size_t> m;
    for (size_t i = 0; i < meta.kind_of.size(); ++i)
        if (meta.kind_of[i] == ParamKind::weight) m.push_back(i);
    return m;
}

// checkpoint-minus-final differences restricted to weight coordinates,
// one row per non-final checkpoint
std::vector<std::vector<double>> weight_diffs(const TrajectoryRecord& rec,
                                              const std::vector<size_t>& wmap) {
    const size_t rows = rec.checkpoints.size() - 1;
    const auto& org = rec.checkpoints.back().theta.values;
    std::vector<std::vector<double>> x(rows, std::vector<double>(wmap.size()));
    for (size_t i = 0; i < rows; ++i) {
        const auto& th = rec.checkpoints[i].theta.values;
        for (size_t k = 0; k < wmap.size(); ++k) x[i][k] = th[wmap[k]] - org[wmap[k]];
    }
    return x;
}

void check_pair(const Direction& e1, const Direction& e2, const ParamMeta& meta) {
    for (const Direction* e : {&e1, &e2}) {
        if (!e->meta || e->meta->spec_hash != meta.spec_hash ||
            e->values.size() != static_cast<size_t>(meta.total))
            throw std::invalid_argument("project: direction does not match the trajectory's model");
    }
    double n1 = 0.0, n2 = 0.0, d12 = 0.0;
    for (size_t i = 0; i < e1.values.size(); ++i) {
        n1 += e1.values[i] * e1.values[i];
        n2 += e2.values[i] * e2.values[i];
        d12 += e1.values[i] * e2.values[i];
    }
    if (std::abs(n1 - 1.0) > 1e-8 || std::abs(n2 - 1.0) > 1e-8 || std::abs(d12) > 1e-8)
        throw std::invalid_argument("project: direction pair is not orthonormal");
}

}  // namespace

PCAProjection pca_directions(const TrajectoryRecord& rec) {
    const size_t m = rec.checkpoints.size();
    if (m < 3)
        throw std::invalid_argument("pca_directions: need at least 3 checkpoints, got " +
                                    std::to_string(m));
    auto meta = rec.checkpoints.back().theta.meta;
    const std::vector<size_t> wmap = weight_map(*meta);
    const auto x = weight_diffs(rec, wmap);
    const int64_t rows = static_cast<int64_t>(x.size());

    std::vector<double> gram(static_cast<size_t>(rows * rows));
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (size_t k = 0; k < wmap.size(); ++k) s += x[i][k] * x[j][k];
            gram[i * rows + j] = s;
            gram[j * rows + i] = s;
        }

    std::vector<double> evals, evecs;
    jacobi_eig(rows, gram, evals, evecs);
    std::vector<size_t> order(evals.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return evals[a] > evals[b]; });

    double total = 0.0;
    for (double l : evals) total += std::max(l, 0.0);
    const double lam1 = std::max(evals[order[0]], 0.0);
    const double lam2 = rows >= 2 ? std::max(evals[order[1]], 0.0) : 0.0;

    PCAProjection p;
    p.degenerate = lam2 <= lam1 * 1e-12 || lam1 == 0.0;
    p.var1 = total > 0.0 ? lam1 / total : 0.0;
    p.var2 = p.degenerate ? 0.0 : lam2 / total;
    p.lr_drops = rec.lr_drops_applied;
    p.epochs.reserve(m);
    for (const Checkpoint& c : rec.checkpoints) p.epochs.push_back(c.epoch);

    // right singular direction k: Mᵀ w_k, normalized; stored full-length
    // with zeros off the weight entries
    auto build_dir = [&](size_t col) {
        std::vector<double> e(wmap.size(), 0.0);
        for (int64_t i = 0; i < rows; ++i) {
            const double w = evecs[static_cast<size_t>(i * rows) + order[col]];
            for (size_t k = 0; k < wmap.size(); ++k) e[k] += w * x[i][k];
        }
        return e;
    };
    auto normalize = [](std::vector<double>& e) {
        double n = 0.0;
        for (double v : e) n += v * v;
        n = std::sqrt(n);
        if (n > 0.0)
            for (double& v : e) v /= n;
        return n > 0.0;
    };

    std::vector<double> e1 = build_dir(0);
    std::vector<double> e2(wmap.size(), 0.0);
    const bool have1 = normalize(e1) && lam1 > 0.0;
    if (!have1) std::fill(e1.begin(), e1.end(), 0.0);
    if (!p.degenerate) {
        e2 = build_dir(1);
        double d = 0.0;
        for (size_t k = 0; k < e2.size(); ++k) d += e1[k] * e2[k];
        for (size_t k = 0; k < e2.size(); ++k) e2[k] -= d * e1[k];
        if (!normalize(e2)) {
            p.degenerate = true;
            p.var2 = 0.0;
            std::fill(e2.begin(), e2.end(), 0.0);
        }
    }

    auto as_direction = [&](const std::vector<double>& e) {
        Direction d;
        d.meta = meta;
        d.values.assign(static_cast<size_t>(meta->total), 0.0);
        for (size_t k = 0; k < wmap.size(); ++k) d.values[wmap[k]] = e[k];
        d.scheme = NormScheme::none;
        d.ignore = IgnorePolicy::biasbn;
        d.seed = 0;
        return d;
    };
    p.dir1 = as_direction(e1);
    p.dir2 = as_direction(e2);

    p.u.assign(m, 0.0);
    p.v.assign(m, 0.0);
    for (int64_t i = 0; i < rows; ++i) {
        double ui = 0.0, vi = 0.0;
        for (size_t k = 0; k < wmap.size(); ++k) {
            ui += x[i][k] * e1[k];
            vi += x[i][k] * e2[k];
        }
        p.u[static_cast<size_t>(i)] = ui;
        p.v[static_cast<size_t>(i)] = vi;
    }
    return p;
}

Coords2D project(const TrajectoryRecord& rec, const Direction& e1, const Direction& e2) {
    if (rec.checkpoints.empty()) throw std::invalid_argument("project: empty trajectory");
    const ParamMeta& meta = *rec.checkpoints.back().theta.meta;
    check_pair(e1, e2, meta);

    const auto& org = rec.checkpoints.back().theta.values;
    Coords2D c;
    c.u.reserve(rec.checkpoints.size());
    c.v.reserve(rec.checkpoints.size());
    for (const Checkpoint& cp : rec.checkpoints) {
        double u = 0.0, v = 0.0;
        for (size_t i = 0; i < org.size(); ++i) {
            const double d = cp.theta.values[i] - org[i];
            u += d * e1.values[i];
            v += d * e2.values[i];
        }
        c.u.push_back(u);
        c.v.push_back(v);
    }
    c.u.back() = 0.0;
    c.v.back() = 0.0;
    return c;
}

double captured_variance(const TrajectoryRecord& rec, const Direction& e1, const Direction& e2) {
    const Coords2D c = project(rec, e1, e2);
    const ParamMeta& meta = *rec.checkpoints.back().theta.meta;
    const std::vector<size_t> wmap = weight_map(meta);
    const auto& org = rec.checkpoints.back().theta.values;

    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < rec.checkpoints.size(); ++i) {
        num += c.u[i] * c.u[i] + c.v[i] * c.v[i];
        const auto& th = rec.checkpoints[i].theta.values;
        for (size_t k : wmap) den += (th[k] - org[k]) * (th[k] - org[k]);
    }
    return den > 0.0 ? num / den : 0.0;
}

TrajSurface trajectory_surface(const Model& model, const TrajectoryRecord& rec,
                               const PCAProjection& proj, AxisSpec ax0, AxisSpec ax1,
                               const TrainTest& data, const EvalOptions& opts) {
    const auto& meta = model.meta();
    if (rec.checkpoints.empty() || !rec.checkpoints.back().theta.meta ||
        rec.checkpoints.back().theta.meta->spec_hash != meta.spec_hash)
        throw std::invalid_argument(
            "trajectory_surface: trajectory was built for a different model spec");
    if (!proj.dir1.meta || proj.dir1.meta->spec_hash != meta.spec_hash)
        throw std::invalid_argument(
            "trajectory_surface: projection was built for a different model spec");
    if (proj.u.size() != rec.checkpoints.size())
        throw std::invalid_argument("trajectory_surface: projection does not match the trajectory");
    ax0.validate();

    Dataset tr_store, te_store;
    const Dataset* train = &data.train;
    const Dataset* test = &data.test;
    if (opts.subsample > 0) {
        tr_store = prefix(data.train, opts.subsample);
        te_store = prefix(data.test, opts.subsample);
        train = &tr_store;
        test = &te_store;
    }
    const ParamVector& origin = rec.final_theta();
    const auto cell = [&](const ParamVector& th) -> CellStats {
        const EvalStats a = evaluate_dataset(model, th, *train, opts.chunk);
        const EvalStats b = evaluate_dataset(model, th, *test, opts.chunk);
        return {a.loss, a.error, b.loss, b.error};
    };

    TrajSurface out;
    out.epochs = proj.epochs;
    out.u = proj.u;
    out.v = proj.v;
    out.var1 = proj.var1;
    out.var2 = proj.var2;
    out.is_lr_drop.reserve(proj.epochs.size());
    for (int64_t e : proj.epochs) {
        const bool drop =
            std::find(proj.lr_drops.begin(), proj.lr_drops.end(), e) != proj.lr_drops.end();
        out.is_lr_drop.push_back(drop ? 1 : 0);
    }

    const Direction f1 = filter_normalize(proj.dir1, origin);
    GridMeta gm;
    gm.model_hash = meta.spec_hash;
    gm.theta_digest = fnv1a64_doubles(origin.values);
    gm.dirtype = DirType::weights;
    gm.dirs = {{0, to_string(f1.scheme), to_string(f1.ignore), "pca"}};

    if (proj.degenerate) {
        out.grid = eval_slice_1d(
            ax0,
            [&](double a, double) {
                ParamVector th = origin;
                for (size_t i = 0; i < th.values.size(); ++i) th.values[i] += a * f1.values[i];
                return cell(th);
            },
            opts.parallel);
    } else {
        ax1.validate();
        const Direction f2 = filter_normalize(proj.dir2, origin);
        gm.dirs.push_back({0, to_string(f2.scheme), to_string(f2.ignore), "pca"});
        out.grid = eval_slice_2d(
            ax0, ax1,
            [&](double a, double b) {
                ParamVector th = origin;
                for (size_t i = 0; i < th.values.size(); ++i)
                    th.values[i] += a * f1.values[i] + b * f2.values[i];
                return cell(th);
            },
            opts.parallel);
    }
    out.grid.meta = gm;
    return out;
}

void write_projection_csv(const std::string& path, const PCAProjection& proj) {
    std::string out;
    out += "# losslab projection v1\n";
    out += "# var1 = " + fmt17(proj.var1) + "\n";
    out += "# var2 = " + fmt17(proj.var2) + "\n";
    out += "# degenerate = " + std::string(proj.degenerate ? "1" : "0") + "\n";
    out += "epoch,u,v,is_lr_drop\n";
    for (size_t i = 0; i < proj.epochs.size(); ++i) {
        const bool drop = std::find(proj.lr_drops.begin(), proj.lr_drops.end(), proj.epochs[i]) !=
                          proj.lr_drops.end();
        out += std::to_string(proj.epochs[i]) + "," + fmt17(proj.u[i]) + "," + fmt17(proj.v[i]) +
               "," + (drop ? "1" : "0") + "\n";
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw GridFileError("cannot open for write: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw GridFileError("write failed: " + path);
}

PCAProjection read_projection_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw GridFileError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "# losslab projection v1")
        throw GridFileError(path + ": not a losslab projection file");

    PCAProjection p;
    while (std::getline(f, line)) {
        if (line.rfind("# ", 0) != 0) break;
        const std::string body = line.substr(2);
        const size_t eq = body.find(" = ");
        if (eq == std::string::npos) throw GridFileError(path + ": malformed header line");
        const std::string key = body.substr(0, eq);
        const std::string val = body.substr(eq + 3);
        if (key == "var1") p.var1 = std::strtod(val.c_str(), nullptr);
        else if (key == "var2") p.var2 = std::strtod(val.c_str(), nullptr);
        else if (key == "degenerate") p.degenerate = val == "1";
    }
    if (line != "epoch,u,v,is_lr_drop")
        throw GridFileError(path + ": unexpected column header '" + line + "'");

    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> parts;
        size_t start = 0;
        while (true) {
            const size_t comma = line.find(',', start);
            parts.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (parts.size() != 4)
            throw GridFileError(path + ": row " + std::to_string(p.epochs.size()) + " has " +
                                std::to_string(parts.size()) + " fields, want 4");
        p.epochs.push_back(std::stoll(parts[0]));
        p.u.push_back(std::strtod(parts[1].c_str(), nullptr));
        p.v.push_back(std::strtod(parts[2].c_str(), nullptr));
        if (parts[3] == "1") p.lr_drops.push_back(p.epochs.back());
        else if (parts[3] != "0")
            throw GridFileError(path + ": is_lr_drop must be 0 or 1, got '" + parts[3] + "'");
    }
    return p;
}

}  // namespace losslab
