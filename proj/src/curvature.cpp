#include "losslab/curvature.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "losslab/util.hpp"

namespace losslab {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Symmetric tridiagonal QL with implicit shifts (the classic tql2 routine).
// d[0..n-1]: diagonal in, ascending eigenvalues out. e[0..n-1]: subdiagonal
// in e[0..n-2] (e[n-1] ignored), destroyed. z: n*n row-major, identity in,
// eigenvector columns out.
void tql2(int64_t n, std::vector<double>& d, std::vector<double>& e, std::vector<double>& z) {
    const double eps = std::numeric_limits<double>::epsilon();
    e[n - 1] = 0.0;
    double f = 0.0, tst1 = 0.0;
    for (int64_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        int64_t m = l;
        while (m < n && std::abs(e[m]) > eps * tst1) ++m;
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > 50) throw std::runtime_error("tql2: QL iteration failed to converge");
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (int64_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;
                p = d[m];
                double c = 1.0, c2 = c, c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (int64_t i = m - 1; i >= l; --i) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = std::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for (int64_t k = 0; k < n; ++k) {
                        h = z[k * n + i + 1];
                        z[k * n + i + 1] = s * z[k * n + i] + c * h;
                        z[k * n + i] = c * z[k * n + i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
    for (int64_t i = 0; i + 1 < n; ++i) {
        int64_t k = i;
        double p = d[i];
        for (int64_t j = i + 1; j < n; ++j)
            if (d[j] < p) {
                k = j;
                p = d[j];
            }
        if (k != i) {
            d[k] = d[i];
            d[i] = p;
            for (int64_t r = 0; r < n; ++r) std::swap(z[r * n + i], z[r * n + k]);
        }
    }
}

struct Ritz {
    double lmin, lmax;
    double res_min, res_max;  // |beta_next * (last eigenvector component)|
};

Ritz ritz_extremes(const std::vector<double>& alpha, const std::vector<double>& beta,
                   double beta_next) {
    const int64_t m = static_cast<int64_t>(alpha.size());
    std::vector<double> d = alpha;
    std::vector<double> e(static_cast<size_t>(m), 0.0);
    for (int64_t i = 0; i + 1 < m; ++i) e[static_cast<size_t>(i)] = beta[static_cast<size_t>(i)];
    std::vector<double> z(static_cast<size_t>(m * m), 0.0);
    for (int64_t i = 0; i < m; ++i) z[static_cast<size_t>(i * m + i)] = 1.0;
    tql2(m, d, e, z);
    Ritz r;
    r.lmin = d[0];
    r.lmax = d[static_cast<size_t>(m - 1)];
    r.res_min = std::abs(beta_next * z[static_cast<size_t>((m - 1) * m + 0)]);
    r.res_max = std::abs(beta_next * z[static_cast<size_t>((m - 1) * m + (m - 1))]);
    return r;
}

void check_symmetry(const HvpFn& hvp, int64_t dim, uint64_t seed) {
    Rng64 rng(seed * 0x9e3779b97f4a7c15ULL + 0x51);
    std::vector<double> u(static_cast<size_t>(dim)), v(static_cast<size_t>(dim));
    for (auto& x : u) x = rng.gaussian();
    for (auto& x : v) x = rng.gaussian();
    const std::vector<double> hu = hvp(u), hv = hvp(v);
    const double a = dot(u, hv), b = dot(v, hu);
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    if (std::abs(a - b) > 1e-8 * scale)
        throw std::runtime_error("lanczos: hvp oracle is not symmetric (u'Hv = " + fmt17(a) +
                                 " vs v'Hu = " + fmt17(b) + ")");
}

}  // namespace

std::string LanczosSettings::str() const {
    return "k=" + std::to_string(iterations) + " tol=" + fmt17(tol) +
           " seed=" + std::to_string(seed);
}

Extremal lanczos_extremal(const HvpFn& hvp, int64_t dim, const LanczosSettings& s) {
    if (dim < 1) throw std::invalid_argument("lanczos: dimension must be >= 1");
    if (s.iterations < 1) throw std::invalid_argument("lanczos: iterations must be >= 1");
    const int64_t k_max = std::min(s.iterations, dim);

    check_symmetry(hvp, dim, s.seed);

    Rng64 rng(s.seed);
    std::vector<std::vector<double>> basis;
    // draws a random vector orthogonal to the current basis; empty when the
    // draw keeps collapsing (basis effectively spans the space)
    auto fresh_vector = [&]() -> std::vector<double> {
        for (int attempt = 0; attempt < 16; ++attempt) {
            std::vector<double> w(static_cast<size_t>(dim));
            for (auto& x : w) x = rng.gaussian();
            for (int pass = 0; pass < 2; ++pass)
                for (const auto& q : basis) {
                    const double c = dot(q, w);
                    for (size_t i = 0; i < w.size(); ++i) w[i] -= c * q[i];
                }
            const double nw = norm(w);
            if (nw > 1e-8) {
                for (auto& x : w) x /= nw;
                return w;
            }
        }
        return {};
    };

    basis.push_back(fresh_vector());
    std::vector<double> alpha, beta;
    double op_scale = 0.0;
    int fresh_used = 0;
    Extremal out;

    for (int64_t j = 0; j < k_max; ++j) {
        std::vector<double> w = hvp(basis.back());
        if (static_cast<int64_t>(w.size()) != dim)
            throw std::invalid_argument("lanczos: oracle returned wrong dimension");
        const double a = dot(basis.back(), w);
        alpha.push_back(a);
        op_scale = std::max(op_scale, std::abs(a));
        // full reorthogonalization, two passes
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) {
                const double c = dot(q, w);
                for (size_t i = 0; i < w.size(); ++i) w[i] -= c * q[i];
            }
        const double b = norm(w);
        const Ritz r = ritz_extremes(alpha, beta, b);
        const double radius = std::max({std::abs(r.lmin), std::abs(r.lmax), 1e-300});
        out.lmin = r.lmin;
        out.lmax = r.lmax;
        out.residual_min = r.res_min / radius;
        out.residual_max = r.res_max / radius;
        out.iterations_used = j + 1;
        if (out.residual_min <= s.tol && out.residual_max <= s.tol) {
            out.converged = true;
            return out;
        }
        if (j == k_max - 1) break;

        if (b <= 1e-12 * std::max(op_scale, 1e-300)) {
            // Krylov breakdown: the basis spans an invariant subspace whose
            // Ritz values are exact; continue from a fresh orthogonal vector
            // so the missing part of the spectrum becomes reachable
            if (++fresh_used > s.max_fresh_starts) break;
            std::vector<double> next = fresh_vector();
            if (next.empty()) break;
            beta.push_back(0.0);
            op_scale = std::max(op_scale, 1.0);
            basis.push_back(std::move(next));
        } else {
            beta.push_back(b);
            op_scale = std::max(op_scale, b);
            for (auto& x : w) x /= b;
            basis.push_back(std::move(w));
        }
    }
    return out;
}

int64_t weight_dim(const ParamMeta& meta) {
    int64_t n = 0;
    for (ParamKind k : meta.kind_of)
        if (k == ParamKind::weight) ++n;
    return n;
}

HvpFn weight_hessian_oracle(const Model& model, const ParamVector& theta, const Dataset& data,
                            int64_t chunk_size) {
    auto meta = model.meta_ptr();
    std::vector<size_t> wmap;
    for (size_t i = 0; i < meta->kind_of.size(); ++i)
        if (meta->kind_of[i] == ParamKind::weight) wmap.push_back(i);

    return [&model, &data, theta, chunk_size, wmap = std::move(wmap),
            total = static_cast<size_t>(meta->total)](std::span<const double> x) {
        if (x.size() != wmap.size())
            throw std::invalid_argument("weight hvp: got " + std::to_string(x.size()) +
                                        " entries, want " + std::to_string(wmap.size()));
        std::vector<double> v(total, 0.0), acc(total, 0.0);
        for (size_t i = 0; i < wmap.size(); ++i) v[wmap[i]] = x[i];
        const int64_t n = data.size();
        for (int64_t begin = 0; begin < n; begin += chunk_size) {
            const int64_t count = std::min(chunk_size, n - begin);
            Batch b = chunk(data, begin, count);
            const std::vector<double> hv = model.hvp(theta, b.x, b.labels, v);
            const double w = static_cast<double>(count) / static_cast<double>(n);
            for (size_t j = 0; j < total; ++j) acc[j] += w * hv[j];
        }
        std::vector<double> out(wmap.size());
        for (size_t i = 0; i < wmap.size(); ++i) out[i] = acc[wmap[i]];
        return out;
    };
}

EigRatioMap ratio_map(const Model& model, const ParamVector& center, const Direction& delta,
                      const Direction& eta, AxisSpec ax0, AxisSpec ax1, const Dataset& data,
                      const LanczosSettings& ls, const EvalOptions& opts,
                      const LossGrid* companion) {
    ax0.validate();
    ax1.validate();
    const auto& meta = model.meta();
    for (const Direction* d : {&delta, &eta}) {
        if (!d->meta || d->meta->spec_hash != meta.spec_hash ||
            d->values.size() != static_cast<size_t>(meta.total))
            throw std::invalid_argument("ratio_map: direction does not match the model");
    }

    EigRatioMap map;
    map.axes = {ax0, ax1};
    map.settings = ls;
    map.meta.model_hash = meta.spec_hash;
    map.meta.theta_digest = fnv1a64_doubles(center.values);
    map.meta.dirs = {{delta.seed, to_string(delta.scheme), to_string(delta.ignore), "sampled"},
                     {eta.seed, to_string(eta.scheme), to_string(eta.ignore), "sampled"}};

    if (companion) {
        if (companion->axes.size() != 2 || companion->axes[0] != ax0 || companion->axes[1] != ax1)
            throw std::invalid_argument("ratio_map: axes do not match the companion grid");
        if (companion->meta.theta_digest != map.meta.theta_digest)
            throw std::invalid_argument("ratio_map: center does not match the companion grid");
        if (companion->meta.dirs.size() != 2)
            throw std::invalid_argument("ratio_map: companion grid is not a 2d plane");
        for (size_t i = 0; i < 2; ++i) {
            const auto& a = companion->meta.dirs[i];
            const auto& b = map.meta.dirs[i];
            if (a.seed != b.seed || a.scheme != b.scheme || a.ignore != b.ignore)
                throw std::invalid_argument("ratio_map: direction " + std::to_string(i) +
                                            " does not match the companion grid");
        }
    }

    Dataset sub;
    const Dataset* eval_data = &data;
    if (opts.subsample > 0) {
        sub = prefix(data, opts.subsample);
        eval_data = &sub;
    }

    const int64_t wdim = weight_dim(meta);
    const int64_t n0 = ax0.steps, n1 = ax1.steps;
    const size_t cells = static_cast<size_t>(n0 * n1);
    map.lmin.resize(cells);
    map.lmax.resize(cells);
    map.ratio.resize(cells);
    map.converged.assign(cells, 0);

#ifdef LOSSLAB_OPENMP
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
#endif
    for (int64_t c = 0; c < n0 * n1; ++c) {
        const double a = ax0.at(c / n1), b = ax1.at(c % n1);
        ParamVector th = center;
        for (size_t i = 0; i < th.values.size(); ++i)
            th.values[i] += a * delta.values[i] + b * eta.values[i];
        const HvpFn oracle = weight_hessian_oracle(model, th, *eval_data, opts.chunk);
        const Extremal ex = lanczos_extremal(oracle, wdim, ls);
        const size_t idx = static_cast<size_t>(c);
        map.lmin[idx] = ex.lmin;
        map.lmax[idx] = ex.lmax;
        map.ratio[idx] = ex.lmax == 0.0
                             ? (ex.lmin == 0.0 ? 0.0 : std::numeric_limits<double>::infinity())
                             : std::abs(ex.lmin / ex.lmax);
        map.converged[idx] = ex.converged ? 1 : 0;
    }
    return map;
}

void write_ratio_csv(const std::string& path, const EigRatioMap& map) {
    std::string out;
    out += "# losslab eigmap v1\n";
    out += "# model_hash = " + fmt_hex64(map.meta.model_hash) + "\n";
    out += "# theta_digest = " + fmt_hex64(map.meta.theta_digest) + "\n";
    for (size_t a = 0; a < map.axes.size(); ++a)
        out += "# axis" + std::to_string(a) + " = " + map.axes[a].str() + "\n";
    for (size_t d = 0; d < map.meta.dirs.size(); ++d) {
        const auto& p = map.meta.dirs[d];
        out += "# dir" + std::to_string(d) + " = seed=" + std::to_string(p.seed) + " scheme=" +
               p.scheme + " ignore=" + p.ignore + " source=" + p.source + "\n";
    }
    out += "# lanczos = " + map.settings.str() + "\n";
    int64_t unconverged = 0;
    for (uint8_t c : map.converged) unconverged += c ? 0 : 1;
    out += "# unconverged_cells = " + std::to_string(unconverged) + "\n";
    out += "alpha,beta,lmin,lmax,ratio\n";
    const int64_t n0 = map.axes[0].steps, n1 = map.axes[1].steps;
    for (int64_t i = 0; i < n0; ++i)
        for (int64_t j = 0; j < n1; ++j) {
            const size_t idx = map.at(i, j);
            out += fmt17(map.axes[0].at(i)) + "," + fmt17(map.axes[1].at(j)) + "," +
                   fmt17(map.lmin[idx]) + "," + fmt17(map.lmax[idx]) + "," +
                   fmt17(map.ratio[idx]) + "\n";
        }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw GridFileError("cannot open for write: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw GridFileError("write failed: " + path);
}

EigRatioMap read_ratio_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw GridFileError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "# losslab eigmap v1")
        throw GridFileError(path + ": not a losslab eigmap file");

    EigRatioMap map;
    while (std::getline(f, line)) {
        if (line.rfind("# ", 0) != 0) break;
        const std::string body = line.substr(2);
        const size_t eq = body.find(" = ");
        if (eq == std::string::npos) throw GridFileError(path + ": malformed header line");
        const std::string key = body.substr(0, eq);
        const std::string val = body.substr(eq + 3);
        if (key == "model_hash") map.meta.model_hash = std::stoull(val, nullptr, 16);
        else if (key == "theta_digest") map.meta.theta_digest = std::stoull(val, nullptr, 16);
        else if (key.rfind("axis", 0) == 0) map.axes.push_back(AxisSpec::parse(val));
        else if (key == "lanczos") {
            std::istringstream ss(val);
            std::string tok;
            while (ss >> tok) {
                const size_t e = tok.find('=');
                if (e == std::string::npos) continue;
                const std::string k = tok.substr(0, e), v = tok.substr(e + 1);
                if (k == "k") map.settings.iterations = std::stoll(v);
                else if (k == "tol") map.settings.tol = std::strtod(v.c_str(), nullptr);
                else if (k == "seed") map.settings.seed = std::stoull(v);
            }
        } else if (key.rfind("dir", 0) == 0) {
            DirProvenance p;
            std::istringstream ss(val);
            std::string tok;
            while (ss >> tok) {
                const size_t e = tok.find('=');
                if (e == std::string::npos) continue;
                const std::string k = tok.substr(0, e), v = tok.substr(e + 1);
                if (k == "seed") p.seed = std::stoull(v);
                else if (k == "scheme") p.scheme = v;
                else if (k == "ignore") p.ignore = v;
                else if (k == "source") p.source = v;
            }
            map.meta.dirs.push_back(p);
        }
    }
    if (map.axes.size() != 2) throw GridFileError(path + ": expected 2 axis header lines");
    if (line != "alpha,beta,lmin,lmax,ratio")
        throw GridFileError(path + ": unexpected column header '" + line + "'");

    const size_t n = static_cast<size_t>(map.cells());
    map.lmin.resize(n);
    map.lmax.resize(n);
    map.ratio.resize(n);
    map.converged.assign(n, 1);
    size_t row = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (row >= n) throw GridFileError(path + ": more data rows than cells");
        std::vector<std::string> parts;
        size_t start = 0;
        while (true) {
            const size_t comma = line.find(',', start);
            parts.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (parts.size() != 5)
            throw GridFileError(path + ": row " + std::to_string(row) + " has " +
                                std::to_string(parts.size()) + " fields, want 5");
        map.lmin[row] = std::strtod(parts[2].c_str(), nullptr);
        map.lmax[row] = std::strtod(parts[3].c_str(), nullptr);
        map.ratio[row] = std::strtod(parts[4].c_str(), nullptr);
        ++row;
    }
    if (row != n)
        throw GridFileError(path + ": " + std::to_string(row) + " rows for " + std::to_string(n) +
                            " cells");
    return map;
}

}  // namespace losslab
