// Acceptance gate: one self-contained check per release criterion, one
// [PASS]/[FAIL] line each, nonzero exit when anything fails. Checks that
// need an independent numerical route use Eigen as the oracle; everything
// heavier than a few seconds shares one frozen two-moons study so training
// runs are reused across criteria.

#include <Eigen/Dense>

#include <unistd.h>

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "losslab/curvature.hpp"
#include "losslab/data.hpp"
#include "losslab/direction.hpp"
#include "losslab/eval.hpp"
#include "losslab/model.hpp"
#include "losslab/render.hpp"
#include "losslab/surface.hpp"
#include "losslab/tensor.hpp"
#include "losslab/trainer.hpp"
#include "losslab/trajectory.hpp"
#include "losslab/util.hpp"

#include "test_util.hpp"

using namespace losslab;

namespace {

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

using testutil::close_rel;

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// The frozen two-moons study shared by the training-based criteria: a 3x128
// MLP, lr 0.1 with x10 drops at epochs 75/112/137 of 150, batch 16 against
// batch 512, weight decay 0 against 5e-4. Runs are trained once on first use
// and cached; the full record is kept only where a criterion needs the whole
// trajectory.
struct Study {
    const TrainTest data = make_synthetic_pair(SyntheticKind::two_moons, 1000, 1000, 0.2, 7);
    const Model model{ModelSpec::mlp_d(3, 128, 2, 2)};

    struct Out {
        double init_norm = 0.0, final_norm = 0.0, test_err = 0.0;
        ParamVector theta;
    };

    TrainConfig config(double wd, int64_t batch, uint64_t seed) const {
        TrainConfig cfg;
        cfg.lr = 0.1;
        cfg.momentum = 0.9;
        cfg.epochs = 150;
        cfg.lr_drop_epochs = {75, 112, 137};
        cfg.weight_decay = wd;
        cfg.batch_size = batch;
        cfg.seed = seed;
        return cfg;
    }

    const TrajectoryRecord& plain_record() {
        if (!plain_) plain_ = train(model, data.train, data.test, config(0.0, 16, 1));
        return *plain_;
    }

    const Out& run(double wd, int64_t batch, uint64_t seed) {
        const auto key = std::tuple(wd > 0.0, batch, seed);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        Out out;
        if (wd == 0.0 && batch == 16 && seed == 1) {
            const TrajectoryRecord& rec = plain_record();
            out = summarize(rec);
        } else {
            out = summarize(train(model, data.train, data.test, config(wd, batch, seed)));
        }
        return cache_.emplace(key, std::move(out)).first->second;
    }

private:
    static Out summarize(const TrajectoryRecord& rec) {
        Out out;
        out.init_norm = l2(rec.checkpoints.front().theta.values);
        out.final_norm = l2(rec.final_theta().values);
        out.test_err = rec.checkpoints.back().test.error;
        out.theta = rec.final_theta();
        return out;
    }

    std::optional<TrajectoryRecord> plain_;
    std::map<std::tuple<bool, int64_t, uint64_t>, Out> cache_;
};

constexpr AxisSpec kRayAxis{-2.0, 2.0, 401};

double mean_width(const Model& model, const ParamVector& theta, const TrainTest& data,
                  std::initializer_list<uint64_t> dir_seeds) {
    double sum = 0.0;
    for (uint64_t s : dir_seeds) {
        const Direction d = filter_normalize(sample_gaussian(theta, s), theta);
        const LossGrid g = ray_1d(model, theta, d, kRayAxis, data);
        sum += width_at_level(g, g.train_loss[g.at((kRayAxis.steps - 1) / 2)] + 0.5);
    }
    return sum / static_cast<double>(dir_seeds.size());
}

struct Result {
    bool ok = true;
    std::string detail;

    void require(bool cond, std::string msg) {
        if (!cond && ok) {
            ok = false;
            detail = std::move(msg);
        }
    }
};

// 1. Filter normalization reproduces every filter norm of the reference
// parameters across the whole model zoo.
Result c01_filter_norms(Study&) {
    Result r;
    const ModelSpec zoo[] = {
        ModelSpec::mlp_d(3, 32, 2, 2, true),
        ModelSpec::mlp_d(2, 16, 2, 2, false),
        ModelSpec::convnet_d(2, 4, {1, 8, 8}, 3, true),
        ModelSpec::convnet_d(1, 3, {2, 6, 6}, 2, false),
        ModelSpec::skipnet_d(2, 4, {1, 8, 8}, 2, true),
        ModelSpec::skipnet_d(2, 3, {1, 8, 8}, 2, false),
    };
    double worst = 0.0;
    for (const ModelSpec& spec : zoo) {
        const Model model(spec);
        const ParamVector theta = model.init(5);
        const Direction d = filter_normalize(sample_gaussian(theta, 17), theta);
        for (size_t layer = 0; layer < model.meta().layers.size(); ++layer) {
            for (auto [off, len] : model.meta().filters_of(static_cast<int>(layer))) {
                const double nd = l2({d.values.data() + off, len});
                const double nt = l2({theta.values.data() + off, len});
                const double dev = std::fabs(nd - nt) / std::max(nt, 1e-300);
                worst = std::max(worst, dev);
                r.require(dev <= 1e-12,
                          fmt("layer %zu filter norm off by %.3e relative", layer, dev));
            }
        }
    }
    if (r.ok) r.detail = fmt("max filter-norm deviation %.2e relative", worst);
    return r;
}

// 2. Rescaling a bias-free ReLU pair of layers leaves filter-normalized ray
// profiles unchanged.
Result c02_rescale_invariance(Study&) {
    Result r;
    const Model model(ModelSpec::mlp_d(3, 16, 2, 2, false));
    const ParamVector theta = model.init(3);
    const TrainTest data = make_synthetic_pair(SyntheticKind::two_moons, 256, 128, 0.2, 9);
    const AxisSpec axis{-1.0, 1.0, 401};
    double worst = 0.0;
    for (int layer : {0, 2}) {
        const ParamVector scaled = rescale_pair(theta, layer, 10.0);
        const Direction d = filter_normalize(sample_gaussian(theta, 21), theta);
        const Direction ds = filter_normalize(sample_gaussian(scaled, 21), scaled);
        const LossGrid a = ray_1d(model, theta, d, axis, data);
        const LossGrid b = ray_1d(model, scaled, ds, axis, data);
        for (int64_t i = 0; i < axis.steps; ++i) {
            const size_t k = a.at(i);
            for (auto [va, vb] : {std::pair{a.train_loss[k], b.train_loss[k]},
                                  std::pair{a.test_loss[k], b.test_loss[k]}}) {
                const double dev = std::fabs(va - vb) / std::max({std::fabs(va), std::fabs(vb), 1e-12});
                worst = std::max(worst, dev);
                r.require(dev <= 1e-6, fmt("layer %d alpha %.3f loss dev %.3e", layer,
                                           axis.at(i), dev));
            }
            r.require(std::fabs(a.train_err[k] - b.train_err[k]) <= 1e-6 &&
                          std::fabs(a.test_err[k] - b.test_err[k]) <= 1e-6,
                      fmt("layer %d alpha %.3f error mismatch", layer, axis.at(i)));
        }
    }
    if (r.ok) r.detail = fmt("max pointwise loss deviation %.2e relative", worst);
    return r;
}

// 3. Analytic gradients and Hessian-vector products agree with central
// finite differences on models that exercise every layer kind.
Result c03_grad_hvp_fd(Study&) {
    Result r;
    const ModelSpec zoo[] = {
        ModelSpec::mlp_d(2, 8, 2, 2, true),
        ModelSpec::convnet_d(1, 2, {1, 6, 6}, 2, true),
        ModelSpec::skipnet_d(2, 2, {1, 6, 6}, 2, true),
    };
    double worst_g = 0.0, worst_h = 0.0;
    for (const ModelSpec& spec : zoo) {
        const Model model(spec);
        const ParamMeta& meta = model.meta();
        r.require(meta.total <= 500, fmt("model has %zu parameters", meta.total));

        std::vector<int64_t> shape{8};
        for (int64_t d : spec.input_shape) shape.push_back(d);
        Tensor x = Tensor::zeros(shape);
        Rng64 rng(19);
        for (double& v : x.data) v = 0.5 * rng.gaussian();
        std::vector<int> labels(8);
        for (size_t i = 0; i < labels.size(); ++i)
            labels[i] = static_cast<int>(i % static_cast<size_t>(spec.classes));

        // the symmetric zero-bias init can sit exactly on a ReLU/maxpool
        // boundary where the gradient jumps; jitter moves the probe point
        // off every piecewise seam
        ParamVector theta = model.init(7);
        Rng64 jit(101);
        for (size_t i = 0; i < theta.values.size(); ++i)
            if (meta.is_trainable(meta.kind_of[i])) theta.values[i] += 0.05 * jit.gaussian();
        auto with = [&](const std::vector<double>& vals) {
            return ParamVector{model.meta_ptr(), vals};
        };

        std::vector<double> grad;
        model.loss_grad(theta, x, labels, true, grad);
        const std::vector<double> fd = testutil::fd_gradient(
            [&](const std::vector<double>& v) {
                std::vector<double> g;
                return model.loss_grad(with(v), x, labels, true, g);
            },
            theta.values);
        for (size_t i = 0; i < grad.size(); ++i) {
            const double dev = std::fabs(grad[i] - fd[i]);
            worst_g = std::max(worst_g, dev);
            r.require(dev <= 1e-6, fmt("gradient entry %zu off by %.3e", i, dev));
        }

        std::vector<double> v(meta.total, 0.0);
        for (size_t i = 0; i < v.size(); ++i)
            if (meta.is_trainable(meta.kind_of[i])) v[i] = rng.gaussian();
        const std::vector<double> hv = model.hvp(theta, x, labels, v);
        const std::vector<double> fdh = testutil::fd_hvp(
            [&](const std::vector<double>& p) {
                std::vector<double> g;
                model.loss_grad(with(p), x, labels, false, g);
                return g;
            },
            theta.values, v);
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < hv.size(); ++i) {
            num = std::max(num, std::fabs(hv[i] - fdh[i]));
            den = std::max(den, std::fabs(fdh[i]));
        }
        const double rel = num / std::max(den, 1e-12);
        worst_h = std::max(worst_h, rel);
        r.require(rel <= 1e-4, fmt("hvp off by %.3e relative", rel));
    }
    if (r.ok) r.detail = fmt("gradient dev %.2e abs, hvp dev %.2e rel", worst_g, worst_h);
    return r;
}

Eigen::MatrixXd dense_weight_hessian(const HvpFn& oracle, int64_t dim) {
    Eigen::MatrixXd h(dim, dim);
    std::vector<double> e(static_cast<size_t>(dim), 0.0);
    for (int64_t j = 0; j < dim; ++j) {
        e[static_cast<size_t>(j)] = 1.0;
        const std::vector<double> col = oracle(e);
        for (int64_t i = 0; i < dim; ++i) h(i, j) = col[static_cast<size_t>(i)];
        e[static_cast<size_t>(j)] = 0.0;
    }
    return 0.5 * (h + h.transpose());
}

// 4. Lanczos extremal eigenvalues match a dense eigendecomposition on
// trained models, both at the minimizer and per cell of a ratio map.
Result c04_lanczos_vs_dense(Study&) {
    Result r;
    const Model model(ModelSpec::mlp_d(2, 6, 2, 2, true));
    r.require(model.meta().total <= 200, fmt("model has %zu parameters", model.meta().total));
    const TrainTest data = make_synthetic_pair(SyntheticKind::two_moons, 150, 75, 0.2, 11);
    const int64_t dim = weight_dim(model.meta());

    LanczosSettings ls;
    ls.iterations = dim;
    ls.tol = 1e-9;
    ls.seed = 3;

    double worst = 0.0;
    ParamVector first_theta;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        TrainConfig cfg;
        cfg.lr = 0.1;
        cfg.momentum = 0.9;
        cfg.batch_size = 16;
        cfg.epochs = 60;
        cfg.seed = seed;
        const ParamVector theta = train(model, data.train, data.test, cfg).final_theta();
        if (seed == 1) first_theta = theta;

        const HvpFn oracle = weight_hessian_oracle(model, theta, data.train);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense_weight_hessian(oracle, dim));
        const double dmin = eig.eigenvalues().minCoeff();
        const double dmax = eig.eigenvalues().maxCoeff();

        const Extremal ex = lanczos_extremal(oracle, dim, ls);
        r.require(ex.converged, fmt("seed %" PRIu64 ": lanczos did not converge", seed));
        const double radius = std::max(std::fabs(dmin), std::fabs(dmax));
        for (auto [got, want] : {std::pair{ex.lmin, dmin}, std::pair{ex.lmax, dmax}}) {
            const double dev = std::fabs(got - want) / std::max({std::fabs(want), 1e-9 * radius, 1e-12});
            worst = std::max(worst, dev);
            r.require(dev <= 1e-6,
                      fmt("seed %" PRIu64 ": eigenvalue %.6e vs dense %.6e", seed, got, want));
        }
    }

    const Direction d1 = filter_normalize(sample_gaussian(first_theta, 11), first_theta);
    const Direction d2 = filter_normalize(sample_gaussian(first_theta, 12), first_theta);
    const AxisSpec ax{-0.5, 0.5, 3};
    const EigRatioMap map = ratio_map(model, first_theta, d1, d2, ax, ax, data.train, ls);
    double worst_ratio = 0.0;
    for (int64_t i = 0; i < ax.steps; ++i) {
        for (int64_t j = 0; j < ax.steps; ++j) {
            const size_t cell = map.at(i, j);
            r.require(map.converged[cell] != 0, fmt("cell %zu unconverged", cell));
            ParamVector theta = first_theta;
            for (size_t k = 0; k < theta.values.size(); ++k)
                theta.values[k] += ax.at(i) * d1.values[k] + ax.at(j) * d2.values[k];
            const HvpFn oracle = weight_hessian_oracle(model, theta, data.train);
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
                dense_weight_hessian(oracle, dim));
            const double want = std::fabs(eig.eigenvalues().minCoeff() / eig.eigenvalues().maxCoeff());
            const double dev = std::fabs(map.ratio[cell] - want) /
                               std::max({std::fabs(want), std::fabs(map.ratio[cell]), 1e-9});
            worst_ratio = std::max(worst_ratio, dev);
            r.require(dev <= 1e-4, fmt("cell %zu ratio %.6e vs dense %.6e", cell,
                                       map.ratio[cell], want));
        }
    }
    if (r.ok) r.detail = fmt("eigenvalue dev %.2e, ratio dev %.2e", worst, worst_ratio);
    return r;
}

// 5. The fitted second derivative of a 1D slice of a quadratic recovers the
// exact directional curvature delta'A delta.
Result c05_quadratic_slice(Study&) {
    Result r;
    Rng64 rng(42);
    const int n = 50;
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::MatrixXd b(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) b(i, j) = rng.gaussian() / std::sqrt(double(n));
        const Eigen::MatrixXd a = b.transpose() * b + 0.1 * Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd theta(n), delta(n);
        for (int i = 0; i < n; ++i) {
            theta(i) = rng.gaussian();
            delta(i) = rng.gaussian();
        }

        const AxisSpec axis{-1.0, 1.0, 5};
        const LossGrid g = eval_slice_1d(
            axis,
            [&](double alpha, double) {
                const Eigen::VectorXd p = theta + alpha * delta;
                const double f = 0.5 * p.dot(a * p);
                return CellStats{f, 0.0, f, 0.0};
            },
            false);
        const double h = axis.at(3) - axis.at(2);
        const double fitted =
            (g.train_loss[g.at(1)] - 2.0 * g.train_loss[g.at(2)] + g.train_loss[g.at(3)]) / (h * h);
        const double exact = delta.dot(a * delta);
        const double dev = std::fabs(fitted - exact) / std::fabs(exact);
        worst = std::max(worst, dev);
        r.require(dev <= 1e-6, fmt("rep %d curvature %.8e vs %.8e", rep, fitted, exact));
    }
    if (r.ok) r.detail = fmt("max curvature deviation %.2e relative", worst);
    return r;
}

// 6. Independent Gaussian directions in high dimension are nearly
// orthogonal: mean |cos| tracks sqrt(2/(pi n)).
Result c06_orthogonality(Study&) {
    Result r;
    const size_t n = 10000, pairs = 10000;
    Rng64 rng(123);
    std::vector<double> u(n), v(n);
    double sum = 0.0;
    for (size_t p = 0; p < pairs; ++p) {
        for (size_t i = 0; i < n; ++i) u[i] = rng.gaussian();
        for (size_t i = 0; i < n; ++i) v[i] = rng.gaussian();
        sum += std::fabs(dot(u, v)) / (l2(u) * l2(v));
    }
    const double mean = sum / static_cast<double>(pairs);
    const double want = std::sqrt(2.0 / (M_PI * static_cast<double>(n)));
    const double dev = std::fabs(mean - want) / want;
    r.require(dev <= 0.10, fmt("mean |cos| %.6f vs %.6f (off %.1f%%)", mean, want, 100 * dev));
    if (r.ok) r.detail = fmt("mean |cos| %.6f vs %.6f (off %.2f%%)", mean, want, 100 * dev);
    return r;
}

// 7. Trajectory PCA against a dense SVD oracle, plus exact variance capture
// for a path confined to a plane.
Result c07_pca_vs_svd(Study&) {
    Result r;
    const Model model(ModelSpec::mlp_d(1, 8, 4, 3, true));
    const ParamVector base = model.init(1);
    const ParamMeta& meta = model.meta();
    std::vector<size_t> widx;
    for (size_t i = 0; i < meta.total; ++i)
        if (meta.kind_of[i] == ParamKind::weight) widx.push_back(i);

    Rng64 rng(7);
    const int64_t k = 9;
    TrajectoryRecord rec;
    for (int64_t e = 0; e < k; ++e) {
        Checkpoint cp;
        cp.epoch = e;
        cp.theta = base;
        for (size_t i : widx) cp.theta.values[i] += rng.gaussian();
        rec.checkpoints.push_back(std::move(cp));
    }
    const PCAProjection pca = pca_directions(rec);

    Eigen::MatrixXd diff(k - 1, static_cast<int64_t>(widx.size()));
    for (int64_t row = 0; row < k - 1; ++row)
        for (size_t c = 0; c < widx.size(); ++c)
            diff(row, static_cast<int64_t>(c)) = rec.checkpoints[static_cast<size_t>(row)].theta.values[widx[c]] -
                                                 rec.checkpoints.back().theta.values[widx[c]];
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(diff, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const double total = sv.array().square().sum();
    r.require(close_rel(pca.var1, sv(0) * sv(0) / total, 1e-8, 1e-12) &&
                  close_rel(pca.var2, sv(1) * sv(1) / total, 1e-8, 1e-12),
              fmt("variance fractions %.10f/%.10f vs svd %.10f/%.10f", pca.var1, pca.var2,
                  sv(0) * sv(0) / total, sv(1) * sv(1) / total));

    double worst = 0.0;
    for (int axis = 0; axis < 2; ++axis) {
        const Direction& d = axis == 0 ? pca.dir1 : pca.dir2;
        const Eigen::VectorXd want = svd.matrixV().col(axis);
        double got_dot = 0.0;
        for (size_t c = 0; c < widx.size(); ++c) got_dot += d.values[widx[c]] * want(static_cast<int64_t>(c));
        const double sign = got_dot < 0 ? -1.0 : 1.0;
        for (size_t c = 0; c < widx.size(); ++c) {
            const double dev = std::fabs(d.values[widx[c]] - sign * want(static_cast<int64_t>(c)));
            worst = std::max(worst, dev);
            r.require(dev <= 1e-8, fmt("pca-%d direction entry off by %.3e", axis + 1, dev));
        }
    }

    // a path that truly lives in a 2-plane
    std::vector<double> p(meta.total, 0.0), q(meta.total, 0.0);
    for (size_t i : widx) p[i] = rng.gaussian();
    for (size_t i : widx) q[i] = rng.gaussian();
    const double np = l2(p);
    for (double& x : p) x /= np;
    const double pq = dot(p, q);
    for (size_t i = 0; i < q.size(); ++i) q[i] -= pq * p[i];
    const double nq = l2(q);
    for (double& x : q) x /= nq;
    TrajectoryRecord planar;
    for (int64_t e = 0; e < 7; ++e) {
        Checkpoint cp;
        cp.epoch = e;
        cp.theta = base;
        const double a = rng.gaussian(), b = rng.gaussian();
        for (size_t i = 0; i < meta.total; ++i) cp.theta.values[i] += a * p[i] + b * q[i];
        planar.checkpoints.push_back(std::move(cp));
    }
    const PCAProjection flat = pca_directions(planar);
    const double sumvar = flat.var1 + flat.var2;
    r.require(std::fabs(sumvar - 1.0) <= 1e-10, fmt("planar variance sum %.12f", sumvar));
    if (r.ok)
        r.detail = fmt("direction dev %.2e, planar variance sum 1%+.1e", worst, sumvar - 1.0);
    return r;
}

// 8. Random orthonormal planes miss a real SGD trajectory that the PCA
// plane captures.
Result c08_random_plane_failure(Study& study) {
    Result r;
    const TrajectoryRecord& rec = study.plain_record();
    const PCAProjection pca = pca_directions(rec);
    const double captured = captured_variance(rec, pca.dir1, pca.dir2);
    r.require(captured >= 0.40, fmt("pca plane captures only %.4f", captured));

    const ParamVector& theta = rec.final_theta();
    double worst = 0.0;
    for (uint64_t t = 0; t < 10; ++t) {
        Direction e1 = sample_gaussian(theta, 1000 + 2 * t);
        Direction e2 = sample_gaussian(theta, 1001 + 2 * t);
        const double n1 = l2(e1.values);
        for (double& x : e1.values) x /= n1;
        const double x12 = dot(e1.values, e2.values);
        for (size_t i = 0; i < e2.values.size(); ++i) e2.values[i] -= x12 * e1.values[i];
        const double n2 = l2(e2.values);
        for (double& x : e2.values) x /= n2;
        const double cap = captured_variance(rec, e1, e2);
        worst = std::max(worst, cap);
        r.require(cap < 0.05, fmt("random pair %" PRIu64 " captures %.4f", t, cap));
    }
    if (r.ok) r.detail = fmt("pca captures %.3f, random pairs at most %.5f", captured, worst);
    return r;
}

// 9. Weight-norm mechanics of the frozen study: norms grow without decay,
// and with decay the small-batch run ends smaller than the large-batch run.
Result c09_weight_norms(Study& study) {
    Result r;
    std::string note;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        const Study::Out& plain = study.run(0.0, 16, seed);
        r.require(plain.final_norm > plain.init_norm,
                  fmt("seed %" PRIu64 ": norm %.3f did not grow from %.3f", seed,
                      plain.final_norm, plain.init_norm));
        const Study::Out& small = study.run(5e-4, 16, seed);
        const Study::Out& large = study.run(5e-4, 512, seed);
        r.require(small.final_norm < large.final_norm,
                  fmt("seed %" PRIu64 ": batch-16 norm %.3f >= batch-512 norm %.3f", seed,
                      small.final_norm, large.final_norm));
        if (seed == 1)
            note = fmt("seed 1: %.1f->%.1f without decay; %.2f vs %.2f with", plain.init_norm,
                       plain.final_norm, small.final_norm, large.final_norm);
    }
    if (r.ok) r.detail = note;
    return r;
}

// 10. Small-batch minimizers are wider at matched loss offsets and
// generalize better than large-batch ones.
Result c10_width_vs_batch(Study& study) {
    Result r;
    double err_small = 0.0, err_large = 0.0;
    std::string note;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        const Study::Out& small = study.run(5e-4, 16, seed);
        const Study::Out& large = study.run(5e-4, 512, seed);
        const double ws = mean_width(study.model, small.theta, study.data, {1, 2, 3});
        const double wl = mean_width(study.model, large.theta, study.data, {1, 2, 3});
        r.require(ws > wl, fmt("seed %" PRIu64 ": width %.4f <= %.4f", seed, ws, wl));
        err_small += small.test_err / 3.0;
        err_large += large.test_err / 3.0;
        if (seed == 1) note = fmt("seed 1: width %.3f vs %.3f", ws, wl);
    }
    r.require(err_small < err_large,
              fmt("mean test error %.4f not below %.4f", err_small, err_large));
    if (r.ok) r.detail = note + fmt("; mean test error %.4f vs %.4f", err_small, err_large);
    return r;
}

// 11. Interpolation endpoints reproduce direct evaluations bit for bit.
Result c11_endpoint_exactness(Study& study) {
    Result r;
    const ParamVector& ta = study.run(5e-4, 16, 1).theta;
    const ParamVector& tb = study.run(5e-4, 16, 2).theta;
    const AxisSpec axis{-0.5, 1.5, 201};
    int64_t i0 = -1, i1 = -1;
    for (int64_t i = 0; i < axis.steps; ++i) {
        if (axis.at(i) == 0.0) i0 = i;
        if (axis.at(i) == 1.0) i1 = i;
    }
    r.require(i0 >= 0 && i1 >= 0, "axis misses an exact 0 or 1");
    if (!r.ok) return r;

    const LossGrid g = interpolate_1d(study.model, ta, tb, axis, study.data);
    auto exact = [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; };
    for (auto [idx, theta] : {std::pair{i0, &ta}, std::pair{i1, &tb}}) {
        const EvalStats train = evaluate_dataset(study.model, *theta, study.data.train);
        const EvalStats test = evaluate_dataset(study.model, *theta, study.data.test);
        const size_t k = g.at(idx);
        r.require(exact(g.train_loss[k], train.loss) && exact(g.train_err[k], train.error) &&
                      exact(g.test_loss[k], test.loss) && exact(g.test_err[k], test.error),
                  fmt("endpoint alpha=%g differs from direct evaluation", g.axes[0].at(idx)));
    }
    if (r.ok) r.detail = "both endpoints bitwise equal to direct evaluations";
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 12. Reruns of one CLI command are byte-identical, and repeated
// filter-normalized rays give stable widths.
Result c12_determinism(Study& study) {
    Result r;
    const std::string dir = "/tmp/losslab_acceptance_" + std::to_string(getpid());
    r.require(std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str()) == 0,
              "workspace setup failed");
    if (!r.ok) return r;
    {
        std::ofstream cfg(dir + "/model.cfg");
        cfg << ModelSpec::mlp_d(2, 8, 2, 2).serialize();
    }
    auto run = [&](const std::string& args) {
        const std::string cmd = std::string(LOSSLAB_BIN) + " " + args + " >/dev/null 2>&1";
        return std::system(cmd.c_str()) == 0;
    };
    const std::string data_flags = " --data two-moons --train-n 120 --test-n 60 --noise 0.2 --data-seed 5";
    r.require(run("train --model " + dir + "/model.cfg" + data_flags +
                  " --epochs 8 --batch 16 --lr 0.1 --seed 4 --out " + dir + "/theta.ckpt"),
              "cli train failed");
    const std::string grid_cmd = "grid2d --model " + dir + "/model.cfg --theta " + dir +
                                 "/theta.ckpt" + data_flags +
                                 " --x=-1:1:9 --y=-1:1:9 --xseed 1 --yseed 2 --out " + dir +
                                 "/grid.csv";
    r.require(run(grid_cmd), "cli grid2d failed");
    const std::string first = slurp(dir + "/grid.csv");
    const std::string first_meta = slurp(dir + "/grid.csv.meta");
    r.require(run(grid_cmd), "cli grid2d rerun failed");
    r.require(!first.empty() && first == slurp(dir + "/grid.csv") &&
                  first_meta == slurp(dir + "/grid.csv.meta"),
              "rerun bytes differ");
    r.require(std::system(("rm -rf " + dir).c_str()) == 0, "workspace cleanup failed");

    const ParamVector& theta = study.plain_record().final_theta();
    const std::vector<uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const std::vector<LossGrid> grids = repeat_study(study.model, theta, seeds, kRayAxis, study.data);
    std::vector<double> widths;
    for (const LossGrid& g : grids)
        widths.push_back(width_at_level(g, g.train_loss[g.at((kRayAxis.steps - 1) / 2)] + 0.5));
    double mean = 0.0;
    for (double w : widths) mean += w / static_cast<double>(widths.size());
    double var = 0.0;
    for (double w : widths) var += (w - mean) * (w - mean);
    var /= static_cast<double>(widths.size() - 1);
    const double cv = std::sqrt(var) / mean;
    r.require(cv < 0.5, fmt("width cv %.3f over 10 seeds", cv));
    if (r.ok) r.detail = fmt("rerun bytes equal; width cv %.3f (mean %.3f)", cv, mean);
    return r;
}

// 13. Marching squares on a paraboloid: the extracted level set hugs the
// exact circle to within one cell diagonal.
Result c13_contour_accuracy(Study&) {
    Result r;
    const AxisSpec ax{-1.0, 1.0, 51};
    const LossGrid g = eval_slice_2d(
        ax, ax,
        [](double a, double b) {
            const double f = a * a + b * b;
            return CellStats{f, 0.0, f, 0.0};
        },
        false);
    const auto polys = contour_lines(g, 0.25);
    r.require(!polys.empty(), "no contour extracted");
    const double diag = std::hypot(ax.at(1) - ax.at(0), ax.at(1) - ax.at(0));
    double worst = 0.0;
    size_t pts = 0;
    for (const Polyline& poly : polys) {
        for (auto [x, y] : poly.pts) {
            worst = std::max(worst, std::fabs(std::hypot(x, y) - 0.5));
            ++pts;
        }
    }
    r.require(worst < diag, fmt("max radial deviation %.4f vs cell diagonal %.4f", worst, diag));
    if (r.ok)
        r.detail = fmt("%zu vertices, max radial deviation %.4f (diagonal %.4f)", pts, worst, diag);
    return r;
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 means no budget
    Result (*fn)(Study&);
};

}  // namespace

int main() {
    const Criterion criteria[] = {
        {1, "filter norms match the reference parameters", 1, c01_filter_norms},
        {2, "layer rescaling leaves normalized rays unchanged", 10, c02_rescale_invariance},
        {3, "gradients and hvps agree with finite differences", 30, c03_grad_hvp_fd},
        {4, "lanczos matches a dense eigensolver", 120, c04_lanczos_vs_dense},
        {5, "slice curvature of a quadratic is exact", 10, c05_quadratic_slice},
        {6, "random high-dimensional directions are near-orthogonal", 5, c06_orthogonality},
        {7, "trajectory pca matches a dense svd", 5, c07_pca_vs_svd},
        {8, "random planes miss the trajectory, the pca plane does not", 300, c08_random_plane_failure},
        {9, "weight norms grow without decay and shrink with it", 600, c09_weight_norms},
        {10, "small-batch minimizers are wider and generalize better", 900, c10_width_vs_batch},
        {11, "interpolation endpoints are bitwise exact", 0, c11_endpoint_exactness},
        {12, "reruns are byte-identical and widths are stable", 0, c12_determinism},
        {13, "marching squares traces the exact circle", 0, c13_contour_accuracy},
    };

    Study study;
    int failed = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Result res;
        try {
            res = c.fn(study);
        } catch (const std::exception& e) {
            res.ok = false;
            res.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (res.ok && c.budget_s > 0 && secs > c.budget_s) {
            res.ok = false;
            res.detail = fmt("over budget: %.1fs > %.0fs; %s", secs, c.budget_s, res.detail.c_str());
        }
        std::printf("%s %2d  %-55s %7.1fs  %s\n", res.ok ? "[PASS]" : "[FAIL]", c.id, c.name,
                    secs, res.detail.c_str());
        std::fflush(stdout);
        if (!res.ok) ++failed;
    }
    if (failed) std::printf("%d criterion(s) failed\n", failed);
    return failed ? 1 : 0;
}
