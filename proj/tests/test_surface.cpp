#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "losslab/eval.hpp"
#include "losslab/surface.hpp"
#include "losslab/trainer.hpp"
#include "losslab/util.hpp"
#include "test_util.hpp"

using namespace losslab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("surface_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

struct Fixture {
    TrainTest data;
    Model model;
    ParamVector theta;

    Fixture()
        : data(make_synthetic_pair(SyntheticKind::two_moons, 80, 40, 0.2, 5)),
          model(ModelSpec::mlp_d(2, 8, 2, 2)),
          theta(model.init(3)) {}
};

bool same_values(const LossGrid& a, const LossGrid& b) {
    return a.train_loss == b.train_loss && a.train_err == b.train_err &&
           a.test_loss == b.test_loss && a.test_err == b.test_err && a.overflow == b.overflow;
}

}  // namespace

TEST_CASE("axis spec: grid points, validation, parse round-trip") {
    AxisSpec a{-1.0, 1.0, 5};
    CHECK(a.at(0) == -1.0);
    CHECK(a.at(2) == 0.0);
    CHECK(a.at(4) == 1.0);
    CHECK(a.at(1) == -0.5);

    CHECK_THROWS_AS((AxisSpec{1.0, 1.0, 5}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((AxisSpec{2.0, 1.0, 5}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((AxisSpec{0.0, 1.0, 1}.validate()), std::invalid_argument);

    AxisSpec p = AxisSpec::parse("-1:1:401");
    CHECK(p.min == -1.0);
    CHECK(p.max == 1.0);
    CHECK(p.steps == 401);
    CHECK(AxisSpec::parse(p.str()) == p);
    CHECK_THROWS_AS(AxisSpec::parse("1:0:5"), std::invalid_argument);
    CHECK_THROWS_AS(AxisSpec::parse("0:1"), std::invalid_argument);
    CHECK_THROWS_AS(AxisSpec::parse("0:1:5:9"), std::invalid_argument);
    CHECK_THROWS_AS(AxisSpec::parse("a:1:5"), std::invalid_argument);
    CHECK_THROWS_AS(AxisSpec::parse("0:1:many"), std::invalid_argument);
}

TEST_CASE("analytic slices reproduce closed forms through the grid kernel") {
    SUBCASE("interpolation of a scalar square loss") {
        // L(w) = w^2 along (1-a)*0 + a*2: midpoint a = 0.5 gives loss 1
        auto fn = [](double a, double) {
            const double w = (1.0 - a) * 0.0 + a * 2.0;
            return CellStats{w * w, 0.0, w * w, 0.0};
        };
        LossGrid g = eval_slice_1d({0.0, 1.0, 3}, fn);
        CHECK(g.train_loss[1] == 1.0);
        CHECK(g.train_loss[0] == 0.0);
        CHECK(g.train_loss[2] == 4.0);
    }
    SUBCASE("quadratic ray f(a) = a^2/2") {
        auto fn = [](double a, double) { return CellStats{0.5 * a * a, 0.0, 0.5 * a * a, 0.0}; };
        LossGrid g = eval_slice_1d({-1.0, 1.0, 401}, fn);
        for (int64_t i = 0; i < 401; ++i) {
            const double a = g.axes[0].at(i);
            CHECK(g.train_loss[static_cast<size_t>(i)] == 0.5 * a * a);
        }
    }
    SUBCASE("quadratic plane f(a,b) = (a^2+b^2)/2") {
        auto fn = [](double a, double b) {
            const double v = 0.5 * (a * a + b * b);
            return CellStats{v, 0.0, v, 0.0};
        };
        LossGrid g = eval_slice_2d({-1.0, 1.0, 11}, {-1.0, 1.0, 11}, fn);
        for (int64_t i = 0; i < 11; ++i)
            for (int64_t j = 0; j < 11; ++j) {
                const double a = g.axes[0].at(i), b = g.axes[1].at(j);
                CHECK(g.train_loss[g.at(i, j)] == 0.5 * (a * a + b * b));
            }
        CHECK(g.train_loss[g.at(5, 5)] == 0.0);  // center cell is the minimum
    }
}

TEST_CASE("ray curvature on a quadratic matches the directional second derivative") {
    // L(theta) = 0.5 theta^T A theta with SPD A; along theta* + a*delta the
    // fitted second derivative must equal delta^T A delta
    const std::vector<std::vector<double>> A = {
        {4.0, 1.0, 0.0}, {1.0, 3.0, 0.5}, {0.0, 0.5, 2.0}};
    const std::vector<double> delta = {0.6, -0.8, 0.2};
    auto loss = [&](const std::vector<double>& th) {
        double v = 0;
        for (size_t i = 0; i < 3; ++i)
            for (size_t j = 0; j < 3; ++j) v += 0.5 * th[i] * A[i][j] * th[j];
        return v;
    };
    auto fn = [&](double a, double) {
        std::vector<double> th = {a * delta[0], a * delta[1], a * delta[2]};
        const double v = loss(th);
        return CellStats{v, 0.0, v, 0.0};
    };
    LossGrid g = eval_slice_1d({-1.0, 1.0, 401}, fn);

    double dAd = 0;
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 3; ++j) dAd += delta[i] * A[i][j] * delta[j];

    const double h = g.axes[0].at(201) - g.axes[0].at(200);
    const size_t c = 200;
    const double fitted =
        (g.train_loss[c + 1] - 2.0 * g.train_loss[c] + g.train_loss[c - 1]) / (h * h);
    CHECK(std::abs(fitted - dAd) / dAd < 1e-6);
}

TEST_CASE("interpolation endpoints and constancy contracts") {
    Fixture fx;
    ParamVector theta_b = fx.model.init(9);

    SUBCASE("theta_a == theta_b gives a constant grid") {
        LossGrid g = interpolate_1d(fx.model, fx.theta, fx.theta, {-0.5, 1.5, 9}, fx.data);
        for (double v : g.train_loss) CHECK(v == g.train_loss[0]);
        for (double v : g.test_err) CHECK(v == g.test_err[0]);
    }
    SUBCASE("alpha = 0 and alpha = 1 reproduce direct evaluation bitwise") {
        LossGrid g = interpolate_1d(fx.model, fx.theta, theta_b, {0.0, 1.0, 5}, fx.data);
        EvalStats a_tr = evaluate_dataset(fx.model, fx.theta, fx.data.train);
        EvalStats b_tr = evaluate_dataset(fx.model, theta_b, fx.data.train);
        EvalStats b_te = evaluate_dataset(fx.model, theta_b, fx.data.test);
        CHECK(g.train_loss[0] == a_tr.loss);
        CHECK(g.train_err[0] == a_tr.error);
        CHECK(g.train_loss[4] == b_tr.loss);
        CHECK(g.test_loss[4] == b_te.loss);
        CHECK(g.test_err[4] == b_te.error);
    }
    SUBCASE("spec-hash mismatch is rejected") {
        Model other(ModelSpec::mlp_d(2, 9, 2, 2));
        ParamVector foreign = other.init(0);
        CHECK_THROWS_AS(interpolate_1d(fx.model, fx.theta, foreign, {0.0, 1.0, 3}, fx.data),
                        std::invalid_argument);
    }
}

TEST_CASE("interpolation dir-type controls BN buffer handling") {
    auto data = make_synthetic_pair(SyntheticKind::two_moons, 60, 30, 0.2, 7);
    Model model(ModelSpec::mlp_d(2, 8, 2, 2, /*bias=*/true, /*batchnorm=*/true));

    // train briefly so the two endpoints carry different running buffers
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 30;
    cfg.seed = 1;
    TrajectoryRecord run_a = train(model, data.train, data.test, cfg);
    cfg.seed = 2;
    TrajectoryRecord run_b = train(model, data.train, data.test, cfg);
    const ParamVector& ta = run_a.final_theta();
    const ParamVector& tb = run_b.final_theta();

    SUBCASE("states: f(1) equals L(theta_b) bitwise") {
        LossGrid g = interpolate_1d(model, ta, tb, {0.0, 1.0, 3}, data, DirType::states);
        EvalStats direct = evaluate_dataset(model, tb, data.train);
        CHECK(g.train_loss[2] == direct.loss);
    }
    SUBCASE("weights: buffers stay pinned to theta_a along the path") {
        LossGrid g = interpolate_1d(model, ta, tb, {0.0, 1.0, 3}, data, DirType::weights);
        ParamVector hybrid = tb;
        const auto& meta = *ta.meta;
        for (size_t i = 0; i < hybrid.values.size(); ++i)
            if (meta.kind_of[i] == ParamKind::bn_running_stat) hybrid.values[i] = ta.values[i];
        EvalStats direct = evaluate_dataset(model, hybrid, data.train);
        CHECK(g.train_loss[2] == direct.loss);
        CHECK(g.meta.dirtype == DirType::weights);
    }
}

TEST_CASE("ray contracts: center cell, zero direction, symmetry") {
    Fixture fx;
    Direction d = filter_normalize(sample_gaussian(fx.theta, 11), fx.theta);

    SUBCASE("center cell equals L(theta*) bitwise") {
        LossGrid g = ray_1d(fx.model, fx.theta, d, {-1.0, 1.0, 5}, fx.data);
        EvalStats direct_tr = evaluate_dataset(fx.model, fx.theta, fx.data.train);
        EvalStats direct_te = evaluate_dataset(fx.model, fx.theta, fx.data.test);
        CHECK(g.train_loss[2] == direct_tr.loss);
        CHECK(g.test_loss[2] == direct_te.loss);
        CHECK(g.meta.dirs.size() == 1);
        CHECK(g.meta.dirs[0].seed == 11);
        CHECK(g.meta.dirs[0].scheme == "filter");
    }
    SUBCASE("zero direction gives a constant grid") {
        Direction zero = d;
        std::fill(zero.values.begin(), zero.values.end(), 0.0);
        LossGrid g = ray_1d(fx.model, fx.theta, zero, {-1.0, 1.0, 7}, fx.data);
        for (double v : g.train_loss) CHECK(v == g.train_loss[0]);
    }
    SUBCASE("f(alpha; delta) equals f(-alpha; -delta) bitwise on an exact axis") {
        // axis points are exactly representable, so negation is exact too
        Direction neg = d;
        for (double& v : neg.values) v = -v;
        LossGrid g1 = ray_1d(fx.model, fx.theta, d, {-1.0, 1.0, 5}, fx.data);
        LossGrid g2 = ray_1d(fx.model, fx.theta, neg, {-1.0, 1.0, 5}, fx.data);
        for (int64_t i = 0; i < 5; ++i) {
            CHECK(g1.train_loss[static_cast<size_t>(i)] ==
                  g2.train_loss[static_cast<size_t>(4 - i)]);
            CHECK(g1.test_err[static_cast<size_t>(i)] ==
                  g2.test_err[static_cast<size_t>(4 - i)]);
        }
    }
    SUBCASE("foreign direction is rejected") {
        Model other(ModelSpec::mlp_d(2, 9, 2, 2));
        Direction foreign = sample_gaussian(other.init(0), 1);
        CHECK_THROWS_AS(ray_1d(fx.model, fx.theta, foreign, {-1.0, 1.0, 3}, fx.data),
                        std::invalid_argument);
    }
}

TEST_CASE("2d grid matches a brute-force evaluation of each parameter point") {
    Fixture fx;
    Direction d1 = filter_normalize(sample_gaussian(fx.theta, 1), fx.theta);
    Direction d2 = filter_normalize(sample_gaussian(fx.theta, 2), fx.theta);
    AxisSpec ax{-1.0, 1.0, 3};

    LossGrid g = grid_2d(fx.model, fx.theta, d1, d2, ax, ax, fx.data);

    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t j = 0; j < 3; ++j) {
            const double a = ax.at(i), b = ax.at(j);
            ParamVector th = fx.theta;
            for (size_t k = 0; k < th.values.size(); ++k)
                th.values[k] += a * d1.values[k] + b * d2.values[k];
            EvalStats tr = evaluate_dataset(fx.model, th, fx.data.train);
            EvalStats te = evaluate_dataset(fx.model, th, fx.data.test);
            CHECK(g.train_loss[g.at(i, j)] == tr.loss);
            CHECK(g.train_err[g.at(i, j)] == tr.error);
            CHECK(g.test_loss[g.at(i, j)] == te.loss);
            CHECK(g.test_err[g.at(i, j)] == te.error);
        }
    }
    CHECK(g.train_loss[g.at(1, 1)] == evaluate_dataset(fx.model, fx.theta, fx.data.train).loss);
}

TEST_CASE("2d grid rejects degenerate planes") {
    Fixture fx;
    Direction d1 = sample_gaussian(fx.theta, 4);
    Direction d2 = sample_gaussian(fx.theta, 4);
    AxisSpec ax{-1.0, 1.0, 3};
    CHECK_THROWS_AS(grid_2d(fx.model, fx.theta, d1, d2, ax, ax, fx.data), std::invalid_argument);

    // distinct seeds, same values forced: still degenerate
    Direction d3 = sample_gaussian(fx.theta, 5);
    d3.values = d1.values;
    CHECK_THROWS_AS(grid_2d(fx.model, fx.theta, d1, d3, ax, ax, fx.data), std::invalid_argument);
}

TEST_CASE("purity: repeated and parallel evaluations agree bitwise") {
    Fixture fx;
    Direction d1 = filter_normalize(sample_gaussian(fx.theta, 21), fx.theta);
    Direction d2 = filter_normalize(sample_gaussian(fx.theta, 22), fx.theta);
    AxisSpec ax{-1.0, 1.0, 5};

    EvalOptions par;  // defaults: parallel
    EvalOptions ser;
    ser.parallel = false;

    LossGrid a = grid_2d(fx.model, fx.theta, d1, d2, ax, ax, fx.data, par);
    LossGrid b = grid_2d(fx.model, fx.theta, d1, d2, ax, ax, fx.data, par);
    LossGrid c = grid_2d(fx.model, fx.theta, d1, d2, ax, ax, fx.data, ser);
    CHECK(same_values(a, b));
    CHECK(same_values(a, c));

    LossGrid r1 = ray_1d(fx.model, fx.theta, d1, {-1.0, 1.0, 21}, fx.data, par);
    LossGrid r2 = ray_1d(fx.model, fx.theta, d1, {-1.0, 1.0, 21}, fx.data, ser);
    CHECK(same_values(r1, r2));
}

TEST_CASE("subsample option evaluates a deterministic prefix") {
    Fixture fx;
    Direction d = filter_normalize(sample_gaussian(fx.theta, 8), fx.theta);
    EvalOptions opts;
    opts.subsample = 16;
    LossGrid g = ray_1d(fx.model, fx.theta, d, {-1.0, 1.0, 3}, fx.data, opts);

    Batch head = chunk(fx.data.train, 0, 16);
    EvalStats direct = fx.model.evaluate(fx.theta, head.x, head.labels);
    CHECK(g.train_loss[1] == direct.loss);
    CHECK(g.train_err[1] == direct.error);
}

TEST_CASE("overflow cells are capped, flagged, and counted") {
    auto fn = [](double a, double) {
        if (a > 0.5) return CellStats{HUGE_VAL, 0.5, std::nan(""), 0.5};
        return CellStats{1.0, 0.0, 2.0, 0.0};
    };
    LossGrid g = eval_slice_1d({0.0, 1.0, 5}, fn);
    CHECK(g.overflow_cells == 2);
    CHECK(g.train_loss[4] == kOverflowSentinel);
    CHECK(g.test_loss[4] == kOverflowSentinel);
    CHECK(g.overflow[4] == 1);
    CHECK(g.overflow[0] == 0);
    CHECK(g.train_loss[0] == 1.0);
}

TEST_CASE("repeat study: seed control and grid independence") {
    Fixture fx;
    AxisSpec ax{-1.0, 1.0, 7};

    const uint64_t same[2] = {9, 9};
    auto twins = repeat_study(fx.model, fx.theta, same, ax, fx.data);
    REQUIRE(twins.size() == 2);
    CHECK(same_values(twins[0], twins[1]));

    const uint64_t seeds[3] = {1, 2, 3};
    auto grids = repeat_study(fx.model, fx.theta, seeds, ax, fx.data);
    REQUIRE(grids.size() == 3);
    for (size_t s = 0; s < 3; ++s) CHECK(grids[s].meta.dirs[0].seed == seeds[s]);
    CHECK_FALSE(same_values(grids[0], grids[1]));

    const uint64_t one[1] = {5};
    CHECK_THROWS_AS(repeat_study(fx.model, fx.theta, one, ax, fx.data), std::invalid_argument);
}

TEST_CASE("grid csv round-trips bitwise and rewrites byte-identically") {
    TempDir tmp;
    Fixture fx;
    Direction d1 = filter_normalize(sample_gaussian(fx.theta, 31), fx.theta);
    Direction d2 = filter_normalize(sample_gaussian(fx.theta, 32), fx.theta);
    LossGrid g = grid_2d(fx.model, fx.theta, d1, d2, {-1.0, 1.0, 4}, {-0.5, 0.5, 3}, fx.data);
    g.meta.note = "fixture grid";

    write_grid_csv(tmp.file("g.csv"), g);
    LossGrid back = read_grid_csv(tmp.file("g.csv"));

    CHECK(back.axes == g.axes);
    CHECK(same_values(back, g));
    CHECK(back.meta.model_hash == g.meta.model_hash);
    CHECK(back.meta.theta_digest == g.meta.theta_digest);
    CHECK(back.meta.dirs.size() == 2);
    CHECK(back.meta.dirs[1].seed == 32);
    CHECK(back.meta.dirs[1].scheme == "filter");
    CHECK(back.meta.note == "fixture grid");

    write_grid_csv(tmp.file("g2.csv"), back);
    std::ifstream f1(tmp.file("g.csv"), std::ios::binary);
    std::ifstream f2(tmp.file("g2.csv"), std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // 1d files round-trip too, including overflow sentinels
    auto fn = [](double a, double) {
        return a > 0.5 ? CellStats{HUGE_VAL, 1.0, HUGE_VAL, 1.0} : CellStats{0.5, 0.0, 0.6, 0.1};
    };
    LossGrid ray = eval_slice_1d({0.0, 1.0, 5}, fn);
    write_grid_csv(tmp.file("r.csv"), ray);
    LossGrid ray_back = read_grid_csv(tmp.file("r.csv"));
    CHECK(same_values(ray_back, ray));
    CHECK(ray_back.overflow_cells == 2);
}

TEST_CASE("grid csv reader rejects malformed files") {
    TempDir tmp;
    auto write = [&](const char* name, const std::string& text) {
        std::ofstream f(tmp.file(name), std::ios::binary);
        f << text;
        return tmp.file(name);
    };

    CHECK_THROWS_AS(read_grid_csv(tmp.file("missing.csv")), GridFileError);
    CHECK_THROWS_AS(read_grid_csv(write("bad.csv", "hello\n")), GridFileError);
    CHECK_THROWS_AS(read_grid_csv(write("noaxis.csv", "# losslab grid v1\nalpha,train_loss,"
                                                      "train_err,test_loss,test_err\n")),
                    GridFileError);
    CHECK_THROWS_AS(
        read_grid_csv(write("short.csv",
                            "# losslab grid v1\n# axis0 = 0:1:3\n"
                            "alpha,train_loss,train_err,test_loss,test_err\n0,1,0,1,0\n")),
        GridFileError);
    CHECK_THROWS_AS(
        read_grid_csv(write("cols.csv", "# losslab grid v1\n# axis0 = 0:1:2\n"
                                        "alpha,loss\n0,1\n1,1\n")),
        GridFileError);
    CHECK_THROWS_AS(
        read_grid_csv(write(
            "count.csv", "# losslab grid v1\n# axis0 = 0:1:2\n# overflow_cells = 1\n"
                         "alpha,train_loss,train_err,test_loss,test_err\n0,1,0,1,0\n1,1,0,1,0\n")),
        GridFileError);
}
