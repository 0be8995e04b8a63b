// Times the parallel cell loop against the serial reference on the same
// surface and insists the two outputs are bit-identical, since the serial
// path is the correctness oracle the tests compare against.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <functional>
#include <string>

#include "losslab/data.hpp"
#include "losslab/direction.hpp"
#include "losslab/model.hpp"
#include "losslab/surface.hpp"
#include "losslab/trainer.hpp"

using namespace losslab;

namespace {

double seconds_of(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

bool identical(const LossGrid& a, const LossGrid& b) {
    return a.train_loss == b.train_loss && a.train_err == b.train_err &&
           a.test_loss == b.test_loss && a.test_err == b.test_err && a.overflow == b.overflow;
}

}  // namespace

int main() {
    const TrainTest data = make_synthetic_pair(SyntheticKind::two_moons, 500, 200, 0.2, 1);
    const Model model(ModelSpec::mlp_d(3, 16, 2, 2));

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.seed = 7;
    const ParamVector theta = train(model, data.train, data.test, cfg).final_theta();

    const Direction dx = filter_normalize(sample_gaussian(theta, 1), theta);
    const Direction dy = filter_normalize(sample_gaussian(theta, 2), theta);

#ifdef LOSSLAB_OPENMP
    std::printf("openmp enabled\n");
#else
    std::printf("openmp disabled; both passes run the serial loop\n");
#endif
    std::printf("%-10s %12s %12s %9s %6s\n", "grid", "serial [s]", "parallel [s]", "speedup",
                "match");

    for (int64_t n : {11, 21, 41}) {
        const AxisSpec ax{-1.0, 1.0, n};
        LossGrid serial, parallel;
        EvalOptions opt;

        opt.parallel = false;
        const double ts =
            seconds_of([&] { serial = grid_2d(model, theta, dx, dy, ax, ax, data, opt); });
        opt.parallel = true;
        const double tp =
            seconds_of([&] { parallel = grid_2d(model, theta, dx, dy, ax, ax, data, opt); });

        const bool ok = identical(serial, parallel);
        std::printf("%3" PRId64 "x%-6" PRId64 " %12.3f %12.3f %8.2fx %6s\n", n, n, ts, tp,
                    ts / tp, ok ? "yes" : "NO");
        if (!ok) {
            std::printf("parallel output diverged from the serial reference\n");
            return 1;
        }
    }
    return 0;
}
