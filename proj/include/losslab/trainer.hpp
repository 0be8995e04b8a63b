#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "losslab/data.hpp"
#include "losslab/model.hpp"

namespace losslab {

enum class Optimizer : uint8_t { sgd_nesterov, adam };
const char* to_string(Optimizer o);
Optimizer optimizer_from(const std::string& name);

struct TrainConfig {
    Optimizer optimizer = Optimizer::sgd_nesterov;
    double lr = 0.1;
    double momentum = 0.9;     // Nesterov velocity coefficient; ignored by Adam
    double weight_decay = 0.0; // additive λθ on weight-kind entries
    int64_t batch_size = 128;
    int64_t epochs = 100;
    std::vector<int64_t> lr_drop_epochs;  // lr /= lr_drop_factor entering these epochs
    double lr_drop_factor = 10.0;
    uint64_t seed = 0;

    /// Throws std::invalid_argument on any violated bound. lr = 0 is legal:
    /// it is the fixed-point case the optimizer contracts are tested against.
    void validate() const;
};

/// Per-step update rule, usable directly on raw vectors (tests drive it with
/// analytic gradients) or masked to a model's trainable entries.
///
/// SGD-Nesterov in the lookahead-velocity form:
///     buf = momentum * buf + g;  θ -= lr * (g + momentum * buf)
/// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8 and bias correction.
class OptimizerState {
public:
    OptimizerState(Optimizer kind, size_t n, double momentum);

    /// Updates entries where active[i] != 0 (all entries if active is null).
    /// Masked-out entries keep their optimizer state untouched as well.
    void step(std::span<double> theta, std::span<const double> grad, double lr,
              const std::vector<uint8_t>* active = nullptr);

private:
    Optimizer kind_;
    double momentum_;
    int64_t t_ = 0;                 // adam step counter for bias correction
    std::vector<double> buf_;       // sgd velocity
    std::vector<double> m_, v_;     // adam moments
};

struct Checkpoint {
    int64_t epoch = 0;
    ParamVector theta;  // weights and BN running buffers together
    EvalStats train, test;
};

struct TrajectoryRecord {
    std::vector<Checkpoint> checkpoints;   // epoch 0 is the initialization
    std::vector<int64_t> lr_drops_applied; // epochs at whose start the drop fired
    std::vector<double> step_weight_norms; // ‖θ‖ over weight entries, per optimizer step
    int64_t steps_per_epoch = 0;
    bool diverged = false;  // run aborted on non-finite loss; last finite checkpoint retained

    const ParamVector& final_theta() const { return checkpoints.back().theta; }
};

/// Full training run: epoch-0 checkpoint of the initialization, seeded
/// reshuffle each epoch, one checkpoint (with train/test stats) per epoch.
/// Deterministic for a fixed config and seed.
TrajectoryRecord train(const Model& model, const Dataset& train_set, const Dataset& test_set,
                       const TrainConfig& cfg);

/// ‖θ‖ over weight-kind entries for every checkpoint, in epoch order. The
/// per-iteration counterpart is recorded during training in
/// TrajectoryRecord::step_weight_norms.
std::vector<double> weight_norm_series(const TrajectoryRecord& rec);

struct Histogram {
    double lo = 0.0, hi = 0.0;
    std::vector<int64_t> counts;

    int64_t total() const;
};

/// Histogram of weight-kind entries over [lo, hi]; out-of-range values land
/// in the edge bins so the counts always sum to the weight count. The
/// two-argument form spans [min, max] of the weights themselves.
Histogram weight_histogram(const ParamVector& theta, int bins, double lo, double hi);
Histogram weight_histogram(const ParamVector& theta, int bins);

}  // namespace losslab
