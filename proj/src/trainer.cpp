#include "losslab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "losslab/eval.hpp"
#include "losslab/util.hpp"

namespace losslab {
namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

const char* to_string(Optimizer o) {
    switch (o) {
        case Optimizer::sgd_nesterov: return "sgd-nesterov";
        case Optimizer::adam: return "adam";
    }
    return "?";
}

Optimizer optimizer_from(const std::string& name) {
    if (name == "sgd-nesterov" || name == "sgd") return Optimizer::sgd_nesterov;
    if (name == "adam") return Optimizer::adam;
    throw std::invalid_argument("unknown optimizer '" + name + "' (want sgd-nesterov or adam)");
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr))
        throw std::invalid_argument("TrainConfig: lr must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("TrainConfig: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
        throw std::invalid_argument("TrainConfig: weight decay must be finite and >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (!(lr_drop_factor > 0.0))
        throw std::invalid_argument("TrainConfig: lr drop factor must be > 0");
    for (size_t i = 0; i < lr_drop_epochs.size(); ++i) {
        if (lr_drop_epochs[i] < 1)
            throw std::invalid_argument("TrainConfig: lr drop epochs must be >= 1");
        if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
            throw std::invalid_argument("TrainConfig: lr drop epochs must be strictly increasing");
    }
}

OptimizerState::OptimizerState(Optimizer kind, size_t n, double momentum)
    : kind_(kind), momentum_(momentum) {
    if (kind_ == Optimizer::sgd_nesterov) {
        buf_.assign(n, 0.0);
    } else {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
    }
}

void OptimizerState::step(std::span<double> theta, std::span<const double> grad, double lr,
                          const std::vector<uint8_t>* active) {
    const size_t n = theta.size();
    if (grad.size() != n) throw std::invalid_argument("OptimizerState: theta/grad length mismatch");
    if (active && active->size() != n)
        throw std::invalid_argument("OptimizerState: mask length mismatch");
    if (kind_ == Optimizer::sgd_nesterov) {
        for (size_t i = 0; i < n; ++i) {
            if (active && !(*active)[i]) continue;
            buf_[i] = momentum_ * buf_[i] + grad[i];
            theta[i] -= lr * (grad[i] + momentum_ * buf_[i]);
        }
    } else {
        ++t_;
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
        for (size_t i = 0; i < n; ++i) {
            if (active && !(*active)[i]) continue;
            m_[i] = kAdamBeta1 * m_[i] + (1.0 - kAdamBeta1) * grad[i];
            v_[i] = kAdamBeta2 * v_[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

TrajectoryRecord train(const Model& model, const Dataset& train_set, const Dataset& test_set,
                       const TrainConfig& cfg) {
    cfg.validate();
    const auto meta = model.meta_ptr();
    const size_t n_params = static_cast<size_t>(meta->total);

    std::vector<uint8_t> trainable(n_params), is_weight(n_params);
    for (size_t i = 0; i < n_params; ++i) {
        trainable[i] = meta->is_trainable(meta->kind_of[i]);
        is_weight[i] = meta->kind_of[i] == ParamKind::weight;
    }

    ParamVector theta = model.init(cfg.seed);
    OptimizerState opt(cfg.optimizer, n_params, cfg.momentum);
    // the init consumes cfg.seed directly; the shuffle stream gets its own
    // decorrelated sub-seed so the two never share draws
    Rng64 shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 3);

    const int64_t n = train_set.size();
    TrajectoryRecord rec;
    rec.steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

    auto snapshot = [&](int64_t epoch) {
        Checkpoint c;
        c.epoch = epoch;
        c.theta = theta;
        c.train = evaluate_dataset(model, theta, train_set);
        c.test = evaluate_dataset(model, theta, test_set);
        rec.checkpoints.push_back(std::move(c));
    };
    snapshot(0);

    double lr = cfg.lr;
    std::vector<double> grad;
    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (std::find(cfg.lr_drop_epochs.begin(), cfg.lr_drop_epochs.end(), epoch) !=
            cfg.lr_drop_epochs.end()) {
            lr /= cfg.lr_drop_factor;
            rec.lr_drops_applied.push_back(epoch);
        }
        std::vector<size_t> order = shuffled_indices(static_cast<size_t>(n), shuffle_rng);
        for (int64_t begin = 0; begin < n; begin += cfg.batch_size) {
            const int64_t count = std::min<int64_t>(cfg.batch_size, n - begin);
            Batch b = gather(train_set, std::span<const size_t>(order.data() + begin,
                                                                static_cast<size_t>(count)));
            std::vector<std::pair<size_t, double>> running_updates;
            const double loss =
                model.loss_grad(theta, b.x, b.labels, /*train_mode=*/true, grad, &running_updates);
            if (!std::isfinite(loss)) {
                rec.diverged = true;
                return rec;
            }
            if (cfg.weight_decay != 0.0)
                for (size_t i = 0; i < n_params; ++i)
                    if (is_weight[i]) grad[i] += cfg.weight_decay * theta.values[i];
            opt.step(theta.values, grad, lr, &trainable);
            for (const auto& [off, val] : running_updates) theta.values[off] = val;
            rec.step_weight_norms.push_back(weight_norm(theta));
        }
        snapshot(epoch);
    }
    return rec;
}

std::vector<double> weight_norm_series(const TrajectoryRecord& rec) {
    if (rec.checkpoints.empty())
        throw std::invalid_argument("weight_norm_series: no checkpoints");
    std::vector<double> out;
    out.reserve(rec.checkpoints.size());
    for (const auto& c : rec.checkpoints) out.push_back(weight_norm(c.theta));
    return out;
}

int64_t Histogram::total() const {
    int64_t s = 0;
    for (int64_t c : counts) s += c;
    return s;
}

Histogram weight_histogram(const ParamVector& theta, int bins, double lo, double hi) {
    if (bins < 1) throw std::invalid_argument("weight_histogram: bins must be >= 1");
    if (!(lo < hi)) throw std::invalid_argument("weight_histogram: need lo < hi");
    Histogram h;
    h.lo = lo;
    h.hi = hi;
    h.counts.assign(static_cast<size_t>(bins), 0);
    const auto& meta = *theta.meta;
    const double width = (hi - lo) / bins;
    for (size_t i = 0; i < theta.values.size(); ++i) {
        if (meta.kind_of[i] != ParamKind::weight) continue;
        auto bin = static_cast<int64_t>(std::floor((theta.values[i] - lo) / width));
        bin = std::clamp<int64_t>(bin, 0, bins - 1);
        ++h.counts[static_cast<size_t>(bin)];
    }
    return h;
}

Histogram weight_histogram(const ParamVector& theta, int bins) {
    const auto& meta = *theta.meta;
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (size_t i = 0; i < theta.values.size(); ++i) {
        if (meta.kind_of[i] != ParamKind::weight) continue;
        if (!any) {
            lo = hi = theta.values[i];
            any = true;
        } else {
            lo = std::min(lo, theta.values[i]);
            hi = std::max(hi, theta.values[i]);
        }
    }
    if (!any) throw std::invalid_argument("weight_histogram: model has no weight entries");
    if (lo == hi) hi = lo + 1.0;  // all-equal weights still need a nonempty range
    return weight_histogram(theta, bins, lo, hi);
}

}  // namespace losslab
