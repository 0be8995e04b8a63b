#include "losslab/eval.hpp"

#include <stdexcept>

namespace losslab {

EvalStats evaluate_dataset(const Model& model, const ParamVector& theta, const Dataset& data,
                           int64_t chunk_size) {
    if (chunk_size < 1) throw std::invalid_argument("evaluate_dataset: chunk size must be >= 1");
    const int64_t n = data.size();
    if (n == 0) throw std::invalid_argument("evaluate_dataset: empty dataset");
    double loss_sum = 0.0;
    double err_sum = 0.0;
    for (int64_t begin = 0; begin < n; begin += chunk_size) {
        const int64_t count = std::min(chunk_size, n - begin);
        Batch b = chunk(data, begin, count);
        EvalStats s = model.evaluate(theta, b.x, b.labels);
        loss_sum += s.loss * static_cast<double>(count);
        err_sum += s.error * static_cast<double>(count);
    }
    return {loss_sum / static_cast<double>(n), err_sum / static_cast<double>(n)};
}

}  // namespace losslab
