#pragma once

#include "losslab/data.hpp"
#include "losslab/model.hpp"

namespace losslab {

/// Mean loss and error over a whole dataset, evaluated in inference mode in
/// fixed-size chunks so memory stays bounded. Chunk means are recombined by
/// sample count; floating-point order makes the chunk size part of the
/// bitwise-reproducibility contract, so every evaluator in the toolkit goes
/// through this function with its default.
EvalStats evaluate_dataset(const Model& model, const ParamVector& theta, const Dataset& data,
                           int64_t chunk = 512);

}  // namespace losslab
