#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "losslab/model.hpp"

namespace losslab {

enum class NormScheme : uint8_t { none, filter, layer };
enum class IgnorePolicy : uint8_t { biasbn, none };

const char* to_string(NormScheme s);
const char* to_string(IgnorePolicy p);
NormScheme norm_scheme_from(const std::string& name);
IgnorePolicy ignore_policy_from(const std::string& name);

/// A vector in parameter space carrying the same structural metadata as the
/// θ it perturbs, plus the provenance needed to reproduce it exactly.
struct Direction {
    std::shared_ptr<const ParamMeta> meta;
    std::vector<double> values;
    NormScheme scheme = NormScheme::none;
    IgnorePolicy ignore = IgnorePolicy::biasbn;
    uint64_t seed = 0;

    size_t size() const { return values.size(); }
};

/// I.i.d. standard normal entries on non-ignored positions, zeros elsewhere.
/// Under biasbn, bias and all BN entries are ignored; BN running buffers are
/// never sampled under either policy (they are statistics, not parameters).
/// Ignored positions consume no draws, so the stream is stable per seed.
Direction sample_gaussian(const ParamVector& theta_template, uint64_t seed,
                          IgnorePolicy ignore = IgnorePolicy::biasbn);

/// Per-filter rescale d_f <- (d_f / ||d_f||) * ||theta_f|| (Frobenius norms).
/// Degenerate filters (zero d or zero theta) come out all-zero. With
/// ignore = none, each non-weight trainable region is treated as one filter.
Direction filter_normalize(const Direction& d, const ParamVector& theta);

/// Same at layer granularity: all of a layer's participating entries share
/// one scale ||theta_layer|| / ||d_layer||.
Direction layer_normalize(const Direction& d, const ParamVector& theta);

/// d1.d2 / (||d1|| ||d2||). Throws on a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace losslab
