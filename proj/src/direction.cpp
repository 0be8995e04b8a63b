#include "losslab/direction.hpp"

#include <cmath>
#include <stdexcept>

#include "losslab/util.hpp"

namespace losslab {

const char* to_string(NormScheme s) {
    switch (s) {
        case NormScheme::none: return "none";
        case NormScheme::filter: return "filter";
        case NormScheme::layer: return "layer";
    }
    return "?";
}

const char* to_string(IgnorePolicy p) {
    switch (p) {
        case IgnorePolicy::biasbn: return "biasbn";
        case IgnorePolicy::none: return "none";
    }
    return "?";
}

NormScheme norm_scheme_from(const std::string& name) {
    if (name == "none") return NormScheme::none;
    if (name == "filter") return NormScheme::filter;
    if (name == "layer") return NormScheme::layer;
    throw std::invalid_argument("unknown normalization scheme '" + name +
                                "' (want none, filter, or layer)");
}

IgnorePolicy ignore_policy_from(const std::string& name) {
    if (name == "biasbn") return IgnorePolicy::biasbn;
    if (name == "none") return IgnorePolicy::none;
    throw std::invalid_argument("unknown ignore policy '" + name + "' (want biasbn or none)");
}

namespace {

bool sampled(ParamKind k, IgnorePolicy p) {
    if (k == ParamKind::bn_running_stat) return false;
    if (p == IgnorePolicy::biasbn) return k == ParamKind::weight;
    return true;
}

double norm_of(std::span<const double> v, size_t off, size_t len) {
    double s = 0.0;
    for (size_t i = off; i < off + len; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

// d[off..off+len) <- d * ||theta range|| / ||d range||, zeros when degenerate
void rescale_range(std::vector<double>& d, const std::vector<double>& theta, size_t off, size_t len) {
    const double nd = norm_of(d, off, len);
    const double nt = norm_of(theta, off, len);
    if (nd == 0.0 || nt == 0.0) {
        std::fill(d.begin() + static_cast<std::ptrdiff_t>(off),
                  d.begin() + static_cast<std::ptrdiff_t>(off + len), 0.0);
        return;
    }
    const double c = nt / nd;
    for (size_t i = off; i < off + len; ++i) d[i] *= c;
}

void check_pair(const Direction& d, const ParamVector& theta) {
    if (!d.meta || !theta.meta) throw std::invalid_argument("direction/theta missing metadata");
    if (d.meta->spec_hash != theta.meta->spec_hash || d.values.size() != theta.values.size())
        throw std::invalid_argument("direction does not match theta: " +
                                    std::to_string(d.values.size()) + " entries vs " +
                                    std::to_string(theta.values.size()));
}

}  // namespace

Direction sample_gaussian(const ParamVector& theta_template, uint64_t seed, IgnorePolicy ignore) {
    if (!theta_template.meta)
        throw std::invalid_argument("sample_gaussian: template has no metadata");
    Direction d;
    d.meta = theta_template.meta;
    d.values.assign(theta_template.values.size(), 0.0);
    d.scheme = NormScheme::none;
    d.ignore = ignore;
    d.seed = seed;
    Rng64 rng(seed);
    for (const ParamRegion& r : d.meta->regions) {
        if (!sampled(r.kind, ignore)) continue;
        for (size_t i = r.offset; i < r.offset + r.size; ++i) d.values[i] = rng.gaussian();
    }
    return d;
}

Direction filter_normalize(const Direction& d, const ParamVector& theta) {
    check_pair(d, theta);
    Direction out = d;
    out.scheme = NormScheme::filter;
    for (const ParamRegion& r : d.meta->regions) {
        if (r.kind == ParamKind::bn_running_stat) continue;
        if (r.kind == ParamKind::weight) {
            for (size_t off = r.offset; off < r.offset + r.size; off += r.filter_size)
                rescale_range(out.values, theta.values, off, r.filter_size);
        } else if (d.ignore == IgnorePolicy::none) {
            // non-canonical extension: bias/BN vectors act as one filter each
            rescale_range(out.values, theta.values, r.offset, r.size);
        }
        // ignored regions hold zeros and stay zero
    }
    return out;
}

Direction layer_normalize(const Direction& d, const ParamVector& theta) {
    check_pair(d, theta);
    Direction out = d;
    out.scheme = NormScheme::layer;
    const ParamMeta& m = *d.meta;
    for (size_t li = 0; li < m.layers.size(); ++li) {
        // one shared scale across everything this layer contributes
        double nd2 = 0.0, nt2 = 0.0;
        std::vector<const ParamRegion*> parts;
        for (const ParamRegion& r : m.regions) {
            if (r.layer != static_cast<int>(li)) continue;
            if (!sampled(r.kind, d.ignore)) continue;
            parts.push_back(&r);
            for (size_t i = r.offset; i < r.offset + r.size; ++i) {
                nd2 += out.values[i] * out.values[i];
                nt2 += theta.values[i] * theta.values[i];
            }
        }
        if (parts.empty()) continue;
        const double nd = std::sqrt(nd2), nt = std::sqrt(nt2);
        const double c = (nd == 0.0 || nt == 0.0) ? 0.0 : nt / nd;
        for (const ParamRegion* r : parts)
            for (size_t i = r->offset; i < r->offset + r->size; ++i) out.values[i] *= c;
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_similarity: length mismatch " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_similarity: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace losslab
