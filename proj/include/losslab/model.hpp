#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "losslab/tensor.hpp"

namespace losslab {

enum class ParamKind : uint8_t { weight, bias, bn_scale, bn_shift, bn_running_stat };

enum class LayerKind : uint8_t { linear, conv, relu, batchnorm, maxpool, skip_begin, skip_end };

const char* to_string(ParamKind k);
const char* to_string(LayerKind k);

/// One entry of the architecture description. Skip blocks carry their inner
/// layers; everything else is a leaf.
struct LayerCfg {
    LayerKind kind = LayerKind::relu;
    int64_t out_n = 0;  // linear out-dim / conv out-channels
    int kernel = 0;
    int stride = 1;
    std::vector<LayerCfg> inner;  // skip blocks only

    static LayerCfg linear(int64_t out) { return {LayerKind::linear, out, 0, 1, {}}; }
    static LayerCfg conv(int64_t out, int kernel, int stride = 1) {
        return {LayerKind::conv, out, kernel, stride, {}};
    }
    static LayerCfg relu() { return {LayerKind::relu, 0, 0, 1, {}}; }
    static LayerCfg batchnorm() { return {LayerKind::batchnorm, 0, 0, 1, {}}; }
    static LayerCfg maxpool() { return {LayerKind::maxpool, 0, 0, 1, {}}; }
    static LayerCfg skip(std::vector<LayerCfg> inner) {
        LayerCfg c{LayerKind::skip_begin, 0, 0, 1, std::move(inner)};
        return c;
    }
};

/// Architecture description. Parsed from / serialized to a line-oriented
/// key = value config (grammar in docs/formats.md); the FNV-1a hash of the
/// canonical serialization identifies the architecture in checkpoint and
/// grid files.
struct ModelSpec {
    std::vector<int64_t> input_shape;  // [D] for vector data, [C,H,W] for images
    int64_t classes = 2;
    bool bias = true;
    std::vector<LayerCfg> layers;

    std::string serialize() const;
    static ModelSpec parse(const std::string& text);
    uint64_t hash() const;

    // the desk-scale zoo: depth-configurable MLP, plain conv stack, and the
    // same stack with identity shortcuts around every two conv blocks
    static ModelSpec mlp_d(int depth, int width, int64_t in_dim, int64_t classes, bool bias = true,
                           bool batchnorm = false);
    static ModelSpec convnet_d(int blocks, int channels, std::vector<int64_t> input_chw,
                               int64_t classes, bool batchnorm = true);
    static ModelSpec skipnet_d(int blocks, int channels, std::vector<int64_t> input_chw,
                               int64_t classes, bool batchnorm = true);
};

/// Shape-resolved layer. Skip blocks flatten into begin/end markers so layer
/// indices used by filters_of / rescale_pair address a plain sequence.
struct AtomicLayer {
    LayerKind kind;
    std::vector<int64_t> in_shape, out_shape;  // per-sample shapes, no batch dim
    int64_t in_n = 0, out_n = 0;               // linear dims / conv channels
    int kernel = 0, stride = 1, pad = 0;
    bool bias = false;
    int skip_partner = -1;  // matching begin/end index
};

/// Contiguous region of the flat parameter array.
struct ParamRegion {
    int layer = -1;  // atomic layer index
    ParamKind kind = ParamKind::weight;
    size_t offset = 0;
    size_t size = 0;
    size_t filter_size = 0;  // weight regions only: elements per filter
};

/// Structural metadata shared by every ParamVector of one architecture.
struct ParamMeta {
    ModelSpec spec;
    uint64_t spec_hash = 0;
    std::vector<AtomicLayer> layers;
    std::vector<ParamRegion> regions;  // ordered, partition [0, total)
    std::vector<ParamKind> kind_of;    // per entry
    size_t total = 0;

    struct LayerRegions {
        int weight = -1, bias = -1, scale = -1, shift = -1, running = -1;
    };
    std::vector<LayerRegions> by_layer;

    bool is_trainable(ParamKind k) const { return k != ParamKind::bn_running_stat; }
    /// Filter ranges (offset, length) of one layer's weight region; empty for
    /// weightless layers, throws on out-of-range index.
    std::vector<std::pair<size_t, size_t>> filters_of(int layer) const;
};

/// Flat parameters plus shared metadata. Value type; copies are cheap enough
/// at desk scale and safe to hand across threads.
struct ParamVector {
    std::shared_ptr<const ParamMeta> meta;
    std::vector<double> values;

    size_t size() const { return values.size(); }
};

/// θ with layer i's weights scaled by c and the next weight layer's scaled
/// by 1/c. Requires c > 0, layer i to be linear/conv, and only ReLU layers
/// between the pair; for bias-free ReLU nets the network function is
/// unchanged (positive homogeneity).
ParamVector rescale_pair(const ParamVector& theta, int layer, double c);

/// Euclidean norm over weight-kind entries only.
double weight_norm(const ParamVector& theta);

struct EvalStats {
    double loss = 0.0;
    double error = 0.0;  // fraction misclassified
};

class Model {
public:
    explicit Model(ModelSpec spec);

    const ParamMeta& meta() const { return *meta_; }
    std::shared_ptr<const ParamMeta> meta_ptr() const { return meta_; }

    /// Glorot-uniform weights, zero biases, unit BN scales; deterministic per seed.
    ParamVector init(uint64_t seed) const;

    /// Inference-mode loss and error on one batch (BN uses running stats).
    EvalStats evaluate(const ParamVector& theta, const Tensor& x, const std::vector<int>& labels) const;

    /// Loss and full-length gradient (zeros at bn_running_stat entries).
    /// In train mode BN uses batch statistics and `running_updates` (if
    /// given) receives (offset, value) pairs for the refreshed buffers.
    double loss_grad(const ParamVector& theta, const Tensor& x, const std::vector<int>& labels,
                     bool train_mode, std::vector<double>& grad_out,
                     std::vector<std::pair<size_t, double>>* running_updates = nullptr) const;

    /// Hessian-vector product in inference mode. `v` is full-length; the
    /// result is full-length with zeros at non-trainable entries.
    std::vector<double> hvp(const ParamVector& theta, const Tensor& x, const std::vector<int>& labels,
                            std::span<const double> v) const;

private:
    struct Bound {
        std::vector<Tape::NodeId> leaves;   // one per trainable region, region order
        std::vector<size_t> leaf_region;    // index into meta.regions
        Tape::NodeId logits = Tape::kNone;
        std::vector<std::pair<size_t, double>> running_updates;
    };
    Bound bind_forward(Tape& t, const ParamVector& theta, const Tensor& x, bool train_mode) const;
    void check_theta(const ParamVector& theta) const;

    std::shared_ptr<const ParamMeta> meta_;
};

}  // namespace losslab
