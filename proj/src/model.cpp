#include "losslab/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stack>

#include "losslab/util.hpp"

namespace losslab {

namespace {
constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

int64_t prod(const std::vector<int64_t>& s) {
    int64_t p = 1;
    for (int64_t d : s) p *= d;
    return p;
}
}  // namespace

const char* to_string(ParamKind k) {
    switch (k) {
        case ParamKind::weight: return "weight";
        case ParamKind::bias: return "bias";
        case ParamKind::bn_scale: return "bn_scale";
        case ParamKind::bn_shift: return "bn_shift";
        case ParamKind::bn_running_stat: return "bn_running_stat";
    }
    return "?";
}

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::skip_begin: return "skip_begin";
        case LayerKind::skip_end: return "skip_end";
    }
    return "?";
}

// ---- spec text form ------------------------------------------------------

std::string ModelSpec::serialize() const {
    std::ostringstream out;
    out << "input = ";
    for (size_t i = 0; i < input_shape.size(); ++i) {
        if (i) out << "x";
        out << input_shape[i];
    }
    out << "\nclasses = " << classes;
    out << "\nbias = " << (bias ? "on" : "off") << "\n";
    const std::function<void(const std::vector<LayerCfg>&)> emit = [&](const std::vector<LayerCfg>& ls) {
        for (const LayerCfg& l : ls) {
            switch (l.kind) {
                case LayerKind::linear: out << "layer = linear " << l.out_n << "\n"; break;
                case LayerKind::conv:
                    out << "layer = conv " << l.out_n << " " << l.kernel << " " << l.stride << "\n";
                    break;
                case LayerKind::relu: out << "layer = relu\n"; break;
                case LayerKind::batchnorm: out << "layer = batchnorm\n"; break;
                case LayerKind::maxpool: out << "layer = maxpool\n"; break;
                case LayerKind::skip_begin:
                    out << "begin skip\n";
                    emit(l.inner);
                    out << "end skip\n";
                    break;
                case LayerKind::skip_end: break;
            }
        }
    };
    emit(layers);
    return out.str();
}

namespace {
std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& tok, int lineno) {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("model config line " + std::to_string(lineno) + ": bad integer '" +
                                    tok + "'");
    }
}
}  // namespace

ModelSpec ModelSpec::parse(const std::string& text) {
    ModelSpec spec;
    spec.input_shape.clear();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::vector<LayerCfg>* target = &spec.layers;
    LayerCfg pending_skip;
    bool in_skip = false;
    bool saw_input = false, saw_classes = false;

    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line == "begin skip") {
            if (in_skip)
                throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                            ": nested skip blocks are not supported");
            in_skip = true;
            pending_skip = LayerCfg{LayerKind::skip_begin, 0, 0, 1, {}};
            target = &pending_skip.inner;
            continue;
        }
        if (line == "end skip") {
            if (!in_skip)
                throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                            ": 'end skip' without 'begin skip'");
            in_skip = false;
            spec.layers.push_back(std::move(pending_skip));
            target = &spec.layers;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "input") {
            std::string tok;
            std::istringstream dims(val);
            while (std::getline(dims, tok, 'x')) spec.input_shape.push_back(parse_int(tok, lineno));
            saw_input = true;
        } else if (key == "classes") {
            spec.classes = parse_int(val, lineno);
            saw_classes = true;
        } else if (key == "bias") {
            if (val == "on") spec.bias = true;
            else if (val == "off") spec.bias = false;
            else
                throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                            ": bias must be 'on' or 'off'");
        } else if (key == "layer") {
            std::istringstream toks(val);
            std::string kind;
            toks >> kind;
            std::vector<std::string> args;
            std::string a;
            while (toks >> a) args.push_back(a);
            if (kind == "linear") {
                if (args.size() != 1)
                    throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                                ": linear takes one argument (out-dim)");
                target->push_back(LayerCfg::linear(parse_int(args[0], lineno)));
            } else if (kind == "conv") {
                if (args.size() != 2 && args.size() != 3)
                    throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                                ": conv takes out-channels kernel [stride]");
                target->push_back(LayerCfg::conv(parse_int(args[0], lineno),
                                                 static_cast<int>(parse_int(args[1], lineno)),
                                                 args.size() == 3
                                                     ? static_cast<int>(parse_int(args[2], lineno))
                                                     : 1));
            } else if (kind == "relu" || kind == "batchnorm" || kind == "maxpool") {
                if (!args.empty())
                    throw std::invalid_argument("model config line " + std::to_string(lineno) + ": " +
                                                kind + " takes no arguments");
                if (kind == "relu") target->push_back(LayerCfg::relu());
                else if (kind == "batchnorm") target->push_back(LayerCfg::batchnorm());
                else target->push_back(LayerCfg::maxpool());
            } else {
                throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                            ": unknown layer kind '" + kind + "'");
            }
        } else {
            throw std::invalid_argument("model config line " + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
        }
    }
    if (in_skip) throw std::invalid_argument("model config: unterminated skip block");
    if (!saw_input || !saw_classes)
        throw std::invalid_argument("model config: 'input' and 'classes' are required");
    return spec;
}

uint64_t ModelSpec::hash() const { return fnv1a64(serialize()); }

// ---- the zoo ---------------------------------------------------------------

ModelSpec ModelSpec::mlp_d(int depth, int width, int64_t in_dim, int64_t classes, bool bias,
                           bool batchnorm) {
    if (depth < 1) throw std::invalid_argument("mlp_d: depth must be >= 1");
    ModelSpec s;
    s.input_shape = {in_dim};
    s.classes = classes;
    s.bias = bias;
    for (int i = 0; i < depth - 1; ++i) {
        s.layers.push_back(LayerCfg::linear(width));
        if (batchnorm) s.layers.push_back(LayerCfg::batchnorm());
        s.layers.push_back(LayerCfg::relu());
    }
    s.layers.push_back(LayerCfg::linear(classes));
    return s;
}

ModelSpec ModelSpec::convnet_d(int blocks, int channels, std::vector<int64_t> input_chw,
                               int64_t classes, bool batchnorm) {
    if (blocks < 1) throw std::invalid_argument("convnet_d: blocks must be >= 1");
    ModelSpec s;
    s.input_shape = std::move(input_chw);
    s.classes = classes;
    s.bias = !batchnorm;  // BN shift supplies the offset when present
    for (int i = 0; i < blocks; ++i) {
        s.layers.push_back(LayerCfg::conv(channels, 3, 1));
        if (batchnorm) s.layers.push_back(LayerCfg::batchnorm());
        s.layers.push_back(LayerCfg::relu());
        if (i == 0) s.layers.push_back(LayerCfg::maxpool());
    }
    s.layers.push_back(LayerCfg::linear(classes));
    return s;
}

ModelSpec ModelSpec::skipnet_d(int blocks, int channels, std::vector<int64_t> input_chw,
                               int64_t classes, bool batchnorm) {
    if (blocks < 2 || blocks % 2 != 0)
        throw std::invalid_argument("skipnet_d: blocks must be even and >= 2");
    ModelSpec s;
    s.input_shape = std::move(input_chw);
    s.classes = classes;
    s.bias = !batchnorm;
    // stem brings the channel count up so every shortcut is an identity
    s.layers.push_back(LayerCfg::conv(channels, 3, 1));
    if (batchnorm) s.layers.push_back(LayerCfg::batchnorm());
    s.layers.push_back(LayerCfg::relu());
    for (int i = 0; i < blocks / 2; ++i) {
        std::vector<LayerCfg> inner;
        inner.push_back(LayerCfg::conv(channels, 3, 1));
        if (batchnorm) inner.push_back(LayerCfg::batchnorm());
        inner.push_back(LayerCfg::relu());
        inner.push_back(LayerCfg::conv(channels, 3, 1));
        if (batchnorm) inner.push_back(LayerCfg::batchnorm());
        s.layers.push_back(LayerCfg::skip(std::move(inner)));
        s.layers.push_back(LayerCfg::relu());
    }
    s.layers.push_back(LayerCfg::maxpool());
    s.layers.push_back(LayerCfg::linear(classes));
    return s;
}

// ---- compilation -----------------------------------------------------------

namespace {

ParamMeta compile(ModelSpec spec) {
    ParamMeta m;
    m.spec_hash = spec.hash();
    if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3)
        throw std::invalid_argument("model input must be [D] or [C,H,W], got " +
                                    shape_str(spec.input_shape));
    for (int64_t d : spec.input_shape)
        if (d < 1) throw std::invalid_argument("model input has non-positive dim: " +
                                               shape_str(spec.input_shape));
    if (spec.classes < 2) throw std::invalid_argument("model needs at least 2 classes");

    std::vector<int64_t> shape = spec.input_shape;

    auto add_region = [&](int layer, ParamKind kind, size_t count, size_t filter_size) {
        m.regions.push_back({layer, kind, m.total, count, filter_size});
        m.total += count;
        m.kind_of.insert(m.kind_of.end(), count, kind);
        auto& lr = m.by_layer[static_cast<size_t>(layer)];
        const int idx = static_cast<int>(m.regions.size() - 1);
        switch (kind) {
            case ParamKind::weight: lr.weight = idx; break;
            case ParamKind::bias: lr.bias = idx; break;
            case ParamKind::bn_scale: lr.scale = idx; break;
            case ParamKind::bn_shift: lr.shift = idx; break;
            case ParamKind::bn_running_stat: lr.running = idx; break;
        }
    };

    auto fail = [&](const AtomicLayer& al, const std::string& why) {
        throw std::invalid_argument("layer " + std::to_string(m.layers.size()) + " (" +
                                    to_string(al.kind) + ") after " + shape_str(al.in_shape) + ": " +
                                    why);
    };

    const std::function<void(const std::vector<LayerCfg>&)> walk = [&](const std::vector<LayerCfg>& ls) {
        for (const LayerCfg& l : ls) {
            AtomicLayer al;
            al.kind = l.kind;
            al.in_shape = shape;
            const int idx = static_cast<int>(m.layers.size());
            switch (l.kind) {
                case LayerKind::linear: {
                    al.in_n = prod(shape);
                    al.out_n = l.out_n;
                    al.bias = spec.bias;
                    if (l.out_n < 1) fail(al, "out-dim must be positive");
                    shape = {l.out_n};
                    break;
                }
                case LayerKind::conv: {
                    if (shape.size() != 3) fail(al, "conv needs a [C,H,W] input");
                    if (l.out_n < 1 || l.kernel < 1 || l.stride < 1)
                        fail(al, "conv needs positive channels/kernel/stride");
                    al.in_n = shape[0];
                    al.out_n = l.out_n;
                    al.kernel = l.kernel;
                    al.stride = l.stride;
                    al.pad = (l.kernel - 1) / 2;
                    al.bias = spec.bias;
                    const int64_t oh = (shape[1] + 2 * al.pad - l.kernel) / l.stride + 1;
                    const int64_t ow = (shape[2] + 2 * al.pad - l.kernel) / l.stride + 1;
                    if (oh < 1 || ow < 1) fail(al, "kernel larger than padded input");
                    shape = {l.out_n, oh, ow};
                    break;
                }
                case LayerKind::relu:
                    break;
                case LayerKind::batchnorm:
                    if (shape.size() != 1 && shape.size() != 3)
                        fail(al, "batchnorm needs [D] or [C,H,W]");
                    al.out_n = shape[0];  // channel count
                    break;
                case LayerKind::maxpool: {
                    if (shape.size() != 3) fail(al, "maxpool needs a [C,H,W] input");
                    if (shape[1] < 2 || shape[2] < 2) fail(al, "spatial dims too small to pool");
                    shape = {shape[0], shape[1] / 2, shape[2] / 2};
                    break;
                }
                case LayerKind::skip_begin: {
                    al.out_shape = shape;
                    m.layers.push_back(al);
                    m.by_layer.emplace_back();
                    const std::vector<int64_t> entry = shape;
                    const int begin_idx = idx;
                    walk(l.inner);
                    AtomicLayer end;
                    end.kind = LayerKind::skip_end;
                    end.in_shape = shape;
                    if (shape != entry)
                        throw std::invalid_argument(
                            "skip block entered with " + shape_str(entry) +
                            " but its inner layers produce " + shape_str(shape) +
                            "; identity shortcuts need equal shapes");
                    end.out_shape = shape;
                    end.skip_partner = begin_idx;
                    m.layers[static_cast<size_t>(begin_idx)].skip_partner =
                        static_cast<int>(m.layers.size());
                    m.layers.push_back(end);
                    m.by_layer.emplace_back();
                    continue;
                }
                case LayerKind::skip_end:
                    fail(al, "skip_end without skip_begin");
            }
            al.out_shape = shape;
            m.layers.push_back(al);
            m.by_layer.emplace_back();
            switch (l.kind) {
                case LayerKind::linear:
                    add_region(idx, ParamKind::weight, static_cast<size_t>(al.out_n * al.in_n),
                               static_cast<size_t>(al.in_n));
                    if (al.bias) add_region(idx, ParamKind::bias, static_cast<size_t>(al.out_n), 0);
                    break;
                case LayerKind::conv:
                    add_region(idx, ParamKind::weight,
                               static_cast<size_t>(al.out_n * al.in_n * al.kernel * al.kernel),
                               static_cast<size_t>(al.in_n * al.kernel * al.kernel));
                    if (al.bias) add_region(idx, ParamKind::bias, static_cast<size_t>(al.out_n), 0);
                    break;
                case LayerKind::batchnorm: {
                    const size_t c = static_cast<size_t>(al.out_n);
                    add_region(idx, ParamKind::bn_scale, c, 0);
                    add_region(idx, ParamKind::bn_shift, c, 0);
                    add_region(idx, ParamKind::bn_running_stat, 2 * c, 0);
                    break;
                }
                default:
                    break;
            }
        }
    };
    walk(spec.layers);

    if (shape != std::vector<int64_t>{spec.classes})
        throw std::invalid_argument("model output " + shape_str(shape) + " does not match classes = " +
                                    std::to_string(spec.classes));
    m.spec = std::move(spec);
    return m;
}

}  // namespace

std::vector<std::pair<size_t, size_t>> ParamMeta::filters_of(int layer) const {
    if (layer < 0 || static_cast<size_t>(layer) >= layers.size())
        throw std::out_of_range("filters_of: layer " + std::to_string(layer) + " out of range (model has " +
                                std::to_string(layers.size()) + " layers)");
    const int w = by_layer[static_cast<size_t>(layer)].weight;
    if (w < 0) return {};
    const ParamRegion& r = regions[static_cast<size_t>(w)];
    std::vector<std::pair<size_t, size_t>> out;
    for (size_t off = r.offset; off < r.offset + r.size; off += r.filter_size)
        out.emplace_back(off, r.filter_size);
    return out;
}

ParamVector rescale_pair(const ParamVector& theta, int layer, double c) {
    if (!theta.meta) throw std::invalid_argument("rescale_pair: parameter vector has no metadata");
    if (!(c > 0.0)) throw std::invalid_argument("rescale_pair: factor must be positive");
    const ParamMeta& m = *theta.meta;
    if (layer < 0 || static_cast<size_t>(layer) >= m.layers.size())
        throw std::out_of_range("rescale_pair: layer " + std::to_string(layer) + " out of range");
    const LayerKind k0 = m.layers[static_cast<size_t>(layer)].kind;
    if (k0 != LayerKind::linear && k0 != LayerKind::conv)
        throw std::invalid_argument(std::string("rescale_pair: layer ") + std::to_string(layer) + " is " +
                                    to_string(k0) + ", not a weight layer");
    int next = -1;
    for (size_t j = static_cast<size_t>(layer) + 1; j < m.layers.size(); ++j) {
        const LayerKind k = m.layers[j].kind;
        if (k == LayerKind::linear || k == LayerKind::conv) {
            next = static_cast<int>(j);
            break;
        }
        if (k != LayerKind::relu)
            throw std::invalid_argument(std::string("rescale_pair: layer ") + std::to_string(j) + " (" +
                                        to_string(k) + ") between the pair is not ReLU; the rescale "
                                        "symmetry needs positively homogeneous separators");
    }
    if (next < 0)
        throw std::invalid_argument("rescale_pair: no weight layer after layer " + std::to_string(layer));

    ParamVector out = theta;
    const ParamRegion& r0 = m.regions[static_cast<size_t>(m.by_layer[static_cast<size_t>(layer)].weight)];
    const ParamRegion& r1 = m.regions[static_cast<size_t>(m.by_layer[static_cast<size_t>(next)].weight)];
    for (size_t i = r0.offset; i < r0.offset + r0.size; ++i) out.values[i] *= c;
    for (size_t i = r1.offset; i < r1.offset + r1.size; ++i) out.values[i] /= c;
    return out;
}

double weight_norm(const ParamVector& theta) {
    if (!theta.meta) throw std::invalid_argument("weight_norm: parameter vector has no metadata");
    double s = 0.0;
    for (size_t i = 0; i < theta.values.size(); ++i)
        if (theta.meta->kind_of[i] == ParamKind::weight) s += theta.values[i] * theta.values[i];
    return std::sqrt(s);
}

// ---- model -----------------------------------------------------------------

Model::Model(ModelSpec spec) : meta_(std::make_shared<const ParamMeta>(compile(std::move(spec)))) {}

ParamVector Model::init(uint64_t seed) const {
    ParamVector theta;
    theta.meta = meta_;
    theta.values.assign(meta_->total, 0.0);
    Rng64 rng(seed);
    for (const ParamRegion& r : meta_->regions) {
        switch (r.kind) {
            case ParamKind::weight: {
                const AtomicLayer& al = meta_->layers[static_cast<size_t>(r.layer)];
                const double k2 = static_cast<double>(al.kernel ? al.kernel * al.kernel : 1);
                const double fan_in = static_cast<double>(al.in_n) * k2;
                const double fan_out = static_cast<double>(al.out_n) * k2;
                const double a = std::sqrt(6.0 / (fan_in + fan_out));
                for (size_t i = r.offset; i < r.offset + r.size; ++i)
                    theta.values[i] = (2.0 * rng.uniform01() - 1.0) * a;
                break;
            }
            case ParamKind::bias:
            case ParamKind::bn_shift:
                break;  // zero
            case ParamKind::bn_scale:
                for (size_t i = r.offset; i < r.offset + r.size; ++i) theta.values[i] = 1.0;
                break;
            case ParamKind::bn_running_stat:
                // mean 0, variance 1
                for (size_t i = r.offset + r.size / 2; i < r.offset + r.size; ++i) theta.values[i] = 1.0;
                break;
        }
    }
    return theta;
}

void Model::check_theta(const ParamVector& theta) const {
    if (!theta.meta || theta.meta->spec_hash != meta_->spec_hash)
        throw std::invalid_argument("parameter vector belongs to a different model spec");
    if (theta.values.size() != meta_->total)
        throw std::invalid_argument("parameter vector length " + std::to_string(theta.values.size()) +
                                    " does not match model parameter count " +
                                    std::to_string(meta_->total));
}

Model::Bound Model::bind_forward(Tape& t, const ParamVector& theta, const Tensor& x,
                                 bool train_mode) const {
    check_theta(theta);
    const auto& in = meta_->spec.input_shape;
    const bool ok = (in.size() == 1 && x.rank() == 2 && x.dim(1) == in[0]) ||
                    (in.size() == 3 && x.rank() == 4 && x.dim(1) == in[0] && x.dim(2) == in[1] &&
                     x.dim(3) == in[2]);
    if (!ok || x.dim(0) < 1)
        throw std::invalid_argument("batch shape " + x.shape_str() + " does not match model input " +
                                    shape_str(in));
    const int64_t batch = x.dim(0);

    Bound b;
    auto make_leaf = [&](int region_idx, std::vector<int64_t> shape) {
        const ParamRegion& r = meta_->regions[static_cast<size_t>(region_idx)];
        Tensor v(std::move(shape));
        std::copy(theta.values.begin() + static_cast<std::ptrdiff_t>(r.offset),
                  theta.values.begin() + static_cast<std::ptrdiff_t>(r.offset + r.size), v.data.begin());
        const Tape::NodeId id = t.leaf(std::move(v));
        b.leaves.push_back(id);
        b.leaf_region.push_back(static_cast<size_t>(region_idx));
        return id;
    };

    Tape::NodeId cur = t.constant(x);
    std::stack<Tape::NodeId> skip_stack;

    for (size_t li = 0; li < meta_->layers.size(); ++li) {
        const AtomicLayer& al = meta_->layers[li];
        const ParamMeta::LayerRegions& lr = meta_->by_layer[li];
        switch (al.kind) {
            case LayerKind::linear: {
                if (t.value(cur).rank() != 2) cur = t.reshape(cur, {batch, al.in_n});
                const auto w = make_leaf(lr.weight, {al.out_n, al.in_n});
                cur = t.matmul(cur, w, false, true);
                if (al.bias) cur = t.add(cur, t.bcast_rows(make_leaf(lr.bias, {al.out_n}), batch));
                break;
            }
            case LayerKind::conv: {
                const auto w = make_leaf(lr.weight, {al.out_n, al.in_n, al.kernel, al.kernel});
                cur = t.conv2d(cur, w, al.stride, al.pad);
                if (al.bias)
                    cur = t.add(cur, t.bcast_nhw(make_leaf(lr.bias, {al.out_n}), batch,
                                                 al.out_shape[1], al.out_shape[2]));
                break;
            }
            case LayerKind::relu:
                cur = t.relu(cur);
                break;
            case LayerKind::maxpool:
                cur = t.maxpool2(cur);
                break;
            case LayerKind::batchnorm: {
                const int64_t c = al.out_n;
                const bool spatial = al.in_shape.size() == 3;
                const int64_t h = spatial ? al.in_shape[1] : 0, w = spatial ? al.in_shape[2] : 0;
                auto bcast = [&](Tape::NodeId v) {
                    return spatial ? t.bcast_nhw(v, batch, h, w) : t.bcast_rows(v, batch);
                };
                const ParamRegion& run = meta_->regions[static_cast<size_t>(lr.running)];
                Tape::NodeId mu, var;
                if (train_mode) {
                    mu = spatial ? t.mean_nhw(cur) : t.mean_rows(cur);
                } else {
                    Tensor mt({c});
                    std::copy(theta.values.begin() + static_cast<std::ptrdiff_t>(run.offset),
                              theta.values.begin() + static_cast<std::ptrdiff_t>(run.offset + c),
                              mt.data.begin());
                    mu = t.constant(std::move(mt));
                }
                const auto xc = t.sub(cur, bcast(mu));
                if (train_mode) {
                    var = spatial ? t.mean_nhw(t.mul(xc, xc)) : t.mean_rows(t.mul(xc, xc));
                } else {
                    Tensor vt({c});
                    std::copy(theta.values.begin() + static_cast<std::ptrdiff_t>(run.offset + c),
                              theta.values.begin() + static_cast<std::ptrdiff_t>(run.offset + 2 * c),
                              vt.data.begin());
                    var = t.constant(std::move(vt));
                }
                const auto inv = t.powc(t.add_const(var, kBnEps), -0.5);
                const auto gamma = make_leaf(lr.scale, {c});
                const auto beta = make_leaf(lr.shift, {c});
                cur = t.add(t.mul(xc, bcast(t.mul(inv, gamma))), bcast(beta));
                if (train_mode) {
                    // biased batch variance feeds both the normalization and the
                    // running buffer; refreshed values are banked outside the graph
                    const Tensor& mv = t.value(mu);
                    const Tensor& vv = t.value(var);
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const size_t mo = run.offset + static_cast<size_t>(ch);
                        const size_t vo = run.offset + static_cast<size_t>(c + ch);
                        b.running_updates.emplace_back(
                            mo, (1.0 - kBnMomentum) * theta.values[mo] +
                                    kBnMomentum * mv.data[static_cast<size_t>(ch)]);
                        b.running_updates.emplace_back(
                            vo, (1.0 - kBnMomentum) * theta.values[vo] +
                                    kBnMomentum * vv.data[static_cast<size_t>(ch)]);
                    }
                }
                break;
            }
            case LayerKind::skip_begin:
                skip_stack.push(cur);
                break;
            case LayerKind::skip_end:
                cur = t.add(cur, skip_stack.top());
                skip_stack.pop();
                break;
        }
    }
    b.logits = cur;
    return b;
}

EvalStats Model::evaluate(const ParamVector& theta, const Tensor& x,
                          const std::vector<int>& labels) const {
    Tape t;
    const Bound b = bind_forward(t, theta, x, false);
    const auto loss = t.softmax_xent_mean(b.logits, labels);
    const Tensor& lg = t.value(b.logits);
    const int64_t n = lg.dim(0), c = lg.dim(1);
    int64_t wrong = 0;
    for (int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
            if (lg.data[static_cast<size_t>(i * c + j)] > lg.data[static_cast<size_t>(i * c + best)])
                best = static_cast<int>(j);
        if (best != labels[static_cast<size_t>(i)]) ++wrong;
    }
    return {t.value(loss).data[0], static_cast<double>(wrong) / static_cast<double>(n)};
}

double Model::loss_grad(const ParamVector& theta, const Tensor& x, const std::vector<int>& labels,
                        bool train_mode, std::vector<double>& grad_out,
                        std::vector<std::pair<size_t, double>>* running_updates) const {
    Tape t;
    const Bound b = bind_forward(t, theta, x, train_mode);
    const auto loss = t.softmax_xent_mean(b.logits, labels);
    const auto grads = t.backward(loss, b.leaves);
    grad_out.assign(meta_->total, 0.0);
    for (size_t i = 0; i < grads.size(); ++i) {
        const ParamRegion& r = meta_->regions[b.leaf_region[i]];
        const Tensor& g = t.value(grads[i]);
        std::copy(g.data.begin(), g.data.end(),
                  grad_out.begin() + static_cast<std::ptrdiff_t>(r.offset));
    }
    if (running_updates) *running_updates = b.running_updates;
    return t.value(loss).data[0];
}

std::vector<double> Model::hvp(const ParamVector& theta, const Tensor& x,
                               const std::vector<int>& labels, std::span<const double> v) const {
    if (v.size() != meta_->total)
        throw std::invalid_argument("hvp: vector length " + std::to_string(v.size()) +
                                    " does not match parameter count " + std::to_string(meta_->total));
    Tape t;
    const Bound b = bind_forward(t, theta, x, false);
    const auto loss = t.softmax_xent_mean(b.logits, labels);
    std::vector<double> packed;
    for (const size_t ri : b.leaf_region) {
        const ParamRegion& r = meta_->regions[ri];
        packed.insert(packed.end(), v.begin() + static_cast<std::ptrdiff_t>(r.offset),
                      v.begin() + static_cast<std::ptrdiff_t>(r.offset + r.size));
    }
    const auto hv_packed = hvp_flat(t, loss, b.leaves, packed);
    std::vector<double> out(meta_->total, 0.0);
    size_t off = 0;
    for (const size_t ri : b.leaf_region) {
        const ParamRegion& r = meta_->regions[ri];
        std::copy(hv_packed.begin() + static_cast<std::ptrdiff_t>(off),
                  hv_packed.begin() + static_cast<std::ptrdiff_t>(off + r.size),
                  out.begin() + static_cast<std::ptrdiff_t>(r.offset));
        off += r.size;
    }
    return out;
}

}  // namespace losslab
