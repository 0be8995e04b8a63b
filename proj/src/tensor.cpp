#include "losslab/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace losslab {

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void Tape::check_same_shape(NodeId a, NodeId b, const char* what) const {
    if (!value(a).same_shape(value(b)))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + value(a).shape_str() +
                                    " vs " + value(b).shape_str());
}

Tape::NodeId Tape::leaf(Tensor value) {
    return push({Op::Leaf, kNone, kNone, 0, 0, 0, 0, 0.0, -1, std::move(value)});
}

Tape::NodeId Tape::constant(Tensor value) {
    return push({Op::Const, kNone, kNone, 0, 0, 0, 0, 0.0, -1, std::move(value)});
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    check_same_shape(a, b, "add");
    Tensor out = value(a);
    const auto& bd = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
    return push({Op::Add, a, b, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    check_same_shape(a, b, "sub");
    Tensor out = value(a);
    const auto& bd = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bd[i];
    return push({Op::Sub, a, b, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    check_same_shape(a, b, "mul");
    Tensor out = value(a);
    const auto& bd = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bd[i];
    return push({Op::Mul, a, b, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::neg(NodeId a) {
    Tensor out = value(a);
    for (double& x : out.data) x = -x;
    return push({Op::Neg, a, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::scale(NodeId a, double c) {
    Tensor out = value(a);
    for (double& x : out.data) x *= c;
    return push({Op::Scale, a, kNone, 0, 0, 0, 0, c, -1, std::move(out)});
}

Tape::NodeId Tape::add_const(NodeId a, double c) {
    Tensor out = value(a);
    for (double& x : out.data) x += c;
    return push({Op::AddConst, a, kNone, 0, 0, 0, 0, c, -1, std::move(out)});
}

Tape::NodeId Tape::exp_(NodeId a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::exp(x);
    return push({Op::Exp, a, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::log_(NodeId a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::log(x);
    return push({Op::Log, a, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::powc(NodeId a, double p) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::pow(x, p);
    return push({Op::Powc, a, kNone, 0, 0, 0, 0, p, -1, std::move(out)});
}

Tape::NodeId Tape::relu_sel(NodeId ref, NodeId val) {
    check_same_shape(ref, val, "relu_sel");
    Tensor out = value(val);
    const auto& rd = value(ref).data;
    for (size_t i = 0; i < out.data.size(); ++i)
        if (!(rd[i] > 0.0)) out.data[i] = 0.0;
    return push({Op::ReluSel, ref, val, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::reshape(NodeId a, std::vector<int64_t> shape) {
    if (Tensor::numel_of(shape) != value(a).numel())
        throw std::invalid_argument("reshape: element count mismatch " + value(a).shape_str());
    Tensor out(std::move(shape), value(a).data);
    return push({Op::Reshape, a, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2)
        throw std::invalid_argument("matmul: operands must be rank 2, got " + A.shape_str() + " and " +
                                    B.shape_str());
    const int64_t m = trans_a ? A.dim(1) : A.dim(0);
    const int64_t k = trans_a ? A.dim(0) : A.dim(1);
    const int64_t kb = trans_b ? B.dim(1) : B.dim(0);
    const int64_t n = trans_b ? B.dim(0) : B.dim(1);
    if (k != kb)
        throw std::invalid_argument("matmul: inner dimensions disagree, " + A.shape_str() +
                                    (trans_a ? "^T" : "") + " x " + B.shape_str() + (trans_b ? "^T" : ""));
    Tensor out({m, n});
    const double* pa = A.data.data();
    const double* pb = B.data.data();
    double* pc = out.data.data();
    const int64_t lda = A.dim(1), ldb = B.dim(1);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = trans_a ? pa[kk * lda + i] : pa[i * lda + kk];
            if (av == 0.0) continue;
            const double* brow = trans_b ? nullptr : &pb[kk * ldb];
            double* crow = &pc[i * n];
            if (trans_b) {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * pb[j * ldb + kk];
            } else {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    return push({Op::Matmul, a, b, trans_a ? 1 : 0, trans_b ? 1 : 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::sum_all(NodeId a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    return push({Op::SumAll, a, kNone, 0, 0, 0, 0, 0.0, -1, Tensor::scalar(s)});
}

Tape::NodeId Tape::bcast_all(NodeId s, std::vector<int64_t> shape) {
    if (value(s).numel() != 1) throw std::invalid_argument("bcast_all: source must be scalar");
    Tensor out = Tensor::full(std::move(shape), value(s).data[0]);
    return push({Op::BcastAll, s, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::sum_rows(NodeId a) {
    const Tensor& A = value(a);
    if (A.rank() != 2) throw std::invalid_argument("sum_rows: need rank 2, got " + A.shape_str());
    const int64_t n = A.dim(0), d = A.dim(1);
    Tensor out({d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.data[static_cast<size_t>(j)] += A.data[static_cast<size_t>(i * d + j)];
    return push({Op::SumRows, a, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::bcast_rows(NodeId v, int64_t n) {
    const Tensor& V = value(v);
    if (V.rank() != 1) throw std::invalid_argument("bcast_rows: need rank 1, got " + V.shape_str());
    const int64_t d = V.dim(0);
    Tensor out({n, d});
    for (int64_t i = 0; i < n; ++i)
        std::copy(V.data.begin(), V.data.end(), out.data.begin() + i * d);
    return push({Op::BcastRows, v, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::sum_cols(NodeId a) {
    const Tensor& A = value(a);
    if (A.rank() != 2) throw std::invalid_argument("sum_cols: need rank 2, got " + A.shape_str());
    const int64_t n = A.dim(0), d = A.dim(1);
    Tensor out({n});
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) s += A.data[static_cast<size_t>(i * d + j)];
        out.data[static_cast<size_t>(i)] = s;
    }
    return push({Op::SumCols, a, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::bcast_cols(NodeId v, int64_t d) {
    const Tensor& V = value(v);
    if (V.rank() != 1) throw std::invalid_argument("bcast_cols: need rank 1, got " + V.shape_str());
    const int64_t n = V.dim(0);
    Tensor out({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.data[static_cast<size_t>(i * d + j)] = V.data[static_cast<size_t>(i)];
    return push({Op::BcastCols, v, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::sum_nhw(NodeId a) {
    const Tensor& A = value(a);
    if (A.rank() != 4) throw std::invalid_argument("sum_nhw: need rank 4, got " + A.shape_str());
    const int64_t n = A.dim(0), c = A.dim(1), hw = A.dim(2) * A.dim(3);
    Tensor out({c});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* p = &A.data[static_cast<size_t>((i * c + ch) * hw)];
            double s = 0.0;
            for (int64_t t = 0; t < hw; ++t) s += p[t];
            out.data[static_cast<size_t>(ch)] += s;
        }
    return push({Op::SumNHW, a, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::bcast_nhw(NodeId v, int64_t n, int64_t h, int64_t w) {
    const Tensor& V = value(v);
    if (V.rank() != 1) throw std::invalid_argument("bcast_nhw: need rank 1, got " + V.shape_str());
    const int64_t c = V.dim(0);
    Tensor out({n, c, h, w});
    const int64_t hw = h * w;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            double* p = &out.data[static_cast<size_t>((i * c + ch) * hw)];
            const double x = V.data[static_cast<size_t>(ch)];
            for (int64_t t = 0; t < hw; ++t) p[t] = x;
        }
    return push({Op::BcastNHW, v, kNone, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::mean_all(NodeId a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).numel())); }

Tape::NodeId Tape::mean_rows(NodeId a) { return scale(sum_rows(a), 1.0 / static_cast<double>(value(a).dim(0))); }

Tape::NodeId Tape::mean_nhw(NodeId a) {
    const Tensor& A = value(a);
    const double cnt = static_cast<double>(A.dim(0) * A.dim(2) * A.dim(3));
    return scale(sum_nhw(a), 1.0 / cnt);
}

namespace {
struct ConvDims {
    int64_t n, ci, h, w, co, kh, kw, oh, ow;
};
ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad) {
    if (x.rank() != 4 || wt.rank() != 4)
        throw std::invalid_argument("conv2d: need rank-4 input and weight, got " + x.shape_str() + " and " +
                                    wt.shape_str());
    if (x.dim(1) != wt.dim(1))
        throw std::invalid_argument("conv2d: channel mismatch, input " + x.shape_str() + " weight " +
                                    wt.shape_str());
    ConvDims d{};
    d.n = x.dim(0); d.ci = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
    d.co = wt.dim(0); d.kh = wt.dim(2); d.kw = wt.dim(3);
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.oh < 1 || d.ow < 1)
        throw std::invalid_argument("conv2d: kernel larger than padded input, input " + x.shape_str() +
                                    " weight " + wt.shape_str());
    return d;
}
}  // namespace

Tape::NodeId Tape::conv2d(NodeId x, NodeId w, int stride, int pad) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    const ConvDims d = conv_dims(X, W, stride, pad);
    Tensor out({d.n, d.co, d.oh, d.ow});
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t co = 0; co < d.co; ++co)
            for (int64_t oh = 0; oh < d.oh; ++oh)
                for (int64_t ow = 0; ow < d.ow; ++ow) {
                    double s = 0.0;
                    for (int64_t ci = 0; ci < d.ci; ++ci)
                        for (int64_t i = 0; i < d.kh; ++i) {
                            const int64_t ih = oh * stride + i - pad;
                            if (ih < 0 || ih >= d.h) continue;
                            for (int64_t j = 0; j < d.kw; ++j) {
                                const int64_t iw = ow * stride + j - pad;
                                if (iw < 0 || iw >= d.w) continue;
                                s += X.data[static_cast<size_t>(((n * d.ci + ci) * d.h + ih) * d.w + iw)] *
                                     W.data[static_cast<size_t>(((co * d.ci + ci) * d.kh + i) * d.kw + j)];
                            }
                        }
                    out.data[static_cast<size_t>(((n * d.co + co) * d.oh + oh) * d.ow + ow)] = s;
                }
    return push({Op::Conv2d, x, w, stride, pad, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::conv2d_grad_input(NodeId w, NodeId g, int stride, int pad, int64_t in_h, int64_t in_w) {
    const Tensor& W = value(w);
    const Tensor& G = value(g);
    const int64_t n = G.dim(0), co = G.dim(1), oh = G.dim(2), ow = G.dim(3);
    const int64_t ci = W.dim(1), kh = W.dim(2), kw = W.dim(3);
    Tensor out({n, ci, in_h, in_w});
    for (int64_t nn = 0; nn < n; ++nn)
        for (int64_t c = 0; c < co; ++c)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x) {
                    const double gv = G.data[static_cast<size_t>(((nn * co + c) * oh + y) * ow + x)];
                    if (gv == 0.0) continue;
                    for (int64_t cc = 0; cc < ci; ++cc)
                        for (int64_t i = 0; i < kh; ++i) {
                            const int64_t ih = y * stride + i - pad;
                            if (ih < 0 || ih >= in_h) continue;
                            for (int64_t j = 0; j < kw; ++j) {
                                const int64_t iw = x * stride + j - pad;
                                if (iw < 0 || iw >= in_w) continue;
                                out.data[static_cast<size_t>(((nn * ci + cc) * in_h + ih) * in_w + iw)] +=
                                    gv * W.data[static_cast<size_t>(((c * ci + cc) * kh + i) * kw + j)];
                            }
                        }
                }
    return push({Op::Conv2dGradInput, w, g, stride, pad, static_cast<int>(in_h), static_cast<int>(in_w),
                 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::conv2d_grad_weight(NodeId x, NodeId g, int stride, int pad, int64_t kh, int64_t kw) {
    const Tensor& X = value(x);
    const Tensor& G = value(g);
    const int64_t n = G.dim(0), co = G.dim(1), oh = G.dim(2), ow = G.dim(3);
    const int64_t ci = X.dim(1), h = X.dim(2), w = X.dim(3);
    Tensor out({co, ci, kh, kw});
    for (int64_t nn = 0; nn < n; ++nn)
        for (int64_t c = 0; c < co; ++c)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x2 = 0; x2 < ow; ++x2) {
                    const double gv = G.data[static_cast<size_t>(((nn * co + c) * oh + y) * ow + x2)];
                    if (gv == 0.0) continue;
                    for (int64_t cc = 0; cc < ci; ++cc)
                        for (int64_t i = 0; i < kh; ++i) {
                            const int64_t ih = y * stride + i - pad;
                            if (ih < 0 || ih >= h) continue;
                            for (int64_t j = 0; j < kw; ++j) {
                                const int64_t iw = x2 * stride + j - pad;
                                if (iw < 0 || iw >= w) continue;
                                out.data[static_cast<size_t>(((c * ci + cc) * kh + i) * kw + j)] +=
                                    gv * X.data[static_cast<size_t>(((nn * ci + cc) * h + ih) * w + iw)];
                            }
                        }
                }
    return push({Op::Conv2dGradWeight, x, g, stride, pad, static_cast<int>(kh), static_cast<int>(kw),
                 0.0, -1, std::move(out)});
}

namespace {
// argmax position within each 2x2 window of ref, first hit wins (row-major)
inline int64_t pool_argmax(const Tensor& ref, int64_t n, int64_t c, int64_t oh, int64_t ow) {
    const int64_t h = ref.dim(2), w = ref.dim(3);
    const int64_t base = ((n * ref.dim(1) + c) * h + oh * 2) * w + ow * 2;
    double best = ref.data[static_cast<size_t>(base)];
    int64_t best_idx = base;
    const int64_t cand[3] = {base + 1, base + w, base + w + 1};
    for (int64_t k : cand) {
        const double v = ref.data[static_cast<size_t>(k)];
        if (v > best) { best = v; best_idx = k; }
    }
    return best_idx;
}
}  // namespace

Tape::NodeId Tape::pool_sel(NodeId ref, NodeId val) {
    check_same_shape(ref, val, "pool_sel");
    const Tensor& R = value(ref);
    if (R.rank() != 4) throw std::invalid_argument("maxpool2: need rank 4, got " + R.shape_str());
    if (R.dim(2) < 2 || R.dim(3) < 2)
        throw std::invalid_argument("maxpool2: spatial dims too small, " + R.shape_str());
    const int64_t n = R.dim(0), c = R.dim(1), oh = R.dim(2) / 2, ow = R.dim(3) / 2;
    const Tensor& V = value(val);
    Tensor out({n, c, oh, ow});
    for (int64_t nn = 0; nn < n; ++nn)
        for (int64_t cc = 0; cc < c; ++cc)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x)
                    out.data[static_cast<size_t>(((nn * c + cc) * oh + y) * ow + x)] =
                        V.data[static_cast<size_t>(pool_argmax(R, nn, cc, y, x))];
    return push({Op::PoolSel, ref, val, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::pool_grad(NodeId ref, NodeId q) {
    const Tensor& R = value(ref);
    const Tensor& Q = value(q);
    const int64_t n = R.dim(0), c = R.dim(1), oh = R.dim(2) / 2, ow = R.dim(3) / 2;
    Tensor out(R.shape);
    for (int64_t nn = 0; nn < n; ++nn)
        for (int64_t cc = 0; cc < c; ++cc)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x)
                    out.data[static_cast<size_t>(pool_argmax(R, nn, cc, y, x))] +=
                        Q.data[static_cast<size_t>(((nn * c + cc) * oh + y) * ow + x)];
    return push({Op::PoolGrad, ref, q, 0, 0, 0, 0, 0.0, -1, std::move(out)});
}

Tape::NodeId Tape::select_label(NodeId logits, const std::vector<int>& labels) {
    const Tensor& L = value(logits);
    if (L.rank() != 2) throw std::invalid_argument("select_label: need rank 2, got " + L.shape_str());
    const int64_t n = L.dim(0), c = L.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("select_label: label count mismatch");
    Tensor out({n});
    for (int64_t i = 0; i < n; ++i) {
        const int lab = labels[static_cast<size_t>(i)];
        if (lab < 0 || lab >= c)
            throw std::invalid_argument("select_label: label " + std::to_string(lab) +
                                        " outside [0," + std::to_string(c) + ")");
        out.data[static_cast<size_t>(i)] = L.data[static_cast<size_t>(i * c + lab)];
    }
    labels_.push_back(labels);
    return push({Op::SelectLabel, logits, kNone, static_cast<int>(c), 0, 0, 0, 0.0,
                 static_cast<int>(labels_.size() - 1), std::move(out)});
}

Tape::NodeId Tape::scatter_label(NodeId v, const std::vector<int>& labels, int64_t classes) {
    const Tensor& V = value(v);
    if (V.rank() != 1) throw std::invalid_argument("scatter_label: need rank 1, got " + V.shape_str());
    const int64_t n = V.dim(0);
    Tensor out({n, classes});
    for (int64_t i = 0; i < n; ++i) {
        const int lab = labels[static_cast<size_t>(i)];
        if (lab < 0 || lab >= classes)
            throw std::invalid_argument("scatter_label: label " + std::to_string(lab) +
                                        " outside [0," + std::to_string(classes) + ")");
        out.data[static_cast<size_t>(i * classes + lab)] = V.data[static_cast<size_t>(i)];
    }
    labels_.push_back(labels);
    return push({Op::ScatterLabel, v, kNone, static_cast<int>(classes), 0, 0, 0, 0.0,
                 static_cast<int>(labels_.size() - 1), std::move(out)});
}

Tape::NodeId Tape::softmax_xent_mean(NodeId logits, const std::vector<int>& labels) {
    const Tensor& L = value(logits);
    const int64_t n = L.dim(0), c = L.dim(1);
    // detached per-row max keeps exp() in range; gradient is exact anyway
    Tensor rowmax({n});
    for (int64_t i = 0; i < n; ++i) {
        double m = L.data[static_cast<size_t>(i * c)];
        for (int64_t j = 1; j < c; ++j) m = std::max(m, L.data[static_cast<size_t>(i * c + j)]);
        rowmax.data[static_cast<size_t>(i)] = m;
    }
    const NodeId m = constant(std::move(rowmax));
    const NodeId shifted = sub(logits, bcast_cols(m, c));
    const NodeId lse = add(log_(sum_cols(exp_(shifted))), m);
    const NodeId picked = select_label(logits, labels);
    return mean_all(sub(lse, picked));
}

void Tape::acc(std::vector<NodeId>& grad, const std::vector<char>& needed, NodeId target, NodeId g) {
    if (target == kNone) return;
    const size_t t = static_cast<size_t>(target);
    if (t >= needed.size() || !needed[t]) return;
    grad[t] = (grad[t] == kNone) ? g : add(grad[t], g);
}

void Tape::accumulate_vjp(NodeId id, NodeId g, std::vector<NodeId>& grad, const std::vector<char>& needed) {
    // copy metadata up front: emitting VJP nodes can reallocate nodes_
    struct Meta {
        Op op;
        NodeId in0, in1;
        int ia, ib;
        double fa;
        int aux;
    };
    const Meta n = [this, id] {
        const Node& src = node(id);
        return Meta{src.op, src.in0, src.in1, src.ia, src.ib, src.fa, src.aux};
    }();
    switch (n.op) {
        case Op::Leaf:
        case Op::Const:
            break;
        case Op::Add:
            acc(grad, needed, n.in0, g);
            acc(grad, needed, n.in1, g);
            break;
        case Op::Sub:
            acc(grad, needed, n.in0, g);
            acc(grad, needed, n.in1, neg(g));
            break;
        case Op::Mul:
            acc(grad, needed, n.in0, mul(g, n.in1));
            acc(grad, needed, n.in1, mul(g, n.in0));
            break;
        case Op::Neg:
            acc(grad, needed, n.in0, neg(g));
            break;
        case Op::Scale:
            acc(grad, needed, n.in0, scale(g, n.fa));
            break;
        case Op::AddConst:
            acc(grad, needed, n.in0, g);
            break;
        case Op::Exp:
            acc(grad, needed, n.in0, mul(g, id));
            break;
        case Op::Log:
            acc(grad, needed, n.in0, mul(g, powc(n.in0, -1.0)));
            break;
        case Op::Powc:
            acc(grad, needed, n.in0, scale(mul(g, powc(n.in0, n.fa - 1.0)), n.fa));
            break;
        case Op::ReluSel:
            acc(grad, needed, n.in1, relu_sel(n.in0, g));
            break;
        case Op::Reshape:
            acc(grad, needed, n.in0, reshape(g, value(n.in0).shape));
            break;
        case Op::Matmul: {
            const bool ta = n.ia != 0, tb = n.ib != 0;
            if (needed[static_cast<size_t>(n.in0)])
                acc(grad, needed, n.in0,
                    ta ? matmul(n.in1, g, tb, true) : matmul(g, n.in1, false, !tb));
            if (needed[static_cast<size_t>(n.in1)])
                acc(grad, needed, n.in1,
                    tb ? matmul(g, n.in0, true, ta) : matmul(n.in0, g, !ta, false));
            break;
        }
        case Op::SumAll:
            acc(grad, needed, n.in0, bcast_all(g, value(n.in0).shape));
            break;
        case Op::BcastAll:
            acc(grad, needed, n.in0, sum_all(g));
            break;
        case Op::SumRows:
            acc(grad, needed, n.in0, bcast_rows(g, value(n.in0).dim(0)));
            break;
        case Op::BcastRows:
            acc(grad, needed, n.in0, sum_rows(g));
            break;
        case Op::SumCols:
            acc(grad, needed, n.in0, bcast_cols(g, value(n.in0).dim(1)));
            break;
        case Op::BcastCols:
            acc(grad, needed, n.in0, sum_cols(g));
            break;
        case Op::SumNHW: {
            const Tensor& x = value(n.in0);
            acc(grad, needed, n.in0, bcast_nhw(g, x.dim(0), x.dim(2), x.dim(3)));
            break;
        }
        case Op::BcastNHW:
            acc(grad, needed, n.in0, sum_nhw(g));
            break;
        case Op::Conv2d: {
            const int64_t xh = value(n.in0).dim(2), xw = value(n.in0).dim(3);
            const int64_t kh = value(n.in1).dim(2), kw = value(n.in1).dim(3);
            if (needed[static_cast<size_t>(n.in0)])
                acc(grad, needed, n.in0, conv2d_grad_input(n.in1, g, n.ia, n.ib, xh, xw));
            if (needed[static_cast<size_t>(n.in1)])
                acc(grad, needed, n.in1, conv2d_grad_weight(n.in0, g, n.ia, n.ib, kh, kw));
            break;
        }
        case Op::Conv2dGradInput: {
            // trilinear closure: d/dw <Z, cgi(w,g0)> = cgw(Z, g0); d/dg0 = conv2d(Z, w)
            const int64_t kh = value(n.in0).dim(2), kw = value(n.in0).dim(3);
            if (needed[static_cast<size_t>(n.in0)])
                acc(grad, needed, n.in0, conv2d_grad_weight(g, n.in1, n.ia, n.ib, kh, kw));
            if (needed[static_cast<size_t>(n.in1)])
                acc(grad, needed, n.in1, conv2d(g, n.in0, n.ia, n.ib));
            break;
        }
        case Op::Conv2dGradWeight: {
            // d/dx <Z, cgw(x,g0)> = cgi(Z, g0); d/dg0 = conv2d(x, Z)
            const int64_t xh = value(n.in0).dim(2), xw = value(n.in0).dim(3);
            if (needed[static_cast<size_t>(n.in0)])
                acc(grad, needed, n.in0, conv2d_grad_input(g, n.in1, n.ia, n.ib, xh, xw));
            if (needed[static_cast<size_t>(n.in1)])
                acc(grad, needed, n.in1, conv2d(n.in0, g, n.ia, n.ib));
            break;
        }
        case Op::PoolSel:
            acc(grad, needed, n.in1, pool_grad(n.in0, g));
            break;
        case Op::PoolGrad:
            acc(grad, needed, n.in1, pool_sel(n.in0, g));
            break;
        case Op::SelectLabel:
            acc(grad, needed, n.in0, scatter_label(g, labels_[static_cast<size_t>(n.aux)], n.ia));
            break;
        case Op::ScatterLabel:
            acc(grad, needed, n.in0, select_label(g, labels_[static_cast<size_t>(n.aux)]));
            break;
    }
}

std::vector<Tape::NodeId> Tape::backward(NodeId out, std::span<const NodeId> wrt) {
    if (value(out).numel() != 1)
        throw std::invalid_argument("backward: output must be scalar, got " + value(out).shape_str());
    const size_t top = static_cast<size_t>(out) + 1;

    // ancestors of wrt nodes; gradients flow only through these
    std::vector<char> needed(top, 0);
    for (NodeId w : wrt) {
        if (w < 0 || static_cast<size_t>(w) >= top)
            throw std::invalid_argument("backward: wrt node not on tape before output");
        needed[static_cast<size_t>(w)] = 1;
    }
    for (size_t i = 0; i < top; ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::Leaf || n.op == Op::Const) continue;
        if ((n.in0 != kNone && needed[static_cast<size_t>(n.in0)]) ||
            (n.in1 != kNone && needed[static_cast<size_t>(n.in1)]))
            needed[i] = 1;
    }

    std::vector<NodeId> grad(top, kNone);
    grad[static_cast<size_t>(out)] = constant(Tensor::scalar(1.0));
    for (size_t i = top; i-- > 0;) {
        if (grad[i] == kNone || !(needed[i] || i == static_cast<size_t>(out))) continue;
        accumulate_vjp(static_cast<NodeId>(i), grad[i], grad, needed);
    }

    std::vector<NodeId> result;
    result.reserve(wrt.size());
    for (NodeId w : wrt) {
        NodeId g = grad[static_cast<size_t>(w)];
        if (g == kNone) g = constant(Tensor::zeros(value(w).shape));
        result.push_back(g);
    }
    return result;
}

std::vector<double> gradient_flat(Tape& tape, Tape::NodeId loss, std::span<const Tape::NodeId> params) {
    const auto grads = tape.backward(loss, params);
    std::vector<double> flat;
    for (const auto g : grads) {
        const Tensor& t = tape.value(g);
        flat.insert(flat.end(), t.data.begin(), t.data.end());
    }
    return flat;
}

std::vector<double> hvp_flat(Tape& tape, Tape::NodeId loss, std::span<const Tape::NodeId> params,
                             std::span<const double> v) {
    int64_t total = 0;
    for (const auto p : params) total += tape.value(p).numel();
    if (total != static_cast<int64_t>(v.size()))
        throw std::invalid_argument("hvp: vector length " + std::to_string(v.size()) +
                                    " does not match parameter count " + std::to_string(total));

    const auto grads = tape.backward(loss, params);

    // s = grad(loss) . v, with v constant; grad of s is the HVP
    Tape::NodeId s = Tape::kNone;
    size_t off = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor& shape_ref = tape.value(params[i]);
        Tensor vt(shape_ref.shape);
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
                  v.begin() + static_cast<std::ptrdiff_t>(off + vt.data.size()), vt.data.begin());
        off += vt.data.size();
        const Tape::NodeId term = tape.dot(grads[i], tape.constant(std::move(vt)));
        s = (s == Tape::kNone) ? term : tape.add(s, term);
    }
    return gradient_flat(tape, s, params);
}

}  // namespace losslab
