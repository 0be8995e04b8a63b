#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace losslab {

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape[i]; }
    size_t rank() const { return shape.size(); }

    static Tensor scalar(double v) { return Tensor({std::vector<int64_t>{}}, {v}); }
    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;
};

/// Reverse-mode tape. Nodes are created eagerly (values computed on the spot)
/// and backward() emits the gradient computation as new nodes on the same
/// tape, so gradients are themselves differentiable. hvp() uses that to form
/// Hessian-vector products by differentiating grad(loss) . v.
///
/// Tapes are single-threaded; run one per model replica.
class Tape {
public:
    using NodeId = int32_t;
    static constexpr NodeId kNone = -1;

    // leaves
    NodeId leaf(Tensor value);       // differentiable (parameters)
    NodeId constant(Tensor value);   // non-differentiable (data, labels, buffers)

    // elementwise
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId neg(NodeId a);
    NodeId scale(NodeId a, double c);
    NodeId add_const(NodeId a, double c);
    NodeId exp_(NodeId a);
    NodeId log_(NodeId a);
    NodeId powc(NodeId a, double p);
    NodeId relu(NodeId a) { return relu_sel(a, a); }
    // val where ref > 0, else 0; gate on ref is non-differentiable
    NodeId relu_sel(NodeId ref, NodeId val);

    // shape / linear algebra
    NodeId reshape(NodeId a, std::vector<int64_t> shape);
    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);

    // reductions and their broadcast inverses
    NodeId sum_all(NodeId a);                               // -> scalar
    NodeId bcast_all(NodeId s, std::vector<int64_t> shape); // scalar -> shape
    NodeId sum_rows(NodeId a);                              // [N,D] -> [D]
    NodeId bcast_rows(NodeId v, int64_t n);                 // [D] -> [N,D]
    NodeId sum_cols(NodeId a);                              // [N,D] -> [N]
    NodeId bcast_cols(NodeId v, int64_t d);                 // [N] -> [N,D]
    NodeId sum_nhw(NodeId a);                               // [N,C,H,W] -> [C]
    NodeId bcast_nhw(NodeId v, int64_t n, int64_t h, int64_t w);  // [C] -> [N,C,H,W]

    NodeId mean_all(NodeId a);
    NodeId mean_rows(NodeId a);
    NodeId mean_nhw(NodeId a);
    NodeId dot(NodeId a, NodeId b) { return sum_all(mul(a, b)); }

    // convolution, zero padding, x:[N,Ci,H,W] w:[Co,Ci,kh,kw]
    NodeId conv2d(NodeId x, NodeId w, int stride, int pad);
    // 2x2 max pool, stride 2; gate from ref is non-differentiable
    NodeId maxpool2(NodeId a) { return pool_sel(a, a); }
    NodeId pool_sel(NodeId ref, NodeId val);

    // classification plumbing; labels are baked-in constants
    NodeId select_label(NodeId logits, const std::vector<int>& labels);  // [N,C] -> [N]
    NodeId scatter_label(NodeId v, const std::vector<int>& labels, int64_t classes);  // [N] -> [N,C]

    /// Mean softmax cross-entropy over the batch (log-sum-exp stabilized with
    /// a detached per-row max).
    NodeId softmax_xent_mean(NodeId logits, const std::vector<int>& labels);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].val; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); labels_.clear(); }

    /// Gradients of a scalar node w.r.t. each node in `wrt`, as new tape nodes.
    /// Nodes that do not influence `out` get a zero gradient of their shape.
    std::vector<NodeId> backward(NodeId out, std::span<const NodeId> wrt);

private:
    enum class Op : uint8_t {
        Leaf, Const,
        Add, Sub, Mul, Neg, Scale, AddConst, Exp, Log, Powc, ReluSel,
        Reshape, Matmul,
        SumAll, BcastAll, SumRows, BcastRows, SumCols, BcastCols, SumNHW, BcastNHW,
        Conv2d, Conv2dGradInput, Conv2dGradWeight,
        PoolSel, PoolGrad,
        SelectLabel, ScatterLabel,
    };

    struct Node {
        Op op;
        NodeId in0 = kNone, in1 = kNone;
        int ia = 0, ib = 0, ic = 0, id = 0;  // op attributes (stride, pad, dims, flags)
        double fa = 0.0;                     // scalar attribute
        int aux = -1;                        // index into labels_
        Tensor val;
    };

    std::vector<Node> nodes_;
    std::vector<std::vector<int>> labels_;

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    NodeId conv2d_grad_input(NodeId w, NodeId g, int stride, int pad, int64_t in_h, int64_t in_w);
    NodeId conv2d_grad_weight(NodeId x, NodeId g, int stride, int pad, int64_t kh, int64_t kw);
    NodeId pool_grad(NodeId ref, NodeId q);
    void check_same_shape(NodeId a, NodeId b, const char* what) const;
    // appends the vector-Jacobian product of node `id` into grad accumulators
    void accumulate_vjp(NodeId id, NodeId g, std::vector<NodeId>& grad, const std::vector<char>& needed);
    void acc(std::vector<NodeId>& grad, const std::vector<char>& needed, NodeId target, NodeId g);
};

/// Gradient of a scalar loss node w.r.t. parameter leaves, flattened in order.
std::vector<double> gradient_flat(Tape& tape, Tape::NodeId loss, std::span<const Tape::NodeId> params);

/// Hessian-vector product via double backward: differentiate grad(loss) . v.
/// `v` is flat and laid out like the concatenation of the parameter leaves.
std::vector<double> hvp_flat(Tape& tape, Tape::NodeId loss, std::span<const Tape::NodeId> params,
                             std::span<const double> v);

}  // namespace losslab
