#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sciml/activation.hpp"
#include "sciml/tensor.hpp"

namespace sciml {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
    Input,
    Constant,
    Add,
    Sub,
    Mul,      // elementwise product, equal shapes
    Scale,    // x * scalar attribute
    AddK,     // x + scalar attribute
    MatMul,   // rank-2 product
    Transpose,
    AddColVec,  // (r x c) + (r x 1), broadcast over columns
    MulRowVec,  // (r x c) * (1 x c), scales each column
    ScaleByNode,  // x * s where s is a 1-element node
    Act,        // activation derivative of given order, elementwise
    Sum,        // all elements -> (1 x 1)
    Square,
    Pow,  // elementwise x^p, p scalar attribute
    Log,
    Exp,
    SliceRows,  // rows [r0, r1) of a rank-2 tensor
    PadRows,    // embed rank-2 tensor into zero block of `rows` rows at offset r0
    Conv2D,     // (image HxWxC, weights k1 x k2 x C x P, bias P)
    Pool,       // max or average pooling per channel
    Reshape,
};

/// One recorded primitive operation: op kind, parent indices and the cached
/// value tensor. Parents always have smaller indices than the node itself.
struct Node {
    OpKind op;
    NodeId a = 0, b = 0, c = 0;
    int nparents = 0;
    Tensor value;

    double scalar = 0.0;  // Scale factor / AddK offset / Pow exponent
    Activation act_kind = Activation::Linear;
    double act_alpha = 0.0;
    int act_order = 0;
    std::size_t r0 = 0, r1 = 0;       // SliceRows range; PadRows offset/rows
    int stride = 1, pad = 0;          // Conv2D / Pool
    int patch = 1;                    // Pool patch edge
    bool pool_max = true;
};

/// Adjoints keyed by node id, produced by a reverse sweep.
class GradMap {
public:
    explicit GradMap(std::size_t n) : adj_(n), set_(n, 0) {}

    bool has(NodeId id) const { return set_[id] != 0; }

    const Tensor& at(NodeId id) const {
        if (!set_[id]) throw std::out_of_range("no adjoint recorded for node " + std::to_string(id));
        return adj_[id];
    }

    void accumulate(NodeId id, const Tensor& g) {
        if (!set_[id]) {
            adj_[id] = g;
            set_[id] = 1;
        } else {
            adj_[id] = add(adj_[id], g);
        }
    }

    std::size_t size() const { return adj_.size(); }

private:
    std::vector<Tensor> adj_;
    std::vector<char> set_;
};

namespace detail {

struct ConvDims {
    std::size_t hi, wi, ci, k1, k2, p, ho, wo;
};

inline ConvDims conv_dims(const Tensor& img, const Tensor& w, int stride, int pad) {
    img.require_rank(3);
    w.require_rank(4);
    ConvDims d;
    d.hi = img.extent(0);
    d.wi = img.extent(1);
    d.ci = img.extent(2);
    d.k1 = w.extent(0);
    d.k2 = w.extent(1);
    if (w.extent(2) != d.ci)
        throw DimensionError("conv2d channel mismatch: image has " + std::to_string(d.ci) +
                             " channels, kernel expects " + std::to_string(w.extent(2)));
    d.p = w.extent(3);
    const std::size_t hp = d.hi + 2 * static_cast<std::size_t>(pad);
    const std::size_t wp = d.wi + 2 * static_cast<std::size_t>(pad);
    if (hp < d.k1 || wp < d.k2) throw DimensionError("conv2d kernel larger than padded image");
    d.ho = (hp - d.k1) / static_cast<std::size_t>(stride) + 1;
    d.wo = (wp - d.k2) / static_cast<std::size_t>(stride) + 1;
    return d;
}

inline Tensor conv2d_value(const Tensor& img, const Tensor& w, const Tensor& bias, int stride,
                           int pad) {
    const ConvDims d = conv_dims(img, w, stride, pad);
    if (bias.size() != d.p) throw DimensionError("conv2d bias length mismatch");
    Tensor out({d.ho, d.wo, d.p});
    const long S = stride, P = pad;
    for (std::size_t i = 0; i < d.ho; ++i)
        for (std::size_t j = 0; j < d.wo; ++j)
            for (std::size_t p = 0; p < d.p; ++p) {
                double acc = bias[p];
                for (std::size_t m = 0; m < d.k1; ++m)
                    for (std::size_t n = 0; n < d.k2; ++n) {
                        const long ii = static_cast<long>(i) * S + static_cast<long>(m) - P;
                        const long jj = static_cast<long>(j) * S + static_cast<long>(n) - P;
                        if (ii < 0 || jj < 0 || ii >= static_cast<long>(d.hi) ||
                            jj >= static_cast<long>(d.wi))
                            continue;
                        for (std::size_t c = 0; c < d.ci; ++c)
                            acc += w(m, n, c, p) *
                                   img(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj), c);
                    }
                out(i, j, p) = acc;
            }
    return out;
}

inline Tensor pool_value(const Tensor& img, bool pool_max, int patch, int stride) {
    img.require_rank(3);
    const std::size_t hi = img.extent(0), wi = img.extent(1), ci = img.extent(2);
    const std::size_t ps = static_cast<std::size_t>(patch), st = static_cast<std::size_t>(stride);
    if (ps > hi || ps > wi) throw DimensionError("pool patch exceeds image");
    const std::size_t ho = (hi - ps) / st + 1, wo = (wi - ps) / st + 1;
    Tensor out({ho, wo, ci});
    for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j)
            for (std::size_t c = 0; c < ci; ++c) {
                if (pool_max) {
                    double best = img(i * st, j * st, c);
                    for (std::size_t m = 0; m < ps; ++m)
                        for (std::size_t n = 0; n < ps; ++n)
                            best = std::max(best, img(i * st + m, j * st + n, c));
                    out(i, j, c) = best;
                } else {
                    double acc = 0.0;
                    for (std::size_t m = 0; m < ps; ++m)
                        for (std::size_t n = 0; n < ps; ++n) acc += img(i * st + m, j * st + n, c);
                    out(i, j, c) = acc / static_cast<double>(ps * ps);
                }
            }
    return out;
}

}  // namespace detail

/// A recorded computational graph. Nodes are appended in evaluation order
/// (define-by-run) with values cached eagerly; the graph can later be swept
/// in reverse for adjoints, or extended in place with nodes that compute
/// derivatives of a scalar node with respect to any earlier node.
class Tape {
public:
    NodeId input(Tensor v) {
        NodeId id = push(OpKind::Input, std::move(v));
        roots_.push_back(id);
        return id;
    }

    NodeId constant(Tensor v) { return push(OpKind::Constant, std::move(v)); }

    NodeId add(NodeId x, NodeId y) { return binary(OpKind::Add, x, y, sciml::add(val(x), val(y))); }
    NodeId sub(NodeId x, NodeId y) { return binary(OpKind::Sub, x, y, sciml::sub(val(x), val(y))); }
    NodeId mul(NodeId x, NodeId y) { return binary(OpKind::Mul, x, y, sciml::mul(val(x), val(y))); }

    NodeId scale(NodeId x, double c) {
        NodeId id = unary(OpKind::Scale, x, sciml::scale(val(x), c));
        nodes_[id].scalar = c;
        return id;
    }

    NodeId add_k(NodeId x, double c) {
        NodeId id = unary(OpKind::AddK, x, ewise([c](double v) { return v + c; }, val(x)));
        nodes_[id].scalar = c;
        return id;
    }

    NodeId matmul(NodeId x, NodeId y) {
        return binary(OpKind::MatMul, x, y, sciml::matmul(val(x), val(y)));
    }

    NodeId transpose(NodeId x) { return unary(OpKind::Transpose, x, sciml::transpose(val(x))); }

    NodeId add_col(NodeId m, NodeId b) {
        const Tensor& mv = val(m);
        const Tensor& bv = val(b);
        mv.require_rank(2);
        if (bv.size() != mv.rows())
            throw DimensionError("add_col: column vector length " + std::to_string(bv.size()) +
                                 " vs matrix " + shape_to_string(mv.shape()));
        Tensor out = mv;
        for (std::size_t i = 0; i < mv.rows(); ++i)
            for (std::size_t j = 0; j < mv.cols(); ++j) out(i, j) += bv[i];
        return binary(OpKind::AddColVec, m, b, std::move(out));
    }

    NodeId mul_row(NodeId m, NodeId r) {
        const Tensor& mv = val(m);
        const Tensor& rv = val(r);
        mv.require_rank(2);
        if (rv.size() != mv.cols())
            throw DimensionError("mul_row: row vector length " + std::to_string(rv.size()) +
                                 " vs matrix " + shape_to_string(mv.shape()));
        Tensor out = mv;
        for (std::size_t i = 0; i < mv.rows(); ++i)
            for (std::size_t j = 0; j < mv.cols(); ++j) out(i, j) *= rv[j];
        return binary(OpKind::MulRowVec, m, r, std::move(out));
    }

    NodeId scale_by(NodeId x, NodeId s) {
        if (val(s).size() != 1) throw DimensionError("scale_by expects a 1-element scale node");
        return binary(OpKind::ScaleByNode, x, s, sciml::scale(val(x), val(s)[0]));
    }

    NodeId act(Activation kind, NodeId x, double alpha = 0.0, int order = 0) {
        Tensor out = ewise([&](double v) { return act_eval(kind, alpha, order, v); }, val(x));
        NodeId id = unary(OpKind::Act, x, std::move(out));
        nodes_[id].act_kind = kind;
        nodes_[id].act_alpha = alpha;
        nodes_[id].act_order = order;
        return id;
    }

    NodeId sum(NodeId x) { return unary(OpKind::Sum, x, Tensor::from({1, 1}, {sciml::sum(val(x))})); }

    NodeId square(NodeId x) {
        return unary(OpKind::Square, x, ewise([](double v) { return v * v; }, val(x)));
    }

    NodeId pow(NodeId x, double p) {
        NodeId id = unary(OpKind::Pow, x, ewise([p](double v) { return std::pow(v, p); }, val(x)));
        nodes_[id].scalar = p;
        return id;
    }

    NodeId log(NodeId x) {
        return unary(OpKind::Log, x, ewise([](double v) { return std::log(v); }, val(x)));
    }

    NodeId exp(NodeId x) {
        return unary(OpKind::Exp, x, ewise([](double v) { return std::exp(v); }, val(x)));
    }

    NodeId slice_rows(NodeId x, std::size_t r0, std::size_t r1) {
        const Tensor& xv = val(x);
        xv.require_rank(2);
        if (r1 > xv.rows() || r0 >= r1) throw DimensionError("slice_rows range out of bounds");
        Tensor out({r1 - r0, xv.cols()});
        for (std::size_t i = r0; i < r1; ++i)
            for (std::size_t j = 0; j < xv.cols(); ++j) out(i - r0, j) = xv(i, j);
        NodeId id = unary(OpKind::SliceRows, x, std::move(out));
        nodes_[id].r0 = r0;
        nodes_[id].r1 = r1;
        return id;
    }

    NodeId pad_rows(NodeId x, std::size_t rows, std::size_t offset) {
        const Tensor& xv = val(x);
        xv.require_rank(2);
        if (offset + xv.rows() > rows) throw DimensionError("pad_rows does not fit");
        Tensor out({rows, xv.cols()});
        for (std::size_t i = 0; i < xv.rows(); ++i)
            for (std::size_t j = 0; j < xv.cols(); ++j) out(i + offset, j) = xv(i, j);
        NodeId id = unary(OpKind::PadRows, x, std::move(out));
        nodes_[id].r0 = offset;
        nodes_[id].r1 = rows;
        return id;
    }

    NodeId conv2d(NodeId img, NodeId w, NodeId bias, int stride = 1, int pad = 0) {
        Tensor out = detail::conv2d_value(val(img), val(w), val(bias), stride, pad);
        NodeId id = static_cast<NodeId>(nodes_.size());
        Node n;
        n.op = OpKind::Conv2D;
        n.a = img;
        n.b = w;
        n.c = bias;
        n.nparents = 3;
        n.value = std::move(out);
        n.stride = stride;
        n.pad = pad;
        nodes_.push_back(std::move(n));
        return id;
    }

    NodeId pool(NodeId x, bool pool_max, int patch, int stride) {
        Tensor out = detail::pool_value(val(x), pool_max, patch, stride);
        NodeId id = unary(OpKind::Pool, x, std::move(out));
        nodes_[id].pool_max = pool_max;
        nodes_[id].patch = patch;
        nodes_[id].stride = stride;
        return id;
    }

    NodeId reshape(NodeId x, std::vector<std::size_t> shape) {
        return unary(OpKind::Reshape, x, val(x).reshape(std::move(shape)));
    }

    void set_tip(NodeId id) { tip_ = id; }
    NodeId tip() const { return tip_; }

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<NodeId>& roots() const { return roots_; }

    /// Replaces the value of an input node and recomputes every dependent
    /// cached value in index order.
    void set_input(NodeId id, Tensor v) {
        Node& n = nodes_.at(id);
        if (n.op != OpKind::Input) throw std::invalid_argument("set_input on a non-input node");
        if (!n.value.same_shape(v)) throw DimensionError("set_input changes the node shape");
        n.value = std::move(v);
        refresh(id + 1);
    }

    /// Appends, to this tape, nodes that evaluate d(sum of f)/d(node `wrt`)
    /// and returns the id of the resulting derivative expression. Only ops
    /// with registered derivative primitives may appear on the path from
    /// `wrt` to `f`; the ReLU family is rejected as insufficiently smooth.
    NodeId adjoint_expression(NodeId f, NodeId wrt);

private:
    NodeId push(OpKind op, Tensor v) {
        NodeId id = static_cast<NodeId>(nodes_.size());
        Node n;
        n.op = op;
        n.nparents = 0;
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return id;
    }

    NodeId unary(OpKind op, NodeId x, Tensor v) {
        check_id(x);
        NodeId id = push(op, std::move(v));
        nodes_[id].a = x;
        nodes_[id].nparents = 1;
        return id;
    }

    NodeId binary(OpKind op, NodeId x, NodeId y, Tensor v) {
        check_id(x);
        check_id(y);
        NodeId id = push(op, std::move(v));
        nodes_[id].a = x;
        nodes_[id].b = y;
        nodes_[id].nparents = 2;
        return id;
    }

    void check_id(NodeId id) const {
        if (id >= nodes_.size()) throw std::out_of_range("parent node id out of range");
    }

    const Tensor& val(NodeId id) const {
        check_id(id);
        return nodes_[id].value;
    }

    void refresh(NodeId from);

    std::vector<Node> nodes_;
    std::vector<NodeId> roots_;
    NodeId tip_ = 0;
};

namespace detail {

inline Tensor recompute(const Tape& t, const Node& n) {
    auto v = [&](NodeId id) -> const Tensor& { return t.value(id); };
    switch (n.op) {
        case OpKind::Input:
        case OpKind::Constant: return n.value;
        case OpKind::Add: return sciml::add(v(n.a), v(n.b));
        case OpKind::Sub: return sciml::sub(v(n.a), v(n.b));
        case OpKind::Mul: return sciml::mul(v(n.a), v(n.b));
        case OpKind::Scale: return sciml::scale(v(n.a), n.scalar);
        case OpKind::AddK: return ewise([&](double x) { return x + n.scalar; }, v(n.a));
        case OpKind::MatMul: return sciml::matmul(v(n.a), v(n.b));
        case OpKind::Transpose: return sciml::transpose(v(n.a));
        case OpKind::AddColVec: {
            Tensor out = v(n.a);
            const Tensor& b = v(n.b);
            for (std::size_t i = 0; i < out.rows(); ++i)
                for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b[i];
            return out;
        }
        case OpKind::MulRowVec: {
            Tensor out = v(n.a);
            const Tensor& r = v(n.b);
            for (std::size_t i = 0; i < out.rows(); ++i)
                for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= r[j];
            return out;
        }
        case OpKind::ScaleByNode: return sciml::scale(v(n.a), v(n.b)[0]);
        case OpKind::Act:
            return ewise([&](double x) { return act_eval(n.act_kind, n.act_alpha, n.act_order, x); },
                         v(n.a));
        case OpKind::Sum: return Tensor::from({1, 1}, {sciml::sum(v(n.a))});
        case OpKind::Square: return ewise([](double x) { return x * x; }, v(n.a));
        case OpKind::Pow: return ewise([&](double x) { return std::pow(x, n.scalar); }, v(n.a));
        case OpKind::Log: return ewise([](double x) { return std::log(x); }, v(n.a));
        case OpKind::Exp: return ewise([](double x) { return std::exp(x); }, v(n.a));
        case OpKind::SliceRows: {
            const Tensor& x = v(n.a);
            Tensor out({n.r1 - n.r0, x.cols()});
            for (std::size_t i = n.r0; i < n.r1; ++i)
                for (std::size_t j = 0; j < x.cols(); ++j) out(i - n.r0, j) = x(i, j);
            return out;
        }
        case OpKind::PadRows: {
            const Tensor& x = v(n.a);
            Tensor out({n.r1, x.cols()});
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j) out(i + n.r0, j) = x(i, j);
            return out;
        }
        case OpKind::Conv2D: return conv2d_value(v(n.a), v(n.b), v(n.c), n.stride, n.pad);
        case OpKind::Pool: return pool_value(v(n.a), n.pool_max, n.patch, n.stride);
        case OpKind::Reshape: return v(n.a).reshape(n.value.shape());
    }
    throw std::logic_error("unhandled op in recompute");
}

}  // namespace detail

inline void Tape::refresh(NodeId from) {
    for (NodeId k = from; k < nodes_.size(); ++k) {
        Node& n = nodes_[k];
        if (n.op == OpKind::Input || n.op == OpKind::Constant) continue;
        n.value = detail::recompute(*this, n);
    }
}

/// Reverse sweep: propagates `seed` (shaped like the tip value) through the
/// recorded graph and returns adjoints for every reached node. Contributions
/// accumulate in fixed node-index order, so results are bit-reproducible.
inline GradMap backward(const Tape& tape, const Tensor& seed) {
    const NodeId tip = tape.tip();
    if (!seed.same_shape(tape.value(tip)))
        throw DimensionError("backward seed shape " + shape_to_string(seed.shape()) +
                             " does not match tip shape " +
                             shape_to_string(tape.value(tip).shape()));
    GradMap grads(tape.size());
    grads.accumulate(tip, seed);

    for (NodeId k = tip + 1; k-- > 0;) {
        if (!grads.has(k)) continue;
        const Node& n = tape.node(k);
        if (n.nparents == 0) continue;
        const Tensor& g = grads.at(k);
        const Tensor& av = tape.value(n.a);
        switch (n.op) {
            case OpKind::Add:
                grads.accumulate(n.a, g);
                grads.accumulate(n.b, g);
                break;
            case OpKind::Sub:
                grads.accumulate(n.a, g);
                grads.accumulate(n.b, scale(g, -1.0));
                break;
            case OpKind::Mul:
                grads.accumulate(n.a, mul(g, tape.value(n.b)));
                grads.accumulate(n.b, mul(g, av));
                break;
            case OpKind::Scale: grads.accumulate(n.a, scale(g, n.scalar)); break;
            case OpKind::AddK: grads.accumulate(n.a, g); break;
            case OpKind::MatMul:
                grads.accumulate(n.a, matmul(g, transpose(tape.value(n.b))));
                grads.accumulate(n.b, matmul(transpose(av), g));
                break;
            case OpKind::Transpose: grads.accumulate(n.a, transpose(g)); break;
            case OpKind::AddColVec: {
                grads.accumulate(n.a, g);
                Tensor gb = Tensor::zeros_like(tape.value(n.b));
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gb[i] += g(i, j);
                grads.accumulate(n.b, gb);
                break;
            }
            case OpKind::MulRowVec: {
                const Tensor& r = tape.value(n.b);
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.rows(); ++i)
                    for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= r[j];
                grads.accumulate(n.a, ga);
                Tensor gr = Tensor::zeros_like(r);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j) * av(i, j);
                grads.accumulate(n.b, gr);
                break;
            }
            case OpKind::ScaleByNode: {
                grads.accumulate(n.a, scale(g, tape.value(n.b)[0]));
                grads.accumulate(n.b, Tensor::from(tape.value(n.b).shape(), {dot(g, av)}));
                break;
            }
            case OpKind::Act: {
                Tensor d = ewise(
                    [&](double x) {
                        return act_eval(n.act_kind, n.act_alpha, n.act_order + 1, x);
                    },
                    av);
                grads.accumulate(n.a, mul(g, d));
                break;
            }
            case OpKind::Sum: {
                Tensor ga(av.shape(), g[0]);
                grads.accumulate(n.a, ga);
                break;
            }
            case OpKind::Square: grads.accumulate(n.a, mul(g, scale(av, 2.0))); break;
            case OpKind::Pow: {
                const double p = n.scalar;
                Tensor d = ewise([p](double x) { return p * std::pow(x, p - 1.0); }, av);
                grads.accumulate(n.a, mul(g, d));
                break;
            }
            case OpKind::Log:
                grads.accumulate(n.a, mul(g, ewise([](double x) { return 1.0 / x; }, av)));
                break;
            case OpKind::Exp: grads.accumulate(n.a, mul(g, n.value)); break;
            case OpKind::SliceRows: {
                Tensor ga = Tensor::zeros_like(av);
                for (std::size_t i = n.r0; i < n.r1; ++i)
                    for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g(i - n.r0, j);
                grads.accumulate(n.a, ga);
                break;
            }
            case OpKind::PadRows: {
                Tensor ga = Tensor::zeros_like(av);
                for (std::size_t i = 0; i < av.rows(); ++i)
                    for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g(i + n.r0, j);
                grads.accumulate(n.a, ga);
                break;
            }
            case OpKind::Conv2D: {
                const Tensor& w = tape.value(n.b);
                const detail::ConvDims d = detail::conv_dims(av, w, n.stride, n.pad);
                Tensor gimg = Tensor::zeros_like(av);
                Tensor gw = Tensor::zeros_like(w);
                Tensor gb = Tensor::zeros_like(tape.value(n.c));
                const long S = n.stride, P = n.pad;
                for (std::size_t i = 0; i < d.ho; ++i)
                    for (std::size_t j = 0; j < d.wo; ++j)
                        for (std::size_t p = 0; p < d.p; ++p) {
                            const double gv = g(i, j, p);
                            if (gv == 0.0) continue;
                            gb[p] += gv;
                            for (std::size_t m = 0; m < d.k1; ++m)
                                for (std::size_t nn = 0; nn < d.k2; ++nn) {
                                    const long ii = static_cast<long>(i) * S +
                                                    static_cast<long>(m) - P;
                                    const long jj = static_cast<long>(j) * S +
                                                    static_cast<long>(nn) - P;
                                    if (ii < 0 || jj < 0 || ii >= static_cast<long>(d.hi) ||
                                        jj >= static_cast<long>(d.wi))
                                        continue;
                                    const auto ui = static_cast<std::size_t>(ii);
                                    const auto uj = static_cast<std::size_t>(jj);
                                    for (std::size_t ch = 0; ch < d.ci; ++ch) {
                                        gw(m, nn, ch, p) += gv * av(ui, uj, ch);
                                        gimg(ui, uj, ch) += gv * w(m, nn, ch, p);
                                    }
                                }
                        }
                grads.accumulate(n.a, gimg);
                grads.accumulate(n.b, gw);
                grads.accumulate(n.c, gb);
                break;
            }
            case OpKind::Pool: {
                const std::size_t ps = static_cast<std::size_t>(n.patch);
                const std::size_t st = static_cast<std::size_t>(n.stride);
                Tensor ga = Tensor::zeros_like(av);
                const std::size_t ho = n.value.extent(0), wo = n.value.extent(1),
                                  ci = n.value.extent(2);
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j)
                        for (std::size_t ch = 0; ch < ci; ++ch) {
                            if (n.pool_max) {
                                std::size_t bm = 0, bn = 0;
                                double best = av(i * st, j * st, ch);
                                for (std::size_t m = 0; m < ps; ++m)
                                    for (std::size_t nn = 0; nn < ps; ++nn)
                                        if (av(i * st + m, j * st + nn, ch) > best) {
                                            best = av(i * st + m, j * st + nn, ch);
                                            bm = m;
                                            bn = nn;
                                        }
                                ga(i * st + bm, j * st + bn, ch) += g(i, j, ch);
                            } else {
                                const double share = g(i, j, ch) / static_cast<double>(ps * ps);
                                for (std::size_t m = 0; m < ps; ++m)
                                    for (std::size_t nn = 0; nn < ps; ++nn)
                                        ga(i * st + m, j * st + nn, ch) += share;
                            }
                        }
                grads.accumulate(n.a, ga);
                break;
            }
            case OpKind::Reshape: grads.accumulate(n.a, g.reshape(av.shape())); break;
            case OpKind::Input:
            case OpKind::Constant: break;
        }
    }
    return grads;
}

inline NodeId Tape::adjoint_expression(NodeId f, NodeId wrt) {
    check_id(f);
    check_id(wrt);
    const NodeId limit = f;
    std::vector<std::optional<NodeId>> adj(limit + 1);

    // Seed with ones shaped like f: d(sum f)/df.
    adj[f] = constant(Tensor(value(f).shape(), 1.0));

    auto accum = [&](NodeId target, NodeId contrib) {
        if (target > limit) throw std::logic_error("adjoint parent beyond limit");
        if (!adj[target])
            adj[target] = contrib;
        else
            adj[target] = add(*adj[target], contrib);
    };

    for (NodeId k = limit + 1; k-- > 0;) {
        if (!adj[k]) continue;
        const Node n = nodes_[k];  // copy: nodes_ may reallocate as we append
        if (n.nparents == 0) continue;
        const NodeId g = *adj[k];
        switch (n.op) {
            case OpKind::Add:
                accum(n.a, g);
                accum(n.b, g);
                break;
            case OpKind::Sub:
                accum(n.a, g);
                accum(n.b, scale(g, -1.0));
                break;
            case OpKind::Mul:
                accum(n.a, mul(g, n.b));
                accum(n.b, mul(g, n.a));
                break;
            case OpKind::Scale: accum(n.a, scale(g, n.scalar)); break;
            case OpKind::AddK: accum(n.a, g); break;
            case OpKind::MatMul:
                accum(n.a, matmul(g, transpose(n.b)));
                accum(n.b, matmul(transpose(n.a), g));
                break;
            case OpKind::Transpose: accum(n.a, transpose(g)); break;
            case OpKind::AddColVec: {
                accum(n.a, g);
                // Row sums via multiplication with a ones column.
                NodeId ones = constant(Tensor({value(n.a).cols(), 1}, 1.0));
                accum(n.b, reshape(matmul(g, ones), value(n.b).shape()));
                break;
            }
            case OpKind::MulRowVec: {
                accum(n.a, mul_row(g, n.b));
                NodeId ones = constant(Tensor({1, value(n.a).rows()}, 1.0));
                accum(n.b, reshape(matmul(ones, mul(g, n.a)), value(n.b).shape()));
                break;
            }
            case OpKind::ScaleByNode: {
                accum(n.a, scale_by(g, n.b));
                NodeId prod = sum(mul(g, n.a));
                accum(n.b, reshape(prod, value(n.b).shape()));
                break;
            }
            case OpKind::Act: {
                if (!activation_is_smooth(n.act_kind))
                    throw SmoothnessError(
                        std::string("insufficient smoothness: cannot extend a graph containing ") +
                        activation_name(n.act_kind));
                NodeId d = act(n.act_kind, n.a, n.act_alpha, n.act_order + 1);
                accum(n.a, mul(g, d));
                break;
            }
            case OpKind::Sum: {
                NodeId ones = constant(Tensor(value(n.a).shape(), 1.0));
                accum(n.a, scale_by(ones, g));
                break;
            }
            case OpKind::Square: accum(n.a, mul(g, scale(n.a, 2.0))); break;
            case OpKind::Pow: accum(n.a, mul(g, scale(pow(n.a, n.scalar - 1.0), n.scalar))); break;
            case OpKind::Log: accum(n.a, mul(g, pow(n.a, -1.0))); break;
            case OpKind::Exp: accum(n.a, mul(g, static_cast<NodeId>(k))); break;
            case OpKind::SliceRows: accum(n.a, pad_rows(g, value(n.a).rows(), n.r0)); break;
            case OpKind::PadRows: accum(n.a, slice_rows(g, n.r0, n.r0 + value(n.a).rows())); break;
            default:
                throw std::invalid_argument(
                    "no registered derivative primitive for op on the extension path");
        }
    }

    if (!adj[wrt]) {
        // f does not depend on wrt: derivative is identically zero.
        return constant(Tensor::zeros_like(value(wrt)));
    }
    return *adj[wrt];
}

/// New tape whose tip evaluates d(sum of old tip)/d(first input). Node ids
/// of the original tape keep their meaning in the extended tape.
inline Tape extend(const Tape& tape, std::optional<NodeId> wrt = std::nullopt) {
    if (tape.roots().empty() && !wrt)
        throw std::invalid_argument("extend: tape has no input nodes");
    Tape out = tape;
    NodeId x = wrt ? *wrt : tape.roots().front();
    NodeId tip = out.adjoint_expression(tape.tip(), x);
    out.set_tip(tip);
    return out;
}

/// Derivative of the tip (a vector of length D, stored as rank-1 or a
/// D x 1 / 1 x D matrix) with respect to the first input node, as a D x d
/// matrix assembled one output component at a time.
inline Tensor input_jacobian(const Tape& tape, std::optional<NodeId> wrt = std::nullopt) {
    const NodeId x = wrt ? *wrt : tape.roots().front();
    const Tensor& out = tape.value(tape.tip());
    const std::size_t d = tape.value(x).size();
    const std::size_t D = out.size();
    Tensor jac({D, d});
    for (std::size_t i = 0; i < D; ++i) {
        Tensor seed = Tensor::zeros_like(out);
        seed[i] = 1.0;
        GradMap g = backward(tape, seed);
        if (!g.has(x)) continue;
        const Tensor& gx = g.at(x);
        for (std::size_t j = 0; j < d; ++j) jac(i, j) = gx[j];
    }
    return jac;
}

struct GradCheckEntry {
    NodeId node;
    double max_rel_error;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
};

/// Compares backward() against central finite differences of the scalar tip,
/// once per input node. The error metric for a parameter tensor is
/// max_i |ad_i - fd_i| / max(||ad||_inf, ||fd||_inf, 1e-12).
inline GradCheckReport grad_check(Tape& tape, double step) {
    if (step <= 0.0) throw std::invalid_argument("grad_check step must be positive");
    if (tape.value(tape.tip()).size() != 1)
        throw std::invalid_argument("grad_check expects a scalar tip");
    GradCheckReport report;
    GradMap grads = backward(tape, Tensor::from(tape.value(tape.tip()).shape(), {1.0}));
    for (NodeId root : tape.roots()) {
        const Tensor base = tape.value(root);
        Tensor fd = Tensor::zeros_like(base);
        for (std::size_t i = 0; i < base.size(); ++i) {
            Tensor hi = base, lo = base;
            hi[i] += step;
            lo[i] -= step;
            tape.set_input(root, hi);
            const double fhi = tape.value(tape.tip())[0];
            tape.set_input(root, lo);
            const double flo = tape.value(tape.tip())[0];
            fd[i] = (fhi - flo) / (2.0 * step);
        }
        tape.set_input(root, base);
        Tensor ad = grads.has(root) ? grads.at(root) : Tensor::zeros_like(base);
        const double denom = std::max({max_abs(ad), max_abs(fd), 1e-12});
        double worst = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i)
            worst = std::max(worst, std::abs(ad[i] - fd[i]) / denom);
        report.entries.push_back({root, worst});
        report.max_rel_error = std::max(report.max_rel_error, worst);
    }
    return report;
}

}  // namespace sciml
