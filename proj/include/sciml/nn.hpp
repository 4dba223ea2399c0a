#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sciml/activation.hpp"
#include "sciml/autodiff.hpp"
#include "sciml/tensor.hpp"

namespace sciml {

enum class OutputFn { None, Softmax };

/// Layer widths H_0..H_{L+1}, activation for all computing layers except the
/// last, optional output function, optional skip connections on the hidden
/// layers (which then must share one width).
struct MlpConfig {
    std::vector<std::size_t> widths;
    Activation activation = Activation::Tanh;
    double leaky_alpha = 0.01;
    OutputFn output_fn = OutputFn::None;
    bool residual = false;

    std::size_t depth() const { return widths.size() - 1; }  // computing layers L+1

    void validate() const {
        if (widths.size() < 2) throw std::invalid_argument("MlpConfig needs at least two widths");
        for (std::size_t w : widths)
            if (w == 0) throw std::invalid_argument("MlpConfig widths must be positive");
        if (residual) {
            for (std::size_t l = 2; l + 1 < widths.size(); ++l)
                if (widths[l] != widths[1])
                    throw DimensionError("residual MLP requires equal hidden widths");
        }
    }
};

/// Per-layer weight matrices W^(l) (stored out x in, i.e. H_l x H_{l-1})
/// and bias vectors b^(l).
struct MlpParams {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    std::size_t layer_count() const { return weights.size(); }

    std::size_t count() const {
        std::size_t n = 0;
        for (const Tensor& w : weights) n += w.size();
        for (const Tensor& b : biases) n += b.size();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(count());
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.insert(out.end(), weights[l].raw().begin(), weights[l].raw().end());
            out.insert(out.end(), biases[l].raw().begin(), biases[l].raw().end());
        }
        return out;
    }

    void unflatten(const std::vector<double>& flat) {
        std::size_t pos = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            std::copy_n(flat.begin() + pos, weights[l].size(), weights[l].raw().begin());
            pos += weights[l].size();
            std::copy_n(flat.begin() + pos, biases[l].size(), biases[l].raw().begin());
            pos += biases[l].size();
        }
        if (pos != flat.size()) throw DimensionError("flat parameter vector length mismatch");
    }
};

inline std::size_t param_count(const MlpConfig& cfg) {
    cfg.validate();
    std::size_t n = 0;
    for (std::size_t l = 1; l < cfg.widths.size(); ++l)
        n += (cfg.widths[l - 1] + 1) * cfg.widths[l];
    return n;
}

/// Weights uniform on +-sqrt(6/(fan_in+fan_out)) (times `scale`), biases zero.
inline MlpParams init_params(const MlpConfig& cfg, Rng& rng, double scale = 1.0) {
    cfg.validate();
    MlpParams p;
    for (std::size_t l = 1; l < cfg.widths.size(); ++l) {
        const std::size_t in = cfg.widths[l - 1], out = cfg.widths[l];
        const double bound = scale * std::sqrt(6.0 / static_cast<double>(in + out));
        Tensor w({out, in});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Tensor({out}));
    }
    return p;
}

inline Tensor activation_apply(Activation kind, const Tensor& xi, double alpha = 0.01) {
    return ewise([&](double v) { return act_eval(kind, alpha, 0, v); }, xi);
}

inline Tensor activation_deriv(Activation kind, const Tensor& xi, double alpha = 0.01) {
    return ewise([&](double v) { return act_eval(kind, alpha, 1, v); }, xi);
}

/// Numerically stable softmax (max subtraction).
inline Tensor softmax(const Tensor& xi) {
    double m = xi[0];
    for (std::size_t i = 1; i < xi.size(); ++i) m = std::max(m, xi[i]);
    Tensor out = ewise([m](double v) { return std::exp(v - m); }, xi);
    const double s = sum(out);
    return scale(out, 1.0 / s);
}

namespace detail {

inline Tensor affine_batch(const Tensor& w, const Tensor& x, const Tensor& b) {
    Tensor xi = matmul(w, x);
    for (std::size_t i = 0; i < xi.rows(); ++i)
        for (std::size_t j = 0; j < xi.cols(); ++j) xi(i, j) += b[i];
    return xi;
}

}  // namespace detail

/// Forward pass on a batch stored column-wise (H_0 x B). Hidden states are
/// returned when `states` is non-null (x^(0)..x^(L+1), pre-output-fn last).
inline Tensor mlp_forward_batch(const MlpConfig& cfg, const MlpParams& params, const Tensor& x,
                                std::vector<Tensor>* states = nullptr) {
    cfg.validate();
    x.require_rank(2);
    if (x.rows() != cfg.widths.front())
        throw DimensionError("input width " + std::to_string(x.rows()) + " does not match H0=" +
                             std::to_string(cfg.widths.front()));
    const std::size_t layers = cfg.depth();
    Tensor h = x;
    if (states) states->push_back(h);
    for (std::size_t l = 1; l <= layers; ++l) {
        Tensor xi = detail::affine_batch(params.weights[l - 1], h, params.biases[l - 1]);
        if (l <= layers - 1) {
            Tensor a = activation_apply(cfg.activation, xi, cfg.leaky_alpha);
            if (cfg.residual && l >= 2) a = add(a, h);
            h = std::move(a);
        } else {
            h = std::move(xi);  // output layer: affine only
        }
        if (states) states->push_back(h);
    }
    if (cfg.output_fn == OutputFn::Softmax) {
        Tensor out = h;
        for (std::size_t j = 0; j < out.cols(); ++j) {
            Tensor col({out.rows()});
            for (std::size_t i = 0; i < out.rows(); ++i) col[i] = out(i, j);
            Tensor sm = softmax(col);
            for (std::size_t i = 0; i < out.rows(); ++i) out(i, j) = sm[i];
        }
        h = std::move(out);
    }
    return h;
}

/// Forward pass for a single rank-1 input.
inline Tensor mlp_forward(const MlpConfig& cfg, const MlpParams& params, const Tensor& x) {
    x.require_rank(1);
    Tensor col = x.reshape({x.size(), 1});
    Tensor out = mlp_forward_batch(cfg, params, col);
    return out.reshape({out.size()});
}

/// ResNet forward: plain affine+activation on layer 1, skip connections on
/// layers 2..L, plain affine output layer.
inline Tensor resnet_forward(const MlpConfig& cfg, const MlpParams& params, const Tensor& x,
                             std::vector<Tensor>* states = nullptr) {
    if (!cfg.residual) throw std::invalid_argument("resnet_forward requires cfg.residual");
    if (states) {
        std::vector<Tensor> tmp;
        Tensor col = x.reshape({x.size(), 1});
        Tensor out = mlp_forward_batch(cfg, params, col, &tmp);
        for (Tensor& s : tmp) states->push_back(s.reshape({s.size()}));
        return out.reshape({out.size()});
    }
    return mlp_forward(cfg, params, x);
}

enum class LossKind { Mse, Mae, CrossEntropy };

inline LossKind loss_from_name(const std::string& s) {
    if (s == "mse") return LossKind::Mse;
    if (s == "mae") return LossKind::Mae;
    if (s == "cross_entropy") return LossKind::CrossEntropy;
    throw std::invalid_argument("unknown loss: " + s);
}

/// Batch-averaged loss over column-wise predictions/targets.
/// Cross-entropy requires one-hot targets and probability-vector predictions;
/// probabilities are clamped at 1e-12 before the log.
inline double loss(LossKind kind, const Tensor& predictions, const Tensor& targets) {
    if (!predictions.same_shape(targets))
        throw DimensionError("loss shape mismatch: " + shape_to_string(predictions.shape()) +
                             " vs " + shape_to_string(targets.shape()));
    predictions.require_rank(2);
    const std::size_t d = predictions.rows(), n = predictions.cols();
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (kind == LossKind::Mse || kind == LossKind::Mae) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double e = targets(i, j) - predictions(i, j);
                s += e * e;
            }
            acc += (kind == LossKind::Mse) ? s : std::sqrt(s);
        } else {
            double psum = 0.0;
            for (std::size_t i = 0; i < d; ++i) psum += predictions(i, j);
            if (std::abs(psum - 1.0) > 1e-6)
                throw std::invalid_argument("cross_entropy: predictions are not a probability "
                                            "vector (sum = " + std::to_string(psum) + ")");
            for (std::size_t i = 0; i < d; ++i) {
                const double y = targets(i, j);
                if (y != 0.0 && y != 1.0)
                    throw std::invalid_argument("cross_entropy: targets must be one-hot");
                if (y == 1.0) acc -= std::log(std::max(predictions(i, j), 1e-12));
            }
        }
    }
    return acc / static_cast<double>(n);
}

enum class RegKind { L1, L2 };

/// alpha * ||theta||_1 or alpha * ||theta||_2 over all weights and biases.
inline double reg_penalty(RegKind kind, const MlpParams& params, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("regularization weight must be non-negative");
    double acc = 0.0;
    auto fold = [&](const Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i)
            acc += (kind == RegKind::L1) ? std::abs(t[i]) : t[i] * t[i];
    };
    for (const Tensor& w : params.weights) fold(w);
    for (const Tensor& b : params.biases) fold(b);
    return alpha * (kind == RegKind::L1 ? acc : std::sqrt(acc));
}

// ---------------------------------------------------------------------------
// Tape recording
// ---------------------------------------------------------------------------

/// Node ids of the parameters of one MLP on a tape.
struct MlpNodes {
    std::vector<NodeId> weights;
    std::vector<NodeId> biases;
};

inline MlpNodes make_param_nodes(Tape& tape, const MlpParams& params) {
    MlpNodes n;
    for (const Tensor& w : params.weights) n.weights.push_back(tape.input(w));
    for (const Tensor& b : params.biases)
        n.biases.push_back(tape.input(b.reshape({b.size(), 1})));
    return n;
}

/// Reads gradients for every parameter node into one flat vector laid out
/// like MlpParams::flatten().
inline std::vector<double> collect_param_grads(const GradMap& grads, const MlpNodes& nodes,
                                               const Tape& tape) {
    std::vector<double> out;
    for (std::size_t l = 0; l < nodes.weights.size(); ++l) {
        for (NodeId id : {nodes.weights[l], nodes.biases[l]}) {
            if (grads.has(id)) {
                const Tensor& g = grads.at(id);
                out.insert(out.end(), g.raw().begin(), g.raw().end());
            } else {
                out.insert(out.end(), tape.value(id).size(), 0.0);
            }
        }
    }
    return out;
}

/// Per-layer node ids recorded during a forward pass.
struct MlpTrace {
    NodeId out;                 // network output (post output_fn)
    std::vector<NodeId> xi;     // pre-activation per computing layer
    std::vector<NodeId> x;      // post-activation state per computing layer
};

inline NodeId record_softmax(Tape& tape, NodeId z) {
    double m = tape.value(z)[0];
    for (std::size_t i = 1; i < tape.value(z).size(); ++i)
        m = std::max(m, tape.value(z)[i]);
    NodeId e = tape.exp(tape.add_k(z, -m));
    NodeId inv = tape.pow(tape.sum(e), -1.0);
    return tape.scale_by(e, inv);
}

/// Records the layer recursion on a tape for a column-batch input node.
inline MlpTrace record_mlp(Tape& tape, const MlpConfig& cfg, const MlpNodes& nodes, NodeId x) {
    cfg.validate();
    const std::size_t layers = cfg.depth();
    MlpTrace trace;
    NodeId h = x;
    for (std::size_t l = 1; l <= layers; ++l) {
        NodeId xi = tape.add_col(tape.matmul(nodes.weights[l - 1], h), nodes.biases[l - 1]);
        trace.xi.push_back(xi);
        if (l <= layers - 1) {
            NodeId a = tape.act(cfg.activation, xi, cfg.leaky_alpha);
            if (cfg.residual && l >= 2) a = tape.add(a, h);
            h = a;
        } else {
            h = xi;
        }
        trace.x.push_back(h);
    }
    if (cfg.output_fn == OutputFn::Softmax) h = record_softmax(tape, h);
    trace.out = h;
    return trace;
}

// ---------------------------------------------------------------------------
// Vanishing-gradient diagnostic
// ---------------------------------------------------------------------------

/// Largest singular value by power iteration on W^T W.
inline double largest_singular_value(const Tensor& w, double tol = 1e-8, int max_iter = 500) {
    w.require_rank(2);
    Tensor v({w.cols()});
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + 1e-3 * static_cast<double>(i);
    double nv = norm2(v);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] /= nv;
    const Tensor wt = transpose(w);
    double tau = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Tensor wv = matmul(w, v.reshape({v.size(), 1}));
        const double next = norm2(wv);
        Tensor u = matmul(wt, wv);
        const double nu = norm2(u);
        if (nu == 0.0) return 0.0;
        v = scale(u, 1.0 / nu).reshape({w.cols()});
        if (std::abs(next - tau) <= tol * std::max(1.0, next)) return next;
        tau = next;
    }
    return tau;
}

struct VanishingGradientReport {
    std::vector<double> xi_grad_norm;   // |dPi/dxi^(l)|, l = 1..L+1
    std::vector<double> x_grad_norm;    // |dPi/dx^(l)|,  l = 1..L+1
    std::vector<double> tau;            // largest singular value of W^(l)
    std::vector<double> bound_factor;   // prod_{m=l+1}^{L+1} tau(W^(m))
};

/// Records Pi = ||y - F(x)||^2 for one sample and reports per-layer adjoint
/// norms together with the singular-value product bound.
inline VanishingGradientReport vanishing_gradient_report(const MlpConfig& cfg,
                                                         const MlpParams& params, const Tensor& x,
                                                         const Tensor& y) {
    Tape tape;
    MlpNodes nodes = make_param_nodes(tape, params);
    NodeId xin = tape.input(x.reshape({x.size(), 1}));
    MlpTrace trace = record_mlp(tape, cfg, nodes, xin);
    NodeId err = tape.sub(tape.constant(y.reshape({y.size(), 1})), trace.out);
    NodeId pi = tape.sum(tape.square(err));
    tape.set_tip(pi);

    GradMap grads = backward(tape, Tensor::from({1, 1}, {1.0}));
    VanishingGradientReport report;
    for (NodeId id : trace.xi)
        report.xi_grad_norm.push_back(grads.has(id) ? norm2(grads.at(id)) : 0.0);
    for (NodeId id : trace.x)
        report.x_grad_norm.push_back(grads.has(id) ? norm2(grads.at(id)) : 0.0);
    for (const Tensor& w : params.weights) report.tau.push_back(largest_singular_value(w));
    // bound_factor[l-1] = prod_{m=l+1}^{L+1} tau(W^(m)) for computing layer l.
    const std::size_t layers = params.weights.size();
    report.bound_factor.assign(layers, 1.0);
    for (std::size_t l = layers - 1; l-- > 0;)
        report.bound_factor[l] = report.bound_factor[l + 1] * report.tau[l + 1];
    return report;
}

}  // namespace sciml
