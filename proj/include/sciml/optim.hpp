#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sciml/dense.hpp"
#include "sciml/nn.hpp"
#include "sciml/tensor.hpp"

namespace sciml {

enum class OptimKind { Gd, Momentum, Adam };
enum class LrSchedule { Constant, InverseSqrt };

inline OptimKind optim_from_name(const std::string& s) {
    if (s == "gd") return OptimKind::Gd;
    if (s == "momentum") return OptimKind::Momentum;
    if (s == "adam") return OptimKind::Adam;
    throw std::invalid_argument("unknown optimizer: " + s);
}

/// First/second-moment accumulators start at zero; the step counter k
/// increments by exactly one per update. The inverse-sqrt schedule uses
/// eta_k = eta / sqrt(k+1) so the first step (k = 0) is defined.
/// Adam follows the update block without bias correction by default; the
/// correction is available behind a flag.
struct Optimizer {
    OptimKind kind = OptimKind::Gd;
    double lr = 1e-3;
    LrSchedule schedule = LrSchedule::Constant;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool bias_correction = false;

    long k = 0;
    std::vector<double> g;   // first moment
    std::vector<double> G;   // second moment

    double eta_k() const {
        return schedule == LrSchedule::Constant ? lr
                                                : lr / std::sqrt(static_cast<double>(k) + 1.0);
    }

    void step(std::vector<double>& theta, const std::vector<double>& grad) {
        if (theta.size() != grad.size())
            throw DimensionError("optimizer step: parameter/gradient size mismatch");
        if (g.empty()) g.assign(theta.size(), 0.0);
        if (G.empty()) G.assign(theta.size(), 0.0);
        if (g.size() != theta.size())
            throw DimensionError("optimizer state does not match parameter count");
        const double eta = eta_k();
        switch (kind) {
            case OptimKind::Gd:
                for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= eta * grad[i];
                break;
            case OptimKind::Momentum:
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    g[i] = beta1 * g[i] + (1.0 - beta1) * grad[i];
                    theta[i] -= eta * g[i];
                }
                break;
            case OptimKind::Adam:
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    g[i] = beta1 * g[i] + (1.0 - beta1) * grad[i];
                    G[i] = beta2 * G[i] + (1.0 - beta2) * grad[i] * grad[i];
                    double gh = g[i], Gh = G[i];
                    if (bias_correction) {
                        gh /= 1.0 - std::pow(beta1, static_cast<double>(k) + 1.0);
                        Gh /= 1.0 - std::pow(beta2, static_cast<double>(k) + 1.0);
                    }
                    theta[i] -= eta / (std::sqrt(Gh) + eps) * gh;
                }
                break;
        }
        ++k;
    }
};

inline double gd_step(Optimizer& state, double theta, double grad) {
    std::vector<double> t{theta}, g{grad};
    state.step(t, g);
    return t[0];
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

/// Column-wise paired samples: X is d x N, Y is D x N.
struct Dataset {
    Tensor X;
    Tensor Y;

    std::size_t count() const { return X.cols(); }

    Dataset select(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.X = Tensor({X.rows(), idx.size()});
        out.Y = Tensor({Y.rows(), idx.size()});
        for (std::size_t j = 0; j < idx.size(); ++j) {
            for (std::size_t i = 0; i < X.rows(); ++i) out.X(i, j) = X(i, idx[j]);
            for (std::size_t i = 0; i < Y.rows(); ++i) out.Y(i, j) = Y(i, idx[j]);
        }
        return out;
    }
};

struct DataSplit {
    std::vector<std::size_t> train, val, test;
};

/// Disjoint shuffled index sets; sizes are floored and the remainder goes to
/// the training set.
inline DataSplit split_dataset(std::size_t n, double p_train, double p_val, double p_test,
                               std::uint64_t seed) {
    if (std::abs(p_train + p_val + p_test - 1.0) > 1e-9)
        throw std::invalid_argument("split proportions must sum to 1");
    std::size_t parts = 0;
    for (double p : {p_train, p_val, p_test})
        if (p > 0.0) ++parts;
    if (n < parts) throw std::invalid_argument("dataset smaller than the number of split parts");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);

    const std::size_t n_val = static_cast<std::size_t>(std::floor(p_val * n));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(p_test * n));
    const std::size_t n_train = n - n_val - n_test;

    DataSplit s;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    s.test.assign(idx.begin() + n_train + n_val, idx.end());
    return s;
}

// ---------------------------------------------------------------------------
// Tape losses and the mini-batch loop
// ---------------------------------------------------------------------------

/// Records the batch-averaged loss for column-wise predictions vs targets.
inline NodeId record_loss(Tape& tape, LossKind kind, NodeId pred, const Tensor& targets) {
    const std::size_t b = targets.cols();
    NodeId tgt = tape.constant(targets);
    switch (kind) {
        case LossKind::Mse: {
            NodeId err = tape.sub(tgt, pred);
            return tape.scale(tape.sum(tape.square(err)), 1.0 / static_cast<double>(b));
        }
        case LossKind::Mae: {
            NodeId err = tape.sub(tgt, pred);
            NodeId ones = tape.constant(Tensor({1, targets.rows()}, 1.0));
            NodeId colnorm = tape.pow(tape.matmul(ones, tape.square(err)), 0.5);
            return tape.scale(tape.sum(colnorm), 1.0 / static_cast<double>(b));
        }
        case LossKind::CrossEntropy: {
            NodeId ce = tape.sum(tape.mul(tgt, tape.log(pred)));
            return tape.scale(ce, -1.0 / static_cast<double>(b));
        }
    }
    throw std::logic_error("unhandled loss kind");
}

/// Column-wise softmax on a tape (max subtraction folded into constants).
inline NodeId record_softmax_cols(Tape& tape, NodeId z) {
    const Tensor& zv = tape.value(z);
    Tensor mx({zv.rows(), zv.cols()});
    for (std::size_t j = 0; j < zv.cols(); ++j) {
        double m = zv(0, j);
        for (std::size_t i = 1; i < zv.rows(); ++i) m = std::max(m, zv(i, j));
        for (std::size_t i = 0; i < zv.rows(); ++i) mx(i, j) = m;
    }
    NodeId e = tape.exp(tape.sub(z, tape.constant(mx)));
    NodeId ones_row = tape.constant(Tensor({1, zv.rows()}, 1.0));
    NodeId colsum = tape.matmul(ones_row, e);                      // 1 x B
    NodeId inv = tape.pow(colsum, -1.0);                           // 1 x B
    NodeId ones_col = tape.constant(Tensor({zv.rows(), 1}, 1.0));  // C x 1
    return tape.mul(e, tape.matmul(ones_col, inv));
}

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;  // empty when no validation set was given
    bool diverged = false;
};

/// Batch-averaged loss and its gradient for an MLP on a column batch.
inline double mlp_batch_loss_grad(const MlpConfig& cfg, const MlpParams& params,
                                  const Tensor& X, const Tensor& Y, LossKind kind,
                                  std::vector<double>* grad_out) {
    Tape tape;
    MlpNodes nodes = make_param_nodes(tape, params);
    NodeId x = tape.input(X);
    MlpTrace trace = record_mlp(tape, cfg, nodes, x);
    NodeId pred = trace.out;
    if (kind == LossKind::CrossEntropy && cfg.output_fn != OutputFn::Softmax)
        throw std::invalid_argument("cross_entropy training expects a softmax output function");
    NodeId lossid = record_loss(tape, kind, pred, Y);
    tape.set_tip(lossid);
    if (grad_out) {
        GradMap grads = backward(tape, Tensor::from({1, 1}, {1.0}));
        *grad_out = collect_param_grads(grads, nodes, tape);
    }
    return tape.value(lossid)[0];
}

/// Records softmax inside record_mlp when cfg.output_fn is Softmax and the
/// batch has several columns.
inline MlpTrace record_mlp_batch(Tape& tape, const MlpConfig& cfg, const MlpNodes& nodes,
                                 NodeId x) {
    MlpConfig plain = cfg;
    plain.output_fn = OutputFn::None;
    MlpTrace trace = record_mlp(tape, plain, nodes, x);
    if (cfg.output_fn == OutputFn::Softmax) trace.out = record_softmax_cols(tape, trace.out);
    return trace;
}

/// Epoch/shuffle/batch loop: per epoch the training set is reshuffled
/// (Fisher-Yates on the module Rng), cut into n_batches nearly equal batches
/// (the trailing ones may be one sample short), and the optimizer consumes
/// the batch-mean gradient. Deterministic for a fixed seed.
inline TrainHistory minibatch_train(const MlpConfig& cfg, MlpParams& params,
                                    const Dataset& train, LossKind kind, Optimizer& opt,
                                    std::size_t epochs, std::size_t n_batches,
                                    std::uint64_t seed, const Dataset* val = nullptr) {
    if (train.count() == 0) throw std::invalid_argument("minibatch_train: empty dataset");
    if (n_batches == 0 || n_batches > train.count())
        throw std::invalid_argument("minibatch_train: invalid batch count");
    Rng rng(seed);
    TrainHistory hist;
    std::vector<double> theta = params.flatten();
    std::vector<std::size_t> idx(train.count());
    std::iota(idx.begin(), idx.end(), 0);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(idx);
        const std::size_t q = idx.size() / n_batches, r = idx.size() % n_batches;
        std::size_t pos = 0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t len = q + (b < r ? 1 : 0);
            std::vector<std::size_t> batch(idx.begin() + pos, idx.begin() + pos + len);
            pos += len;
            if (batch.empty()) continue;
            // Reduce each batch in fixed index order so results do not depend
            // on the shuffle's within-batch ordering.
            std::sort(batch.begin(), batch.end());
            Dataset sub = train.select(batch);
            params.unflatten(theta);
            std::vector<double> grad;
            MlpConfig bc = cfg;
            {
                Tape tape;
                MlpNodes nodes = make_param_nodes(tape, params);
                NodeId x = tape.input(sub.X);
                MlpTrace trace = record_mlp_batch(tape, bc, nodes, x);
                NodeId lossid = record_loss(tape, kind, trace.out, sub.Y);
                tape.set_tip(lossid);
                GradMap grads = backward(tape, Tensor::from({1, 1}, {1.0}));
                grad = collect_param_grads(grads, nodes, tape);
            }
            opt.step(theta, grad);
        }
        params.unflatten(theta);
        const double tl = loss(kind, mlp_forward_batch(cfg, params, train.X), train.Y);
        hist.train_loss.push_back(tl);
        if (val) {
            hist.val_loss.push_back(loss(kind, mlp_forward_batch(cfg, params, val->X), val->Y));
        }
        if (!std::isfinite(tl)) {
            hist.diverged = true;
            break;
        }
    }
    params.unflatten(theta);
    return hist;
}

// ---------------------------------------------------------------------------
// The four-quadratic SGD toy
// ---------------------------------------------------------------------------

/// Pi_i(theta) = a1 (t1 - c1)^2 + a2 (t2 - c2)^2
struct QuadraticTerm {
    double a1, c1, a2, c2;
};

inline std::vector<QuadraticTerm> sgd_toy_terms() {
    return {{1.0, 1.0, 1.0, 1.0},
            {1.0, -1.0, 0.5, 1.0},
            {0.7, -1.0, 0.5, -1.0},
            {0.7, 1.0, 0.5, -1.0}};
}

/// Minimizer of the summed quadratic via its normal equations.
inline std::pair<double, double> sgd_toy_minimizer() {
    const auto terms = sgd_toy_terms();
    Tensor a({2, 2});
    Tensor b({2});
    for (const auto& t : terms) {
        a(0, 0) += 2.0 * t.a1;
        a(1, 1) += 2.0 * t.a2;
        b[0] += 2.0 * t.a1 * t.c1;
        b[1] += 2.0 * t.a2 * t.c2;
    }
    Tensor x = solve_dense(a, b);
    return {x[0], x[1]};
}

struct SgdToyResult {
    double theta1, theta2;
    double final_distance;            // to the normal-equation minimizer
    double min_distance_last_1000;
    std::vector<double> distance_history;
};

/// Runs theta_{k+1} = theta_k - eta_k grad Pi_i(theta_k) with i drawn
/// uniformly from the four terms each step.
inline SgdToyResult sgd_toy(LrSchedule schedule, double eta0, std::size_t steps,
                            std::uint64_t seed, double t1 = -1.0, double t2 = 2.0) {
    const auto terms = sgd_toy_terms();
    const auto [m1, m2] = sgd_toy_minimizer();
    Rng rng(seed);
    SgdToyResult res;
    res.min_distance_last_1000 = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < steps; ++k) {
        const double eta = schedule == LrSchedule::Constant
                               ? eta0
                               : eta0 / std::sqrt(static_cast<double>(k) + 1.0);
        const QuadraticTerm& t = terms[rng.below(terms.size())];
        const double g1 = 2.0 * t.a1 * (t1 - t.c1);
        const double g2 = 2.0 * t.a2 * (t2 - t.c2);
        t1 -= eta * g1;
        t2 -= eta * g2;
        const double dist = std::hypot(t1 - m1, t2 - m2);
        res.distance_history.push_back(dist);
        if (k + 1000 >= steps) res.min_distance_last_1000 = std::min(res.min_distance_last_1000, dist);
    }
    res.theta1 = t1;
    res.theta2 = t2;
    res.final_distance = res.distance_history.empty() ? 0.0 : res.distance_history.back();
    return res;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

template <typename Point>
struct GridSearchResult {
    std::size_t best_index = 0;
    Point best;
    std::vector<double> val_losses;
    double test_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Trains/validates every grid point, picks the argmin of the validation
/// metric (first-seen wins on ties) and evaluates the test metric for the
/// winner only.
template <typename Point, typename TrainValFn, typename TestFn>
GridSearchResult<Point> grid_search(const std::vector<Point>& grid, TrainValFn&& train_val,
                                    TestFn&& test_fn) {
    if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
    GridSearchResult<Point> result;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = train_val(grid[i]);
        result.val_losses.push_back(v);
        if (v < result.val_losses[result.best_index]) result.best_index = i;
    }
    result.best = grid[result.best_index];
    result.test_loss = test_fn(grid[result.best_index]);
    return result;
}

}  // namespace sciml
