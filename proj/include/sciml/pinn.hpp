#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sciml/autodiff.hpp"
#include "sciml/nn.hpp"
#include "sciml/optim.hpp"
#include "sciml/pdesolve.hpp"

namespace sciml {

/// Collocation setup for the 1D advection-diffusion model problem. Interior
/// points default to uniform midpoints (i+1/2) ell / N_v, whose quadrature
/// order is known for the error-bound diagnostic.
struct PinnProblem {
    AdvDiffProblem pde;
    std::size_t n_interior = 64;
    double lambda_b = 10.0;

    std::vector<double> interior_points() const {
        std::vector<double> pts(n_interior);
        for (std::size_t i = 0; i < n_interior; ++i)
            pts[i] = (static_cast<double>(i) + 0.5) * pde.ell / static_cast<double>(n_interior);
        return pts;
    }

    void validate() const {
        pde.validate();
        if (n_interior < 1) throw std::invalid_argument("need at least one collocation point");
        if (lambda_b < 0.0) throw std::invalid_argument("lambda_b must be non-negative");
    }
};

struct PinnLossParts {
    double total = 0.0, interior = 0.0, boundary = 0.0;
};

namespace detail {

struct PinnTape {
    Tape tape;
    MlpNodes nodes;
    NodeId total, interior, boundary;
    NodeId u_interior, du, ddu;  // values at the collocation points
};

inline PinnTape record_pinn_loss(const PinnProblem& problem, const MlpConfig& cfg,
                                 const MlpParams& params) {
    problem.validate();
    if (cfg.widths.front() != 1 || cfg.widths.back() != 1)
        throw DimensionError("1D PINN network must map R -> R");
    PinnTape r;
    r.nodes = make_param_nodes(r.tape, params);

    const std::vector<double> pts = problem.interior_points();
    const std::size_t nv = pts.size();
    Tensor xrow({1, nv});
    Tensor frow({1, nv});
    for (std::size_t i = 0; i < nv; ++i) {
        xrow(0, i) = pts[i];
        frow(0, i) = problem.pde.source(pts[i]);
    }
    NodeId x = r.tape.input(xrow);
    MlpTrace trace = record_mlp(r.tape, cfg, r.nodes, x);
    r.u_interior = trace.out;

    // u' and u'' as recorded expressions via two graph extensions.
    r.du = r.tape.adjoint_expression(r.tape.sum(trace.out), x);
    r.ddu = r.tape.adjoint_expression(r.tape.sum(r.du), x);

    NodeId residual = r.tape.sub(
        r.tape.sub(r.tape.scale(r.du, problem.pde.a), r.tape.scale(r.ddu, problem.pde.kappa)),
        r.tape.constant(frow));
    r.interior =
        r.tape.scale(r.tape.sum(r.tape.square(residual)), 1.0 / static_cast<double>(nv));

    // Boundary: sum of the two endpoint mismatches.
    NodeId xb = r.tape.constant(Tensor::from({1, 2}, {0.0, problem.pde.ell}));
    MlpTrace btrace = record_mlp(r.tape, cfg, r.nodes, xb);
    NodeId btarget = r.tape.constant(Tensor::from({1, 2}, {problem.pde.g0, problem.pde.g1}));
    r.boundary = r.tape.sum(r.tape.square(r.tape.sub(btrace.out, btarget)));

    r.total = r.tape.add(r.interior, r.tape.scale(r.boundary, problem.lambda_b));
    r.tape.set_tip(r.total);
    return r;
}

}  // namespace detail

/// Pi = Pi_int + lambda_b Pi_b and its two components.
inline PinnLossParts pinn_loss(const PinnProblem& problem, const MlpConfig& cfg,
                               const MlpParams& params) {
    detail::PinnTape t = detail::record_pinn_loss(problem, cfg, params);
    return {t.tape.value(t.total)[0], t.tape.value(t.interior)[0], t.tape.value(t.boundary)[0]};
}

struct PinnRunReport {
    MlpParams params;
    std::vector<double> loss_history;
    double final_loss = 0.0;
    double relative_l2_error = -1.0;  // vs exact solution; -1 when no exact form applies
    bool diverged = false;
};

inline double pinn_relative_l2_error(const PinnProblem& problem, const MlpConfig& cfg,
                                     const MlpParams& params, std::size_t n_check = 1001) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n_check; ++i) {
        const double x = problem.pde.ell * static_cast<double>(i) / (n_check - 1);
        const double ue = exact_adv_diff(problem.pde, x);
        const double up = mlp_forward(cfg, params, Tensor::vec({x}))[0];
        num += (up - ue) * (up - ue);
        den += ue * ue;
    }
    return std::sqrt(num / den);
}

/// Adam/GD training of the residual loss; deterministic for a fixed seed.
/// A non-finite loss ends the run with diverged = true instead of throwing.
inline PinnRunReport train_pinn(const PinnProblem& problem, const MlpConfig& cfg, Optimizer opt,
                                std::size_t iterations, std::uint64_t seed) {
    problem.validate();
    Rng rng(seed);
    PinnRunReport report;
    report.params = init_params(cfg, rng);
    std::vector<double> theta = report.params.flatten();

    for (std::size_t it = 0; it < iterations; ++it) {
        report.params.unflatten(theta);
        detail::PinnTape t = detail::record_pinn_loss(problem, cfg, report.params);
        const double pi = t.tape.value(t.total)[0];
        report.loss_history.push_back(pi);
        if (!std::isfinite(pi)) {
            report.diverged = true;
            break;
        }
        GradMap grads = backward(t.tape, Tensor::from({1, 1}, {1.0}));
        std::vector<double> grad = collect_param_grads(grads, t.nodes, t.tape);
        opt.step(theta, grad);
    }
    report.params.unflatten(theta);
    report.final_loss = report.loss_history.empty() ? 0.0 : report.loss_history.back();
    if (!problem.pde.f && !report.diverged)
        report.relative_l2_error = pinn_relative_l2_error(problem, cfg, report.params);
    return report;
}

// ---------------------------------------------------------------------------
// Parameterized 2D Poisson family
// ---------------------------------------------------------------------------

/// f(x1, x2; alpha) = 4 alpha x1 (1-x1) x2 (1-x2) on the unit square.
inline double poisson_source(double x1, double x2, double alpha) {
    return 4.0 * alpha * x1 * (1.0 - x1) * x2 * (1.0 - x2);
}

/// kappa Laplacian(u) = f(x; alpha), u = 0 on the boundary; the network takes
/// (x1, x2, alpha) as input.
struct ParamPoissonProblem {
    double kappa = 1.0;
    std::vector<std::pair<double, double>> interior;  // N_v points in the open square
    std::vector<std::pair<double, double>> boundary;  // N_b points on the edge
    std::vector<double> alphas;                       // alpha collocation set
    double lambda_b = 10.0;

    void validate() const {
        if (alphas.empty()) throw std::invalid_argument("alpha collocation set is empty");
        if (interior.empty() || boundary.empty())
            throw std::invalid_argument("need interior and boundary points");
    }

    static ParamPoissonProblem uniform(std::size_t per_side, std::size_t per_edge,
                                       std::vector<double> alphas) {
        ParamPoissonProblem p;
        p.alphas = std::move(alphas);
        for (std::size_t i = 0; i < per_side; ++i)
            for (std::size_t j = 0; j < per_side; ++j)
                p.interior.emplace_back((i + 0.5) / per_side, (j + 0.5) / per_side);
        for (std::size_t i = 0; i < per_edge; ++i) {
            const double t = static_cast<double>(i) / (per_edge - 1);
            p.boundary.emplace_back(t, 0.0);
            p.boundary.emplace_back(t, 1.0);
            p.boundary.emplace_back(0.0, t);
            p.boundary.emplace_back(1.0, t);
        }
        return p;
    }
};

namespace detail {

struct ParamPinnTape {
    Tape tape;
    MlpNodes nodes;
    NodeId total;
};

inline ParamPinnTape record_param_poisson_loss(const ParamPoissonProblem& problem,
                                               const MlpConfig& cfg, const MlpParams& params) {
    problem.validate();
    if (cfg.widths.front() != 3 || cfg.widths.back() != 1)
        throw DimensionError("parameterized 2D PINN network must map R^3 -> R");
    ParamPinnTape r;
    r.nodes = make_param_nodes(r.tape, params);

    NodeId per_alpha_sum = 0;
    bool first = true;
    for (double alpha : problem.alphas) {
        const std::size_t nv = problem.interior.size();
        Tensor xin({3, nv});
        Tensor frow({1, nv});
        for (std::size_t i = 0; i < nv; ++i) {
            xin(0, i) = problem.interior[i].first;
            xin(1, i) = problem.interior[i].second;
            xin(2, i) = alpha;
            frow(0, i) = poisson_source(problem.interior[i].first, problem.interior[i].second,
                                        alpha);
        }
        NodeId x = r.tape.input(xin);
        MlpTrace trace = record_mlp(r.tape, cfg, r.nodes, x);
        NodeId grad1 = r.tape.adjoint_expression(r.tape.sum(trace.out), x);  // 3 x nv
        NodeId du1 = r.tape.slice_rows(grad1, 0, 1);
        NodeId du2 = r.tape.slice_rows(grad1, 1, 2);
        NodeId hess1 = r.tape.adjoint_expression(r.tape.sum(du1), x);
        NodeId hess2 = r.tape.adjoint_expression(r.tape.sum(du2), x);
        NodeId lap = r.tape.add(r.tape.slice_rows(hess1, 0, 1), r.tape.slice_rows(hess2, 1, 2));
        NodeId residual =
            r.tape.sub(r.tape.scale(lap, problem.kappa), r.tape.constant(frow));
        NodeId pi_int =
            r.tape.scale(r.tape.sum(r.tape.square(residual)), 1.0 / static_cast<double>(nv));

        const std::size_t nb = problem.boundary.size();
        Tensor xb({3, nb});
        for (std::size_t i = 0; i < nb; ++i) {
            xb(0, i) = problem.boundary[i].first;
            xb(1, i) = problem.boundary[i].second;
            xb(2, i) = alpha;
        }
        NodeId b = r.tape.constant(xb);
        MlpTrace btrace = record_mlp(r.tape, cfg, r.nodes, b);
        // g == 0 on the boundary; mean over the sampled boundary points.
        NodeId pi_b = r.tape.scale(r.tape.sum(r.tape.square(btrace.out)),
                                   1.0 / static_cast<double>(nb));

        NodeId term = r.tape.add(pi_int, r.tape.scale(pi_b, problem.lambda_b));
        per_alpha_sum = first ? term : r.tape.add(per_alpha_sum, term);
        first = false;
    }
    r.total = r.tape.scale(per_alpha_sum, 1.0 / static_cast<double>(problem.alphas.size()));
    r.tape.set_tip(r.total);
    return r;
}

}  // namespace detail

/// Triple-sum loss over (alpha_j, interior x_i, boundary x_i).
inline double pinn_param_loss(const ParamPoissonProblem& problem, const MlpConfig& cfg,
                              const MlpParams& params) {
    detail::ParamPinnTape t = detail::record_param_poisson_loss(problem, cfg, params);
    return t.tape.value(t.total)[0];
}

// ---------------------------------------------------------------------------
// Error-bound diagnostic
// ---------------------------------------------------------------------------

struct ErrorBoundRow {
    std::size_t n_points;
    double pi_int;               // collocation mean squared residual
    double collocation_estimate; // m_Omega * sqrt(pi_int)
    double fine_l2_residual;     // trapezoid estimate of ||R||_L2
    double quadrature_gap;       // |fine - estimate|
};

struct ErrorBoundReport {
    std::vector<ErrorBoundRow> rows;
    double pi_b = 0.0;
    double boundary_estimate = 0.0;  // sqrt(pi_b): exact in 1D where Pi_b sums both endpoints
};

namespace detail {

/// Interior residual of the network at the given points (values only).
inline std::vector<double> pinn_residual_values(const AdvDiffProblem& pde, const MlpConfig& cfg,
                                                const MlpParams& params,
                                                const std::vector<double>& pts) {
    Tape tape;
    MlpNodes nodes = make_param_nodes(tape, params);
    Tensor xrow({1, pts.size()});
    for (std::size_t i = 0; i < pts.size(); ++i) xrow(0, i) = pts[i];
    NodeId x = tape.input(xrow);
    MlpTrace trace = record_mlp(tape, cfg, nodes, x);
    NodeId du = tape.adjoint_expression(tape.sum(trace.out), x);
    NodeId ddu = tape.adjoint_expression(tape.sum(du), x);
    std::vector<double> r(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
        r[i] = pde.a * tape.value(du)(0, i) - pde.kappa * tape.value(ddu)(0, i) -
               pde.source(pts[i]);
    return r;
}

}  // namespace detail

/// Collocation estimates m_Omega sqrt(Pi_int) next to a fine trapezoid
/// estimate of ||R||_L2; their gap shrinks as the collocation count grows.
inline ErrorBoundReport error_bound_report(const PinnProblem& problem, const MlpConfig& cfg,
                                           const MlpParams& params,
                                           const std::vector<std::size_t>& quad_sizes,
                                           std::size_t fine_n = 4097) {
    ErrorBoundReport report;

    // Fine reference: trapezoid rule for integral of R^2 over (0, ell).
    std::vector<double> xs(fine_n);
    for (std::size_t i = 0; i < fine_n; ++i)
        xs[i] = problem.pde.ell * static_cast<double>(i) / (fine_n - 1);
    std::vector<double> rv = detail::pinn_residual_values(problem.pde, cfg, params, xs);
    const double h = problem.pde.ell / static_cast<double>(fine_n - 1);
    double integral = 0.0;
    for (std::size_t i = 0; i + 1 < fine_n; ++i)
        integral += 0.5 * h * (rv[i] * rv[i] + rv[i + 1] * rv[i + 1]);
    const double fine_norm = std::sqrt(integral);

    for (std::size_t nv : quad_sizes) {
        PinnProblem sub = problem;
        sub.n_interior = nv;
        const std::vector<double> pts = sub.interior_points();
        std::vector<double> r = detail::pinn_residual_values(problem.pde, cfg, params, pts);
        double pi_int = 0.0;
        for (double v : r) pi_int += v * v;
        pi_int /= static_cast<double>(nv);
        ErrorBoundRow row;
        row.n_points = nv;
        row.pi_int = pi_int;
        row.collocation_estimate = problem.pde.ell * std::sqrt(pi_int);
        row.fine_l2_residual = fine_norm;
        row.quadrature_gap = std::abs(fine_norm - row.collocation_estimate);
        report.rows.push_back(row);
    }

    PinnLossParts parts = pinn_loss(problem, cfg, params);
    report.pi_b = parts.boundary;
    report.boundary_estimate = std::sqrt(parts.boundary);
    return report;
}

// ---------------------------------------------------------------------------
// Data assimilation
// ---------------------------------------------------------------------------

struct AssimilationProblem {
    std::vector<std::pair<double, double>> measurements;  // (x_i, u_i)
    PinnProblem constraint;  // residual operator and collocation points
    double lambda_data = 1.0;
    double lambda_reg = 0.0;

    void validate() const {
        if (measurements.empty()) throw std::invalid_argument("need at least one measurement");
        constraint.validate();
    }
};

/// (lambda_I / M) sum (u_i - F(x_i))^2 + (1/N_v) sum |R(F(x_i))|^2
/// + lambda ||theta||^2.
inline double assimilation_loss(const AssimilationProblem& problem, const MlpConfig& cfg,
                                const MlpParams& params) {
    problem.validate();
    double data = 0.0;
    for (const auto& [x, u] : problem.measurements) {
        const double f = mlp_forward(cfg, params, Tensor::vec({x}))[0];
        data += (u - f) * (u - f);
    }
    data *= problem.lambda_data / static_cast<double>(problem.measurements.size());

    const std::vector<double> pts = problem.constraint.interior_points();
    std::vector<double> r =
        detail::pinn_residual_values(problem.constraint.pde, cfg, params, pts);
    double phys = 0.0;
    for (double v : r) phys += v * v;
    phys /= static_cast<double>(pts.size());

    double reg = 0.0;
    for (double v : params.flatten()) reg += v * v;
    return data + phys + problem.lambda_reg * reg;
}

}  // namespace sciml
