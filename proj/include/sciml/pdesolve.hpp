#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sciml/autodiff.hpp"
#include "sciml/dense.hpp"
#include "sciml/optim.hpp"
#include "sciml/tensor.hpp"

namespace sciml {

/// a u' - kappa u'' = f on (0, ell), u(0) = g0, u(ell) = g1.
struct AdvDiffProblem {
    double a = 1.0;
    double kappa = 1.0;
    double ell = 1.0;
    std::function<double(double)> f;  // empty means f == 0
    double g0 = 0.0;
    double g1 = 1.0;

    double peclet() const { return a * ell / kappa; }

    double source(double x) const { return f ? f(x) : 0.0; }

    void validate() const {
        if (kappa <= 0.0) throw std::invalid_argument("diffusion coefficient must be positive");
        if (ell <= 0.0) throw std::invalid_argument("domain length must be positive");
        if (!std::isfinite(peclet())) throw std::invalid_argument("Peclet number must be finite");
    }
};

/// Exact solution for f == 0: u = (1 - exp(a x / kappa)) / (1 - exp(a l / kappa)),
/// evaluated through expm1 (and a shifted form at large Peclet number) so the
/// exponentials never overflow. Boundary values g0/g1 enter by affine rescaling.
inline double exact_adv_diff(const AdvDiffProblem& p, double x) {
    p.validate();
    const double s = p.a / p.kappa;
    double base;  // solution of the canonical 0/1 boundary pair
    if (p.a == 0.0) {
        base = x / p.ell;
    } else if (std::abs(s * p.ell) < 500.0) {
        base = std::expm1(s * x) / std::expm1(s * p.ell);
    } else if (s > 0.0) {
        base = std::exp(s * (x - p.ell)) * std::expm1(-s * x) / std::expm1(-s * p.ell);
    } else {
        base = std::exp(s * x) * std::expm1(-s * x) / (std::exp(s * p.ell) * std::expm1(-s * p.ell));
    }
    return p.g0 + (p.g1 - p.g0) * base;
}

/// Sub/diag/super coefficients and right-hand side of K u = f.
struct TridiagonalSystem {
    std::vector<double> sub, diag, super, rhs;

    void validate() const {
        const std::size_t n = diag.size();
        if (n == 0) throw DimensionError("empty tridiagonal system");
        if (sub.size() != n - 1 || super.size() != n - 1 || rhs.size() != n)
            throw DimensionError("tridiagonal band lengths inconsistent with diagonal");
    }
};

/// Central-difference interior rows: alpha u_{i-1} + beta u_i + gamma u_{i+1} = f_i
/// with alpha = -a/2h - kappa/h^2, beta = 2 kappa/h^2, gamma = a/2h - kappa/h^2;
/// boundary lifts -alpha u_0 and -gamma u_N move into the first/last rhs rows.
inline TridiagonalSystem assemble_fd(const AdvDiffProblem& p, std::size_t n) {
    p.validate();
    if (n < 3) throw std::invalid_argument("assemble_fd needs at least 3 intervals");
    const double h = p.ell / static_cast<double>(n);
    const double alpha = -p.a / (2.0 * h) - p.kappa / (h * h);
    const double beta = 2.0 * p.kappa / (h * h);
    const double gamma = p.a / (2.0 * h) - p.kappa / (h * h);

    TridiagonalSystem sys;
    const std::size_t m = n - 1;  // interior unknowns
    sys.diag.assign(m, beta);
    sys.sub.assign(m - 1, alpha);
    sys.super.assign(m - 1, gamma);
    sys.rhs.resize(m);
    for (std::size_t i = 1; i <= m; ++i) sys.rhs[i - 1] = p.source(i * h);
    sys.rhs.front() -= alpha * p.g0;
    sys.rhs.back() -= gamma * p.g1;
    return sys;
}

/// Thomas elimination for tridiagonal systems, O(n).
inline std::vector<double> thomas_solve(const TridiagonalSystem& sys) {
    sys.validate();
    const std::size_t n = sys.diag.size();
    std::vector<double> c(n - 1 > 0 ? n - 1 : 0), d(n);
    double piv = sys.diag[0];
    if (std::abs(piv) < 1e-300) throw std::runtime_error("thomas_solve: zero pivot at row 0");
    if (n > 1) c[0] = sys.super[0] / piv;
    d[0] = sys.rhs[0] / piv;
    for (std::size_t i = 1; i < n; ++i) {
        piv = sys.diag[i] - sys.sub[i - 1] * c[i - 1];
        if (std::abs(piv) < 1e-300)
            throw std::runtime_error("thomas_solve: zero pivot at row " + std::to_string(i));
        if (i + 1 < n) c[i] = sys.super[i] / piv;
        d[i] = (sys.rhs[i] - sys.sub[i - 1] * d[i - 1]) / piv;
    }
    for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
    return d;
}

/// A function sampled on a 1D grid.
struct GridFunction {
    std::vector<double> x, u;
};

inline GridFunction solve_fd(const AdvDiffProblem& p, std::size_t n) {
    TridiagonalSystem sys = assemble_fd(p, n);
    std::vector<double> interior = thomas_solve(sys);
    GridFunction g;
    const double h = p.ell / static_cast<double>(n);
    g.x.push_back(0.0);
    g.u.push_back(p.g0);
    for (std::size_t i = 0; i < interior.size(); ++i) {
        g.x.push_back((i + 1) * h);
        g.u.push_back(interior[i]);
    }
    g.x.push_back(p.ell);
    g.u.push_back(p.g1);
    return g;
}

// ---------------------------------------------------------------------------
// Chebyshev spectral collocation
// ---------------------------------------------------------------------------

struct ChebyshevValues {
    std::vector<double> t, t1, t2;  // T_n, T'_n, T''_n for n = 0..N
};

/// Values and first two derivatives of T_0..T_N at xi in [-1,1], by the
/// recurrence T_{n+1} = 2 xi T_n - T_{n-1} and its differentiated forms
/// T'_{n+1} = 2 T_n + 2 xi T'_n - T'_{n-1},
/// T''_{n+1} = 4 T'_n + 2 xi T''_n - T''_{n-1}.
inline ChebyshevValues chebyshev_eval(std::size_t n, double xi) {
    if (std::abs(xi) > 1.0 + 1e-12)
        throw std::domain_error("chebyshev_eval: |xi| > 1");
    ChebyshevValues v;
    v.t.resize(n + 1);
    v.t1.resize(n + 1);
    v.t2.resize(n + 1);
    v.t[0] = 1.0;
    v.t1[0] = 0.0;
    v.t2[0] = 0.0;
    if (n >= 1) {
        v.t[1] = xi;
        v.t1[1] = 1.0;
        v.t2[1] = 0.0;
    }
    for (std::size_t k = 1; k < n; ++k) {
        v.t[k + 1] = 2.0 * xi * v.t[k] - v.t[k - 1];
        v.t1[k + 1] = 2.0 * v.t[k] + 2.0 * xi * v.t1[k] - v.t1[k - 1];
        v.t2[k + 1] = 4.0 * v.t1[k] + 2.0 * xi * v.t2[k] - v.t2[k - 1];
    }
    return v;
}

/// Expansion u(x) = sum u_n T_n(2x/ell - 1).
struct SpectralSolution {
    std::vector<double> coeffs;
    double ell = 1.0;

    double eval(double x) const {
        const ChebyshevValues v = chebyshev_eval(coeffs.size() - 1, 2.0 * x / ell - 1.0);
        double s = 0.0;
        for (std::size_t k = 0; k < coeffs.size(); ++k) s += coeffs[k] * v.t[k];
        return s;
    }
};

/// Chebyshev-Gauss-Lobatto interior points mapped to (0, ell).
inline std::vector<double> cgl_interior_points(std::size_t n, double ell) {
    std::vector<double> pts;
    for (std::size_t i = 1; i < n; ++i) {
        const double xi = -std::cos(M_PI * static_cast<double>(i) / static_cast<double>(n));
        pts.push_back(ell * (xi + 1.0) / 2.0);
    }
    return pts;
}

/// Two boundary rows plus N-1 interior collocation rows solved densely for
/// the N+1 expansion coefficients.
inline SpectralSolution solve_spectral(const AdvDiffProblem& p, std::size_t n) {
    p.validate();
    if (n < 1) throw std::invalid_argument("solve_spectral needs order >= 1");
    const std::size_t m = n + 1;
    Tensor k({m, m});
    Tensor rhs({m});
    const double d1 = 2.0 / p.ell;        // d xi / dx
    const double d2 = d1 * d1;

    const ChebyshevValues left = chebyshev_eval(n, -1.0);
    const ChebyshevValues right = chebyshev_eval(n, 1.0);
    for (std::size_t c = 0; c < m; ++c) {
        k(0, c) = left.t[c];
        k(m - 1, c) = right.t[c];
    }
    rhs[0] = p.g0;
    rhs[m - 1] = p.g1;

    const std::vector<double> pts = cgl_interior_points(n, p.ell);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double xi = 2.0 * pts[i] / p.ell - 1.0;
        const ChebyshevValues v = chebyshev_eval(n, xi);
        for (std::size_t c = 0; c < m; ++c)
            k(i + 1, c) = p.a * d1 * v.t1[c] - p.kappa * d2 * v.t2[c];
        rhs[i + 1] = p.source(pts[i]);
    }

    Tensor sol;
    try {
        sol = solve_dense(k, rhs);
    } catch (const std::runtime_error&) {
        throw std::runtime_error(
            "solve_spectral: singular collocation matrix; try a different collocation point rule");
    }
    SpectralSolution s;
    s.ell = p.ell;
    s.coeffs.assign(sol.raw().begin(), sol.raw().end());
    return s;
}

namespace detail {

struct SpectralLsqMatrices {
    Tensor interior;  // N_t x (N+1): a phi' - kappa phi'' at each point
    Tensor boundary;  // 2 x (N+1): phi at 0 and ell
    Tensor f;         // N_t x 1
    Tensor g;         // 2 x 1
};

inline SpectralLsqMatrices spectral_lsq_matrices(const AdvDiffProblem& p, std::size_t n,
                                                 const std::vector<double>& pts) {
    SpectralLsqMatrices m;
    const std::size_t cols = n + 1;
    m.interior = Tensor({pts.size(), cols});
    m.f = Tensor({pts.size(), 1});
    const double d1 = 2.0 / p.ell, d2 = d1 * d1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const ChebyshevValues v = chebyshev_eval(n, 2.0 * pts[i] / p.ell - 1.0);
        for (std::size_t c = 0; c < cols; ++c)
            m.interior(i, c) = p.a * d1 * v.t1[c] - p.kappa * d2 * v.t2[c];
        m.f(i, 0) = p.source(pts[i]);
    }
    m.boundary = Tensor({2, cols});
    const ChebyshevValues l = chebyshev_eval(n, -1.0), r = chebyshev_eval(n, 1.0);
    for (std::size_t c = 0; c < cols; ++c) {
        m.boundary(0, c) = l.t[c];
        m.boundary(1, c) = r.t[c];
    }
    m.g = Tensor::from({2, 1}, {p.g0, p.g1});
    return m;
}

}  // namespace detail

/// Pi = Pi_int + lambda Pi_bc for the coefficient vector: the mean squared
/// interior residual plus the two squared boundary mismatches.
inline double spectral_lsq_loss(const AdvDiffProblem& p, const std::vector<double>& coeffs,
                                const std::vector<double>& pts, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    const std::size_t n = coeffs.size() - 1;
    const auto m = detail::spectral_lsq_matrices(p, n, pts);
    Tensor u = Tensor::from({coeffs.size(), 1}, std::vector<double>(coeffs));
    Tensor rint = sub(matmul(m.interior, u), m.f);
    Tensor rbc = sub(matmul(m.boundary, u), m.g);
    double pi = dot(rint, rint) / static_cast<double>(pts.size());
    return pi + lambda * dot(rbc, rbc);
}

struct SpectralLsqResult {
    SpectralSolution solution;
    std::vector<double> loss_history;
    double final_loss = 0.0;
};

/// Minimizes the least-squares loss with Adam from a zero initial expansion.
inline SpectralLsqResult spectral_lsq_train(const AdvDiffProblem& p, std::size_t n,
                                            const std::vector<double>& pts, double lambda,
                                            Optimizer opt, std::size_t iters) {
    const auto m = detail::spectral_lsq_matrices(p, n, pts);
    std::vector<double> theta(n + 1, 0.0);
    SpectralLsqResult res;
    for (std::size_t it = 0; it < iters; ++it) {
        Tape tape;
        NodeId u = tape.input(Tensor::from({n + 1, 1}, std::vector<double>(theta)));
        NodeId rint = tape.sub(tape.matmul(tape.constant(m.interior), u), tape.constant(m.f));
        NodeId rbc = tape.sub(tape.matmul(tape.constant(m.boundary), u), tape.constant(m.g));
        NodeId pi = tape.add(
            tape.scale(tape.sum(tape.square(rint)), 1.0 / static_cast<double>(pts.size())),
            tape.scale(tape.sum(tape.square(rbc)), lambda));
        tape.set_tip(pi);
        res.final_loss = tape.value(pi)[0];
        res.loss_history.push_back(res.final_loss);
        GradMap grads = backward(tape, Tensor::from({1, 1}, {1.0}));
        const Tensor& g = grads.at(u);
        std::vector<double> gv(g.raw());
        opt.step(theta, gv);
    }
    res.solution.ell = p.ell;
    res.solution.coeffs = theta;
    // report the loss at the returned coefficients
    res.final_loss = spectral_lsq_loss(p, theta, pts, lambda);
    return res;
}

}  // namespace sciml
