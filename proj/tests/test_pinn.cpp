#include <catch2/catch_amalgamated.hpp>

#include "sciml/pinn.hpp"

using namespace sciml;

namespace {

// u(x) = x as a one-layer linear network: exact solution of the a = 0 problem.
MlpConfig line_cfg() {
    MlpConfig cfg;
    cfg.widths = {1, 1};
    cfg.activation = Activation::Linear;
    return cfg;
}

MlpParams line_params() {
    MlpParams p;
    p.weights = {Tensor::matrix(1, 1, {1.0})};
    p.biases = {Tensor::vec({0.0})};
    return p;
}

}  // namespace

TEST_CASE("pinn_loss vanishes for the exact linear solution of the a=0 problem") {
    PinnProblem prob;
    prob.pde.a = 0.0;
    prob.n_interior = 16;
    PinnLossParts parts = pinn_loss(prob, line_cfg(), line_params());
    CHECK(parts.interior == 0.0);
    CHECK(parts.boundary == Catch::Approx(0.0).margin(1e-28));
    CHECK(parts.total == Catch::Approx(0.0).margin(1e-27));
}

TEST_CASE("interior residual of the exact network is identically zero pointwise") {
    PinnProblem prob;
    prob.pde.a = 0.0;
    prob.n_interior = 33;
    auto cfg = line_cfg();
    auto params = line_params();
    auto r = detail::pinn_residual_values(prob.pde, cfg, params, prob.interior_points());
    for (double v : r) CHECK(v == 0.0);
}

TEST_CASE("zero network against boundary targets (0,1) gives Pi_b = 1") {
    PinnProblem prob;
    prob.n_interior = 8;
    MlpConfig cfg = line_cfg();
    MlpParams p;
    p.weights = {Tensor::matrix(1, 1, {0.0})};
    p.biases = {Tensor::vec({0.0})};
    PinnLossParts parts = pinn_loss(prob, cfg, p);
    CHECK(parts.boundary == 1.0);

    PinnProblem free = prob;
    free.lambda_b = 0.0;
    PinnLossParts parts0 = pinn_loss(free, cfg, p);
    CHECK(parts0.total == parts0.interior);
}

TEST_CASE("relu networks are rejected with a smoothness error") {
    PinnProblem prob;
    MlpConfig cfg;
    cfg.widths = {1, 8, 1};
    cfg.activation = Activation::Relu;
    Rng rng(2);
    MlpParams p = init_params(cfg, rng);
    CHECK_THROWS_AS(pinn_loss(prob, cfg, p), SmoothnessError);
}

TEST_CASE("N_v = 1 is degenerate but legal") {
    PinnProblem prob;
    prob.n_interior = 1;
    MlpConfig cfg;
    cfg.widths = {1, 4, 1};
    cfg.activation = Activation::Tanh;
    Rng rng(3);
    MlpParams p = init_params(cfg, rng);
    PinnLossParts parts = pinn_loss(prob, cfg, p);
    CHECK(std::isfinite(parts.total));
}

TEST_CASE("pinn_loss gradient matches finite differences end to end") {
    PinnProblem prob;
    prob.n_interior = 7;
    prob.lambda_b = 3.0;
    MlpConfig cfg;
    cfg.widths = {1, 6, 6, 1};
    cfg.activation = Activation::Tanh;
    Rng rng(8);
    MlpParams params = init_params(cfg, rng);

    detail::PinnTape t = detail::record_pinn_loss(prob, cfg, params);
    GradCheckReport rep = grad_check(t.tape, 1e-5);
    CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("training the easy a=0 linear target reaches a tiny loss") {
    PinnProblem prob;
    prob.pde.a = 0.0;
    prob.n_interior = 16;
    prob.lambda_b = 1.0;
    MlpConfig cfg;
    cfg.widths = {1, 8, 1};
    cfg.activation = Activation::Tanh;
    Optimizer opt;
    opt.kind = OptimKind::Adam;
    opt.lr = 0.1;
    PinnRunReport report = train_pinn(prob, cfg, opt, 2000, 7);
    CHECK_FALSE(report.diverged);
    CHECK(report.final_loss < 1e-6);
}

TEST_CASE("short Pe=1 training run improves toward the exact solution") {
    PinnProblem prob;  // Pe = 1
    prob.n_interior = 32;
    MlpConfig cfg;
    cfg.widths = {1, 10, 10, 1};
    cfg.activation = Activation::Tanh;
    Optimizer opt;
    opt.kind = OptimKind::Adam;
    opt.lr = 0.01;
    PinnRunReport report = train_pinn(prob, cfg, opt, 1200, 7);
    CHECK_FALSE(report.diverged);
    CHECK(report.relative_l2_error < 0.05);
}

TEST_CASE("larger lambda_b buys a smaller boundary loss at fixed budget") {
    std::vector<double> boundary_losses;
    for (double lb : {0.1, 1.0, 10.0}) {
        PinnProblem prob;
        prob.n_interior = 24;
        prob.lambda_b = lb;
        MlpConfig cfg;
        cfg.widths = {1, 8, 1};
        cfg.activation = Activation::Tanh;
        Optimizer opt;
        opt.kind = OptimKind::Adam;
        opt.lr = 0.01;
        PinnRunReport report = train_pinn(prob, cfg, opt, 1200, 11);
        PinnLossParts parts = pinn_loss(prob, cfg, report.params);
        boundary_losses.push_back(parts.boundary);
    }
    CHECK(boundary_losses[1] < boundary_losses[0]);
    CHECK(boundary_losses[2] < boundary_losses[1]);
}

TEST_CASE("parameterized Poisson source formula") {
    CHECK(poisson_source(0.5, 0.5, 1.0) == Catch::Approx(0.25));
    CHECK(poisson_source(0.3, 0.7, 0.0) == 0.0);
}

TEST_CASE("pinn_param_loss: zero network with alpha = 0 has zero loss") {
    ParamPoissonProblem prob = ParamPoissonProblem::uniform(3, 3, {0.0});
    MlpConfig cfg;
    cfg.widths = {3, 5, 1};
    cfg.activation = Activation::Tanh;
    MlpParams p;
    p.weights = {Tensor({5, 3}), Tensor({1, 5})};
    p.biases = {Tensor({5}), Tensor({1})};
    CHECK(pinn_param_loss(prob, cfg, p) == Catch::Approx(0.0).margin(1e-30));
}

TEST_CASE("pinn_param_loss with one alpha equals the single-instance loss") {
    ParamPoissonProblem one = ParamPoissonProblem::uniform(3, 3, {0.7});
    ParamPoissonProblem rep = one;
    rep.alphas = {0.7, 0.7};  // duplicated alpha must average to the same value
    MlpConfig cfg;
    cfg.widths = {3, 6, 1};
    cfg.activation = Activation::Tanh;
    Rng rng(5);
    MlpParams p = init_params(cfg, rng);
    CHECK(pinn_param_loss(one, cfg, p) == Catch::Approx(pinn_param_loss(rep, cfg, p)));
    CHECK_THROWS_AS([&] {
        ParamPoissonProblem empty = one;
        empty.alphas.clear();
        return pinn_param_loss(empty, cfg, p);
    }(), std::invalid_argument);
}

TEST_CASE("pinn_param_loss gradient matches finite differences (2D second derivatives)") {
    ParamPoissonProblem prob = ParamPoissonProblem::uniform(3, 3, {0.5, 1.0});
    MlpConfig cfg;
    cfg.widths = {3, 5, 1};
    cfg.activation = Activation::Tanh;
    Rng rng(9);
    MlpParams params = init_params(cfg, rng);
    detail::ParamPinnTape t = detail::record_param_poisson_loss(prob, cfg, params);
    GradCheckReport rep = grad_check(t.tape, 1e-5);
    CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("error bound report") {
    PinnProblem prob;
    prob.pde.a = 0.0;

    // exact network: every term vanishes
    ErrorBoundReport clean =
        error_bound_report(prob, line_cfg(), line_params(), {16, 64});
    for (const auto& row : clean.rows) {
        CHECK(row.pi_int == 0.0);
        CHECK(row.fine_l2_residual == 0.0);
    }
    CHECK(clean.pi_b == Catch::Approx(0.0).margin(1e-28));

    // fixed random tanh network: the quadrature gap shrinks monotonically
    PinnProblem pe1;
    MlpConfig cfg;
    cfg.widths = {1, 6, 1};
    cfg.activation = Activation::Tanh;
    Rng rng(13);
    MlpParams params = init_params(cfg, rng);
    ErrorBoundReport rep = error_bound_report(pe1, cfg, params, {16, 64, 256});
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.rows[1].quadrature_gap < rep.rows[0].quadrature_gap);
    CHECK(rep.rows[2].quadrature_gap < rep.rows[1].quadrature_gap);

    // m_Omega for the unit interval is 1: estimate equals sqrt(pi_int)
    CHECK(rep.rows[0].collocation_estimate ==
          Catch::Approx(std::sqrt(rep.rows[0].pi_int)));
}

TEST_CASE("assimilation loss") {
    // Interpolating network with zero residual: only the smoothness term is left.
    AssimilationProblem prob;
    prob.constraint.pde.a = 0.0;
    prob.constraint.n_interior = 16;
    prob.measurements = {{0.25, 0.25}, {0.5, 0.5}, {0.75, 0.75}};
    prob.lambda_data = 2.0;
    prob.lambda_reg = 0.3;
    // theta = (W=1, b=0): ||theta||^2 = 1
    CHECK(assimilation_loss(prob, line_cfg(), line_params()) == Catch::Approx(0.3));

    prob.lambda_data = 0.0;
    prob.lambda_reg = 0.0;
    CHECK(assimilation_loss(prob, line_cfg(), line_params()) == 0.0);

    // One measurement from the Pe=1 exact solution against the exact value.
    AssimilationProblem pe1;
    pe1.constraint.pde = AdvDiffProblem{};
    pe1.constraint.n_interior = 8;
    pe1.measurements = {{0.5, 0.37754}};
    pe1.lambda_reg = 0.0;
    // Evaluate only the data term by zeroing the residual weight via a
    // nearly-exact network: use the loss difference under lambda_data toggling.
    MlpConfig cfg;
    cfg.widths = {1, 6, 1};
    cfg.activation = Activation::Tanh;
    Rng rng(3);
    MlpParams params = init_params(cfg, rng);
    AssimilationProblem no_data = pe1;
    no_data.lambda_data = 0.0;
    const double data_term =
        assimilation_loss(pe1, cfg, params) - assimilation_loss(no_data, cfg, params);
    const double direct = std::pow(0.37754 - mlp_forward(cfg, params, Tensor::vec({0.5}))[0], 2);
    CHECK(data_term == Catch::Approx(direct).margin(1e-12));
}
