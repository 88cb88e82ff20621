#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "viscos/solvers.hpp"

using namespace viscos;

namespace {

struct Problem {
    Flow flow;
    PartitionPair parts;
    Vec x_true, y_O, x_H;
};

Problem make_problem(int d, int d_O, double lipschitz, std::uint64_t seed) {
    Problem p;
    p.flow = Flow::random(d, 3, 16, lipschitz, seed);
    p.parts = aligned_pair(aligned_partition(d_O, d));
    Rng rng = make_rng(seed + 1);
    p.x_true = gaussian_vector(rng, d);
    Vec y = p.flow.forward(p.x_true);
    p.y_O = gather(y, p.parts.data.observed);
    p.x_H = gather(p.x_true, p.parts.latent.hidden);
    return p;
}

}  // namespace

TEST_CASE("partitioned evaluations agree with direct gathers") {
    Problem p = make_problem(5, 2, 0.8, 100);
    Vec x_O = gather(p.x_true, p.parts.latent.observed);
    Vec y = p.flow.forward(p.x_true);
    CHECK((eval_f_O(p.flow, x_O, p.x_H, p.parts) - gather(y, p.parts.data.observed))
              .lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK((eval_f_H(p.flow, x_O, p.x_H, p.parts) - gather(y, p.parts.data.hidden))
              .lpNorm<Eigen::Infinity>() < 1e-14);
    Vec y_H = gather(y, p.parts.data.hidden);
    CHECK((eval_g_O(p.flow, p.y_O, y_H, p.parts) - x_O).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((eval_g_H(p.flow, p.y_O, y_H, p.parts) - p.x_H).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("fixed point solver reaches the constraint") {
    for (std::uint64_t seed : {200, 201, 202}) {
        Problem p = make_problem(6, 3, 0.7, seed);
        FixedPointConfig cfg;
        // unit mixing without decay: contraction holds, tight tolerance reachable
        cfg.alpha0 = 1.0;
        cfg.beta0 = 1.0;
        cfg.decay = 1.0;
        cfg.tol = 1e-6;
        SolveResult res = fixed_point_solve(p.flow, p.y_O, p.x_H, p.parts, cfg, true);
        CHECK(res.residual < 1e-6);
        CHECK(res.method == SolveMethod::FixedPoint);
        CHECK(res.trace.size() == static_cast<std::size_t>(res.iterations));
        // residual recomputed from scratch agrees with the reported one
        Vec f_O = eval_f_O(p.flow, res.x_O, p.x_H, p.parts);
        CHECK((f_O - p.y_O).lpNorm<Eigen::Infinity>() ==
              doctest::Approx(res.residual).epsilon(1e-10));
    }
}

TEST_CASE("fixed point solver rejects bad mixing parameters") {
    Problem p = make_problem(4, 2, 0.7, 210);
    FixedPointConfig cfg;
    cfg.alpha0 = 0.0;
    CHECK_THROWS_AS(fixed_point_solve(p.flow, p.y_O, p.x_H, p.parts, cfg), InvalidParams);
    cfg = FixedPointConfig{};
    cfg.decay = 1.5;
    CHECK_THROWS_AS(fixed_point_solve(p.flow, p.y_O, p.x_H, p.parts, cfg), InvalidParams);
}

TEST_CASE("fixed point solver throws NoConvergence when starved") {
    Problem p = make_problem(6, 3, 0.9, 220);
    FixedPointConfig cfg;
    cfg.tol = 1e-12;
    cfg.max_iter = 2;
    CHECK_THROWS_AS(fixed_point_solve(p.flow, p.y_O, p.x_H, p.parts, cfg), NoConvergence);
}

TEST_CASE("newton krylov agrees across all inverse strategies") {
    Problem p = make_problem(6, 3, 0.8, 230);
    NewtonKrylovConfig cfg;
    cfg.tol = 1e-9;
    Vec solutions[3];
    int i = 0;
    for (InverseStrategy s : {InverseStrategy::DirectGmres,
                              InverseStrategy::PreconditionedWithGoo,
                              InverseStrategy::SchurViaGhh}) {
        cfg.inverse_strategy = s;
        SolveResult res = newton_krylov_solve(p.flow, p.y_O, p.x_H, p.parts, cfg);
        CHECK(res.residual < 1e-9);
        solutions[i++] = res.x_O;
    }
    CHECK((solutions[0] - solutions[1]).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK((solutions[1] - solutions[2]).lpNorm<Eigen::Infinity>() < 1e-6);
    // the constructed solution is recovered
    CHECK((solutions[0] - gather(p.x_true, p.parts.latent.observed)).lpNorm<Eigen::Infinity>() <
          1e-6);
}

TEST_CASE("newton krylov matches the fixed point solution") {
    Problem p = make_problem(6, 2, 0.7, 240);
    FixedPointConfig fp_cfg;
    fp_cfg.alpha0 = 1.0;
    fp_cfg.beta0 = 1.0;
    fp_cfg.decay = 1.0;
    fp_cfg.tol = 1e-9;
    fp_cfg.max_iter = 400;
    NewtonKrylovConfig nk_cfg;
    nk_cfg.tol = 1e-9;
    SolveResult a = fixed_point_solve(p.flow, p.y_O, p.x_H, p.parts, fp_cfg);
    SolveResult b = newton_krylov_solve(p.flow, p.y_O, p.x_H, p.parts, nk_cfg);
    CHECK((a.x_O - b.x_O).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK((a.y_H - b.y_H).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("hybrid fallback engages when the fixed point is starved") {
    Problem p = make_problem(6, 3, 0.9, 250);
    FixedPointConfig fp_cfg;
    fp_cfg.tol = 1e-10;
    fp_cfg.max_iter = 3;  // force failure
    NewtonKrylovConfig nk_cfg;
    nk_cfg.tol = 1e-8;
    SolveResult res = solve_constraint(p.flow, p.y_O, p.x_H, p.parts, fp_cfg, nk_cfg);
    CHECK(res.method == SolveMethod::Hybrid);
    CHECK(res.residual < 1e-8);
}

TEST_CASE("contraction matrix closed form at unit mixing") {
    // alpha = beta = 1: C = [[0, L_a], [0, L_a L_b]], spectrum {0, L_a L_b}
    ContractionDiagnostic d = theorem1_contraction_matrix(0.5, 0.8, 1.0, 1.0);
    CHECK(d.matrix(0, 0) == doctest::Approx(0.0));
    CHECK(d.matrix(0, 1) == doctest::Approx(0.5));
    CHECK(d.matrix(1, 0) == doctest::Approx(0.0));
    CHECK(d.matrix(1, 1) == doctest::Approx(0.4));
    CHECK(d.spectral_radius == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("contraction criterion matches the product condition") {
    // rho(C) < 1 exactly when L_a L_b < 1, for any damping
    for (double alpha : {0.3, 0.7, 1.0})
        for (double beta : {0.4, 1.0})
            for (double la : {0.2, 0.9, 1.4})
                for (double lb : {0.3, 1.1}) {
                    double rho =
                        theorem1_contraction_matrix(la, lb, alpha, beta).spectral_radius;
                    if (la * lb < 1.0) CHECK(rho < 1.0 - 1e-12);
                    else CHECK(rho >= 1.0 - 1e-12);
                }
}

TEST_CASE("contraction matrix validates inputs") {
    CHECK_THROWS_AS(theorem1_contraction_matrix(-0.1, 0.5, 1.0, 1.0), InvalidParams);
    CHECK_THROWS_AS(theorem1_contraction_matrix(0.5, 0.5, 0.0, 1.0), InvalidParams);
}

TEST_CASE("empirical lipschitz product stays below the layer bound product") {
    // Small Lipschitz target keeps the coupled maps contractive; the sampled
    // estimate must respect that.
    Flow flow = Flow::random(6, 2, 16, 0.3, 260);
    PartitionPair parts = aligned_pair(aligned_partition(3, 6));
    double prod = estimate_lipschitz_product(flow, parts, 50, 261);
    CHECK(prod >= 0.0);
    CHECK(prod < 1.0);
}

TEST_CASE("per iteration contraction respects the theorem bound") {
    Problem p = make_problem(6, 3, 0.5, 270);
    double lab = estimate_lipschitz_product(p.flow, p.parts, 100, 271);
    REQUIRE(lab < 0.8);
    FixedPointConfig cfg;
    cfg.alpha0 = 1.0;
    cfg.beta0 = 1.0;
    cfg.decay = 1.0;
    cfg.tol = 1e-6;
    SolveResult res = fixed_point_solve(p.flow, p.y_O, p.x_H, p.parts, cfg, true);
    CHECK(res.residual < 1e-6);
    double rho = theorem1_contraction_matrix(std::sqrt(lab), std::sqrt(lab), 1.0, 1.0)
                     .spectral_radius;
    // late-phase ratios, skipping the transient
    for (std::size_t i = 2; i + 1 < res.trace.size(); ++i) {
        double ratio = res.trace[i + 1].residual / std::max(res.trace[i].residual, 1e-14);
        CHECK(ratio <= rho + 0.2);
    }
}
