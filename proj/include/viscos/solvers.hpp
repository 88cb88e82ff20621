#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "viscos/partition.hpp"

namespace viscos {

struct FixedPointConfig {
    double alpha0 = 0.5;
    double beta0 = 0.5;
    double decay = 0.95;  // per-iteration multiplier on both mixing rates
    double tol = 1e-3;    // inf-norm joint residual threshold
    long max_iter = 200;
    double inverse_tol = 1e-12;  // per-call tolerance of the inner flow inverse
};

enum class InverseStrategy {
    DirectGmres,            // GMRES on the forward J^OO view
    PreconditionedWithGoo,  // same, left-preconditioned with the G^OO view
    SchurViaGhh,            // (J^OO)^{-1} = G^OO - G^OH (G^HH)^{-1} G^HO
};

struct NewtonKrylovConfig {
    double step_size = 1.0;  // full Newton steps, halved on residual increase
    double tol = 1e-3;
    long max_iter = 50;
    long max_backtracks = 12;
    GmresConfig gmres{1e-10, 400, std::nullopt, std::nullopt};
    InverseStrategy inverse_strategy = InverseStrategy::PreconditionedWithGoo;
    double inverse_tol = 1e-12;
    double trunc_tol = 1e-10;
};

enum class SolveMethod { FixedPoint, NewtonKrylov, Hybrid };

std::string to_string(SolveMethod m);

struct SolveTraceRow {
    long iteration;
    double residual;
    double alpha;
    double beta;
    SolveMethod method;
};

struct SolveResult {
    Vec x_O;          // latent observed block solving the constraint
    Vec y_H;          // data hidden block f^H(x^O, x^H)
    double residual;  // ||f^O(x_O; x^H) - y^O||_inf
    long iterations;
    SolveMethod method;
    std::vector<SolveTraceRow> trace;  // filled when keep_trace is set
};

// Partitioned evaluations of f and g for one conditioning problem.
// f^H(x^O; x^H): data-hidden block of f at the assembled latent point.
Vec eval_f_H(const Flow& flow, const Vec& x_O, const Vec& x_H, const PartitionPair& parts);
Vec eval_f_O(const Flow& flow, const Vec& x_O, const Vec& x_H, const PartitionPair& parts);
// g^O(y^O, y^H): latent-observed block of g at the assembled data point.
Vec eval_g_O(const Flow& flow, const Vec& y_O, const Vec& y_H, const PartitionPair& parts,
             double inv_tol = 1e-12);
Vec eval_g_H(const Flow& flow, const Vec& y_O, const Vec& y_H, const PartitionPair& parts,
             double inv_tol = 1e-12);

// Damped alternation between f^H and g^O solving the equality constraint
// f^O(x^O; x^H) = y^O without Jacobian solves.
SolveResult fixed_point_solve(const Flow& flow, const Vec& y_O, const Vec& x_H,
                              const PartitionPair& parts, const FixedPointConfig& cfg,
                              bool keep_trace = false);

// Newton iteration on x^O with the J^OO solve done by GMRES (strategy
// selectable); optional warm start.
SolveResult newton_krylov_solve(const Flow& flow, const Vec& y_O, const Vec& x_H,
                                const PartitionPair& parts, const NewtonKrylovConfig& cfg,
                                const std::optional<Vec>& x_O_init = std::nullopt,
                                bool keep_trace = false);

// Fixed point first; on failure, Newton-Krylov warm-started from the
// fixed-point iterate (method = Hybrid).
SolveResult solve_constraint(const Flow& flow, const Vec& y_O, const Vec& x_H,
                             const PartitionPair& parts, const FixedPointConfig& fp_cfg,
                             const NewtonKrylovConfig& nk_cfg, bool keep_trace = false);

// Comparison matrix of the damped alternation and its spectral radius;
// spectral radius < 1 predicts guaranteed convergence.
struct ContractionDiagnostic {
    Mat matrix;  // 2x2
    double spectral_radius;
};
ContractionDiagnostic theorem1_contraction_matrix(double L_a, double L_b, double alpha,
                                                  double beta);

// Empirical lower bound on L_a * L_b: max ratio over random point pairs of the
// f^H variation (varying only x^O) times the g^O variation (varying only y^H).
double estimate_lipschitz_product(const Flow& flow, const PartitionPair& parts,
                                  long n_probes, std::uint64_t rng_seed);

}  // namespace viscos
