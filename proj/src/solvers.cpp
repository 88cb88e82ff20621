#include "viscos/solvers.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

namespace viscos {

std::string to_string(SolveMethod m) {
    switch (m) {
        case SolveMethod::FixedPoint: return "fixed_point";
        case SolveMethod::NewtonKrylov: return "newton_krylov";
        case SolveMethod::Hybrid: return "hybrid";
    }
    return "unknown";
}

Vec eval_f_H(const Flow& flow, const Vec& x_O, const Vec& x_H, const PartitionPair& parts) {
    return gather(flow.forward(assemble(parts.latent, x_O, x_H)), parts.data.hidden);
}

Vec eval_f_O(const Flow& flow, const Vec& x_O, const Vec& x_H, const PartitionPair& parts) {
    return gather(flow.forward(assemble(parts.latent, x_O, x_H)), parts.data.observed);
}

Vec eval_g_O(const Flow& flow, const Vec& y_O, const Vec& y_H, const PartitionPair& parts,
             double inv_tol) {
    return gather(flow.inverse(assemble(parts.data, y_O, y_H), inv_tol),
                  parts.latent.observed);
}

Vec eval_g_H(const Flow& flow, const Vec& y_O, const Vec& y_H, const PartitionPair& parts,
             double inv_tol) {
    return gather(flow.inverse(assemble(parts.data, y_O, y_H), inv_tol), parts.latent.hidden);
}

SolveResult fixed_point_solve(const Flow& flow, const Vec& y_O, const Vec& x_H,
                              const PartitionPair& parts, const FixedPointConfig& cfg,
                              bool keep_trace) {
    if (!(cfg.alpha0 > 0.0 && cfg.alpha0 <= 1.0 && cfg.beta0 > 0.0 && cfg.beta0 <= 1.0))
        throw InvalidParams("fixed_point_solve: mixing coefficients must be in (0,1]");
    if (!(cfg.decay > 0.0 && cfg.decay <= 1.0))
        throw InvalidParams("fixed_point_solve: decay must be in (0,1]");

    // Initialisation: chi^O = 0.
    Vec chi_O = Vec::Zero(parts.latent.d_O());
    Vec y_H = eval_f_H(flow, chi_O, x_H, parts);
    Vec x_O = eval_g_O(flow, y_O, y_H, parts, cfg.inverse_tol);
    Vec x_O_mixed = x_O;
    Vec y_H_mixed = y_H;

    double alpha = cfg.alpha0;
    double beta = cfg.beta0;
    SolveResult res;
    res.method = SolveMethod::FixedPoint;

    double joint_residual = std::numeric_limits<double>::infinity();
    long k = 0;
    for (; k < cfg.max_iter; ++k) {
        // One forward pass gives both f^H (the update) and f^O (the residual).
        Vec fx = flow.forward(assemble(parts.latent, x_O_mixed, x_H));
        y_H = gather(fx, parts.data.hidden);
        double res_fO = (gather(fx, parts.data.observed) - y_O).lpNorm<Eigen::Infinity>();
        double res_fH = (y_H - y_H_mixed).lpNorm<Eigen::Infinity>();

        y_H_mixed = alpha * y_H + (1.0 - alpha) * y_H_mixed;
        x_O = eval_g_O(flow, y_O, y_H_mixed, parts, cfg.inverse_tol);
        double res_gO = (x_O - x_O_mixed).lpNorm<Eigen::Infinity>();
        x_O_mixed = beta * x_O + (1.0 - beta) * x_O_mixed;

        joint_residual = std::max({res_fO, res_fH, res_gO});
        if (keep_trace) res.trace.push_back({k + 1, joint_residual, alpha, beta, res.method});
        alpha *= cfg.decay;
        beta *= cfg.decay;
        if (joint_residual < cfg.tol) {
            ++k;
            break;
        }
    }
    if (joint_residual >= cfg.tol)
        throw NoConvergence("fixed_point_solve: residual above tolerance", joint_residual, k);

    res.x_O = x_O_mixed;
    res.y_H = eval_f_H(flow, x_O_mixed, x_H, parts);
    res.residual =
        (eval_f_O(flow, x_O_mixed, x_H, parts) - y_O).lpNorm<Eigen::Infinity>();
    res.iterations = k;
    return res;
}

namespace {

// delta = (J^OO)^{-1} r per the configured strategy.
Vec apply_inverse_joo(const Flow& flow, const Vec& x, const PartitionPair& parts,
                      const NewtonKrylovConfig& cfg, const Vec& r) {
    PartitionedJacobian pj = partitioned_jacobian(flow, x, parts, cfg.trunc_tol);
    GmresConfig g = cfg.gmres;
    try {
        switch (cfg.inverse_strategy) {
            case InverseStrategy::DirectGmres:
                g.preconditioner.reset();
                return gmres(pj.j_oo, r, g).x;
            case InverseStrategy::PreconditionedWithGoo:
                g.preconditioner = pj.g_oo;
                return gmres(pj.j_oo, r, g).x;
            case InverseStrategy::SchurViaGhh: {
                g.preconditioner.reset();
                Vec inner = gmres(pj.g_hh, pj.g_ho.apply(r), g).x;
                return pj.g_oo.apply(r) - pj.g_oh.apply(inner);
            }
        }
    } catch (const NoConvergence& e) {
        throw SingularSubJacobian(std::string("newton_krylov: inner GMRES stagnated: ") +
                                  e.what());
    }
    throw InvalidParams("newton_krylov: unknown inverse strategy");
}

}  // namespace

SolveResult newton_krylov_solve(const Flow& flow, const Vec& y_O, const Vec& x_H,
                                const PartitionPair& parts, const NewtonKrylovConfig& cfg,
                                const std::optional<Vec>& x_O_init, bool keep_trace) {
    if (!(cfg.step_size > 0.0 && cfg.step_size <= 1.0))
        throw InvalidParams("newton_krylov_solve: step size must be in (0,1]");
    Vec x_O = x_O_init ? *x_O_init : Vec::Zero(parts.latent.d_O());

    SolveResult res;
    res.method = SolveMethod::NewtonKrylov;
    Vec r = eval_f_O(flow, x_O, x_H, parts) - y_O;
    double rnorm = r.lpNorm<Eigen::Infinity>();
    long k = 0;
    for (; k < cfg.max_iter && rnorm >= cfg.tol; ++k) {
        Vec x_full = assemble(parts.latent, x_O, x_H);
        Vec delta = apply_inverse_joo(flow, x_full, parts, cfg, r);
        double s = cfg.step_size;
        Vec x_try;
        Vec r_try;
        double rnorm_try = rnorm;
        long bt = 0;
        for (; bt <= cfg.max_backtracks; ++bt) {
            x_try = x_O - s * delta;
            r_try = eval_f_O(flow, x_try, x_H, parts) - y_O;
            rnorm_try = r_try.lpNorm<Eigen::Infinity>();
            if (rnorm_try < rnorm) break;
            s *= 0.5;
        }
        if (bt > cfg.max_backtracks)
            throw NoConvergence("newton_krylov_solve: backtracking failed to reduce residual",
                                rnorm, k);
        x_O = x_try;
        r = r_try;
        rnorm = rnorm_try;
        if (keep_trace) res.trace.push_back({k + 1, rnorm, s, 0.0, res.method});
    }
    if (rnorm >= cfg.tol)
        throw NoConvergence("newton_krylov_solve: residual above tolerance", rnorm, k);

    res.x_O = x_O;
    res.y_H = eval_f_H(flow, x_O, x_H, parts);
    res.residual = rnorm;
    res.iterations = k;
    return res;
}

SolveResult solve_constraint(const Flow& flow, const Vec& y_O, const Vec& x_H,
                             const PartitionPair& parts, const FixedPointConfig& fp_cfg,
                             const NewtonKrylovConfig& nk_cfg, bool keep_trace) {
    try {
        return fixed_point_solve(flow, y_O, x_H, parts, fp_cfg, keep_trace);
    } catch (const NoConvergence&) {
        // Warm-start Newton-Krylov from a short damped-alternation pass; the
        // fixed-point stage usually covers most of the distance even when it
        // cannot reach the threshold.
        Vec chi_O = Vec::Zero(parts.latent.d_O());
        Vec y_H = eval_f_H(flow, chi_O, x_H, parts);
        Vec x_O = eval_g_O(flow, y_O, y_H, parts, fp_cfg.inverse_tol);
        Vec x_O_mixed = x_O;
        Vec y_H_mixed = y_H;
        double alpha = fp_cfg.alpha0, beta = fp_cfg.beta0;
        long warm_iters = std::min<long>(fp_cfg.max_iter, 25);
        for (long k = 0; k < warm_iters; ++k) {
            y_H = eval_f_H(flow, x_O_mixed, x_H, parts);
            y_H_mixed = alpha * y_H + (1.0 - alpha) * y_H_mixed;
            x_O = eval_g_O(flow, y_O, y_H_mixed, parts, fp_cfg.inverse_tol);
            x_O_mixed = beta * x_O + (1.0 - beta) * x_O_mixed;
            alpha *= fp_cfg.decay;
            beta *= fp_cfg.decay;
        }
        SolveResult res = newton_krylov_solve(flow, y_O, x_H, parts, nk_cfg, x_O_mixed,
                                              keep_trace);
        res.method = SolveMethod::Hybrid;
        return res;
    }
}

ContractionDiagnostic theorem1_contraction_matrix(double L_a, double L_b, double alpha,
                                                  double beta) {
    if (L_a < 0.0 || L_b < 0.0) throw InvalidParams("theorem1: Lipschitz constants < 0");
    if (!(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta <= 1.0))
        throw InvalidParams("theorem1: mixing coefficients must be in (0,1]");
    Mat c(2, 2);
    c << 1.0 - alpha, alpha * L_a, (1.0 - alpha) * beta * L_b,
        1.0 - beta + alpha * beta * L_b * L_a;
    Eigen::EigenSolver<Mat> es(c);
    double rho = 0.0;
    for (int i = 0; i < 2; ++i) rho = std::max(rho, std::abs(es.eigenvalues()[i]));
    return {c, rho};
}

double estimate_lipschitz_product(const Flow& flow, const PartitionPair& parts,
                                  long n_probes, std::uint64_t rng_seed) {
    if (n_probes < 1) throw InvalidParams("estimate_lipschitz_product: n_probes >= 1");
    Rng rng = make_rng(rng_seed);
    double l_a = 0.0;  // f^H variation under x^O perturbations
    double l_b = 0.0;  // g^O variation under y^H perturbations
    for (long i = 0; i < n_probes; ++i) {
        Vec x_H = gaussian_vector(rng, parts.latent.d_H());
        Vec x_O1 = gaussian_vector(rng, parts.latent.d_O());
        Vec x_O2 = x_O1 + 0.5 * gaussian_vector(rng, parts.latent.d_O());
        double dx = (x_O1 - x_O2).norm();
        if (dx > 1e-12) {
            double df = (eval_f_H(flow, x_O1, x_H, parts) -
                         eval_f_H(flow, x_O2, x_H, parts)).norm();
            l_a = std::max(l_a, df / dx);
        }
        Vec y_O = gaussian_vector(rng, parts.data.d_O());
        Vec y_H1 = gaussian_vector(rng, parts.data.d_H());
        Vec y_H2 = y_H1 + 0.5 * gaussian_vector(rng, parts.data.d_H());
        double dy = (y_H1 - y_H2).norm();
        if (dy > 1e-12) {
            double dg = (eval_g_O(flow, y_O, y_H1, parts) -
                         eval_g_O(flow, y_O, y_H2, parts)).norm();
            l_b = std::max(l_b, dg / dy);
        }
    }
    return l_a * l_b;
}

}  // namespace viscos
