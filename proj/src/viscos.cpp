#include "viscos/viscos.hpp"

#include <Eigen/LU>
#include <chrono>
#include <cmath>

namespace viscos {

JointLogPdf partitioned_joint_logpdf(const Flow& flow, const Vec& x_O, const Vec& x_H,
                                     const PartitionPair& parts) {
    if (x_O.size() != parts.latent.d_O() || x_H.size() != parts.latent.d_H())
        throw DimensionMismatch("partitioned_joint_logpdf: block size mismatch");
    Vec x = assemble(parts.latent, x_O, x_H);
    Mat j = flow.dense_jacobian(x);
    Mat g = j.partialPivLu().inverse();

    auto block = [](const Mat& m, const std::vector<int>& rows, const std::vector<int>& cols) {
        Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t k = 0; k < cols.size(); ++k) out(i, k) = m(rows[i], cols[k]);
        return out;
    };

    JointLogPdf out;
    out.log_p0_xH = Flow::base_log_density(x_H);
    out.log_p0_xO = Flow::base_log_density(x_O);
    // G rows are latent indices, columns data indices.
    out.log_det_GHH = dense_logabsdet(block(g, parts.latent.hidden, parts.data.hidden));
    out.log_det_JOO = dense_logabsdet(block(j, parts.data.observed, parts.latent.observed));
    return out;
}

double dense_lad_joo(const Flow& flow, const Vec& x, const PartitionPair& parts) {
    return dense_logabsdet(
        dense_sub_jacobian(flow, x, parts.data.observed, parts.latent.observed));
}

ElboEstimate elbo_estimate(const Flow& flow, const VariationalPosterior& q, const Vec& y_O,
                           const PartitionPair& parts, long n_samples,
                           std::uint64_t rng_seed, const FixedPointConfig& fp_cfg,
                           const NewtonKrylovConfig& nk_cfg) {
    if (n_samples < 1) throw InvalidParams("elbo_estimate: n_samples >= 1");
    Rng rng = make_rng(rng_seed);
    ElboEstimate est;
    est.entropy_term = q.entropy();
    for (long i = 0; i < n_samples; ++i) {
        Vec eps = gaussian_vector(rng, q.dim());
        Vec x_H = q.sample_path(eps);
        try {
            SolveResult res = solve_constraint(flow, y_O, x_H, parts, fp_cfg, nk_cfg);
            Vec x = assemble(parts.latent, res.x_O, x_H);
            est.prior_term += Flow::base_log_density(x_H);
            est.observed_prior_term += Flow::base_log_density(res.x_O);
            est.lad_term -= dense_lad_joo(flow, x, parts);
            ++est.n_samples;
        } catch (const NoConvergence&) {
            ++est.n_skipped;
        } catch (const SingularSubJacobian&) {
            ++est.n_skipped;
        }
    }
    if (est.n_skipped > static_cast<long>(0.2 * static_cast<double>(n_samples)))
        throw NoConvergence("elbo_estimate: too many constraint solves failed",
                            0.0, est.n_skipped);
    double n = static_cast<double>(est.n_samples);
    est.prior_term /= n;
    est.observed_prior_term /= n;
    est.lad_term /= n;
    est.value = est.prior_term + est.entropy_term + est.observed_prior_term + est.lad_term;
    return est;
}

LinearOperator implicit_grad_xO(const Flow& flow, const Vec& x, const PartitionPair& parts,
                                const GmresConfig& gmres_cfg, bool precondition_with_goo,
                                double trunc_tol) {
    PartitionedJacobian pj = partitioned_jacobian(flow, x, parts, trunc_tol);
    GmresConfig fwd = gmres_cfg;
    GmresConfig adj = gmres_cfg;
    if (precondition_with_goo) {
        fwd.preconditioner = pj.g_oo;
        adj.preconditioner = pj.g_oo.transpose();
    } else {
        fwd.preconditioner.reset();
        adj.preconditioner.reset();
    }
    LinearOperator op;
    op.rows = parts.latent.d_O();
    op.cols = parts.latent.d_H();
    // The views reference the flow; the operator must not outlive it.
    op.apply = [pj, fwd](const Vec& v) { return Vec(-gmres(pj.j_oo, pj.j_oh.apply(v), fwd).x); };
    op.adjoint_apply = [pj, adj](const Vec& u) {
        return Vec(-pj.j_oh.adjoint(gmres(pj.j_oo.transpose(), u, adj).x));
    };
    return op;
}

Vec nlade_grad(const Flow& flow, const Vec& x, const PartitionPair& parts, long n_probes,
               std::uint64_t rng_seed, const GmresConfig& gmres_cfg, double trunc_tol) {
    if (n_probes < 1) throw InvalidParams("nlade_grad: n_probes >= 1");
    ForwardTrace tr = flow.forward_trace(x);
    PartitionedJacobian pj = partitioned_jacobian(flow, x, parts, trunc_tol);
    GmresConfig adj = gmres_cfg;
    adj.preconditioner = pj.g_oo.transpose();
    Rng rng = make_rng(rng_seed);
    int d = static_cast<int>(flow.dim());

    Vec g = Vec::Zero(d);
    for (long i = 0; i < n_probes; ++i) {
        Vec z = rademacher_vector(rng, parts.latent.d_O());
        Vec w = gmres(pj.j_oo.transpose(), z, adj).x;  // (J^OO)^{-T} z
        g += flow.grad_bilinear_x(tr, scatter(w, parts.data.observed, d),
                                  scatter(z, parts.latent.observed, d));
    }
    return g / static_cast<double>(n_probes);
}

Vec clade_grad(const Flow& flow, const Vec& x, const PartitionPair& parts, long n_probes,
               std::uint64_t rng_seed, const GmresConfig& gmres_cfg, double trunc_tol) {
    if (n_probes < 1) throw InvalidParams("clade_grad: n_probes >= 1");
    ForwardTrace tr = flow.forward_trace(x);
    PartitionedJacobian pj = partitioned_jacobian(flow, x, parts, trunc_tol);
    GmresConfig adj = gmres_cfg;
    adj.preconditioner.reset();
    Rng rng = make_rng(rng_seed);
    int d = static_cast<int>(flow.dim());

    Vec g = Vec::Zero(d);
    for (long i = 0; i < n_probes; ++i) {
        // One probe estimates the combined trace Tr[(S - J) G(y)] with S the
        // scattered (G^HH)^{-1}, split into its H and O diagonal blocks:
        // t = h^T (S - J) G h - o^T J G o. The cross-block terms are odd in
        // one sub-probe, hence zero mean and uncorrelated with the kept even
        // terms, so dropping them strictly lowers the variance.
        Vec z = rademacher_vector(rng, d);
        Vec z_H = gather(z, parts.data.hidden);
        Vec h = scatter(z_H, parts.data.hidden, d);
        Vec o = z - h;
        Vec w1 = gmres(pj.g_hh.transpose(), z_H, adj).x;  // (G^HH)^{-T} z_H
        Vec u = scatter(w1, parts.latent.hidden, d) - flow.vjp(tr, h);
        g -= flow.grad_bilinear_x(tr, flow.inv_vjp(tr, u, trunc_tol),
                                  flow.inv_jvp(tr, h, trunc_tol));
        // J^{-T} J^T o = o collapses the left factor of the O-block term
        g += flow.grad_bilinear_x(tr, o, flow.inv_jvp(tr, o, trunc_tol));
    }
    return g / static_cast<double>(n_probes);
}

Vec lad_grad_exact(const Flow& flow, const Vec& x, const PartitionPair& parts) {
    ForwardTrace tr = flow.forward_trace(x);
    Mat joo = dense_sub_jacobian(flow, x, parts.data.observed, parts.latent.observed);
    Mat joo_inv = joo.partialPivLu().inverse();
    int d = static_cast<int>(flow.dim());
    int d_O = parts.latent.d_O();

    Vec g = Vec::Zero(d);
    for (int k = 0; k < d_O; ++k) {
        Vec w = joo_inv.row(k).transpose();  // (J^OO)^{-T} e_k
        Vec e = Vec::Zero(d_O);
        e[k] = 1.0;
        g += flow.grad_bilinear_x(tr, scatter(w, parts.data.observed, d),
                                  scatter(e, parts.latent.observed, d));
    }
    return g;
}

Vec lad_grad(LadEstimator which, const Flow& flow, const Vec& x, const PartitionPair& parts,
             long n_probes, std::uint64_t rng_seed, const GmresConfig& gmres_cfg,
             double trunc_tol) {
    switch (which) {
        case LadEstimator::Nlade:
            return nlade_grad(flow, x, parts, n_probes, rng_seed, gmres_cfg, trunc_tol);
        case LadEstimator::Clade:
            return clade_grad(flow, x, parts, n_probes, rng_seed, gmres_cfg, trunc_tol);
        case LadEstimator::Exact: return lad_grad_exact(flow, x, parts);
    }
    throw InvalidParams("lad_grad: unknown estimator");
}

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : m_(Vec::Zero(n)), v_(Vec::Zero(n)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

Vec Adam::step(const Vec& grad) {
    if (grad.size() != m_.size()) throw DimensionMismatch("Adam: gradient size mismatch");
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    Vec mhat = m_ / c1;
    Vec vhat = v_ / c2;
    return lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
}

std::optional<ElboSampleGrad> elbo_sample_grad(const Flow& flow,
                                               const VariationalPosterior& q, const Vec& eps,
                                               const Vec& y_O, const PartitionPair& parts,
                                               const FitConfig& cfg,
                                               std::uint64_t probe_seed) {
    Vec x_H = q.sample_path(eps);
    ElboSampleGrad out;
    try {
        out.solve = solve_constraint(flow, y_O, x_H, parts, cfg.fp_cfg, cfg.nk_cfg);
        out.x_full = assemble(parts.latent, out.solve.x_O, x_H);
        out.g_lad = lad_grad(cfg.estimator, flow, out.x_full, parts, cfg.n_probes,
                             probe_seed, cfg.grad_gmres, cfg.trunc_tol);

        // Implicit sensitivity through the solved observed block. With
        // c_O = -xbar^O (prior cotangent), the shared adjoint solve is
        // a = (J^OO)^{-T} (g_lad^O - c_O).
        PartitionedJacobian pj = partitioned_jacobian(flow, out.x_full, parts, cfg.trunc_tol);
        GmresConfig adj = cfg.grad_gmres;
        adj.preconditioner = pj.g_oo.transpose();
        Vec rhs = gather(out.g_lad, parts.latent.observed) + out.solve.x_O;
        out.a_data_O = gmres(pj.j_oo.transpose(), rhs, adj).x;
        out.dL_dxH =
            -x_H - gather(out.g_lad, parts.latent.hidden) + pj.j_oh.adjoint(out.a_data_O);

        out.elbo = Flow::base_log_density(x_H) + q.entropy() +
                   Flow::base_log_density(out.solve.x_O) -
                   dense_lad_joo(flow, out.x_full, parts);
        if (!out.dL_dxH.allFinite()) return std::nullopt;
        return out;
    } catch (const NoConvergence&) {
        return std::nullopt;
    } catch (const SingularSubJacobian&) {
        return std::nullopt;
    }
}

namespace {

Eigen::Index packed_size(const VariationalPosterior& q) {
    Eigen::Index n = 2 * q.dim();
    for (const auto& r : q.reflectors) n += r.size();
    return n;
}

Vec pack_grads(const PosteriorGrads& g) {
    Eigen::Index n = 2 * g.mu.size();
    for (const auto& r : g.reflectors) n += r.size();
    Vec out(n);
    Eigen::Index at = 0;
    out.segment(at, g.mu.size()) = g.mu;
    at += g.mu.size();
    out.segment(at, g.log_sigma.size()) = g.log_sigma;
    at += g.log_sigma.size();
    for (const auto& r : g.reflectors) {
        out.segment(at, r.size()) = r;
        at += r.size();
    }
    return out;
}

void apply_update(VariationalPosterior& q, const Vec& update) {
    Eigen::Index at = 0;
    q.mu += update.segment(at, q.dim());
    at += q.dim();
    q.log_sigma += update.segment(at, q.dim());
    at += q.dim();
    for (auto& r : q.reflectors) {
        r += update.segment(at, r.size());
        at += r.size();
    }
}

}  // namespace

ConditioningReport fit_conditional(const Flow& flow, const Vec& y_O,
                                   const Partition& data_partition, const FitConfig& cfg) {
    if (cfg.steps < 1 || cfg.batch < 1) throw InvalidParams("fit_conditional: steps, batch >= 1");
    if (y_O.size() != data_partition.d_O())
        throw DimensionMismatch("fit_conditional: observation size mismatch");
    auto t0 = std::chrono::steady_clock::now();

    // Pull back a filled observation to seed both the latent partition choice
    // and the posterior mean.
    int d = data_partition.dim;
    Vec y_fill = assemble(data_partition, y_O,
                          Vec::Constant(data_partition.d_H(), cfg.hidden_fill));
    Vec x_init = flow.inverse(y_fill);

    ConditioningReport report;
    report.partitions.data = data_partition;
    report.partitions.latent =
        cfg.greedy_partition
            ? select_latent_partition(flow, x_init, data_partition, cfg.greedy_budget)
            : data_partition;
    const PartitionPair& parts = report.partitions;

    VariationalPosterior q = VariationalPosterior::standard(
        parts.latent.d_H(), cfg.n_reflectors, derive_seed(cfg.seed, 0x5e));
    q.mu = gather(x_init, parts.latent.hidden);

    Adam opt(packed_size(q), cfg.lr);
    Rng rng = make_rng(derive_seed(cfg.seed, 0x11));

    for (long step = 0; step < cfg.steps; ++step) {
        if (cfg.lr_decay_tail > 0.0) {
            double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
            double scale = std::min(1.0, (1.0 - progress) / cfg.lr_decay_tail);
            opt.set_lr(cfg.lr * scale);
        }

        PosteriorGrads batch_g = zero_grads(q);
        StepRecord rec;
        rec.step = step;
        rec.entropy_term = q.entropy();
        long ok = 0;
        for (long b = 0; b < cfg.batch; ++b) {
            Vec eps = gaussian_vector(rng, q.dim());
            std::uint64_t probe_seed =
                derive_seed(cfg.seed, 0x700000 + static_cast<std::uint64_t>(step) * 1024 +
                                          static_cast<std::uint64_t>(b));
            auto sg = elbo_sample_grad(flow, q, eps, y_O, parts, cfg, probe_seed);
            ++report.n_solver_calls;
            if (!sg) {
                ++report.n_solver_failures;
                continue;
            }
            PosteriorGrads g = path_backward(q, eps, sg->dL_dxH);
            g.log_sigma.array() += 1.0;  // entropy term, d H / d log_sigma = 1
            batch_g += g;
            ++ok;
            rec.elbo += sg->elbo;
            rec.prior_term += Flow::base_log_density(q.sample_path(eps));
            rec.observed_prior_term += Flow::base_log_density(sg->solve.x_O);
            rec.lad_term += sg->elbo;  // adjusted below
            rec.solver_iters += static_cast<double>(sg->solve.iterations);
            rec.residual = std::max(rec.residual, sg->solve.residual);
            rec.solver_method = sg->solve.method;
        }
        if (ok == 0)
            throw NoConvergence("fit_conditional: entire batch failed to solve",
                                0.0, report.n_solver_failures);
        double okd = static_cast<double>(ok);
        batch_g *= 1.0 / okd;
        rec.elbo /= okd;
        rec.prior_term /= okd;
        rec.observed_prior_term /= okd;
        rec.lad_term =
            rec.lad_term / okd - rec.prior_term - rec.observed_prior_term - rec.entropy_term;
        rec.solver_iters /= okd;
        report.steps.push_back(rec);

        apply_update(q, opt.step(pack_grads(batch_g)));
        if (!q.mu.allFinite() || !q.log_sigma.allFinite())
            throw NonFinite("fit_conditional: posterior parameters diverged");
    }
    if (report.n_solver_failures >
        static_cast<long>(cfg.failure_abort_fraction *
                          static_cast<double>(report.n_solver_calls)))
        throw NoConvergence("fit_conditional: too many constraint solves failed", 0.0,
                            report.n_solver_failures);

    report.posterior = q;
    report.fit_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

ConditionalSamples conditional_sample(const Flow& flow, const VariationalPosterior& q,
                                      const Vec& y_O, const PartitionPair& parts, long n,
                                      std::uint64_t rng_seed, const FixedPointConfig& fp_cfg,
                                      const NewtonKrylovConfig& nk_cfg) {
    Rng rng = make_rng(rng_seed);
    ConditionalSamples out;
    for (long i = 0; i < n; ++i) {
        Vec eps = gaussian_vector(rng, q.dim());
        Vec x_H = q.sample_path(eps);
        try {
            SolveResult res = solve_constraint(flow, y_O, x_H, parts, fp_cfg, nk_cfg);
            // Observed slots come straight from the input, bit for bit.
            out.y.push_back(assemble(parts.data, y_O, res.y_H));
        } catch (const NoConvergence&) {
            ++out.n_failures;
        } catch (const SingularSubJacobian&) {
            ++out.n_failures;
        }
    }
    return out;
}

}  // namespace viscos
