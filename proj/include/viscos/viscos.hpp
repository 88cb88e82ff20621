#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "viscos/posterior.hpp"
#include "viscos/solvers.hpp"

namespace viscos {

// Four-term partitioned joint log-density at a latent point.
struct JointLogPdf {
    double log_p0_xH = 0.0;
    double log_det_GHH = 0.0;
    double log_p0_xO = 0.0;
    double log_det_JOO = 0.0;
    double value() const { return log_p0_xH + log_det_GHH + log_p0_xO - log_det_JOO; }
};

JointLogPdf partitioned_joint_logpdf(const Flow& flow, const Vec& x_O, const Vec& x_H,
                                     const PartitionPair& parts);

// Dense log|det J^OO| at a full latent point (desk-scale).
double dense_lad_joo(const Flow& flow, const Vec& x, const PartitionPair& parts);

struct ElboEstimate {
    double value = 0.0;
    long n_samples = 0;
    long n_skipped = 0;
    // breakdown; value == sum of the four terms
    double prior_term = 0.0;           // E[log p0(x^H)]
    double entropy_term = 0.0;         // H[q], closed form
    double observed_prior_term = 0.0;  // E[log p0(xbar^O)]
    double lad_term = 0.0;             // E[-log|det J^OO|]
};

ElboEstimate elbo_estimate(const Flow& flow, const VariationalPosterior& q, const Vec& y_O,
                           const PartitionPair& parts, long n_samples,
                           std::uint64_t rng_seed, const FixedPointConfig& fp_cfg,
                           const NewtonKrylovConfig& nk_cfg);

// Sensitivity of the solved observed block: v -> -(J^OO)^{-1} (J^OH v).
LinearOperator implicit_grad_xO(const Flow& flow, const Vec& x, const PartitionPair& parts,
                                const GmresConfig& gmres_cfg,
                                bool precondition_with_goo = true,
                                double trunc_tol = 1e-10);

enum class LadEstimator { Nlade, Clade, Exact };

// Stochastic estimators of grad_x log|det J^OO(x)| (full latent gradient).
Vec nlade_grad(const Flow& flow, const Vec& x, const PartitionPair& parts, long n_probes,
               std::uint64_t rng_seed, const GmresConfig& gmres_cfg,
               double trunc_tol = 1e-10);
Vec clade_grad(const Flow& flow, const Vec& x, const PartitionPair& parts, long n_probes,
               std::uint64_t rng_seed, const GmresConfig& gmres_cfg,
               double trunc_tol = 1e-10);
// Deterministic reference: basis-probe trace with a dense (J^OO)^{-T}.
Vec lad_grad_exact(const Flow& flow, const Vec& x, const PartitionPair& parts);

Vec lad_grad(LadEstimator which, const Flow& flow, const Vec& x, const PartitionPair& parts,
             long n_probes, std::uint64_t rng_seed, const GmresConfig& gmres_cfg,
             double trunc_tol = 1e-10);

// Adaptive per-coordinate first-order optimizer with moment estimates.
class Adam {
  public:
    explicit Adam(Eigen::Index n, double lr = 1e-2, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);
    // Ascent step: params += update(grad).
    Vec step(const Vec& grad);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

  private:
    Vec m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

struct FitConfig {
    long steps = 500;
    long batch = 8;
    double lr = 1e-2;
    // Linearly decay the learning rate to zero over the final fraction of the
    // run; 0 disables.
    double lr_decay_tail = 0.5;
    long n_reflectors = 50;
    LadEstimator estimator = LadEstimator::Nlade;
    long n_probes = 1;
    std::uint64_t seed = 0;
    bool greedy_partition = false;  // false: latent partition aligned with mask
    long greedy_budget = 8;
    double hidden_fill = 0.0;  // fill for hidden slots when initializing mu
    FixedPointConfig fp_cfg{};
    NewtonKrylovConfig nk_cfg{};
    GmresConfig grad_gmres{1e-10, 400, std::nullopt, std::nullopt};
    double trunc_tol = 1e-10;
    double failure_abort_fraction = 0.2;
};

struct StepRecord {
    long step = 0;
    double elbo = 0.0;
    double prior_term = 0.0;
    double entropy_term = 0.0;
    double observed_prior_term = 0.0;
    double lad_term = 0.0;
    double solver_iters = 0.0;  // mean over the batch
    SolveMethod solver_method = SolveMethod::FixedPoint;
    double residual = 0.0;  // max over the batch
};

struct ConditioningReport {
    std::vector<StepRecord> steps;
    VariationalPosterior posterior;
    PartitionPair partitions;
    long n_solver_failures = 0;
    long n_solver_calls = 0;
    double fit_seconds = 0.0;
};

// Cotangent of the per-sample ELBO integrand w.r.t. the hidden latent draw,
// plus bookkeeping shared between the per-item fit and incomplete training.
struct ElboSampleGrad {
    Vec dL_dxH;
    Vec x_full;       // assembled latent point (xbar^O, x^H)
    Vec a_data_O;     // (J^OO)^{-T}(g_lad^O - c_O), reusable for flow grads
    Vec g_lad;        // LAD gradient estimate used (full latent length)
    double elbo = 0.0;
    SolveResult solve;
};

std::optional<ElboSampleGrad> elbo_sample_grad(const Flow& flow,
                                               const VariationalPosterior& q, const Vec& eps,
                                               const Vec& y_O, const PartitionPair& parts,
                                               const FitConfig& cfg,
                                               std::uint64_t probe_seed);

// Algorithm-2-style variational fit of the conditional posterior.
ConditioningReport fit_conditional(const Flow& flow, const Vec& y_O,
                                   const Partition& data_partition, const FitConfig& cfg);

struct ConditionalSamples {
    std::vector<Vec> y;  // completed vectors, observed slots copied bit-exactly
    long n_failures = 0;
};

ConditionalSamples conditional_sample(const Flow& flow, const VariationalPosterior& q,
                                      const Vec& y_O, const PartitionPair& parts, long n,
                                      std::uint64_t rng_seed, const FixedPointConfig& fp_cfg,
                                      const NewtonKrylovConfig& nk_cfg);

}  // namespace viscos
