#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "viscos/posterior.hpp"
#include "viscos/solvers.hpp"

namespace viscos {

// Quadrature table of the conditional density of the hidden data block given
// an observation, for 1-D or 2-D hidden blocks. Ground truth for tests.
struct GridOracle {
    std::vector<Vec> axes;  // node positions per hidden coordinate
    Mat log_joint;          // log p(y_O, y_H) at nodes; n0 x n1 (n1 = 1 when 1-D)
    double log_marginal = 0.0;  // log integral of the joint over the grid
    Partition data_partition;
    Vec y_O;

    int d_H() const { return static_cast<int>(axes.size()); }
    double log_conditional(Eigen::Index i, Eigen::Index j = 0) const;
    Vec conditional_mean() const;
    // Marginal CDF of hidden coordinate k under the conditional.
    double marginal_cdf(int k, double t) const;
    // Integral of the normalized conditional; should be 1 up to quadrature error.
    double total_mass_check() const;
    // Normalized conditional probability per node (trapezoid weights folded in).
    Mat node_probabilities() const;
};

// Trapezoid-rule oracle on [-scale, scale] per hidden coordinate. The grid is
// rebuilt at double resolution; if the marginal shifts by more than drift_tol
// the resolution is declared insufficient (GridTooCoarse).
GridOracle build_grid_oracle(const Flow& flow, const Vec& y_O,
                             const Partition& data_partition, long n_points = 512,
                             double scale = 6.0, double drift_tol = 1e-4);

// Exact conditional draws by rejection: push standard-normal latents through
// the flow and keep hits inside an inf-norm band around the observation.
// Throws AcceptanceTooLow when the empirical acceptance drops below min_rate.
std::vector<Vec> rejection_conditional_sample(const Flow& flow, const Vec& y_O,
                                              const Partition& data_partition, long n,
                                              double band, std::uint64_t seed,
                                              long max_draws = 10000000,
                                              double min_rate = 1e-6);

struct ImportanceResult {
    double log_marginal = 0.0;
    double std_error = 0.0;  // jackknife SE of the log-mean
    double ess = 0.0;        // effective sample size of the normalized weights
    long n_used = 0;
    long n_failed = 0;
};

// Importance estimate of log p(y^O) with the fitted posterior as proposal.
// The proposal density on the hidden data block is the pushforward of q
// through the constrained completion map. Throws DegenerateWeights when the
// effective sample size collapses.
ImportanceResult importance_log_marginal(const Flow& flow, const VariationalPosterior& q,
                                         const Vec& y_O, const PartitionPair& parts, long n,
                                         std::uint64_t seed, const FixedPointConfig& fp_cfg,
                                         const NewtonKrylovConfig& nk_cfg);

double rmse(const Vec& a, const Vec& b);
// One-sample Kolmogorov-Smirnov statistic against a reference CDF.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);
double ks_two_sample(std::vector<double> a, std::vector<double> b);
// Total variation distance between two probability vectors on a shared grid.
double tv_on_grid(const Vec& p, const Vec& q);

}  // namespace viscos
