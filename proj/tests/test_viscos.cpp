#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "viscos/viscos.hpp"

using namespace viscos;

TEST_CASE("partitioned joint log density sums to the plain change of variables") {
    Flow flow = Flow::random(5, 3, 16, 0.85, 401);
    Rng rng = make_rng(402);
    PartitionPair parts;
    parts.data = make_partition({0, 2}, 5);
    parts.latent = make_partition({1, 3}, 5);
    for (int t = 0; t < 5; ++t) {
        Vec x = gaussian_vector(rng, 5);
        Vec x_O = gather(x, parts.latent.observed);
        Vec x_H = gather(x, parts.latent.hidden);
        JointLogPdf lp = partitioned_joint_logpdf(flow, x_O, x_H, parts);
        double plain = Flow::base_log_density(x) - dense_logabsdet(flow.dense_jacobian(x));
        CHECK(lp.value() == doctest::Approx(plain).epsilon(1e-9));
        // the two volume terms reproduce the full determinant
        CHECK(lp.log_det_JOO - lp.log_det_GHH ==
              doctest::Approx(dense_logabsdet(flow.dense_jacobian(x))).epsilon(1e-9));
    }
}

TEST_CASE("partitioned joint log density on the identity flow") {
    Flow flow = Flow::identity(4, 2, 8);
    PartitionPair parts = aligned_pair(aligned_partition(2, 4));
    Vec x_O(2), x_H(2);
    x_O << 0.5, -1.0;
    x_H << 2.0, 0.0;
    JointLogPdf lp = partitioned_joint_logpdf(flow, x_O, x_H, parts);
    CHECK(lp.log_det_GHH == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lp.log_det_JOO == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lp.value() ==
          doctest::Approx(Flow::base_log_density(x_O) + Flow::base_log_density(x_H))
              .epsilon(1e-12));
}

TEST_CASE("elbo estimate breakdown sums to the value") {
    Flow flow = Flow::random(4, 3, 12, 0.7, 411);
    Rng rng = make_rng(412);
    PartitionPair parts = aligned_pair(aligned_partition(2, 4));
    Vec y_O = gather(flow.forward(gaussian_vector(rng, 4)), parts.data.observed);
    VariationalPosterior q = VariationalPosterior::standard(2, 2, 413);

    ElboEstimate est = elbo_estimate(flow, q, y_O, parts, 50, 414, FixedPointConfig{},
                                     NewtonKrylovConfig{});
    CHECK(est.n_samples + est.n_skipped == 50);
    CHECK(est.value ==
          doctest::Approx(est.prior_term + est.entropy_term + est.observed_prior_term +
                          est.lad_term)
              .epsilon(1e-12));
    CHECK(std::isfinite(est.value));
}

TEST_CASE("elbo never exceeds the true conditional evidence") {
    // identity flow: log p(y_O) is available in closed form and the bound
    // must sit below it for any posterior
    Flow flow = Flow::identity(3, 2, 8);
    PartitionPair parts = aligned_pair(aligned_partition(2, 3));
    Vec y_O(2);
    y_O << 0.4, -0.9;
    double evidence = Flow::base_log_density(y_O);

    Rng rng = make_rng(421);
    for (int t = 0; t < 3; ++t) {
        VariationalPosterior q = VariationalPosterior::standard(1, 1, 422 + t);
        q.mu = 0.5 * gaussian_vector(rng, 1);
        q.log_sigma = 0.3 * gaussian_vector(rng, 1);
        ElboEstimate est = elbo_estimate(flow, q, y_O, parts, 4000, 430 + t,
                                         FixedPointConfig{}, NewtonKrylovConfig{});
        CHECK(est.value <= evidence + 0.05);  // MC slack
    }
}

TEST_CASE("conditional samples pin the observed slots bit exactly") {
    Flow flow = Flow::random(4, 3, 12, 0.7, 441);
    Rng rng = make_rng(442);
    PartitionPair parts = aligned_pair(make_partition({1, 3}, 4));
    Vec y_O = gather(flow.forward(gaussian_vector(rng, 4)), parts.data.observed);
    VariationalPosterior q = VariationalPosterior::standard(2, 2, 443);

    ConditionalSamples cs = conditional_sample(flow, q, y_O, parts, 20, 444,
                                               FixedPointConfig{}, NewtonKrylovConfig{});
    CHECK(cs.y.size() + static_cast<std::size_t>(cs.n_failures) == 20);
    for (const auto& y : cs.y) {
        CHECK(y[1] == y_O[0]);  // bitwise
        CHECK(y[3] == y_O[1]);
        // completion satisfies the constraint
        Vec x = flow.inverse(y, 1e-10);
        CHECK((gather(flow.forward(x), parts.data.observed) - y_O).lpNorm<Eigen::Infinity>() <
              1e-3);
    }
}

TEST_CASE("conditional fit improves the bound and respects the config") {
    Flow flow = Flow::random(3, 3, 12, 0.7, 451);
    Rng rng = make_rng(452);
    Partition data = aligned_partition(2, 3);
    Vec y_O = gather(flow.forward(gaussian_vector(rng, 3)), data.observed);

    FitConfig cfg;
    cfg.steps = 60;
    cfg.batch = 8;
    cfg.n_reflectors = 4;
    cfg.estimator = LadEstimator::Exact;
    cfg.seed = 453;
    ConditioningReport report = fit_conditional(flow, y_O, data, cfg);
    REQUIRE(report.steps.size() == 60);
    CHECK(report.posterior.dim() == 1);
    CHECK(report.posterior.reflectors.size() == 4);
    CHECK(report.n_solver_calls == 60 * 8);

    double early = 0.0, late = 0.0;
    for (int i = 0; i < 10; ++i) early += report.steps[static_cast<std::size_t>(i)].elbo;
    for (int i = 50; i < 60; ++i) late += report.steps[static_cast<std::size_t>(i)].elbo;
    CHECK(late >= early - 0.5);  // no collapse; usually strictly better

    for (const auto& s : report.steps)
        CHECK(s.elbo == doctest::Approx(s.prior_term + s.entropy_term +
                                        s.observed_prior_term + s.lad_term)
                            .epsilon(1e-9));
}

TEST_CASE("identity flow fit recovers the exact posterior") {
    Flow flow = Flow::identity(3, 2, 8);
    Partition data = aligned_partition(2, 3);
    Vec y_O(2);
    y_O << 0.7, -0.2;

    FitConfig cfg;
    cfg.steps = 300;
    cfg.batch = 16;
    cfg.n_reflectors = 0;
    cfg.estimator = LadEstimator::Exact;
    cfg.lr = 0.05;
    cfg.seed = 461;
    ConditioningReport report = fit_conditional(flow, y_O, data, cfg);
    // hidden coordinate is independent of the observation: posterior is N(0,1)
    CHECK(report.posterior.mu.lpNorm<Eigen::Infinity>() < 0.1);
    CHECK(report.posterior.log_sigma.lpNorm<Eigen::Infinity>() < 0.1);
    CHECK(report.posterior.kl_to_standard_normal() < 0.02);
}

TEST_CASE("greedy partition fit produces a usable latent split") {
    Flow flow = Flow::random(4, 3, 12, 0.7, 471);
    Rng rng = make_rng(472);
    Partition data = make_partition({0, 3}, 4);
    Vec y_O = gather(flow.forward(gaussian_vector(rng, 4)), data.observed);

    FitConfig cfg;
    cfg.steps = 20;
    cfg.batch = 4;
    cfg.greedy_partition = true;
    cfg.estimator = LadEstimator::Exact;
    cfg.seed = 473;
    ConditioningReport report = fit_conditional(flow, y_O, data, cfg);
    CHECK(report.partitions.latent.d_O() == 2);
    CHECK(report.partitions.data.observed == data.observed);
}

TEST_CASE("config validation") {
    Flow flow = Flow::identity(3, 1, 4);
    Partition data = aligned_partition(1, 3);
    FitConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(fit_conditional(flow, Vec(Vec::Zero(1)), data, cfg), InvalidParams);
    cfg = FitConfig{};
    CHECK_THROWS_AS(fit_conditional(flow, Vec(Vec::Zero(2)), data, cfg), DimensionMismatch);
    CHECK_THROWS_AS(elbo_estimate(flow, VariationalPosterior::standard(2), Vec(Vec::Zero(1)),
                                  aligned_pair(data), 0, 1, FixedPointConfig{},
                                  NewtonKrylovConfig{}),
                    InvalidParams);
}
