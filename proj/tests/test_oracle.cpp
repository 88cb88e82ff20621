#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "viscos/oracle.hpp"

using namespace viscos;

namespace {

double std_normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("grid oracle on the identity flow reproduces the standard normal") {
    Flow flow = Flow::identity(2, 1, 4);
    Partition part = aligned_partition(1, 2);
    Vec y_O(1);
    y_O << 0.8;
    GridOracle oracle = build_grid_oracle(flow, y_O, part, 256, 8.0);

    // conditional of an independent coordinate: N(0,1)
    CHECK(std::abs(oracle.total_mass_check() - 1.0) < 1e-8);
    CHECK(oracle.conditional_mean()[0] == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(oracle.marginal_cdf(0, 0.0) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(oracle.marginal_cdf(0, 1.0) ==
          doctest::Approx(0.8413447460685429).epsilon(1e-4));
    CHECK(oracle.marginal_cdf(0, -20.0) == 0.0);
    CHECK(oracle.marginal_cdf(0, 20.0) == 1.0);
    // marginal equals log p0(y_O)
    CHECK(oracle.log_marginal ==
          doctest::Approx(-0.5 * 1.8378770664093454836 - 0.5 * 0.8 * 0.8).epsilon(1e-8));
}

TEST_CASE("grid oracle handles a 2d hidden block") {
    Flow flow = Flow::identity(3, 1, 4);
    Partition part = aligned_partition(1, 3);
    Vec y_O(1);
    y_O << -0.3;
    GridOracle oracle = build_grid_oracle(flow, y_O, part, 64, 7.0);
    CHECK(std::abs(oracle.total_mass_check() - 1.0) < 1e-6);
    CHECK(oracle.marginal_cdf(0, 0.0) == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(oracle.marginal_cdf(1, 1.0) == doctest::Approx(std_normal_cdf(1.0)).epsilon(1e-3));
}

TEST_CASE("grid oracle input validation") {
    Flow flow = Flow::identity(5, 1, 4);
    CHECK_THROWS_AS(build_grid_oracle(flow, Vec(Vec::Zero(2)), aligned_partition(2, 5)),
                    InvalidParams);  // 3-D hidden block
    Flow small = Flow::identity(2, 1, 4);
    CHECK_THROWS_AS(
        build_grid_oracle(small, Vec(Vec::Zero(1)), aligned_partition(1, 2), 16, 8.0, 0.0),
        GridTooCoarse);
}

TEST_CASE("rejection sampler recovers the conditional mean") {
    Flow flow = Flow::random(2, 3, 16, 0.7, 611);
    Partition part = aligned_partition(1, 2);
    Vec y_O(1);
    y_O << 0.2;
    GridOracle oracle = build_grid_oracle(flow, y_O, part, 256, 8.0);

    auto hits = rejection_conditional_sample(flow, y_O, part, 4000, 0.05, 612);
    CHECK(hits.size() == 4000);
    double mean = 0.0;
    for (const auto& h : hits) mean += h[0];
    mean /= 4000.0;
    CHECK(mean == doctest::Approx(oracle.conditional_mean()[0]).epsilon(0.15));

    std::vector<double> coord;
    for (const auto& h : hits) coord.push_back(h[0]);
    double ks = ks_statistic(coord, [&](double t) { return oracle.marginal_cdf(0, t); });
    CHECK(ks < 0.08);  // band bias plus sampling noise
}

TEST_CASE("rejection sampler throws when the band never hits") {
    Flow flow = Flow::identity(2, 1, 4);
    Vec y_O(1);
    y_O << 30.0;  // far outside any base draw
    CHECK_THROWS_AS(
        rejection_conditional_sample(flow, y_O, aligned_partition(1, 2), 10, 1e-4, 613,
                                     2000000),
        AcceptanceTooLow);
}

TEST_CASE("importance marginal is exact for the identity flow with matched proposal") {
    Flow flow = Flow::identity(3, 1, 4);
    PartitionPair parts = aligned_pair(aligned_partition(1, 3));
    Vec y_O(1);
    y_O << 0.6;
    VariationalPosterior q = VariationalPosterior::standard(2, 0, 621);
    ImportanceResult res = importance_log_marginal(flow, q, y_O, parts, 200, 622,
                                                   FixedPointConfig{}, NewtonKrylovConfig{});
    // every weight equals p0(y_O): zero variance
    CHECK(res.log_marginal == doctest::Approx(Flow::base_log_density(y_O)).epsilon(1e-8));
    CHECK(res.std_error < 1e-8);
    CHECK(res.ess == doctest::Approx(200.0).epsilon(1e-6));
    CHECK(res.n_failed == 0);
}

TEST_CASE("importance marginal flags degenerate weights") {
    Flow flow = Flow::identity(3, 1, 4);
    PartitionPair parts = aligned_pair(aligned_partition(1, 3));
    Vec y_O(1);
    y_O << 0.0;
    // grossly overdispersed proposal concentrates the weight on few draws
    VariationalPosterior q = VariationalPosterior::standard(2, 0, 631);
    q.log_sigma = Vec::Constant(2, std::log(40.0));
    CHECK_THROWS_AS(importance_log_marginal(flow, q, y_O, parts, 60, 632, FixedPointConfig{},
                                            NewtonKrylovConfig{}),
                    DegenerateWeights);
}

TEST_CASE("importance marginal on a nontrivial flow matches the grid oracle") {
    Flow flow = Flow::random(2, 3, 16, 0.7, 641);
    Partition part = aligned_partition(1, 2);
    PartitionPair parts = aligned_pair(part);
    Vec y_O(1);
    y_O << 0.1;
    GridOracle oracle = build_grid_oracle(flow, y_O, part, 256, 8.0);

    VariationalPosterior q = VariationalPosterior::standard(1, 0, 642);
    ImportanceResult res = importance_log_marginal(flow, q, y_O, parts, 2000, 643,
                                                   FixedPointConfig{}, NewtonKrylovConfig{});
    CHECK(std::abs(res.log_marginal - oracle.log_marginal) < 3.0 * res.std_error + 0.02);
}

TEST_CASE("metric oracles hand checked") {
    Vec a(2), b(2);
    a << 0.0, 3.0;
    b << 4.0, 3.0;
    CHECK(rmse(a, b) == doctest::Approx(std::sqrt(8.0)));  // sqrt((16+0)/2)

    std::vector<double> u = {0.2, 0.4, 0.6, 0.8};
    double ks = ks_statistic(u, [](double t) { return t; });  // against U(0,1)
    CHECK(ks == doctest::Approx(0.2).epsilon(1e-12));

    std::vector<double> same = {1.0, 2.0, 3.0};
    CHECK(ks_two_sample(same, same) == doctest::Approx(0.0));
    CHECK(ks_two_sample({0.0, 1.0}, {10.0, 11.0}) == doctest::Approx(1.0));

    Vec p(2), qv(2);
    p << 0.5, 0.5;
    qv << 1.0, 0.0;
    CHECK(tv_on_grid(p, qv) == doctest::Approx(0.5));
}

TEST_CASE("ks statistic detects a shifted sample") {
    Rng rng = make_rng(651);
    std::vector<double> shifted;
    for (int i = 0; i < 3000; ++i) shifted.push_back(gaussian_vector(rng, 1)[0] + 1.0);
    double ks = ks_statistic(shifted, std_normal_cdf);
    CHECK(ks > 0.3);

    std::vector<double> centered;
    for (int i = 0; i < 3000; ++i) centered.push_back(gaussian_vector(rng, 1)[0]);
    CHECK(ks_statistic(centered, std_normal_cdf) < 0.04);
}
