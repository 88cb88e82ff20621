#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "viscos/posterior.hpp"

using namespace viscos;

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

TEST_CASE("standard posterior is standard normal") {
    VariationalPosterior q = VariationalPosterior::standard(3, 4, 7);
    CHECK(q.mu.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(q.log_sigma.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(q.reflectors.size() == 4);
    // the orthogonal factor cannot change a spherical covariance
    CHECK((q.dense_covariance() - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(q.kl_to_standard_normal() == doctest::Approx(0.0).epsilon(1e-14));
    // entropy of N(0, I_3): 3/2 (log 2 pi + 1)
    CHECK(q.entropy() == doctest::Approx(1.5 * (kLog2Pi + 1.0)).epsilon(1e-14));
}

TEST_CASE("log density matches the dense covariance gaussian") {
    Rng rng = make_rng(11);
    VariationalPosterior q = VariationalPosterior::standard(4, 6, 12);
    q.mu = gaussian_vector(rng, 4);
    q.log_sigma = 0.3 * gaussian_vector(rng, 4);

    Mat cov = q.dense_covariance();
    for (int t = 0; t < 5; ++t) {
        Vec x = q.mu + gaussian_vector(rng, 4);
        double ref = -0.5 * 4 * kLog2Pi - 0.5 * dense_logabsdet(cov) * 1.0 -
                     0.5 * (x - q.mu).dot(cov.inverse() * (x - q.mu));
        // |det cov| has positive determinant so logabsdet is the log det
        CHECK(q.log_density(x) == doctest::Approx(ref).epsilon(1e-9));
    }
}

TEST_CASE("sampling path matches mean and covariance empirically") {
    Rng rng = make_rng(21);
    VariationalPosterior q = VariationalPosterior::standard(3, 5, 22);
    q.mu = gaussian_vector(rng, 3);
    q.log_sigma = 0.4 * gaussian_vector(rng, 3);

    long n = 200000;
    auto samples = posterior_sample(q, n, 23);
    Vec mean = Vec::Zero(3);
    for (const auto& s : samples) mean += s.x;
    mean /= static_cast<double>(n);
    CHECK((mean - q.mu).lpNorm<Eigen::Infinity>() < 0.02);

    Mat cov = Mat::Zero(3, 3);
    for (const auto& s : samples) cov += (s.x - q.mu) * (s.x - q.mu).transpose();
    cov /= static_cast<double>(n);
    CHECK((cov - q.dense_covariance()).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("entropy equals minus expected log density") {
    Rng rng = make_rng(31);
    VariationalPosterior q = VariationalPosterior::standard(3, 3, 32);
    q.mu = gaussian_vector(rng, 3);
    q.log_sigma = 0.5 * gaussian_vector(rng, 3);
    long n = 50000;
    double acc = 0.0;
    for (const auto& s : posterior_sample(q, n, 33)) acc -= q.log_density(s.x);
    acc /= static_cast<double>(n);
    CHECK(acc == doctest::Approx(q.entropy()).epsilon(0.02));
}

TEST_CASE("kl to standard normal closed form vs monte carlo") {
    Rng rng = make_rng(41);
    VariationalPosterior q = VariationalPosterior::standard(2, 4, 42);
    q.mu = gaussian_vector(rng, 2);
    q.log_sigma = 0.3 * gaussian_vector(rng, 2);
    long n = 100000;
    double acc = 0.0;
    for (const auto& s : posterior_sample(q, n, 43))
        acc += q.log_density(s.x) -
               (-0.5 * 2 * kLog2Pi - 0.5 * s.x.squaredNorm());
    acc /= static_cast<double>(n);
    CHECK(acc == doctest::Approx(q.kl_to_standard_normal()).epsilon(0.05));
}

TEST_CASE("pathwise gradients match finite differences") {
    Rng rng = make_rng(51);
    VariationalPosterior q = VariationalPosterior::standard(3, 4, 52);
    q.mu = gaussian_vector(rng, 3);
    q.log_sigma = 0.2 * gaussian_vector(rng, 3);
    Vec eps = gaussian_vector(rng, 3);
    Vec c = gaussian_vector(rng, 3);  // loss L = c . sample_path(eps)

    PosteriorGrads g = path_backward(q, eps, c);

    double h = 1e-6;
    auto loss = [&](const VariationalPosterior& qq) { return c.dot(qq.sample_path(eps)); };
    for (Eigen::Index i = 0; i < 3; ++i) {
        VariationalPosterior qp = q, qm = q;
        qp.mu[i] += h;
        qm.mu[i] -= h;
        CHECK(g.mu[i] == doctest::Approx((loss(qp) - loss(qm)) / (2 * h)).epsilon(1e-6));
        qp = q;
        qm = q;
        qp.log_sigma[i] += h;
        qm.log_sigma[i] -= h;
        CHECK(g.log_sigma[i] ==
              doctest::Approx((loss(qp) - loss(qm)) / (2 * h)).epsilon(1e-5));
    }
    for (std::size_t r = 0; r < q.reflectors.size(); ++r)
        for (Eigen::Index i = 0; i < 3; ++i) {
            VariationalPosterior qp = q, qm = q;
            qp.reflectors[r][i] += h;
            qm.reflectors[r][i] -= h;
            CHECK(g.reflectors[r][i] ==
                  doctest::Approx((loss(qp) - loss(qm)) / (2 * h)).epsilon(1e-4));
        }
}

TEST_CASE("grad containers combine linearly") {
    VariationalPosterior q = VariationalPosterior::standard(2, 2, 61);
    PosteriorGrads a = zero_grads(q);
    a.mu << 1.0, 2.0;
    PosteriorGrads b = zero_grads(q);
    b.mu << 3.0, -1.0;
    a += b;
    a *= 0.5;
    CHECK(a.mu[0] == doctest::Approx(2.0));
    CHECK(a.mu[1] == doctest::Approx(0.5));
}

TEST_CASE("json round trip") {
    Rng rng = make_rng(71);
    VariationalPosterior q = VariationalPosterior::standard(3, 2, 72);
    q.mu = gaussian_vector(rng, 3);
    q.log_sigma = gaussian_vector(rng, 3);
    VariationalPosterior copy = VariationalPosterior::from_json(q.to_json());
    CHECK((copy.mu - q.mu).lpNorm<Eigen::Infinity>() < 1e-15);
    CHECK((copy.log_sigma - q.log_sigma).lpNorm<Eigen::Infinity>() < 1e-15);
    REQUIRE(copy.reflectors.size() == q.reflectors.size());
    for (std::size_t i = 0; i < q.reflectors.size(); ++i)
        CHECK((copy.reflectors[i] - q.reflectors[i]).lpNorm<Eigen::Infinity>() < 1e-15);

    std::string path = "test_posterior_roundtrip.json";
    q.save(path);
    VariationalPosterior loaded = VariationalPosterior::load(path);
    Vec eps = gaussian_vector(rng, 3);
    CHECK((loaded.sample_path(eps) - q.sample_path(eps)).lpNorm<Eigen::Infinity>() < 1e-15);
    std::remove(path.c_str());
}

TEST_CASE("dimension mismatches are rejected") {
    VariationalPosterior q = VariationalPosterior::standard(3, 1, 81);
    CHECK_THROWS_AS(q.sample_path(Vec(Vec::Zero(2))), DimensionMismatch);
    CHECK_THROWS_AS(q.log_density(Vec(Vec::Zero(4))), DimensionMismatch);
}
