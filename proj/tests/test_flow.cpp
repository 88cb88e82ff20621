#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "viscos/flow.hpp"

using namespace viscos;

TEST_CASE("activation values and derivatives") {
    CHECK(lipswish(0.0) == doctest::Approx(0.0));
    // z sigmoid(z) / 1.1 at z = 1: sigmoid(1) = 0.7310585786300049
    CHECK(lipswish(1.0) == doctest::Approx(0.7310585786300049 / 1.1).epsilon(1e-15));
    CHECK(lipswish_d1(0.0) == doctest::Approx(0.5 / 1.1).epsilon(1e-15));
    CHECK(lipswish_d2(0.0) == doctest::Approx(0.5 / 1.1).epsilon(1e-15));

    // central differences as an independent oracle
    for (double z : {-2.0, -0.3, 0.7, 1.9}) {
        double h = 1e-6;
        double d1 = (lipswish(z + h) - lipswish(z - h)) / (2 * h);
        double d2 = (lipswish_d1(z + h) - lipswish_d1(z - h)) / (2 * h);
        CHECK(lipswish_d1(z) == doctest::Approx(d1).epsilon(1e-8));
        CHECK(lipswish_d2(z) == doctest::Approx(d2).epsilon(1e-8));
    }
    // slope bound keeps each residual block contractive
    double max_slope = 0.0;
    for (double z = -10.0; z <= 10.0; z += 0.001)
        max_slope = std::max(max_slope, std::abs(lipswish_d1(z)));
    CHECK(max_slope < 1.0);
}

TEST_CASE("spectral norm estimate against SVD") {
    Rng rng = make_rng(5);
    Mat w = gaussian_matrix(rng, 7, 4);
    double svd = Eigen::JacobiSVD<Mat>(w).singularValues()[0];
    CHECK(spectral_norm_estimate(w, 200) == doctest::Approx(svd).epsilon(1e-8));

    Mat scaled = spectral_normalize_matrix(w, 0.6, 200);
    CHECK(Eigen::JacobiSVD<Mat>(scaled).singularValues()[0] <= 0.6 * (1 + 1e-8));
}

TEST_CASE("spectral normalization bounds the layer lipschitz estimate") {
    Flow flow = Flow::random(5, 4, 16, 0.8, 17);
    for (Eigen::Index l = 0; l < flow.n_layers(); ++l)
        CHECK(flow.layer_lipschitz_estimate(l) <= 0.8 * (1 + 1e-6));
}

TEST_CASE("identity flow is the identity with zero volume change") {
    Flow flow = Flow::identity(4, 3, 8);
    Rng rng = make_rng(23);
    Vec x = gaussian_vector(rng, 4);
    CHECK((flow.forward(x) - x).lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK(dense_logabsdet(flow.dense_jacobian(x)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(flow.log_density(x) == doctest::Approx(Flow::base_log_density(x)).epsilon(1e-10));
}

TEST_CASE("forward inverse round trip") {
    Flow flow = Flow::random(6, 5, 24, 0.9, 31);
    Rng rng = make_rng(32);
    for (int t = 0; t < 5; ++t) {
        Vec x = gaussian_vector(rng, 6);
        Vec y = flow.forward(x);
        Vec back = flow.inverse(y, 1e-12);
        CHECK((flow.forward(back) - y).lpNorm<Eigen::Infinity>() < 1e-12);
        CHECK((back - x).lpNorm<Eigen::Infinity>() < 1e-9);
    }
}

TEST_CASE("jvp and vjp against the finite difference jacobian") {
    Flow flow = Flow::random(4, 3, 12, 0.8, 41);
    Rng rng = make_rng(42);
    Vec x = gaussian_vector(rng, 4);
    Mat j_fd = finite_diff_jacobian([&](const Vec& p) { return flow.forward(p); }, x);
    Mat j_an = flow.dense_jacobian(x);
    CHECK((j_fd - j_an).cwiseAbs().maxCoeff() < 1e-7);

    Vec v = gaussian_vector(rng, 4);
    Vec u = gaussian_vector(rng, 4);
    CHECK((flow.jvp(x, v) - j_an * v).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((flow.vjp(x, u) - j_an.transpose() * u).lpNorm<Eigen::Infinity>() < 1e-12);
    // adjoint identity
    CHECK(u.dot(flow.jvp(x, v)) == doctest::Approx(flow.vjp(x, u).dot(v)).epsilon(1e-12));
}

TEST_CASE("neumann inverse products against dense inverse") {
    Flow flow = Flow::random(5, 4, 16, 0.8, 51);
    Rng rng = make_rng(52);
    Vec x = gaussian_vector(rng, 5);
    Mat j_inv = flow.dense_jacobian(x).inverse();
    Vec v = gaussian_vector(rng, 5);
    Vec u = gaussian_vector(rng, 5);
    CHECK((flow.inv_jvp(x, v, 1e-13) - j_inv * v).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((flow.inv_vjp(x, u, 1e-13) - j_inv.transpose() * u).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("log density matches change of variables with the dense determinant") {
    Flow flow = Flow::random(3, 4, 12, 0.8, 61);
    Rng rng = make_rng(62);
    Vec x = gaussian_vector(rng, 3);
    Vec y = flow.forward(x);
    double expected = Flow::base_log_density(x) - dense_logabsdet(flow.dense_jacobian(x));
    CHECK(flow.log_density(y) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("base log density closed form") {
    Vec x(2);
    x << 0.0, 0.0;
    // -d/2 log(2 pi)
    CHECK(Flow::base_log_density(x) == doctest::Approx(-1.8378770664093454836).epsilon(1e-15));
    x << 1.0, -2.0;
    CHECK(Flow::base_log_density(x) ==
          doctest::Approx(-1.8378770664093454836 - 2.5).epsilon(1e-14));
}

TEST_CASE("non finite input is rejected") {
    Flow flow = Flow::random(3, 2, 8, 0.8, 71);
    Vec x(3);
    x << 1.0, std::numeric_limits<double>::infinity(), 0.0;
    CHECK_THROWS_AS(flow.forward(x), NonFinite);
}

TEST_CASE("json round trip preserves behaviour") {
    Flow flow = Flow::random(4, 3, 16, 0.85, 81);
    Flow copy = Flow::from_json(flow.to_json());
    CHECK(copy.dim() == flow.dim());
    CHECK(copy.n_layers() == flow.n_layers());
    Rng rng = make_rng(82);
    for (int t = 0; t < 3; ++t) {
        Vec x = gaussian_vector(rng, 4);
        CHECK((copy.forward(x) - flow.forward(x)).lpNorm<Eigen::Infinity>() < 1e-14);
    }
    for (Eigen::Index l = 0; l < flow.n_layers(); ++l) {
        CHECK(copy.layers()[l].lipschitz_bound == flow.layers()[l].lipschitz_bound);
        CHECK((copy.layers()[l].w1 - flow.layers()[l].w1).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("file persistence") {
    Flow flow = Flow::random(3, 2, 8, 0.8, 91);
    std::string path = "test_flow_roundtrip.json";
    flow.save(path);
    Flow loaded = Flow::load(path);
    Rng rng = make_rng(92);
    Vec x = gaussian_vector(rng, 3);
    CHECK((loaded.forward(x) - flow.forward(x)).lpNorm<Eigen::Infinity>() < 1e-14);
    std::remove(path.c_str());
}

TEST_CASE("malformed json is rejected") {
    CHECK_THROWS_AS(Flow::from_json("{\"version\":1}"), Error);
    CHECK_THROWS_AS(Flow::load("no_such_file_anywhere.json"), Error);
}

TEST_CASE("op counter tracks layer passes") {
    Flow flow = Flow::random(4, 3, 8, 0.8, 101);
    flow.reset_op_count();
    Rng rng = make_rng(102);
    Vec x = gaussian_vector(rng, 4);
    flow.forward(x);
    long long after_forward = flow.op_count();
    CHECK(after_forward >= 3);  // one pass per layer at least
    flow.inverse(flow.forward(x));
    CHECK(flow.op_count() > after_forward);
}
