#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>

#include "doctest.h"
#include "viscos/partition.hpp"

using namespace viscos;

namespace {

Mat dense_block(const Mat& m, const std::vector<int>& rows, const std::vector<int>& cols) {
    Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
    return out;
}

}  // namespace

TEST_CASE("partition construction and validation") {
    Partition p = make_partition({3, 0}, 5);
    CHECK(p.observed == std::vector<int>{0, 3});  // sorted
    CHECK(p.hidden == std::vector<int>{1, 2, 4});
    CHECK(p.d_O() == 2);
    CHECK(p.d_H() == 3);

    CHECK_THROWS_AS(make_partition({0, 0}, 4), InvalidIndices);   // duplicate
    CHECK_THROWS_AS(make_partition({4}, 4), InvalidIndices);      // out of range
    CHECK_THROWS_AS(make_partition({-1}, 4), InvalidIndices);     // negative
    CHECK_THROWS_AS(make_partition({}, 4), InvalidIndices);       // empty O
    CHECK_THROWS_AS(make_partition({0, 1, 2}, 3), InvalidIndices);  // empty H
    CHECK_THROWS_AS(make_partition({0}, 1), InvalidIndices);      // dim too small
}

TEST_CASE("aligned partition") {
    Partition p = aligned_partition(2, 5);
    CHECK(p.observed == std::vector<int>{0, 1});
    CHECK(p.hidden == std::vector<int>{2, 3, 4});
}

TEST_CASE("gather scatter assemble round trips") {
    Partition p = make_partition({1, 3}, 5);
    Vec x(5);
    x << 10, 11, 12, 13, 14;
    Vec o = gather(x, p.observed);
    Vec h = gather(x, p.hidden);
    CHECK(o[0] == 11);
    CHECK(o[1] == 13);
    CHECK((assemble(p, o, h) - x).lpNorm<Eigen::Infinity>() == 0.0);

    Vec s = scatter(o, p.observed, 5);
    CHECK(s[1] == 11);
    CHECK(s[0] == 0.0);
    CHECK(s.sum() == doctest::Approx(24.0));
}

TEST_CASE("forward sub jacobian views match dense blocks") {
    Flow flow = Flow::random(6, 3, 16, 0.8, 11);
    Rng rng = make_rng(12);
    Vec x = gaussian_vector(rng, 6);
    Mat j = flow.dense_jacobian(x);

    PartitionPair parts;
    parts.data = make_partition({0, 2, 5}, 6);
    parts.latent = make_partition({1, 2, 4}, 6);

    LinearOperator j_oo =
        sub_jacobian(flow, x, parts.data.observed, parts.latent.observed,
                     JacobianDirection::Forward);
    Mat ref = dense_block(j, parts.data.observed, parts.latent.observed);
    CHECK((dense_from_operator(j_oo) - ref).cwiseAbs().maxCoeff() < 1e-12);

    // adjoint consistency
    Vec u = gaussian_vector(rng, 3);
    Vec v = gaussian_vector(rng, 3);
    CHECK(u.dot(j_oo(v)) == doctest::Approx(j_oo.adjoint(u).dot(v)).epsilon(1e-12));
}

TEST_CASE("inverse sub jacobian views match the dense inverse") {
    Flow flow = Flow::random(5, 3, 16, 0.8, 21);
    Rng rng = make_rng(22);
    Vec x = gaussian_vector(rng, 5);
    Mat g = flow.dense_jacobian(x).inverse();

    PartitionPair parts;
    parts.data = make_partition({0, 3}, 5);
    parts.latent = make_partition({1, 4}, 5);

    LinearOperator g_hh =
        sub_jacobian(flow, x, parts.latent.hidden, parts.data.hidden,
                     JacobianDirection::Inverse, 1e-13);
    Mat ref = dense_block(g, parts.latent.hidden, parts.data.hidden);
    CHECK((dense_from_operator(g_hh) - ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("partitioned jacobian exposes all eight consistent views") {
    Flow flow = Flow::random(6, 3, 12, 0.8, 31);
    Rng rng = make_rng(32);
    Vec x = gaussian_vector(rng, 6);
    PartitionPair parts = aligned_pair(make_partition({0, 1, 2}, 6));
    PartitionedJacobian pj = partitioned_jacobian(flow, x, parts, 1e-13);

    Mat j = flow.dense_jacobian(x);
    Mat g = j.inverse();
    CHECK((dense_from_operator(pj.j_oo) -
           dense_block(j, parts.data.observed, parts.latent.observed)).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((dense_from_operator(pj.j_oh) -
           dense_block(j, parts.data.observed, parts.latent.hidden)).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((dense_from_operator(pj.j_ho) -
           dense_block(j, parts.data.hidden, parts.latent.observed)).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((dense_from_operator(pj.j_hh) -
           dense_block(j, parts.data.hidden, parts.latent.hidden)).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((dense_from_operator(pj.g_oo) -
           dense_block(g, parts.latent.observed, parts.data.observed)).cwiseAbs().maxCoeff() <
          1e-8);
    CHECK((dense_from_operator(pj.g_hh) -
           dense_block(g, parts.latent.hidden, parts.data.hidden)).cwiseAbs().maxCoeff() <
          1e-8);
}

TEST_CASE("dense sub jacobian helper") {
    Flow flow = Flow::random(4, 2, 8, 0.8, 41);
    Rng rng = make_rng(42);
    Vec x = gaussian_vector(rng, 4);
    Mat j = flow.dense_jacobian(x);
    Mat blk = dense_sub_jacobian(flow, x, {0, 2}, {1, 3});
    CHECK((blk - dense_block(j, {0, 2}, {1, 3})).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("partition score is the sub block log determinant") {
    Flow flow = Flow::random(4, 3, 8, 0.8, 51);
    Rng rng = make_rng(52);
    Vec x = gaussian_vector(rng, 4);
    Mat j = flow.dense_jacobian(x);
    double s = partition_score(j, {0, 1}, {0, 1});
    CHECK(s == doctest::Approx(dense_logabsdet(dense_block(j, {0, 1}, {0, 1}))).epsilon(1e-12));
}

TEST_CASE("greedy latent partition never scores below the aligned start") {
    Flow flow = Flow::random(6, 4, 16, 0.85, 61);
    Rng rng = make_rng(62);
    Vec x = gaussian_vector(rng, 6);
    Partition data = make_partition({0, 2, 4}, 6);
    Partition chosen = select_latent_partition(flow, x, data, 8);
    CHECK(chosen.dim == 6);
    CHECK(chosen.d_O() == data.d_O());

    Mat j = flow.dense_jacobian(x);
    double aligned_score = partition_score(j, data.observed, data.observed);
    double chosen_score = partition_score(j, data.observed, chosen.observed);
    CHECK(chosen_score >= aligned_score - 1e-12);
}
