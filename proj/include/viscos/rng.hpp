#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

namespace viscos {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// All randomness in the library flows through explicitly seeded engines so
// that runs are reproducible and parallel callers never share state.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Derive an independent stream from a base seed (e.g. per sample, per probe).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Vec gaussian_vector(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

inline Vec rademacher_vector(Rng& rng, Eigen::Index n) {
    std::bernoulli_distribution dist(0.5);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng) ? 1.0 : -1.0;
    return v;
}

inline Vec uniform_vector(Rng& rng, Eigen::Index n, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

inline Mat gaussian_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = dist(rng);
    return m;
}

}  // namespace viscos
