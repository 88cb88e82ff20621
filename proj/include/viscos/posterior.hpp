#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "viscos/linalg.hpp"

namespace viscos {

// Gaussian variational family over the hidden latent block with a sparse
// full-covariance factor: x = mu + (prod_i H_i) D(sigma) eps. With no
// reflectors this is the mean-field posterior.
struct VariationalPosterior {
    Vec mu;
    Vec log_sigma;
    std::vector<Vec> reflectors;

    Eigen::Index dim() const { return mu.size(); }
    Vec sigma() const;

    // Mean-field init (mu = 0, sigma = 1) with n random unit reflectors.
    static VariationalPosterior standard(Eigen::Index d, long n_reflectors = 0,
                                         std::uint64_t seed = 0);

    // Sampling path given a standard-normal draw eps.
    Vec sample_path(const Vec& eps) const;
    // Closed-form log q(x); the orthogonal factor only permutes the metric.
    double log_density(const Vec& x) const;
    // Differential entropy (closed form).
    double entropy() const;
    // Dense covariance (prod H) D(sigma^2) (prod H)^T, oracle scale.
    Mat dense_covariance() const;
    // KL(q || N(0, I)) in closed form.
    double kl_to_standard_normal() const;

    std::string to_json() const;
    static VariationalPosterior from_json(const std::string& text);
    void save(const std::string& path) const;
    static VariationalPosterior load(const std::string& path);
};

struct PosteriorSample {
    Vec x;
    Vec eps;  // recorded base draw for pathwise differentiation
};

std::vector<PosteriorSample> posterior_sample(const VariationalPosterior& q, long n,
                                              std::uint64_t rng_seed);

// Gradients of a scalar objective w.r.t. posterior parameters given the
// cotangent dL/dx of the sampled point (pathwise rule). The entropy term's
// +1 per log-sigma coordinate is NOT included here.
struct PosteriorGrads {
    Vec mu;
    Vec log_sigma;
    std::vector<Vec> reflectors;

    PosteriorGrads& operator+=(const PosteriorGrads& other);
    PosteriorGrads& operator*=(double s);
};

PosteriorGrads zero_grads(const VariationalPosterior& q);
PosteriorGrads path_backward(const VariationalPosterior& q, const Vec& eps,
                             const Vec& dL_dx);

}  // namespace viscos
