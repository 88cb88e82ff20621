#include "viscos/posterior.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "viscos/errors.hpp"

namespace viscos {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Vec VariationalPosterior::sigma() const {
    return log_sigma.unaryExpr([](double v) { return std::exp(v); });
}

VariationalPosterior VariationalPosterior::standard(Eigen::Index d, long n_reflectors,
                                                    std::uint64_t seed) {
    VariationalPosterior q;
    q.mu = Vec::Zero(d);
    q.log_sigma = Vec::Zero(d);
    Rng rng = make_rng(seed);
    for (long i = 0; i < n_reflectors; ++i)
        q.reflectors.push_back(gaussian_vector(rng, d).normalized());
    return q;
}

Vec VariationalPosterior::sample_path(const Vec& eps) const {
    if (eps.size() != dim()) throw DimensionMismatch("posterior: eps size mismatch");
    Vec scaled = sigma().cwiseProduct(eps);
    return mu + householder_apply(reflectors, scaled);
}

double VariationalPosterior::log_density(const Vec& x) const {
    if (x.size() != dim()) throw DimensionMismatch("posterior: point size mismatch");
    // invert the path: eps = D(sigma)^{-1} (prod H)^{-1} (x - mu)
    Vec w = householder_apply_reverse(reflectors, x - mu);
    Vec s = sigma();
    double logq = -0.5 * kLog2Pi * static_cast<double>(dim()) - log_sigma.sum();
    for (Eigen::Index i = 0; i < dim(); ++i) {
        double e = w[i] / s[i];
        logq -= 0.5 * e * e;
    }
    return logq;
}

double VariationalPosterior::entropy() const {
    return 0.5 * static_cast<double>(dim()) * (kLog2Pi + 1.0) + log_sigma.sum();
}

Mat VariationalPosterior::dense_covariance() const {
    Eigen::Index d = dim();
    Mat q = Mat::Identity(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        q.col(j) = householder_apply(reflectors, Vec(q.col(j)));
    Vec s2 = sigma().array().square();
    return q * s2.asDiagonal() * q.transpose();
}

double VariationalPosterior::kl_to_standard_normal() const {
    // Orthogonal factor preserves trace and determinant.
    double tr = sigma().array().square().sum();
    return 0.5 * (tr + mu.squaredNorm() - static_cast<double>(dim())) - log_sigma.sum();
}

std::vector<PosteriorSample> posterior_sample(const VariationalPosterior& q, long n,
                                              std::uint64_t rng_seed) {
    Rng rng = make_rng(rng_seed);
    std::vector<PosteriorSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        Vec eps = gaussian_vector(rng, q.dim());
        out.push_back({q.sample_path(eps), eps});
    }
    return out;
}

PosteriorGrads& PosteriorGrads::operator+=(const PosteriorGrads& other) {
    mu += other.mu;
    log_sigma += other.log_sigma;
    for (std::size_t i = 0; i < reflectors.size(); ++i) reflectors[i] += other.reflectors[i];
    return *this;
}

PosteriorGrads& PosteriorGrads::operator*=(double s) {
    mu *= s;
    log_sigma *= s;
    for (auto& r : reflectors) r *= s;
    return *this;
}

PosteriorGrads zero_grads(const VariationalPosterior& q) {
    PosteriorGrads g;
    g.mu = Vec::Zero(q.dim());
    g.log_sigma = Vec::Zero(q.dim());
    for (const auto& r : q.reflectors) g.reflectors.push_back(Vec::Zero(r.size()));
    return g;
}

PosteriorGrads path_backward(const VariationalPosterior& q, const Vec& eps,
                             const Vec& dL_dx) {
    PosteriorGrads g = zero_grads(q);
    g.mu = dL_dx;

    // Forward intermediates of the reflection chain applied to D(sigma) eps.
    const std::size_t n = q.reflectors.size();
    Vec s = q.sigma();
    std::vector<Vec> inputs(n + 1);  // inputs[i] feeds reflector i (applied last-first)
    inputs[n] = s.cwiseProduct(eps);
    for (std::size_t i = n; i-- > 0;) {
        const Vec& v = q.reflectors[i];
        double nrm2 = v.squaredNorm();
        if (std::sqrt(nrm2) < 1e-12) throw ZeroReflector("path_backward: zero reflector");
        inputs[i] = inputs[i + 1] - (2.0 * v.dot(inputs[i + 1]) / nrm2) * v;
    }
    // Backward pass: cotangent through each reflection (H is symmetric), plus
    // the gradient w.r.t. the reflector vector itself.
    Vec cot = dL_dx;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec& v = q.reflectors[i];
        const Vec& r = inputs[i + 1];  // input to this reflection
        double nrm2 = v.squaredNorm();
        double vr = v.dot(r);
        double gv = cot.dot(v);
        g.reflectors[i] =
            (-2.0 / nrm2) * (vr * cot + gv * r) + (4.0 * vr * gv / (nrm2 * nrm2)) * v;
        cot = cot - (2.0 * gv / nrm2) * v;
    }
    g.log_sigma = cot.cwiseProduct(s).cwiseProduct(eps);
    return g;
}

namespace {
nlohmann::json vec_json(const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}
Vec vec_from(const nlohmann::json& j) {
    std::vector<double> d = j;
    return Eigen::Map<const Vec>(d.data(), static_cast<Eigen::Index>(d.size()));
}
}  // namespace

std::string VariationalPosterior::to_json() const {
    nlohmann::json j;
    j["mu"] = vec_json(mu);
    j["log_sigma"] = vec_json(log_sigma);
    j["reflectors"] = nlohmann::json::array();
    for (const auto& r : reflectors) j["reflectors"].push_back(vec_json(r));
    return j.dump(2);
}

VariationalPosterior VariationalPosterior::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    VariationalPosterior q;
    q.mu = vec_from(j.at("mu"));
    q.log_sigma = vec_from(j.at("log_sigma"));
    for (const auto& r : j.at("reflectors")) q.reflectors.push_back(vec_from(r));
    if (q.log_sigma.size() != q.mu.size())
        throw ConfigError("posterior json: size mismatch");
    return q;
}

void VariationalPosterior::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("VariationalPosterior::save: cannot open " + path);
    out << to_json() << "\n";
}

VariationalPosterior VariationalPosterior::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("VariationalPosterior::load: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

}  // namespace viscos
