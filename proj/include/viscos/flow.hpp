#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "viscos/linalg.hpp"

namespace viscos {

// Smooth 1-Lipschitz activation (scaled swish). C^2, which the second-order
// Jacobian machinery below requires.
double lipswish(double z);
double lipswish_d1(double z);
double lipswish_d2(double z);

// Two-layer fully connected residual block h(x) = w2 * act(w1 x + b1) + b2.
// The layer map x -> x + h(x) is invertible when Lip(h) < 1, enforced by
// keeping ||w1|| * ||w2|| <= lipschitz_bound via spectral normalization.
struct ResidualLayer {
    Mat w1;  // hidden x dim
    Vec b1;  // hidden
    Mat w2;  // dim x hidden
    Vec b2;  // dim
    double lipschitz_bound = 0.9;

    Eigen::Index dim() const { return w2.rows(); }
    Eigen::Index hidden() const { return w1.rows(); }
};

// Power-iteration spectral norm estimate.
double spectral_norm_estimate(const Mat& w, long n_power_iter = 50);
// Rescale a single matrix so its spectral-norm estimate is <= target.
Mat spectral_normalize_matrix(const Mat& w, double target, long n_power_iter = 50);
// Rescale both matrices of a block so Lip(h) <= target (each to target^{1/2}).
ResidualLayer spectral_normalize(const ResidualLayer& layer, double target,
                                 long n_power_iter = 50);

// Per-layer cached forward state: input and hidden preactivation.
struct LayerState {
    Vec x_in;
    Vec z;
};

struct ForwardTrace {
    std::vector<LayerState> states;
    Vec output;
};

// Per-layer parameter gradients, same shapes as the layer.
struct LayerGrads {
    Mat w1, w2;
    Vec b1, b2;
};

struct FlowGrads {
    std::vector<LayerGrads> layers;
    FlowGrads& operator+=(const FlowGrads& other);
    FlowGrads& operator*=(double s);
};

// Composed residual flow f = f_L o ... o f_1 mapping latent X to data Y,
// with a factorized standard-normal base distribution on X. The forward map
// is explicit; the inverse and the inverse-Jacobian products are iterative
// (Banach fixed point and truncated Neumann series).
class Flow {
  public:
    Flow() = default;
    Flow(Eigen::Index dim, std::vector<ResidualLayer> layers);

    static Flow identity(Eigen::Index dim, Eigen::Index n_layers = 0,
                         Eigen::Index hidden = 8);
    static Flow random(Eigen::Index dim, Eigen::Index n_layers, Eigen::Index hidden,
                       double lipschitz_target, std::uint64_t seed,
                       double weight_scale = 1.0);

    Eigen::Index dim() const { return dim_; }
    Eigen::Index n_layers() const { return static_cast<Eigen::Index>(layers_.size()); }
    const std::vector<ResidualLayer>& layers() const { return layers_; }
    std::vector<ResidualLayer>& layers() { return layers_; }

    // y = f(x). Throws NonFinite if any layer output is not finite.
    Vec forward(const Vec& x) const;
    ForwardTrace forward_trace(const Vec& x) const;

    // x with ||f(x) - y||_inf <= tol, per-layer Banach iteration x <- y - h(x).
    Vec inverse(const Vec& y, double tol = 1e-10, long max_iter = 200) const;

    // Exact J(x) v and J(x)^T u via chained per-layer analytic products.
    Vec jvp(const Vec& x, const Vec& v) const;
    Vec vjp(const Vec& x, const Vec& u) const;
    Vec jvp(const ForwardTrace& tr, const Vec& v) const;
    Vec vjp(const ForwardTrace& tr, const Vec& u) const;

    // J(x)^{-1} v and J(x)^{-T} u by per-layer truncated Neumann series.
    // Truncation: successive-partial-sum difference inf-norm < trunc_tol.
    Vec inv_jvp(const Vec& x, const Vec& v, double trunc_tol = 1e-10) const;
    Vec inv_vjp(const Vec& x, const Vec& u, double trunc_tol = 1e-10) const;
    Vec inv_jvp(const ForwardTrace& tr, const Vec& v, double trunc_tol = 1e-10) const;
    Vec inv_vjp(const ForwardTrace& tr, const Vec& u, double trunc_tol = 1e-10) const;

    // grad_x [ u^T J(x) v ]: forward-over-reverse second-order product.
    Vec grad_bilinear_x(const Vec& x, const Vec& u, const Vec& v) const;
    Vec grad_bilinear_x(const ForwardTrace& tr, const Vec& u, const Vec& v) const;

    // Exact grad_x log|det J(x)| assembled from basis probes (d second-order
    // products plus d Neumann transposes). Desk-scale exact reference and
    // training workhorse.
    Vec grad_logabsdet_x(const Vec& x, double trunc_tol = 1e-10) const;

    // Parameter gradient of u^T f(x): standard layer-wise backprop.
    FlowGrads param_vjp(const ForwardTrace& tr, const Vec& u) const;
    // Parameter gradient of u^T J(x) v at fixed x.
    FlowGrads param_grad_bilinear(const ForwardTrace& tr, const Vec& u, const Vec& v) const;

    FlowGrads zero_grads() const;

    // Dense J(x) assembled from jvp columns (oracle scale).
    Mat dense_jacobian(const Vec& x) const;

    // Exact log-density of Eq-style change of variables with dense log|det|.
    double log_density(const Vec& y, double inv_tol = 1e-10) const;
    // log p_0 under the standard-normal base.
    static double base_log_density(const Vec& x);

    // Product of per-matrix spectral-norm estimates times the activation slope
    // bound; an upper bound on Lip(h) per layer.
    double layer_lipschitz_estimate(Eigen::Index layer, long n_power_iter = 50) const;

    // Counter of elementary layer passes (forward, jvp, vjp, Neumann terms),
    // used by cost-comparison tests.
    long long op_count() const { return ops_->load(); }
    void reset_op_count() const { ops_->store(0); }

    std::string to_json() const;
    static Flow from_json(const std::string& text);
    void save(const std::string& path) const;
    static Flow load(const std::string& path);

  private:
    Eigen::Index dim_ = 0;
    std::vector<ResidualLayer> layers_;
    std::shared_ptr<std::atomic<long long>> ops_ =
        std::make_shared<std::atomic<long long>>(0);

    void bump_ops(long long n = 1) const { ops_->fetch_add(n, std::memory_order_relaxed); }

    Vec layer_h(const ResidualLayer& l, const Vec& x) const;
    Vec layer_forward(const ResidualLayer& l, const Vec& x) const;
    // (I + grad h) products at cached state.
    Vec layer_jvp(const ResidualLayer& l, const LayerState& st, const Vec& v) const;
    Vec layer_vjp(const ResidualLayer& l, const LayerState& st, const Vec& u) const;
    Vec layer_h_jvp(const ResidualLayer& l, const LayerState& st, const Vec& v) const;
    Vec layer_h_vjp(const ResidualLayer& l, const LayerState& st, const Vec& u) const;
    Vec layer_inv_jvp(const ResidualLayer& l, const LayerState& st, const Vec& v,
                      double trunc_tol) const;
    Vec layer_inv_vjp(const ResidualLayer& l, const LayerState& st, const Vec& u,
                      double trunc_tol) const;
};

}  // namespace viscos
