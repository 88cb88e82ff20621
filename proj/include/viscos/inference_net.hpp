#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "viscos/partition.hpp"
#include "viscos/posterior.hpp"

namespace viscos {

// Small fully connected ReLU network mapping a filled observation (length d)
// to per-coordinate (mu, log_sigma) heads (length 2d). The output layer is
// zero-initialized so the initial amortized posterior is standard normal.
class InferenceNet {
  public:
    InferenceNet() = default;
    static InferenceNet make(Eigen::Index d, const std::vector<Eigen::Index>& hidden_widths,
                             std::uint64_t seed);

    Eigen::Index dim() const { return d_; }

    // Full 2d-dimensional head output at the filled input.
    Vec forward(const Vec& filled) const;

    struct Trace {
        std::vector<Vec> pre;   // preactivations per hidden layer
        std::vector<Vec> post;  // activations (post[0] is the input)
        Vec output;
    };
    Trace forward_trace(const Vec& filled) const;

    struct Grads {
        std::vector<Mat> w;
        std::vector<Vec> b;
        Grads& operator+=(const Grads& other);
        Grads& operator*=(double s);
    };
    Grads zero_grads() const;
    // Parameter gradient of dL_dout^T output(filled).
    Grads backward(const Trace& tr, const Vec& dL_dout) const;
    void apply_update(const Grads& update);

    std::vector<Mat>& weights() { return w_; }
    std::vector<Vec>& biases() { return b_; }
    const std::vector<Mat>& weights() const { return w_; }
    const std::vector<Vec>& biases() const { return b_; }

    Eigen::Index n_params() const;
    std::string to_json() const;
    static InferenceNet from_json(const std::string& text);
    void save(const std::string& path) const;
    static InferenceNet load(const std::string& path);

  private:
    Eigen::Index d_ = 0;
    std::vector<Mat> w_;
    std::vector<Vec> b_;
};

// Fill hidden data slots with a constant, run the net, and gather the heads
// at the latent-hidden coordinates into a mean-field posterior.
VariationalPosterior amortized_infer(const InferenceNet& net, const Vec& y_O,
                                     const PartitionPair& parts, double fill_value = 0.0);
// Per-coordinate fills (length d, hidden slots read from it), e.g. column medians.
VariationalPosterior amortized_infer(const InferenceNet& net, const Vec& y_O,
                                     const PartitionPair& parts, const Vec& fill_values);

// Cotangent pushback of amortized_infer: grads on (mu, log_sigma) at the
// latent-hidden slots become a head cotangent for InferenceNet::backward.
Vec amortized_head_cotangent(const PartitionPair& parts, const Vec& dL_dmu,
                             const Vec& dL_dlogsigma);

}  // namespace viscos
