#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "viscos/errors.hpp"
#include "viscos/rng.hpp"

namespace viscos {

// Matrix-free square or rectangular operator. Only products with vectors are
// available; dense realizations exist solely for desk-scale oracles.
struct LinearOperator {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::function<Vec(const Vec&)> apply;
    std::function<Vec(const Vec&)> adjoint_apply;

    Vec operator()(const Vec& v) const;
    Vec adjoint(const Vec& u) const;

    static LinearOperator identity(Eigen::Index n);
    static LinearOperator from_dense(const Mat& m);
    LinearOperator transpose() const;
};

// Assemble the dense matrix of an operator by applying it to basis vectors.
Mat dense_from_operator(const LinearOperator& op);

struct GmresConfig {
    double tol = 1e-10;
    long max_iter = 200;
    std::optional<long> restart;  // none: full Krylov space (desk scale)
    std::optional<LinearOperator> preconditioner;  // applied on the left
};

struct GmresResult {
    Vec x;
    long iterations = 0;
    double residual = 0.0;  // true (unpreconditioned) residual 2-norm
};

// GMRES with modified Gram-Schmidt Arnoldi and Givens least squares.
// Convergence is certified on the true residual ||op(x) - rhs||_2 <= tol;
// throws NoConvergence otherwise.
GmresResult gmres(const LinearOperator& op, const Vec& rhs, const GmresConfig& cfg);

// Hutchinson probe pairs (z, op^T z) with Rademacher z, so that
// E[z^T op z] = Tr(op) and downstream estimators only differentiate
// operator-vector products.
struct HutchinsonProbe {
    Vec z;
    Vec adjoint_z;
};
std::vector<HutchinsonProbe> hutchinson_trace_grad_weight(const LinearOperator& op_value,
                                                          std::uint64_t rng_seed,
                                                          long n_probes);

// Monte Carlo trace estimate, mean of z^T op z over n_probes draws.
double hutchinson_trace_estimate(const LinearOperator& op, std::uint64_t rng_seed,
                                 long n_probes);

// (prod_i H_i) x with H_i = I - 2 v_i v_i^T / ||v_i||^2, applied right to left
// so that index 0 is the outermost reflection.
Vec householder_apply(const std::vector<Vec>& reflectors, const Vec& x);
// Inverse transform: reflectors applied in reverse order.
Vec householder_apply_reverse(const std::vector<Vec>& reflectors, const Vec& x);

// Central-difference Jacobian, entry (i,j) = (fn_i(x+eps e_j) - fn_i(x-eps e_j)) / (2 eps).
Mat finite_diff_jacobian(const std::function<Vec(const Vec&)>& fn, const Vec& x,
                         double eps = 1e-5);

Vec finite_diff_gradient(const std::function<double(const Vec&)>& fn, const Vec& x,
                         double eps = 1e-5);

// log|det M| via pivoted LU; throws SingularMatrix when a pivot underflows.
double dense_logabsdet(const Mat& m);

}  // namespace viscos
