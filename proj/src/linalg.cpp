#include "viscos/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace viscos {

Vec LinearOperator::operator()(const Vec& v) const {
    if (v.size() != cols) throw DimensionMismatch("LinearOperator::apply: bad input size");
    return apply(v);
}

Vec LinearOperator::adjoint(const Vec& u) const {
    if (u.size() != rows) throw DimensionMismatch("LinearOperator::adjoint: bad input size");
    return adjoint_apply(u);
}

LinearOperator LinearOperator::identity(Eigen::Index n) {
    LinearOperator op;
    op.rows = op.cols = n;
    op.apply = [](const Vec& v) { return v; };
    op.adjoint_apply = [](const Vec& v) { return v; };
    return op;
}

LinearOperator LinearOperator::from_dense(const Mat& m) {
    LinearOperator op;
    op.rows = m.rows();
    op.cols = m.cols();
    op.apply = [m](const Vec& v) -> Vec { return m * v; };
    op.adjoint_apply = [m](const Vec& u) -> Vec { return m.transpose() * u; };
    return op;
}

LinearOperator LinearOperator::transpose() const {
    LinearOperator op;
    op.rows = cols;
    op.cols = rows;
    op.apply = adjoint_apply;
    op.adjoint_apply = apply;
    return op;
}

Mat dense_from_operator(const LinearOperator& op) {
    Mat m(op.rows, op.cols);
    Vec e = Vec::Zero(op.cols);
    for (Eigen::Index j = 0; j < op.cols; ++j) {
        e[j] = 1.0;
        m.col(j) = op.apply(e);
        e[j] = 0.0;
    }
    return m;
}

namespace {

// One full-space (or restarted) Arnoldi cycle. Returns the updated iterate and
// the number of inner iterations spent.
std::pair<Vec, long> gmres_cycle(const LinearOperator& op, const Vec& rhs, const Vec& x0,
                                 double tol, long max_inner,
                                 const std::optional<LinearOperator>& precond) {
    auto pc = [&](const Vec& v) -> Vec { return precond ? precond->apply(v) : v; };

    Vec r0 = pc(rhs - op.apply(x0));
    double beta = r0.norm();
    if (beta == 0.0) return {x0, 0};

    const Eigen::Index n = rhs.size();
    long m = std::min<long>(max_inner, n);

    Mat V(n, m + 1);
    Mat H = Mat::Zero(m + 1, m);
    V.col(0) = r0 / beta;

    std::vector<double> cs(m, 0.0), sn(m, 0.0);
    Vec g = Vec::Zero(m + 1);
    g[0] = beta;

    long k = 0;
    for (; k < m; ++k) {
        Vec w = pc(op.apply(V.col(k)));
        // modified Gram-Schmidt
        for (long i = 0; i <= k; ++i) {
            H(i, k) = V.col(i).dot(w);
            w -= H(i, k) * V.col(i);
        }
        H(k + 1, k) = w.norm();
        bool breakdown = H(k + 1, k) < 1e-14 * beta;
        if (!breakdown) V.col(k + 1) = w / H(k + 1, k);

        // apply accumulated Givens rotations to the new column
        for (long i = 0; i < k; ++i) {
            double t = cs[i] * H(i, k) + sn[i] * H(i + 1, k);
            H(i + 1, k) = -sn[i] * H(i, k) + cs[i] * H(i + 1, k);
            H(i, k) = t;
        }
        double denom = std::hypot(H(k, k), H(k + 1, k));
        if (denom == 0.0) denom = 1.0;
        cs[k] = H(k, k) / denom;
        sn[k] = H(k + 1, k) / denom;
        H(k, k) = denom;
        H(k + 1, k) = 0.0;
        g[k + 1] = -sn[k] * g[k];
        g[k] = cs[k] * g[k];

        if (std::abs(g[k + 1]) <= tol || breakdown) {
            ++k;
            break;
        }
    }

    // back substitution on the k x k triangular system
    Vec y = Vec::Zero(k);
    for (long i = k - 1; i >= 0; --i) {
        double s = g[i];
        for (long j = i + 1; j < k; ++j) s -= H(i, j) * y[j];
        y[i] = s / H(i, i);
    }
    Vec x = x0;
    for (long i = 0; i < k; ++i) x += y[i] * V.col(i);
    return {x, k};
}

}  // namespace

GmresResult gmres(const LinearOperator& op, const Vec& rhs, const GmresConfig& cfg) {
    if (op.rows != op.cols) throw DimensionMismatch("gmres: operator must be square");
    if (rhs.size() != op.rows) throw DimensionMismatch("gmres: rhs size mismatch");
    if (!(cfg.tol > 0.0) || cfg.max_iter < 1) throw InvalidParams("gmres: bad config");
    if (cfg.preconditioner &&
        (cfg.preconditioner->rows != op.rows || cfg.preconditioner->cols != op.cols))
        throw DimensionMismatch("gmres: preconditioner shape mismatch");

    Vec x = Vec::Zero(op.cols);
    long total = 0;
    double true_res = (op.apply(x) - rhs).norm();
    if (true_res <= cfg.tol) return {x, 0, true_res};

    // Inner tolerance is on the (possibly preconditioned) residual; the outer
    // loop certifies the true residual and restarts if it is not yet met.
    while (total < cfg.max_iter) {
        long budget = cfg.restart ? std::min<long>(*cfg.restart, cfg.max_iter - total)
                                  : cfg.max_iter - total;
        auto [xn, used] = gmres_cycle(op, rhs, x, cfg.tol, budget, cfg.preconditioner);
        total += std::max<long>(used, 1);
        x = xn;
        true_res = (op.apply(x) - rhs).norm();
        if (true_res <= cfg.tol) return {x, total, true_res};
        if (used == 0) break;  // stagnation
    }
    throw NoConvergence("gmres failed to reach tolerance", true_res, total);
}

std::vector<HutchinsonProbe> hutchinson_trace_grad_weight(const LinearOperator& op_value,
                                                          std::uint64_t rng_seed,
                                                          long n_probes) {
    if (op_value.rows != op_value.cols)
        throw DimensionMismatch("hutchinson: operator must be square");
    if (n_probes < 1) throw InvalidParams("hutchinson: n_probes must be >= 1");
    Rng rng = make_rng(rng_seed);
    std::vector<HutchinsonProbe> probes;
    probes.reserve(static_cast<std::size_t>(n_probes));
    for (long i = 0; i < n_probes; ++i) {
        Vec z = rademacher_vector(rng, op_value.rows);
        probes.push_back({z, op_value.adjoint(z)});
    }
    return probes;
}

double hutchinson_trace_estimate(const LinearOperator& op, std::uint64_t rng_seed,
                                 long n_probes) {
    if (op.rows != op.cols) throw DimensionMismatch("hutchinson: operator must be square");
    Rng rng = make_rng(rng_seed);
    double acc = 0.0;
    for (long i = 0; i < n_probes; ++i) {
        Vec z = rademacher_vector(rng, op.rows);
        acc += z.dot(op.apply(z));
    }
    return acc / static_cast<double>(n_probes);
}

namespace {
Vec reflect(const Vec& v, const Vec& x) {
    double nrm2 = v.squaredNorm();
    if (std::sqrt(nrm2) < 1e-12) throw ZeroReflector("householder: reflector norm < 1e-12");
    return x - (2.0 * v.dot(x) / nrm2) * v;
}
}  // namespace

Vec householder_apply(const std::vector<Vec>& reflectors, const Vec& x) {
    Vec y = x;
    for (auto it = reflectors.rbegin(); it != reflectors.rend(); ++it) {
        if (it->size() != x.size()) throw DimensionMismatch("householder: reflector size");
        y = reflect(*it, y);
    }
    return y;
}

Vec householder_apply_reverse(const std::vector<Vec>& reflectors, const Vec& x) {
    Vec y = x;
    for (const auto& v : reflectors) {
        if (v.size() != x.size()) throw DimensionMismatch("householder: reflector size");
        y = reflect(v, y);
    }
    return y;
}

Mat finite_diff_jacobian(const std::function<Vec(const Vec&)>& fn, const Vec& x, double eps) {
    if (!(eps > 0.0)) throw InvalidParams("finite_diff_jacobian: eps must be > 0");
    Vec xp = x;
    Mat jac;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        xp[j] = x[j] + eps;
        Vec fp = fn(xp);
        xp[j] = x[j] - eps;
        Vec fm = fn(xp);
        xp[j] = x[j];
        if (jac.size() == 0) jac.resize(fp.size(), x.size());
        jac.col(j) = (fp - fm) / (2.0 * eps);
    }
    return jac;
}

Vec finite_diff_gradient(const std::function<double(const Vec&)>& fn, const Vec& x,
                         double eps) {
    Vec g(x.size());
    Vec xp = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        xp[j] = x[j] + eps;
        double fp = fn(xp);
        xp[j] = x[j] - eps;
        double fm = fn(xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

double dense_logabsdet(const Mat& m) {
    if (m.rows() != m.cols()) throw DimensionMismatch("dense_logabsdet: matrix not square");
    Eigen::PartialPivLU<Mat> lu(m);
    const Mat& u = lu.matrixLU();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double pivot = std::abs(u(i, i));
        if (pivot < 1e-14) throw SingularMatrix("dense_logabsdet: pivot below 1e-14");
        acc += std::log(pivot);
    }
    return acc;
}

}  // namespace viscos
