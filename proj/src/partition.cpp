#include "viscos/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <set>

namespace viscos {

Partition make_partition(std::vector<int> observed_indices, int d) {
    if (d < 2) throw InvalidIndices("make_partition: dim must be >= 2");
    if (observed_indices.empty()) throw InvalidIndices("make_partition: empty observed set");
    std::sort(observed_indices.begin(), observed_indices.end());
    if (std::adjacent_find(observed_indices.begin(), observed_indices.end()) !=
        observed_indices.end())
        throw InvalidIndices("make_partition: duplicate indices");
    if (observed_indices.front() < 0 || observed_indices.back() >= d)
        throw InvalidIndices("make_partition: index out of range");
    if (static_cast<int>(observed_indices.size()) == d)
        throw InvalidIndices("make_partition: empty hidden set");
    Partition p;
    p.dim = d;
    p.observed = std::move(observed_indices);
    std::set<int> obs(p.observed.begin(), p.observed.end());
    for (int i = 0; i < d; ++i)
        if (!obs.count(i)) p.hidden.push_back(i);
    return p;
}

Partition aligned_partition(int d_O, int d) {
    std::vector<int> obs(static_cast<std::size_t>(d_O));
    for (int i = 0; i < d_O; ++i) obs[static_cast<std::size_t>(i)] = i;
    return make_partition(std::move(obs), d);
}

Vec gather(const Vec& x, const std::vector<int>& idx) {
    Vec out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = x[idx[i]];
    return out;
}

Vec scatter(const Vec& v, const std::vector<int>& idx, int d) {
    if (v.size() != static_cast<Eigen::Index>(idx.size()))
        throw DimensionMismatch("scatter: size mismatch");
    Vec out = Vec::Zero(d);
    for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = v[static_cast<Eigen::Index>(i)];
    return out;
}

Vec assemble(const Partition& p, const Vec& observed, const Vec& hidden) {
    if (observed.size() != p.d_O() || hidden.size() != p.d_H())
        throw DimensionMismatch("assemble: size mismatch");
    Vec out(p.dim);
    for (std::size_t i = 0; i < p.observed.size(); ++i)
        out[p.observed[i]] = observed[static_cast<Eigen::Index>(i)];
    for (std::size_t i = 0; i < p.hidden.size(); ++i)
        out[p.hidden[i]] = hidden[static_cast<Eigen::Index>(i)];
    return out;
}

PartitionPair aligned_pair(const Partition& data) { return {data, data}; }

LinearOperator sub_jacobian(const Flow& flow, const Vec& x, const std::vector<int>& rows,
                            const std::vector<int>& cols, JacobianDirection direction,
                            double trunc_tol) {
    auto tr = std::make_shared<ForwardTrace>(flow.forward_trace(x));
    int d = static_cast<int>(flow.dim());
    LinearOperator op;
    op.rows = static_cast<Eigen::Index>(rows.size());
    op.cols = static_cast<Eigen::Index>(cols.size());
    if (direction == JacobianDirection::Forward) {
        op.apply = [&flow, tr, rows, cols, d](const Vec& v) {
            return gather(flow.jvp(*tr, scatter(v, cols, d)), rows);
        };
        op.adjoint_apply = [&flow, tr, rows, cols, d](const Vec& u) {
            return gather(flow.vjp(*tr, scatter(u, rows, d)), cols);
        };
    } else {
        op.apply = [&flow, tr, rows, cols, d, trunc_tol](const Vec& v) {
            return gather(flow.inv_jvp(*tr, scatter(v, cols, d), trunc_tol), rows);
        };
        op.adjoint_apply = [&flow, tr, rows, cols, d, trunc_tol](const Vec& u) {
            return gather(flow.inv_vjp(*tr, scatter(u, rows, d), trunc_tol), cols);
        };
    }
    return op;
}

PartitionedJacobian partitioned_jacobian(const Flow& flow, const Vec& x,
                                         const PartitionPair& parts, double trunc_tol) {
    const auto& lo = parts.latent.observed;
    const auto& lh = parts.latent.hidden;
    const auto& do_ = parts.data.observed;
    const auto& dh = parts.data.hidden;
    PartitionedJacobian pj;
    pj.j_oo = sub_jacobian(flow, x, do_, lo, JacobianDirection::Forward, trunc_tol);
    pj.j_oh = sub_jacobian(flow, x, do_, lh, JacobianDirection::Forward, trunc_tol);
    pj.j_ho = sub_jacobian(flow, x, dh, lo, JacobianDirection::Forward, trunc_tol);
    pj.j_hh = sub_jacobian(flow, x, dh, lh, JacobianDirection::Forward, trunc_tol);
    pj.g_oo = sub_jacobian(flow, x, lo, do_, JacobianDirection::Inverse, trunc_tol);
    pj.g_oh = sub_jacobian(flow, x, lo, dh, JacobianDirection::Inverse, trunc_tol);
    pj.g_ho = sub_jacobian(flow, x, lh, do_, JacobianDirection::Inverse, trunc_tol);
    pj.g_hh = sub_jacobian(flow, x, lh, dh, JacobianDirection::Inverse, trunc_tol);
    return pj;
}

Mat dense_sub_jacobian(const Flow& flow, const Vec& x, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
    Mat full = flow.dense_jacobian(x);
    Mat sub(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            sub(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                full(rows[i], cols[j]);
    return sub;
}

double partition_score(const Mat& dense_j, const std::vector<int>& data_rows,
                       const std::vector<int>& latent_cols) {
    Mat sub(static_cast<Eigen::Index>(data_rows.size()),
            static_cast<Eigen::Index>(latent_cols.size()));
    for (std::size_t i = 0; i < data_rows.size(); ++i)
        for (std::size_t j = 0; j < latent_cols.size(); ++j)
            sub(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                dense_j(data_rows[i], latent_cols[j]);
    try {
        return dense_logabsdet(sub);
    } catch (const SingularMatrix&) {
        return -std::numeric_limits<double>::infinity();
    }
}

Partition select_latent_partition(const Flow& flow, const Vec& x,
                                  const Partition& data_partition, long budget) {
    Mat j = flow.dense_jacobian(x);
    std::vector<int> obs(data_partition.observed);
    std::vector<int> hid(data_partition.hidden);
    double best = partition_score(j, data_partition.observed, obs);
    for (long round = 0; round < budget; ++round) {
        double round_best = best;
        std::size_t best_i = 0, best_j = 0;
        bool improved = false;
        for (std::size_t i = 0; i < obs.size(); ++i) {
            for (std::size_t jj = 0; jj < hid.size(); ++jj) {
                std::swap(obs[i], hid[jj]);
                double s = partition_score(j, data_partition.observed, obs);
                std::swap(obs[i], hid[jj]);
                if (s > round_best + 1e-12) {
                    round_best = s;
                    best_i = i;
                    best_j = jj;
                    improved = true;
                }
            }
        }
        if (!improved) break;
        std::swap(obs[best_i], hid[best_j]);
        best = round_best;
    }
    return make_partition(obs, data_partition.dim);
}

}  // namespace viscos
