#pragma once

#include <vector>

#include "viscos/flow.hpp"
#include "viscos/linalg.hpp"

namespace viscos {

// Complementary sorted index sets O/H over [0, d).
struct Partition {
    std::vector<int> observed;
    std::vector<int> hidden;
    int dim = 0;

    int d_O() const { return static_cast<int>(observed.size()); }
    int d_H() const { return static_cast<int>(hidden.size()); }
};

Partition make_partition(std::vector<int> observed_indices, int d);
// O = {0, ..., d_O-1}.
Partition aligned_partition(int d_O, int d);

Vec gather(const Vec& x, const std::vector<int>& idx);
// Zero vector of length d with v placed at idx.
Vec scatter(const Vec& v, const std::vector<int>& idx, int d);
// Full vector from both halves of a partition.
Vec assemble(const Partition& p, const Vec& observed, const Vec& hidden);

// Latent-space and data-space partitions for one conditioning problem. The
// data partition comes from the observation mask; the latent partition may
// differ (chosen for conditioning quality).
struct PartitionPair {
    Partition latent;  // partitions X (columns of J, rows of G)
    Partition data;    // partitions Y (rows of J, columns of G)
};

PartitionPair aligned_pair(const Partition& data);

enum class JacobianDirection { Forward, Inverse };

// Matrix-free view of a masked sub-block. Forward direction: J^{RS} with rows
// in data space and cols in latent space. Inverse direction: G^{RS} with rows
// in latent space and cols in data space (Neumann-backed).
LinearOperator sub_jacobian(const Flow& flow, const Vec& x, const std::vector<int>& rows,
                            const std::vector<int>& cols, JacobianDirection direction,
                            double trunc_tol = 1e-10);

// All four J views and four G views at a point, sharing one forward trace.
struct PartitionedJacobian {
    LinearOperator j_oo, j_oh, j_ho, j_hh;
    LinearOperator g_oo, g_oh, g_ho, g_hh;
};
PartitionedJacobian partitioned_jacobian(const Flow& flow, const Vec& x,
                                         const PartitionPair& parts,
                                         double trunc_tol = 1e-10);

// Dense J^{RS} (rows data, cols latent) at x, for oracles.
Mat dense_sub_jacobian(const Flow& flow, const Vec& x, const std::vector<int>& rows,
                       const std::vector<int>& cols);

// log|det J^{OO}(x)| for a candidate latent O against the fixed data O.
double partition_score(const Mat& dense_j, const std::vector<int>& data_rows,
                       const std::vector<int>& latent_cols);

// Greedy single-swap ascent on log|det J^OO(x)| starting from the partition
// aligned with the data mask; at most `budget` swap rounds.
Partition select_latent_partition(const Flow& flow, const Vec& x,
                                  const Partition& data_partition, long budget);

}  // namespace viscos
