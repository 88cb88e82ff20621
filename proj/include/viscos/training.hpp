#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "viscos/inference_net.hpp"
#include "viscos/solvers.hpp"
#include "viscos/viscos.hpp"

namespace viscos {

// Row-major data table, optionally with a 0/1 observation mask of the same
// shape (1 = observed).
struct Dataset {
    Mat values;  // n x d
    std::optional<Mat> mask;

    long n() const { return values.rows(); }
    int d() const { return static_cast<int>(values.cols()); }
    Vec row(long i) const { return values.row(i).transpose(); }

    // Per-column medians over observed entries only.
    Vec column_medians() const;
    // Observed indices of row i (all indices when there is no mask).
    std::vector<int> observed_indices(long i) const;

    void save_csv(const std::string& path) const;
    static Dataset load_csv(const std::string& path);
};

enum class DatasetKind { TwoMoons, GaussMixture, CorrelatedGauss, TinyDigits };

struct DatasetParams {
    int dim = 2;             // CorrelatedGauss dimension
    double rho = 0.8;        // CorrelatedGauss AR(1) correlation
    double noise = 0.05;     // TwoMoons and TinyDigits jitter scale
    int n_components = 4;    // GaussMixture components on a circle
    double separation = 3.0; // GaussMixture center radius
};

Dataset gen_dataset(DatasetKind kind, long n, std::uint64_t seed,
                    const DatasetParams& params = {});

// Independently drop each entry with the given probability; rows that lose
// every entry keep one uniformly chosen coordinate.
void apply_missingness(Dataset& data, double missing_fraction, std::uint64_t seed);

struct TrainConfig {
    long epochs = 20;
    long batch = 64;
    double lr = 1e-2;
    double lr_epoch_decay = 0.5;
    std::uint64_t seed = 0;
    double trunc_tol = 1e-10;
    double inverse_tol = 1e-10;
    long renorm_power_iter = 20;
    bool verbose = false;
};

struct EpochRecord {
    long epoch = 0;
    double mean_loss = 0.0;  // NLL for density fits, negative bound otherwise
    long n_skipped = 0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    long n_nonfinite_rollbacks = 0;
};

// Maximum-likelihood fit of the flow on fully observed rows. Each update is
// followed by spectral renormalization so all layer bounds keep holding.
// Non-finite aggregates roll the step back instead of poisoning the model.
TrainReport mle_train(Flow& flow, const Dataset& data, const TrainConfig& cfg);

struct IncompleteTrainConfig {
    TrainConfig base{};
    std::vector<Eigen::Index> net_hidden = {64, 64};
    double net_lr = 1e-3;
    FixedPointConfig fp_cfg{};
    NewtonKrylovConfig nk_cfg{};
    GmresConfig grad_gmres{1e-10, 400, std::nullopt, std::nullopt};
    double skip_fraction_abort = 0.5;
};

// Joint fit of the flow and the amortized inference net on partially observed
// rows. Fully observed rows take the exact likelihood path; incomplete rows
// take the single-probe stochastic bound path with a per-row constraint solve.
TrainReport train_incomplete(Flow& flow, InferenceNet& net, const Dataset& data,
                             const IncompleteTrainConfig& cfg);

// Complete the missing entries of each row with the mean of n_draws
// conditional completions; returns the filled table.
Mat impute_dataset(const Flow& flow, const InferenceNet& net, const Dataset& data,
                   long n_draws, std::uint64_t seed, const FixedPointConfig& fp_cfg,
                   const NewtonKrylovConfig& nk_cfg);

// Baseline: per-column median fill of missing entries.
Mat median_fill(const Dataset& data);

// Root mean squared error over the masked-out entries only.
double masked_rmse(const Mat& filled, const Mat& truth, const Mat& mask);

}  // namespace viscos
