#include "viscos/oracle.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>

namespace viscos {

namespace {

double trapezoid_weight(Eigen::Index i, Eigen::Index n, double h) {
    return (i == 0 || i == n - 1) ? 0.5 * h : h;
}

double logsumexp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

GridOracle build_once(const Flow& flow, const Vec& y_O, const Partition& data_partition,
                      long n_points, double scale) {
    int d_H = data_partition.d_H();
    GridOracle g;
    g.data_partition = data_partition;
    g.y_O = y_O;
    for (int k = 0; k < d_H; ++k) {
        Vec ax(n_points);
        for (long i = 0; i < n_points; ++i)
            ax[i] = -scale + 2.0 * scale * static_cast<double>(i) /
                                 static_cast<double>(n_points - 1);
        g.axes.push_back(ax);
    }
    Eigen::Index n0 = g.axes[0].size();
    Eigen::Index n1 = d_H == 2 ? g.axes[1].size() : 1;
    g.log_joint.resize(n0, n1);
    double h0 = g.axes[0][1] - g.axes[0][0];
    double h1 = d_H == 2 ? g.axes[1][1] - g.axes[1][0] : 1.0;

    std::vector<double> acc;
    acc.reserve(static_cast<std::size_t>(n0 * n1));
    Vec y_H(d_H);
    for (Eigen::Index i = 0; i < n0; ++i) {
        y_H[0] = g.axes[0][i];
        for (Eigen::Index j = 0; j < n1; ++j) {
            if (d_H == 2) y_H[1] = g.axes[1][j];
            double lp = flow.log_density(assemble(data_partition, y_O, y_H));
            g.log_joint(i, j) = lp;
            double w = trapezoid_weight(i, n0, h0) *
                       (d_H == 2 ? trapezoid_weight(j, n1, h1) : 1.0);
            acc.push_back(lp + std::log(w));
        }
    }
    g.log_marginal = logsumexp(acc);
    return g;
}

}  // namespace

GridOracle build_grid_oracle(const Flow& flow, const Vec& y_O,
                             const Partition& data_partition, long n_points, double scale,
                             double drift_tol) {
    if (data_partition.d_H() < 1 || data_partition.d_H() > 2)
        throw InvalidParams("build_grid_oracle: hidden block must be 1-D or 2-D");
    if (n_points < 16) throw InvalidParams("build_grid_oracle: n_points >= 16");
    if (y_O.size() != data_partition.d_O())
        throw DimensionMismatch("build_grid_oracle: observation size mismatch");

    GridOracle coarse = build_once(flow, y_O, data_partition, n_points, scale);
    GridOracle fine = build_once(flow, y_O, data_partition, 2 * n_points, scale);
    if (std::abs(coarse.log_marginal - fine.log_marginal) > drift_tol)
        throw GridTooCoarse("build_grid_oracle: marginal drifts under refinement");
    return fine;
}

double GridOracle::log_conditional(Eigen::Index i, Eigen::Index j) const {
    return log_joint(i, j) - log_marginal;
}

Mat GridOracle::node_probabilities() const {
    Eigen::Index n0 = log_joint.rows(), n1 = log_joint.cols();
    double h0 = axes[0][1] - axes[0][0];
    double h1 = d_H() == 2 ? axes[1][1] - axes[1][0] : 1.0;
    Mat p(n0, n1);
    for (Eigen::Index i = 0; i < n0; ++i)
        for (Eigen::Index j = 0; j < n1; ++j) {
            double w = trapezoid_weight(i, n0, h0) *
                       (d_H() == 2 ? trapezoid_weight(j, n1, h1) : 1.0);
            p(i, j) = std::exp(log_joint(i, j) - log_marginal) * w;
        }
    return p;
}

double GridOracle::total_mass_check() const { return node_probabilities().sum(); }

Vec GridOracle::conditional_mean() const {
    Mat p = node_probabilities();
    Vec mean = Vec::Zero(d_H());
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            mean[0] += p(i, j) * axes[0][i];
            if (d_H() == 2) mean[1] += p(i, j) * axes[1][j];
        }
    return mean;
}

double GridOracle::marginal_cdf(int k, double t) const {
    if (k < 0 || k >= d_H()) throw InvalidIndices("marginal_cdf: bad coordinate");
    // Marginal density along axis k (other axis integrated with its weights).
    const Vec& ax = axes[static_cast<std::size_t>(k)];
    Eigen::Index n = ax.size();
    Vec dens(n);
    if (d_H() == 1) {
        for (Eigen::Index i = 0; i < n; ++i) dens[i] = std::exp(log_joint(i, 0) - log_marginal);
    } else {
        int other = 1 - k;
        const Vec& ox = axes[static_cast<std::size_t>(other)];
        double ho = ox[1] - ox[0];
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (Eigen::Index j = 0; j < ox.size(); ++j) {
                double lj = k == 0 ? log_joint(i, j) : log_joint(j, i);
                s += std::exp(lj - log_marginal) * trapezoid_weight(j, ox.size(), ho);
            }
            dens[i] = s;
        }
    }
    double h = ax[1] - ax[0];
    Vec cum(n);
    cum[0] = 0.0;
    for (Eigen::Index i = 1; i < n; ++i)
        cum[i] = cum[i - 1] + 0.5 * (dens[i - 1] + dens[i]) * h;
    double total = cum[n - 1];
    if (total <= 0.0) throw GridTooCoarse("marginal_cdf: vanishing marginal mass");

    if (t <= ax[0]) return 0.0;
    if (t >= ax[n - 1]) return 1.0;
    Eigen::Index hi = 1;
    while (ax[hi] < t) ++hi;
    double frac = (t - ax[hi - 1]) / h;
    // partial trapezoid inside the cell
    double d_at_t = dens[hi - 1] + frac * (dens[hi] - dens[hi - 1]);
    double partial = 0.5 * (dens[hi - 1] + d_at_t) * frac * h;
    return (cum[hi - 1] + partial) / total;
}

std::vector<Vec> rejection_conditional_sample(const Flow& flow, const Vec& y_O,
                                              const Partition& data_partition, long n,
                                              double band, std::uint64_t seed,
                                              long max_draws, double min_rate) {
    if (band <= 0.0) throw InvalidParams("rejection_conditional_sample: band > 0");
    Rng rng = make_rng(seed);
    std::vector<Vec> out;
    long draws = 0;
    while (static_cast<long>(out.size()) < n) {
        if (draws >= max_draws)
            throw AcceptanceTooLow("rejection_conditional_sample: draw budget exhausted");
        ++draws;
        Vec y = flow.forward(gaussian_vector(rng, flow.dim()));
        if ((gather(y, data_partition.observed) - y_O).lpNorm<Eigen::Infinity>() <= band)
            out.push_back(gather(y, data_partition.hidden));
        if (draws >= 1000000 &&
            static_cast<double>(out.size()) < min_rate * static_cast<double>(draws))
            throw AcceptanceTooLow("rejection_conditional_sample: acceptance below floor");
    }
    return out;
}

ImportanceResult importance_log_marginal(const Flow& flow, const VariationalPosterior& q,
                                         const Vec& y_O, const PartitionPair& parts, long n,
                                         std::uint64_t seed, const FixedPointConfig& fp_cfg,
                                         const NewtonKrylovConfig& nk_cfg) {
    if (n < 2) throw InvalidParams("importance_log_marginal: n >= 2");
    Rng rng = make_rng(seed);
    std::vector<double> logw;
    ImportanceResult res;
    for (long i = 0; i < n; ++i) {
        Vec eps = gaussian_vector(rng, q.dim());
        Vec x_H = q.sample_path(eps);
        try {
            SolveResult sr = solve_constraint(flow, y_O, x_H, parts, fp_cfg, nk_cfg);
            Vec x = assemble(parts.latent, sr.x_O, x_H);
            Mat j = flow.dense_jacobian(x);
            double log_p = Flow::base_log_density(x) - dense_logabsdet(j);
            // Proposal density on the hidden data block: pushforward of q
            // through the completion map, Jacobian factor |det G^HH|.
            Mat g = j.partialPivLu().inverse();
            Mat ghh(parts.latent.d_H(), parts.data.d_H());
            for (int r = 0; r < parts.latent.d_H(); ++r)
                for (int c = 0; c < parts.data.d_H(); ++c)
                    ghh(r, c) = g(parts.latent.hidden[static_cast<std::size_t>(r)],
                                  parts.data.hidden[static_cast<std::size_t>(c)]);
            double log_q = q.log_density(x_H) + dense_logabsdet(ghh);
            logw.push_back(log_p - log_q);
        } catch (const NoConvergence&) {
            ++res.n_failed;
        } catch (const SingularSubJacobian&) {
            ++res.n_failed;
        }
    }
    res.n_used = static_cast<long>(logw.size());
    if (res.n_used < 2)
        throw DegenerateWeights("importance_log_marginal: too few successful draws");

    double mx = *std::max_element(logw.begin(), logw.end());
    double s1 = 0.0, s2 = 0.0;
    for (double lw : logw) {
        double w = std::exp(lw - mx);
        s1 += w;
        s2 += w * w;
    }
    double m = static_cast<double>(res.n_used);
    res.log_marginal = mx + std::log(s1 / m);
    res.ess = s1 * s1 / s2;
    if (res.ess < 10.0)
        throw DegenerateWeights("importance_log_marginal: effective sample size collapsed");

    // Jackknife on the log-mean.
    double mean_loo = 0.0;
    std::vector<double> loo(logw.size());
    for (std::size_t i = 0; i < logw.size(); ++i) {
        loo[i] = mx + std::log((s1 - std::exp(logw[i] - mx)) / (m - 1.0));
        mean_loo += loo[i];
    }
    mean_loo /= m;
    double var = 0.0;
    for (double v : loo) var += (v - mean_loo) * (v - mean_loo);
    res.std_error = std::sqrt((m - 1.0) / m * var);
    return res;
}

double rmse(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw DimensionMismatch("rmse: size mismatch");
    return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw InvalidParams("ks_statistic: empty sample");
    std::sort(samples.begin(), samples.end());
    double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double f = cdf(samples[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    }
    return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw InvalidParams("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double tv_on_grid(const Vec& p, const Vec& q) {
    if (p.size() != q.size()) throw DimensionMismatch("tv_on_grid: size mismatch");
    return 0.5 * (p - q).lpNorm<1>();
}

}  // namespace viscos
