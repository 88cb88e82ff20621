#include "viscos/training.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace viscos {

Vec Dataset::column_medians() const {
    Vec med(values.cols());
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        std::vector<double> col;
        for (Eigen::Index r = 0; r < values.rows(); ++r)
            if (!mask || (*mask)(r, c) > 0.5) col.push_back(values(r, c));
        if (col.empty()) {
            med[c] = 0.0;
            continue;
        }
        std::sort(col.begin(), col.end());
        std::size_t m = col.size() / 2;
        med[c] = (col.size() % 2 == 1) ? col[m] : 0.5 * (col[m - 1] + col[m]);
    }
    return med;
}

std::vector<int> Dataset::observed_indices(long i) const {
    std::vector<int> idx;
    for (int c = 0; c < d(); ++c)
        if (!mask || (*mask)(i, c) > 0.5) idx.push_back(c);
    return idx;
}

void Dataset::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("Dataset::save_csv: cannot open " + path);
    for (int c = 0; c < d(); ++c) out << (c ? "," : "") << "x" << c;
    if (mask)
        for (int c = 0; c < d(); ++c) out << ",m" << c;
    out << "\n";
    out.precision(17);
    for (long r = 0; r < n(); ++r) {
        for (int c = 0; c < d(); ++c) out << (c ? "," : "") << values(r, c);
        if (mask)
            for (int c = 0; c < d(); ++c) out << "," << static_cast<int>((*mask)(r, c));
        out << "\n";
    }
}

Dataset Dataset::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("Dataset::load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("Dataset::load_csv: empty file " + path);

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    int d = 0, m = 0;
    for (const auto& h : header) {
        if (h.rfind("x", 0) == 0) ++d;
        else if (h.rfind("m", 0) == 0) ++m;
        else throw ConfigError("Dataset::load_csv: unexpected column " + h);
    }
    if (d == 0 || (m != 0 && m != d))
        throw ConfigError("Dataset::load_csv: malformed header in " + path);

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (static_cast<int>(row.size()) != d + m)
            throw ConfigError("Dataset::load_csv: ragged row in " + path);
        rows.push_back(std::move(row));
    }

    Dataset data;
    data.values.resize(static_cast<Eigen::Index>(rows.size()), d);
    if (m > 0) data.mask = Mat(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int c = 0; c < d; ++c) data.values(static_cast<Eigen::Index>(r), c) = rows[r][c];
        if (m > 0)
            for (int c = 0; c < d; ++c)
                (*data.mask)(static_cast<Eigen::Index>(r), c) = rows[r][d + c];
    }
    return data;
}

namespace {

// 6x6 digit glyphs, one string per row, '#' = on.
const char* const kGlyphs[10][6] = {
    {".####.", "#....#", "#....#", "#....#", "#....#", ".####."},
    {"..#...", ".##...", "..#...", "..#...", "..#...", ".####."},
    {".####.", "#....#", "...##.", "..#...", ".#....", "######"},
    {".####.", "#....#", "..###.", ".....#", "#....#", ".####."},
    {"...##.", "..#.#.", ".#..#.", "######", "....#.", "....#."},
    {"######", "#.....", "#####.", ".....#", "#....#", ".####."},
    {".####.", "#.....", "#####.", "#....#", "#....#", ".####."},
    {"######", "....#.", "...#..", "..#...", ".#....", ".#...."},
    {".####.", "#....#", ".####.", "#....#", "#....#", ".####."},
    {".####.", "#....#", "#....#", ".#####", ".....#", ".####."},
};

}  // namespace

Dataset gen_dataset(DatasetKind kind, long n, std::uint64_t seed,
                    const DatasetParams& params) {
    if (n < 1) throw InvalidParams("gen_dataset: n >= 1");
    Rng rng = make_rng(seed);
    Dataset data;
    switch (kind) {
        case DatasetKind::TwoMoons: {
            data.values.resize(n, 2);
            std::uniform_real_distribution<double> angle(0.0, M_PI);
            std::bernoulli_distribution which(0.5);
            std::normal_distribution<double> jitter(0.0, params.noise);
            for (long i = 0; i < n; ++i) {
                double t = angle(rng);
                double x, y;
                if (which(rng)) {
                    x = std::cos(t);
                    y = std::sin(t) - 0.25;
                } else {
                    x = 1.0 - std::cos(t);
                    y = 0.25 - std::sin(t);
                }
                data.values(i, 0) = x + jitter(rng);
                data.values(i, 1) = y + jitter(rng);
            }
            break;
        }
        case DatasetKind::GaussMixture: {
            if (params.n_components < 1) throw InvalidParams("gen_dataset: n_components >= 1");
            data.values.resize(n, 2);
            std::uniform_int_distribution<int> comp(0, params.n_components - 1);
            std::normal_distribution<double> g(0.0, 0.5);
            for (long i = 0; i < n; ++i) {
                double phi = 2.0 * M_PI * comp(rng) / params.n_components;
                data.values(i, 0) = params.separation * std::cos(phi) + g(rng);
                data.values(i, 1) = params.separation * std::sin(phi) + g(rng);
            }
            break;
        }
        case DatasetKind::CorrelatedGauss: {
            if (params.dim < 1) throw InvalidParams("gen_dataset: dim >= 1");
            if (!(std::abs(params.rho) < 1.0)) throw InvalidParams("gen_dataset: |rho| < 1");
            int d = params.dim;
            Mat cov(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    cov(i, j) = std::pow(params.rho, std::abs(i - j));
            Mat chol = Eigen::LLT<Mat>(cov).matrixL();
            data.values.resize(n, d);
            for (long i = 0; i < n; ++i)
                data.values.row(i) = (chol * gaussian_vector(rng, d)).transpose();
            break;
        }
        case DatasetKind::TinyDigits: {
            data.values.resize(n, 36);
            std::uniform_int_distribution<int> digit(0, 9);
            std::normal_distribution<double> jitter(0.0, params.noise);
            for (long i = 0; i < n; ++i) {
                int dg = digit(rng);
                for (int r = 0; r < 6; ++r)
                    for (int c = 0; c < 6; ++c)
                        data.values(i, 6 * r + c) =
                            (kGlyphs[dg][r][c] == '#' ? 1.0 : -1.0) + jitter(rng);
            }
            break;
        }
    }
    return data;
}

void apply_missingness(Dataset& data, double missing_fraction, std::uint64_t seed) {
    if (!(missing_fraction >= 0.0 && missing_fraction < 1.0))
        throw InvalidParams("apply_missingness: fraction in [0,1)");
    Rng rng = make_rng(seed);
    std::bernoulli_distribution drop(missing_fraction);
    Mat mask = Mat::Ones(data.n(), data.d());
    for (long r = 0; r < data.n(); ++r) {
        for (int c = 0; c < data.d(); ++c)
            if (drop(rng)) mask(r, c) = 0.0;
        if (mask.row(r).sum() < 0.5) {
            std::uniform_int_distribution<int> keep(0, data.d() - 1);
            mask(r, keep(rng)) = 1.0;
        }
    }
    data.mask = mask;
}

namespace {

Eigen::Index flow_param_count(const Flow& flow) {
    Eigen::Index n = 0;
    for (const auto& l : flow.layers()) n += l.w1.size() + l.b1.size() + l.w2.size() + l.b2.size();
    return n;
}

Vec pack_flow_grads(const FlowGrads& g) {
    Eigen::Index n = 0;
    for (const auto& l : g.layers) n += l.w1.size() + l.b1.size() + l.w2.size() + l.b2.size();
    Vec out(n);
    Eigen::Index at = 0;
    auto put_mat = [&](const Mat& m) {
        out.segment(at, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
        at += m.size();
    };
    auto put_vec = [&](const Vec& v) {
        out.segment(at, v.size()) = v;
        at += v.size();
    };
    for (const auto& l : g.layers) {
        put_mat(l.w1);
        put_vec(l.b1);
        put_mat(l.w2);
        put_vec(l.b2);
    }
    return out;
}

void apply_flow_update(Flow& flow, const Vec& update, double sign) {
    Eigen::Index at = 0;
    for (auto& l : flow.layers()) {
        l.w1 += sign * Eigen::Map<const Mat>(update.data() + at, l.w1.rows(), l.w1.cols());
        at += l.w1.size();
        l.b1 += sign * update.segment(at, l.b1.size());
        at += l.b1.size();
        l.w2 += sign * Eigen::Map<const Mat>(update.data() + at, l.w2.rows(), l.w2.cols());
        at += l.w2.size();
        l.b2 += sign * update.segment(at, l.b2.size());
        at += l.b2.size();
    }
}

void renormalize(Flow& flow, long power_iter) {
    for (auto& l : flow.layers()) l = spectral_normalize(l, l.lipschitz_bound, power_iter);
}

Eigen::Index net_param_count(const InferenceNet& net) {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < net.weights().size(); ++i)
        n += net.weights()[i].size() + net.biases()[i].size();
    return n;
}

Vec pack_net_grads(const InferenceNet::Grads& g) {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < g.w.size(); ++i) n += g.w[i].size() + g.b[i].size();
    Vec out(n);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < g.w.size(); ++i) {
        out.segment(at, g.w[i].size()) =
            Eigen::Map<const Vec>(g.w[i].data(), g.w[i].size());
        at += g.w[i].size();
        out.segment(at, g.b[i].size()) = g.b[i];
        at += g.b[i].size();
    }
    return out;
}

void apply_net_update(InferenceNet& net, const Vec& update, double sign) {
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < net.weights().size(); ++i) {
        Mat& w = net.weights()[i];
        w += sign * Eigen::Map<const Mat>(update.data() + at, w.rows(), w.cols());
        at += w.size();
        Vec& b = net.biases()[i];
        b += sign * update.segment(at, b.size());
        at += b.size();
    }
}

// Gradient of the per-sample negative log-likelihood w.r.t. flow parameters,
// plus the loss value. The data point enters through the iterative inverse,
// so the parameter dependence has an implicit part (via x) and an explicit
// part (the volume term at fixed x).
struct MleSample {
    FlowGrads grad;
    double nll;
};

MleSample mle_sample_grad(const Flow& flow, const Vec& y, double inverse_tol,
                          double trunc_tol) {
    Vec x = flow.inverse(y, inverse_tol);
    ForwardTrace tr = flow.forward_trace(x);
    int d = static_cast<int>(flow.dim());

    Vec gx = x + flow.grad_logabsdet_x(x, trunc_tol);
    FlowGrads g = flow.param_vjp(tr, flow.inv_vjp(tr, gx, trunc_tol));
    g *= -1.0;
    for (int k = 0; k < d; ++k) {
        Vec e = Vec::Zero(d);
        e[k] = 1.0;
        g += flow.param_grad_bilinear(tr, flow.inv_vjp(tr, e, trunc_tol), e);
    }

    double lad = dense_logabsdet(flow.dense_jacobian(x));
    return {std::move(g), -Flow::base_log_density(x) + lad};
}

}  // namespace

TrainReport mle_train(Flow& flow, const Dataset& data, const TrainConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch < 1) throw InvalidParams("mle_train: epochs, batch >= 1");
    if (data.d() != static_cast<int>(flow.dim()))
        throw DimensionMismatch("mle_train: dataset dimension mismatch");

    Adam opt(flow_param_count(flow), cfg.lr);
    Rng rng = make_rng(derive_seed(cfg.seed, 0x31));
    std::vector<long> order(static_cast<std::size_t>(data.n()));
    for (long i = 0; i < data.n(); ++i) order[static_cast<std::size_t>(i)] = i;

    TrainReport report;
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_lr(cfg.lr * std::pow(cfg.lr_epoch_decay, static_cast<double>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = opt.lr();
        long n_used = 0;
        for (long start = 0; start < data.n(); start += cfg.batch) {
            long stop = std::min<long>(start + cfg.batch, data.n());
            FlowGrads batch_g = flow.zero_grads();
            long ok = 0;
            for (long i = start; i < stop; ++i) {
                try {
                    MleSample s =
                        mle_sample_grad(flow, data.row(order[static_cast<std::size_t>(i)]),
                                        cfg.inverse_tol, cfg.trunc_tol);
                    batch_g += s.grad;
                    rec.mean_loss += s.nll;
                    ++ok;
                } catch (const NoConvergence&) {
                    ++rec.n_skipped;
                } catch (const NonFinite&) {
                    ++rec.n_skipped;
                }
            }
            if (ok == 0) continue;
            batch_g *= 1.0 / static_cast<double>(ok);
            n_used += ok;

            Vec flat = pack_flow_grads(batch_g);
            if (!flat.allFinite()) {
                ++report.n_nonfinite_rollbacks;
                continue;
            }
            apply_flow_update(flow, opt.step(flat), -1.0);
            renormalize(flow, cfg.renorm_power_iter);
        }
        if (n_used > 0) rec.mean_loss /= static_cast<double>(n_used);
        if (cfg.verbose)
            std::cerr << "epoch " << epoch << " nll " << rec.mean_loss << " skipped "
                      << rec.n_skipped << "\n";
        report.epochs.push_back(rec);
    }
    return report;
}

namespace {

// Per-row bound gradient for an incomplete observation: single-probe
// stochastic volume gradient, one constraint solve, one shared adjoint solve.
struct IncompleteSample {
    FlowGrads flow_grad;        // gradient of the loss (negative bound)
    InferenceNet::Grads net_grad;
    double loss;
};

std::optional<IncompleteSample> incomplete_sample_grad(
    const Flow& flow, const InferenceNet& net, const Vec& y_O, const PartitionPair& parts,
    const Vec& fills, const IncompleteTrainConfig& cfg, Rng& rng, std::uint64_t probe_seed) {
    int d = static_cast<int>(flow.dim());

    Vec filled = assemble(parts.data, y_O, gather(fills, parts.data.hidden));
    InferenceNet::Trace ntr = net.forward_trace(filled);
    VariationalPosterior q;
    q.mu = gather(ntr.output.head(d), parts.latent.hidden);
    q.log_sigma = gather(ntr.output.tail(d), parts.latent.hidden);

    Vec eps = gaussian_vector(rng, q.dim());
    Vec sigma = q.sigma();
    Vec x_H = q.mu + sigma.cwiseProduct(eps);

    try {
        SolveResult res = solve_constraint(flow, y_O, x_H, parts, cfg.fp_cfg, cfg.nk_cfg);
        Vec x = assemble(parts.latent, res.x_O, x_H);
        ForwardTrace tr = flow.forward_trace(x);
        PartitionedJacobian pj =
            partitioned_jacobian(flow, x, parts, cfg.nk_cfg.trunc_tol);
        GmresConfig adj = cfg.grad_gmres;
        adj.preconditioner = pj.g_oo.transpose();

        Rng probe_rng = make_rng(probe_seed);
        Vec z = rademacher_vector(probe_rng, parts.latent.d_O());
        Vec w = gmres(pj.j_oo.transpose(), z, adj).x;
        Vec w_s = scatter(w, parts.data.observed, d);
        Vec z_s = scatter(z, parts.latent.observed, d);
        Vec g_lad = flow.grad_bilinear_x(tr, w_s, z_s);

        Vec rhs = gather(g_lad, parts.latent.observed) + res.x_O;
        Vec a = gmres(pj.j_oo.transpose(), rhs, adj).x;
        Vec dB_dxH = -x_H - gather(g_lad, parts.latent.hidden) + pj.j_oh.adjoint(a);
        if (!dB_dxH.allFinite()) return std::nullopt;

        IncompleteSample out;
        // Bound gradient w.r.t. flow parameters: implicit part through the
        // solved block plus the explicit volume part; loss flips the sign.
        out.flow_grad = flow.param_vjp(tr, scatter(a, parts.data.observed, d));
        FlowGrads vol = flow.param_grad_bilinear(tr, w_s, z_s);
        vol *= -1.0;
        out.flow_grad += vol;
        out.flow_grad *= -1.0;

        Vec dB_dmu = dB_dxH;
        Vec dB_dlogsigma =
            dB_dxH.cwiseProduct(sigma).cwiseProduct(eps) + Vec::Ones(q.dim());
        Vec head_cot = amortized_head_cotangent(parts, Vec(-dB_dmu), Vec(-dB_dlogsigma));
        out.net_grad = net.backward(ntr, head_cot);

        out.loss = -(Flow::base_log_density(x_H) + q.entropy() +
                     Flow::base_log_density(res.x_O) - dense_lad_joo(flow, x, parts));
        return out;
    } catch (const NoConvergence&) {
        return std::nullopt;
    } catch (const SingularSubJacobian&) {
        return std::nullopt;
    }
}

}  // namespace

TrainReport train_incomplete(Flow& flow, InferenceNet& net, const Dataset& data,
                             const IncompleteTrainConfig& cfg) {
    const TrainConfig& base = cfg.base;
    if (base.epochs < 1 || base.batch < 1)
        throw InvalidParams("train_incomplete: epochs, batch >= 1");
    if (data.d() != static_cast<int>(flow.dim()))
        throw DimensionMismatch("train_incomplete: dataset dimension mismatch");
    if (net.dim() != flow.dim())
        throw DimensionMismatch("train_incomplete: net dimension mismatch");

    Vec fills = data.column_medians();
    Adam flow_opt(flow_param_count(flow), base.lr);
    Adam net_opt(net_param_count(net), cfg.net_lr);
    Rng rng = make_rng(derive_seed(base.seed, 0x37));
    std::vector<long> order(static_cast<std::size_t>(data.n()));
    for (long i = 0; i < data.n(); ++i) order[static_cast<std::size_t>(i)] = i;

    TrainReport report;
    long total_rows = 0, total_skipped = 0;
    for (long epoch = 0; epoch < base.epochs; ++epoch) {
        double scale = std::pow(base.lr_epoch_decay, static_cast<double>(epoch));
        flow_opt.set_lr(base.lr * scale);
        net_opt.set_lr(cfg.net_lr * scale);
        std::shuffle(order.begin(), order.end(), rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = flow_opt.lr();
        long n_used = 0;
        for (long start = 0; start < data.n(); start += base.batch) {
            long stop = std::min<long>(start + base.batch, data.n());
            FlowGrads fg = flow.zero_grads();
            InferenceNet::Grads ng = net.zero_grads();
            long ok = 0, net_ok = 0;
            for (long bi = start; bi < stop; ++bi) {
                long i = order[static_cast<std::size_t>(bi)];
                ++total_rows;
                std::vector<int> obs = data.observed_indices(i);
                std::uint64_t probe_seed = derive_seed(
                    base.seed, 0x900000 + static_cast<std::uint64_t>(epoch) * 100000 +
                                   static_cast<std::uint64_t>(i));
                if (static_cast<int>(obs.size()) == data.d()) {
                    try {
                        MleSample s = mle_sample_grad(flow, data.row(i), base.inverse_tol,
                                                      base.trunc_tol);
                        fg += s.grad;
                        rec.mean_loss += s.nll;
                        ++ok;
                    } catch (const NoConvergence&) {
                        ++rec.n_skipped;
                        ++total_skipped;
                    } catch (const NonFinite&) {
                        ++rec.n_skipped;
                        ++total_skipped;
                    }
                    continue;
                }
                PartitionPair parts = aligned_pair(make_partition(obs, data.d()));
                Vec y_O = gather(data.row(i), parts.data.observed);
                auto s = incomplete_sample_grad(flow, net, y_O, parts, fills, cfg, rng,
                                                probe_seed);
                if (!s) {
                    ++rec.n_skipped;
                    ++total_skipped;
                    continue;
                }
                fg += s->flow_grad;
                ng += s->net_grad;
                rec.mean_loss += s->loss;
                ++ok;
                ++net_ok;
            }
            if (ok == 0) continue;
            fg *= 1.0 / static_cast<double>(ok);
            n_used += ok;

            Vec flat = pack_flow_grads(fg);
            if (!flat.allFinite()) {
                ++report.n_nonfinite_rollbacks;
            } else {
                apply_flow_update(flow, flow_opt.step(flat), -1.0);
                renormalize(flow, base.renorm_power_iter);
            }
            if (net_ok > 0) {
                ng *= 1.0 / static_cast<double>(net_ok);
                Vec nflat = pack_net_grads(ng);
                if (!nflat.allFinite()) ++report.n_nonfinite_rollbacks;
                else apply_net_update(net, net_opt.step(nflat), -1.0);
            }
        }
        if (n_used > 0) rec.mean_loss /= static_cast<double>(n_used);
        if (base.verbose)
            std::cerr << "epoch " << epoch << " loss " << rec.mean_loss << " skipped "
                      << rec.n_skipped << "\n";
        report.epochs.push_back(rec);
    }
    if (total_skipped > static_cast<long>(cfg.skip_fraction_abort *
                                          static_cast<double>(total_rows)))
        throw NoConvergence("train_incomplete: too many rows skipped", 0.0, total_skipped);
    return report;
}

Mat impute_dataset(const Flow& flow, const InferenceNet& net, const Dataset& data,
                   long n_draws, std::uint64_t seed, const FixedPointConfig& fp_cfg,
                   const NewtonKrylovConfig& nk_cfg) {
    if (n_draws < 1) throw InvalidParams("impute_dataset: n_draws >= 1");
    Vec fills = data.column_medians();
    Mat out = data.values;
    for (long i = 0; i < data.n(); ++i) {
        std::vector<int> obs = data.observed_indices(i);
        if (static_cast<int>(obs.size()) == data.d()) continue;
        PartitionPair parts = aligned_pair(make_partition(obs, data.d()));
        Vec y_O = gather(data.row(i), parts.data.observed);
        VariationalPosterior q = amortized_infer(net, y_O, parts, fills);
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        Vec acc = Vec::Zero(parts.data.d_H());
        long got = 0;
        for (long k = 0; k < n_draws; ++k) {
            Vec x_H = q.sample_path(gaussian_vector(rng, q.dim()));
            try {
                SolveResult res = solve_constraint(flow, y_O, x_H, parts, fp_cfg, nk_cfg);
                acc += res.y_H;
                ++got;
            } catch (const NoConvergence&) {
            } catch (const SingularSubJacobian&) {
            }
        }
        Vec y_H = got > 0 ? Vec(acc / static_cast<double>(got))
                          : gather(fills, parts.data.hidden);
        for (std::size_t k = 0; k < parts.data.hidden.size(); ++k)
            out(i, parts.data.hidden[k]) = y_H[static_cast<Eigen::Index>(k)];
    }
    return out;
}

Mat median_fill(const Dataset& data) {
    Vec med = data.column_medians();
    Mat out = data.values;
    if (!data.mask) return out;
    for (long r = 0; r < data.n(); ++r)
        for (int c = 0; c < data.d(); ++c)
            if ((*data.mask)(r, c) < 0.5) out(r, c) = med[c];
    return out;
}

double masked_rmse(const Mat& filled, const Mat& truth, const Mat& mask) {
    if (filled.rows() != truth.rows() || filled.cols() != truth.cols() ||
        mask.rows() != truth.rows() || mask.cols() != truth.cols())
        throw DimensionMismatch("masked_rmse: shape mismatch");
    double sum = 0.0;
    long count = 0;
    for (Eigen::Index r = 0; r < truth.rows(); ++r)
        for (Eigen::Index c = 0; c < truth.cols(); ++c)
            if (mask(r, c) < 0.5) {
                double e = filled(r, c) - truth(r, c);
                sum += e * e;
                ++count;
            }
    if (count == 0) throw InvalidParams("masked_rmse: no missing entries");
    return std::sqrt(sum / static_cast<double>(count));
}

}  // namespace viscos
