#include "viscos/flow.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace viscos {

namespace {
double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}
constexpr double kSwishScale = 1.1;  // keeps sup|act'| < 1
}  // namespace

double lipswish(double z) { return z * sigmoid(z) / kSwishScale; }

double lipswish_d1(double z) {
    double s = sigmoid(z);
    return (s + z * s * (1.0 - s)) / kSwishScale;
}

double lipswish_d2(double z) {
    double s = sigmoid(z);
    return (s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))) / kSwishScale;
}

double spectral_norm_estimate(const Mat& w, long n_power_iter) {
    if (w.size() == 0) return 0.0;
    // deterministic start vector; power iteration on w^T w
    Vec v = Vec::Ones(w.cols()).normalized();
    double sigma = 0.0;
    for (long i = 0; i < n_power_iter; ++i) {
        Vec u = w * v;
        double un = u.norm();
        if (un == 0.0) return 0.0;
        v = w.transpose() * (u / un);
        sigma = v.norm();
        if (sigma == 0.0) return 0.0;
        v /= sigma;
    }
    return sigma;
}

Mat spectral_normalize_matrix(const Mat& w, double target, long n_power_iter) {
    double sigma = spectral_norm_estimate(w, n_power_iter);
    if (sigma <= target || sigma == 0.0) return w;
    return w * (target / sigma);
}

ResidualLayer spectral_normalize(const ResidualLayer& layer, double target,
                                 long n_power_iter) {
    if (!(target > 0.0 && target < 1.0))
        throw InvalidParams("spectral_normalize: target must be in (0,1)");
    ResidualLayer out = layer;
    double per_matrix = std::sqrt(target);
    out.w1 = spectral_normalize_matrix(layer.w1, per_matrix, n_power_iter);
    out.w2 = spectral_normalize_matrix(layer.w2, per_matrix, n_power_iter);
    out.lipschitz_bound = target;
    return out;
}

FlowGrads& FlowGrads::operator+=(const FlowGrads& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].w1 += other.layers[i].w1;
        layers[i].b1 += other.layers[i].b1;
        layers[i].w2 += other.layers[i].w2;
        layers[i].b2 += other.layers[i].b2;
    }
    return *this;
}

FlowGrads& FlowGrads::operator*=(double s) {
    for (auto& l : layers) {
        l.w1 *= s;
        l.b1 *= s;
        l.w2 *= s;
        l.b2 *= s;
    }
    return *this;
}

Flow::Flow(Eigen::Index dim, std::vector<ResidualLayer> layers)
    : dim_(dim), layers_(std::move(layers)) {
    for (const auto& l : layers_) {
        if (l.w2.rows() != dim || l.w1.cols() != dim || l.w1.rows() != l.w2.cols() ||
            l.b1.size() != l.w1.rows() || l.b2.size() != dim)
            throw DimensionMismatch("Flow: inconsistent layer shapes");
    }
}

Flow Flow::identity(Eigen::Index dim, Eigen::Index n_layers, Eigen::Index hidden) {
    std::vector<ResidualLayer> layers;
    for (Eigen::Index i = 0; i < n_layers; ++i) {
        ResidualLayer l;
        l.w1 = Mat::Zero(hidden, dim);
        l.b1 = Vec::Zero(hidden);
        l.w2 = Mat::Zero(dim, hidden);
        l.b2 = Vec::Zero(dim);
        layers.push_back(std::move(l));
    }
    return Flow(dim, std::move(layers));
}

Flow Flow::random(Eigen::Index dim, Eigen::Index n_layers, Eigen::Index hidden,
                  double lipschitz_target, std::uint64_t seed, double weight_scale) {
    Rng rng = make_rng(seed);
    std::vector<ResidualLayer> layers;
    for (Eigen::Index i = 0; i < n_layers; ++i) {
        ResidualLayer l;
        l.w1 = gaussian_matrix(rng, hidden, dim) * (weight_scale / std::sqrt(double(dim)));
        l.b1 = gaussian_vector(rng, hidden) * 0.1;
        l.w2 = gaussian_matrix(rng, dim, hidden) * (weight_scale / std::sqrt(double(hidden)));
        l.b2 = gaussian_vector(rng, dim) * 0.05;
        layers.push_back(spectral_normalize(l, lipschitz_target));
    }
    return Flow(dim, std::move(layers));
}

Vec Flow::layer_h(const ResidualLayer& l, const Vec& x) const {
    bump_ops();
    Vec z = l.w1 * x + l.b1;
    return l.w2 * z.unaryExpr([](double v) { return lipswish(v); }) + l.b2;
}

Vec Flow::layer_forward(const ResidualLayer& l, const Vec& x) const {
    return x + layer_h(l, x);
}

Vec Flow::layer_jvp(const ResidualLayer& l, const LayerState& st, const Vec& v) const {
    return v + layer_h_jvp(l, st, v);
}

Vec Flow::layer_vjp(const ResidualLayer& l, const LayerState& st, const Vec& u) const {
    return u + layer_h_vjp(l, st, u);
}

Vec Flow::layer_h_jvp(const ResidualLayer& l, const LayerState& st, const Vec& v) const {
    bump_ops();
    Vec t = l.w1 * v;
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] *= lipswish_d1(st.z[i]);
    return l.w2 * t;
}

Vec Flow::layer_h_vjp(const ResidualLayer& l, const LayerState& st, const Vec& u) const {
    bump_ops();
    Vec t = l.w2.transpose() * u;
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] *= lipswish_d1(st.z[i]);
    return l.w1.transpose() * t;
}

Vec Flow::forward(const Vec& x) const {
    if (x.size() != dim_) throw DimensionMismatch("Flow::forward: bad input size");
    Vec y = x;
    for (const auto& l : layers_) {
        y = layer_forward(l, y);
        if (!y.allFinite()) throw NonFinite("Flow::forward: non-finite layer output");
    }
    return y;
}

ForwardTrace Flow::forward_trace(const Vec& x) const {
    if (x.size() != dim_) throw DimensionMismatch("Flow::forward_trace: bad input size");
    ForwardTrace tr;
    tr.states.reserve(layers_.size());
    Vec cur = x;
    for (const auto& l : layers_) {
        LayerState st;
        st.x_in = cur;
        st.z = l.w1 * cur + l.b1;
        bump_ops();
        cur = cur + l.w2 * st.z.unaryExpr([](double v) { return lipswish(v); }) + l.b2;
        if (!cur.allFinite()) throw NonFinite("Flow::forward_trace: non-finite output");
        tr.states.push_back(std::move(st));
    }
    tr.output = cur;
    return tr;
}

Vec Flow::inverse(const Vec& y, double tol, long max_iter) const {
    if (y.size() != dim_) throw DimensionMismatch("Flow::inverse: bad input size");
    double layer_tol = std::max(tol * 0.05, 1e-15);
    Vec x = y;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        const ResidualLayer& l = *it;
        Vec target = x;
        Vec cur = target;
        bool ok = false;
        for (long k = 0; k < max_iter; ++k) {
            Vec next = target - layer_h(l, cur);
            double delta = (next - cur).lpNorm<Eigen::Infinity>();
            cur = next;
            if (delta <= layer_tol) {
                ok = true;
                break;
            }
        }
        if (!ok)
            throw NoConvergence("Flow::inverse: per-layer Banach iteration stalled",
                                (layer_forward(l, cur) - target).lpNorm<Eigen::Infinity>(),
                                max_iter);
        x = cur;
    }
    double res = (forward(x) - y).lpNorm<Eigen::Infinity>();
    if (res > tol)
        throw NoConvergence("Flow::inverse: composed residual above tolerance", res, max_iter);
    return x;
}

Vec Flow::jvp(const Vec& x, const Vec& v) const { return jvp(forward_trace(x), v); }
Vec Flow::vjp(const Vec& x, const Vec& u) const { return vjp(forward_trace(x), u); }

Vec Flow::jvp(const ForwardTrace& tr, const Vec& v) const {
    if (v.size() != dim_) throw DimensionMismatch("Flow::jvp: bad vector size");
    Vec t = v;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        t = layer_jvp(layers_[i], tr.states[i], t);
    return t;
}

Vec Flow::vjp(const ForwardTrace& tr, const Vec& u) const {
    if (u.size() != dim_) throw DimensionMismatch("Flow::vjp: bad vector size");
    Vec t = u;
    for (std::size_t i = layers_.size(); i-- > 0;)
        t = layer_vjp(layers_[i], tr.states[i], t);
    return t;
}

Vec Flow::layer_inv_jvp(const ResidualLayer& l, const LayerState& st, const Vec& v,
                        double trunc_tol) const {
    // (I + grad h)^{-1} v = sum_j (-grad h)^j v, truncated
    Vec term = v;
    Vec acc = v;
    double prev = term.lpNorm<Eigen::Infinity>();
    long grow = 0;
    for (long j = 0; j < 10000; ++j) {
        term = -layer_h_jvp(l, st, term);
        acc += term;
        double nrm = term.lpNorm<Eigen::Infinity>();
        if (nrm < trunc_tol) return acc;
        if (nrm > prev) {
            if (++grow >= 10)
                throw SeriesDiverging("Neumann series diverging (10 growing terms)");
        } else {
            grow = 0;
        }
        prev = nrm;
    }
    throw NoConvergence("Neumann series failed to truncate", prev, 10000);
}

Vec Flow::layer_inv_vjp(const ResidualLayer& l, const LayerState& st, const Vec& u,
                        double trunc_tol) const {
    Vec term = u;
    Vec acc = u;
    double prev = term.lpNorm<Eigen::Infinity>();
    long grow = 0;
    for (long j = 0; j < 10000; ++j) {
        term = -layer_h_vjp(l, st, term);
        acc += term;
        double nrm = term.lpNorm<Eigen::Infinity>();
        if (nrm < trunc_tol) return acc;
        if (nrm > prev) {
            if (++grow >= 10)
                throw SeriesDiverging("Neumann series diverging (10 growing terms)");
        } else {
            grow = 0;
        }
        prev = nrm;
    }
    throw NoConvergence("Neumann series failed to truncate", prev, 10000);
}

Vec Flow::inv_jvp(const Vec& x, const Vec& v, double trunc_tol) const {
    return inv_jvp(forward_trace(x), v, trunc_tol);
}
Vec Flow::inv_vjp(const Vec& x, const Vec& u, double trunc_tol) const {
    return inv_vjp(forward_trace(x), u, trunc_tol);
}

Vec Flow::inv_jvp(const ForwardTrace& tr, const Vec& v, double trunc_tol) const {
    if (v.size() != dim_) throw DimensionMismatch("Flow::inv_jvp: bad vector size");
    // J^{-1} = J_1^{-1} ... J_L^{-1}
    Vec t = v;
    for (std::size_t i = layers_.size(); i-- > 0;)
        t = layer_inv_jvp(layers_[i], tr.states[i], t, trunc_tol);
    return t;
}

Vec Flow::inv_vjp(const ForwardTrace& tr, const Vec& u, double trunc_tol) const {
    if (u.size() != dim_) throw DimensionMismatch("Flow::inv_vjp: bad vector size");
    // J^{-T} = J_L^{-T} ... J_1^{-T}
    Vec t = u;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        t = layer_inv_vjp(layers_[i], tr.states[i], t, trunc_tol);
    return t;
}

Vec Flow::grad_bilinear_x(const Vec& x, const Vec& u, const Vec& v) const {
    return grad_bilinear_x(forward_trace(x), u, v);
}

Vec Flow::grad_bilinear_x(const ForwardTrace& tr, const Vec& u, const Vec& v) const {
    const std::size_t L = layers_.size();
    // forward tangent per layer input
    std::vector<Vec> tangents(L);
    Vec t = v;
    for (std::size_t i = 0; i < L; ++i) {
        tangents[i] = t;
        t = layer_jvp(layers_[i], tr.states[i], t);
    }
    // reverse sweep carrying (ubar, udot); udot at the input is grad_x [u^T J v]
    Vec ubar = u;
    Vec udot = Vec::Zero(dim_);
    for (std::size_t i = L; i-- > 0;) {
        const ResidualLayer& l = layers_[i];
        const LayerState& st = tr.states[i];
        bump_ops(2);
        Vec q_u = l.w2.transpose() * ubar;
        Vec q_ud = l.w2.transpose() * udot;
        Vec w1t = l.w1 * tangents[i];
        Vec mixed(q_u.size());
        Vec lin(q_u.size());
        for (Eigen::Index k = 0; k < q_u.size(); ++k) {
            lin[k] = lipswish_d1(st.z[k]) * q_ud[k];
            mixed[k] = lipswish_d2(st.z[k]) * w1t[k] * q_u[k];
        }
        udot = udot + l.w1.transpose() * (lin + mixed);
        Vec pu(q_u.size());
        for (Eigen::Index k = 0; k < q_u.size(); ++k) pu[k] = lipswish_d1(st.z[k]) * q_u[k];
        ubar = ubar + l.w1.transpose() * pu;
    }
    return udot;
}

Vec Flow::grad_logabsdet_x(const Vec& x, double trunc_tol) const {
    ForwardTrace tr = forward_trace(x);
    Vec g = Vec::Zero(dim_);
    Vec e = Vec::Zero(dim_);
    for (Eigen::Index k = 0; k < dim_; ++k) {
        e[k] = 1.0;
        Vec w = inv_vjp(tr, e, trunc_tol);  // J^{-T} e_k
        g += grad_bilinear_x(tr, w, e);
        e[k] = 0.0;
    }
    return g;
}

FlowGrads Flow::zero_grads() const {
    FlowGrads g;
    g.layers.reserve(layers_.size());
    for (const auto& l : layers_) {
        LayerGrads lg;
        lg.w1 = Mat::Zero(l.w1.rows(), l.w1.cols());
        lg.b1 = Vec::Zero(l.b1.size());
        lg.w2 = Mat::Zero(l.w2.rows(), l.w2.cols());
        lg.b2 = Vec::Zero(l.b2.size());
        g.layers.push_back(std::move(lg));
    }
    return g;
}

FlowGrads Flow::param_vjp(const ForwardTrace& tr, const Vec& u) const {
    FlowGrads g = zero_grads();
    Vec xb = u;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const ResidualLayer& l = layers_[i];
        const LayerState& st = tr.states[i];
        bump_ops();
        Vec a = st.z.unaryExpr([](double v) { return lipswish(v); });
        Vec zb = l.w2.transpose() * xb;
        for (Eigen::Index k = 0; k < zb.size(); ++k) zb[k] *= lipswish_d1(st.z[k]);
        g.layers[i].w2 += xb * a.transpose();
        g.layers[i].b2 += xb;
        g.layers[i].w1 += zb * st.x_in.transpose();
        g.layers[i].b1 += zb;
        xb = xb + l.w1.transpose() * zb;
    }
    return g;
}

FlowGrads Flow::param_grad_bilinear(const ForwardTrace& tr, const Vec& u, const Vec& v) const {
    const std::size_t L = layers_.size();
    std::vector<Vec> tangents(L);
    Vec t = v;
    for (std::size_t i = 0; i < L; ++i) {
        tangents[i] = t;
        t = layer_jvp(layers_[i], tr.states[i], t);
    }
    FlowGrads g = zero_grads();
    Vec tbar = u;
    Vec xbar = Vec::Zero(dim_);
    for (std::size_t i = L; i-- > 0;) {
        const ResidualLayer& l = layers_[i];
        const LayerState& st = tr.states[i];
        bump_ops(2);
        Vec q = l.w1 * tangents[i];
        Vec rbar = l.w2.transpose() * tbar;
        Vec w2xbar = l.w2.transpose() * xbar;
        Vec a(st.z.size()), r(st.z.size()), zbar(st.z.size()), qbar(st.z.size());
        for (Eigen::Index k = 0; k < st.z.size(); ++k) {
            double p = lipswish_d1(st.z[k]);
            double pp = lipswish_d2(st.z[k]);
            a[k] = lipswish(st.z[k]);
            r[k] = p * q[k];
            zbar[k] = pp * q[k] * rbar[k] + p * w2xbar[k];
            qbar[k] = p * rbar[k];
        }
        g.layers[i].w2 += tbar * r.transpose() + xbar * a.transpose();
        g.layers[i].b2 += xbar;
        g.layers[i].w1 += zbar * st.x_in.transpose() + qbar * tangents[i].transpose();
        g.layers[i].b1 += zbar;
        tbar = tbar + l.w1.transpose() * qbar;
        xbar = xbar + l.w1.transpose() * zbar;
    }
    return g;
}

Mat Flow::dense_jacobian(const Vec& x) const {
    ForwardTrace tr = forward_trace(x);
    Mat j(dim_, dim_);
    Vec e = Vec::Zero(dim_);
    for (Eigen::Index k = 0; k < dim_; ++k) {
        e[k] = 1.0;
        j.col(k) = jvp(tr, e);
        e[k] = 0.0;
    }
    return j;
}

double Flow::base_log_density(const Vec& x) {
    constexpr double kLog2Pi = 1.8378770664093454836;
    return -0.5 * x.squaredNorm() - 0.5 * kLog2Pi * static_cast<double>(x.size());
}

double Flow::log_density(const Vec& y, double inv_tol) const {
    Vec x = inverse(y, inv_tol);
    return base_log_density(x) - dense_logabsdet(dense_jacobian(x));
}

double Flow::layer_lipschitz_estimate(Eigen::Index layer, long n_power_iter) const {
    const ResidualLayer& l = layers_.at(static_cast<std::size_t>(layer));
    return spectral_norm_estimate(l.w1, n_power_iter) *
           spectral_norm_estimate(l.w2, n_power_iter);
}

namespace {
nlohmann::json matrix_to_json(const Mat& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Mat matrix_from_json(const nlohmann::json& j) {
    Eigen::Index rows = j.at("rows"), cols = j.at("cols");
    std::vector<double> flat = j.at("data");
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
        throw ConfigError("flow json: matrix size mismatch");
    Mat m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index jj = 0; jj < cols; ++jj) m(i, jj) = flat[k++];
    return m;
}

nlohmann::json vector_to_json(const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vec vector_from_json(const nlohmann::json& j) {
    std::vector<double> data = j;
    return Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
}
}  // namespace

std::string Flow::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["dim"] = dim_;
    j["base"] = "std_normal";
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers_) {
        j["layers"].push_back({{"w1", matrix_to_json(l.w1)},
                               {"b1", vector_to_json(l.b1)},
                               {"w2", matrix_to_json(l.w2)},
                               {"b2", vector_to_json(l.b2)},
                               {"lipschitz_bound", l.lipschitz_bound}});
    }
    return j.dump(2);
}

Flow Flow::from_json(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        if (j.at("version") != 1) throw ConfigError("flow json: unsupported version");
        if (j.at("base") != "std_normal") throw ConfigError("flow json: unknown base");
        Eigen::Index dim = j.at("dim");
        std::vector<ResidualLayer> layers;
        for (const auto& lj : j.at("layers")) {
            ResidualLayer l;
            l.w1 = matrix_from_json(lj.at("w1"));
            l.b1 = vector_from_json(lj.at("b1"));
            l.w2 = matrix_from_json(lj.at("w2"));
            l.b2 = vector_from_json(lj.at("b2"));
            l.lipschitz_bound = lj.at("lipschitz_bound");
            layers.push_back(std::move(l));
        }
        return Flow(dim, std::move(layers));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("flow json: ") + e.what());
    }
}

void Flow::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("Flow::save: cannot open " + path);
    out << to_json() << "\n";
}

Flow Flow::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("Flow::load: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

}  // namespace viscos
