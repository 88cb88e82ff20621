#include "viscos/inference_net.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "viscos/errors.hpp"

namespace viscos {

InferenceNet InferenceNet::make(Eigen::Index d, const std::vector<Eigen::Index>& hidden_widths,
                                std::uint64_t seed) {
    if (d < 1) throw InvalidParams("InferenceNet::make: d >= 1");
    InferenceNet net;
    net.d_ = d;
    Rng rng = make_rng(seed);
    Eigen::Index in = d;
    for (Eigen::Index h : hidden_widths) {
        if (h < 1) throw InvalidParams("InferenceNet::make: hidden width >= 1");
        net.w_.push_back(gaussian_matrix(rng, h, in) /
                         std::sqrt(static_cast<double>(in)));
        net.b_.push_back(Vec::Zero(h));
        in = h;
    }
    // Zero head: mu = 0 and log_sigma = 0 before any training.
    net.w_.push_back(Mat::Zero(2 * d, in));
    net.b_.push_back(Vec::Zero(2 * d));
    return net;
}

Vec InferenceNet::forward(const Vec& filled) const {
    return forward_trace(filled).output;
}

InferenceNet::Trace InferenceNet::forward_trace(const Vec& filled) const {
    if (filled.size() != d_) throw DimensionMismatch("InferenceNet: input size mismatch");
    Trace tr;
    tr.post.push_back(filled);
    for (std::size_t i = 0; i + 1 < w_.size(); ++i) {
        Vec z = w_[i] * tr.post.back() + b_[i];
        tr.pre.push_back(z);
        tr.post.push_back(z.cwiseMax(0.0));
    }
    tr.output = w_.back() * tr.post.back() + b_.back();
    return tr;
}

InferenceNet::Grads& InferenceNet::Grads::operator+=(const Grads& other) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] += other.w[i];
        b[i] += other.b[i];
    }
    return *this;
}

InferenceNet::Grads& InferenceNet::Grads::operator*=(double s) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= s;
        b[i] *= s;
    }
    return *this;
}

InferenceNet::Grads InferenceNet::zero_grads() const {
    Grads g;
    for (std::size_t i = 0; i < w_.size(); ++i) {
        g.w.push_back(Mat::Zero(w_[i].rows(), w_[i].cols()));
        g.b.push_back(Vec::Zero(b_[i].size()));
    }
    return g;
}

InferenceNet::Grads InferenceNet::backward(const Trace& tr, const Vec& dL_dout) const {
    Grads g = zero_grads();
    Vec cot = dL_dout;
    std::size_t last = w_.size() - 1;
    g.w[last] = cot * tr.post.back().transpose();
    g.b[last] = cot;
    cot = w_[last].transpose() * cot;
    for (std::size_t i = last; i-- > 0;) {
        for (Eigen::Index k = 0; k < cot.size(); ++k)
            if (tr.pre[i][k] <= 0.0) cot[k] = 0.0;
        g.w[i] = cot * tr.post[i].transpose();
        g.b[i] = cot;
        if (i > 0) cot = w_[i].transpose() * cot;
    }
    return g;
}

void InferenceNet::apply_update(const Grads& update) {
    for (std::size_t i = 0; i < w_.size(); ++i) {
        w_[i] += update.w[i];
        b_[i] += update.b[i];
    }
}

Eigen::Index InferenceNet::n_params() const {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < w_.size(); ++i) n += w_[i].size() + b_[i].size();
    return n;
}

VariationalPosterior amortized_infer(const InferenceNet& net, const Vec& y_O,
                                     const PartitionPair& parts, double fill_value) {
    return amortized_infer(net, y_O, parts,
                           Vec(Vec::Constant(parts.data.dim, fill_value)));
}

VariationalPosterior amortized_infer(const InferenceNet& net, const Vec& y_O,
                                     const PartitionPair& parts, const Vec& fill_values) {
    Vec filled = assemble(parts.data, y_O, gather(fill_values, parts.data.hidden));
    Vec head = net.forward(filled);
    Eigen::Index d = net.dim();
    VariationalPosterior q;
    q.mu = gather(head.head(d), parts.latent.hidden);
    q.log_sigma = gather(head.tail(d), parts.latent.hidden);
    return q;
}

Vec amortized_head_cotangent(const PartitionPair& parts, const Vec& dL_dmu,
                             const Vec& dL_dlogsigma) {
    int d = parts.latent.dim;
    Vec cot = Vec::Zero(2 * d);
    cot.head(d) = scatter(dL_dmu, parts.latent.hidden, d);
    cot.tail(d) = scatter(dL_dlogsigma, parts.latent.hidden, d);
    return cot;
}

namespace {
nlohmann::json mat_json(const Mat& m) {
    nlohmann::json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
}
Mat mat_from(const nlohmann::json& j) {
    Eigen::Index rows = j.at("rows"), cols = j.at("cols");
    std::vector<double> data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw ConfigError("inference net json: matrix size mismatch");
    Mat m(rows, cols);
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[at++];
    return m;
}
}  // namespace

std::string InferenceNet::to_json() const {
    nlohmann::json j;
    j["dim"] = d_;
    j["layers"] = nlohmann::json::array();
    for (std::size_t i = 0; i < w_.size(); ++i) {
        nlohmann::json l;
        l["w"] = mat_json(w_[i]);
        l["b"] = std::vector<double>(b_[i].data(), b_[i].data() + b_[i].size());
        j["layers"].push_back(l);
    }
    return j.dump(2);
}

InferenceNet InferenceNet::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    InferenceNet net;
    net.d_ = j.at("dim");
    for (const auto& l : j.at("layers")) {
        net.w_.push_back(mat_from(l.at("w")));
        std::vector<double> b = l.at("b");
        net.b_.push_back(Eigen::Map<const Vec>(b.data(), static_cast<Eigen::Index>(b.size())));
    }
    if (net.w_.empty() || net.w_.back().rows() != 2 * net.d_)
        throw ConfigError("inference net json: head size mismatch");
    return net;
}

void InferenceNet::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("InferenceNet::save: cannot open " + path);
    out << to_json() << "\n";
}

InferenceNet InferenceNet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("InferenceNet::load: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

}  // namespace viscos
