#include "csifp/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace csifp::nn {

int ParamPack::add_entry(const std::string& name, int rows, int cols, bool weight_decay) {
    Entry entry{name, values.size(), rows, cols};
    const Eigen::Index count = static_cast<Eigen::Index>(rows) * cols;
    values.conservativeResize(values.size() + count);
    grad.conservativeResize(values.size());
    decay_mask.conservativeResize(values.size());
    values.segment(entry.offset, count).setZero();
    grad.segment(entry.offset, count).setZero();
    decay_mask.segment(entry.offset, count).setConstant(weight_decay ? 1.0 : 0.0);
    entries_.push_back(entry);
    return static_cast<int>(entries_.size()) - 1;
}

int ParamPack::add_matrix(const std::string& name, int rows, int cols, bool weight_decay) {
    return add_entry(name, rows, cols, weight_decay);
}

int ParamPack::add_vector(const std::string& name, int size, bool weight_decay) {
    return add_entry(name, size, 1, weight_decay);
}

int ParamPack::add_scalar(const std::string& name, bool weight_decay) {
    return add_entry(name, 1, 1, weight_decay);
}

Eigen::Map<Eigen::MatrixXd> ParamPack::mat(int id) {
    const Entry& e = entries_[static_cast<std::size_t>(id)];
    return {values.data() + e.offset, e.rows, e.cols};
}

Eigen::Map<const Eigen::MatrixXd> ParamPack::mat(int id) const {
    const Entry& e = entries_[static_cast<std::size_t>(id)];
    return {values.data() + e.offset, e.rows, e.cols};
}

Eigen::Map<Eigen::VectorXd> ParamPack::vec(int id) {
    const Entry& e = entries_[static_cast<std::size_t>(id)];
    return {values.data() + e.offset, static_cast<Eigen::Index>(e.rows) * e.cols};
}

Eigen::Map<const Eigen::VectorXd> ParamPack::vec(int id) const {
    const Entry& e = entries_[static_cast<std::size_t>(id)];
    return {values.data() + e.offset, static_cast<Eigen::Index>(e.rows) * e.cols};
}

double& ParamPack::scalar(int id) { return values[entries_[static_cast<std::size_t>(id)].offset]; }

double ParamPack::scalar(int id) const { return values[entries_[static_cast<std::size_t>(id)].offset]; }

Eigen::Map<Eigen::MatrixXd> ParamPack::grad_mat(int id) {
    const Entry& e = entries_[static_cast<std::size_t>(id)];
    return {grad.data() + e.offset, e.rows, e.cols};
}

Eigen::Map<Eigen::VectorXd> ParamPack::grad_vec(int id) {
    const Entry& e = entries_[static_cast<std::size_t>(id)];
    return {grad.data() + e.offset, static_cast<Eigen::Index>(e.rows) * e.cols};
}

double& ParamPack::grad_scalar(int id) { return grad[entries_[static_cast<std::size_t>(id)].offset]; }

int ParamPack::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return static_cast<int>(i);
    }
    throw std::out_of_range("no tensor named " + name);
}

void ParamPack::save(std::ostream& out) const {
    const std::uint32_t n_tensors = static_cast<std::uint32_t>(entries_.size());
    out.write(reinterpret_cast<const char*>(&n_tensors), sizeof(n_tensors));
    for (const Entry& e : entries_) {
        const std::uint32_t name_len = static_cast<std::uint32_t>(e.name.size());
        const std::int32_t rows = e.rows, cols = e.cols;
        out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        out.write(e.name.data(), name_len);
        out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
        out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    }
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(sizeof(double)) * values.size());
}

void ParamPack::load(std::istream& in) {
    std::uint32_t n_tensors = 0;
    in.read(reinterpret_cast<char*>(&n_tensors), sizeof(n_tensors));
    if (!in || n_tensors != entries_.size()) {
        throw std::runtime_error("parameter pack layout mismatch (tensor count)");
    }
    for (const Entry& e : entries_) {
        std::uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::int32_t rows = 0, cols = 0;
        in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
        in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
        if (!in || name != e.name || rows != e.rows || cols != e.cols) {
            throw std::runtime_error("parameter pack layout mismatch at tensor " + e.name);
        }
    }
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(sizeof(double)) * values.size());
    if (!in) throw std::runtime_error("truncated parameter data");
}

AdamW::AdamW(const Config& cfg, Eigen::Index size) : cfg_(cfg) {
    m_ = Eigen::VectorXd::Zero(size);
    v_ = Eigen::VectorXd::Zero(size);
}

void AdamW::step(ParamPack& pack) {
    if (pack.size() != m_.size()) throw std::invalid_argument("optimizer/pack size mismatch");
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * pack.grad;
    v_ = cfg_.beta2 * v_.array().matrix() +
         (1.0 - cfg_.beta2) * pack.grad.array().square().matrix();
    const double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto m_hat = m_.array() / bias1;
    const auto v_hat = v_.array() / bias2;
    pack.values.array() -= cfg_.lr * (m_hat / (v_hat.sqrt() + cfg_.eps) +
                                      cfg_.weight_decay * pack.decay_mask.array() * pack.values.array());
}

Mlp::Mlp(ParamPack& pack, const std::string& prefix, std::vector<int> dims,
         std::vector<double> dropout)
    : dims_(std::move(dims)), dropout_(std::move(dropout)) {
    if (dims_.size() < 2) throw std::invalid_argument("mlp needs at least one layer");
    dropout_.resize(dims_.size() - 1, 0.0);
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const std::string tag = prefix + ".l" + std::to_string(l);
        w_ids_.push_back(pack.add_matrix(tag + ".w", dims_[l + 1], dims_[l], /*weight_decay=*/true));
        b_ids_.push_back(pack.add_vector(tag + ".b", dims_[l + 1]));
    }
}

void Mlp::init_params(ParamPack& pack, Rng& rng) const {
    for (std::size_t l = 0; l < w_ids_.size(); ++l) {
        auto w = pack.mat(w_ids_[l]);
        const double bound = std::sqrt(6.0 / (dims_[l] + dims_[l + 1]));
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
        }
        pack.vec(b_ids_[l]).setZero();
    }
}

Eigen::MatrixXd Mlp::forward(const ParamPack& pack, const Eigen::MatrixXd& x, Cache* cache,
                             Rng* dropout_rng) const {
    if (x.cols() != dims_.front()) throw std::invalid_argument("mlp input width mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
        cache->mask.clear();
    }
    Eigen::MatrixXd h = x;
    const int n_layers = layers();
    for (int l = 0; l < n_layers; ++l) {
        if (cache) cache->inputs.push_back(h);
        Eigen::MatrixXd pre =
            (h * pack.mat(w_ids_[static_cast<std::size_t>(l)]).transpose()).rowwise() +
            pack.vec(b_ids_[static_cast<std::size_t>(l)]).transpose();
        if (cache) cache->pre.push_back(pre);
        if (l + 1 == n_layers) {
            h = std::move(pre);  // linear output layer
            break;
        }
        h = pre.cwiseMax(0.0);
        const double rate = dropout_[static_cast<std::size_t>(l)];
        if (dropout_rng && rate > 0.0) {
            Eigen::MatrixXd mask(h.rows(), h.cols());
            const double keep_scale = 1.0 / (1.0 - rate);
            for (Eigen::Index j = 0; j < mask.cols(); ++j) {
                for (Eigen::Index i = 0; i < mask.rows(); ++i) {
                    mask(i, j) = dropout_rng->uniform() < rate ? 0.0 : keep_scale;
                }
            }
            h = h.cwiseProduct(mask);
            if (cache) cache->mask.push_back(std::move(mask));
        } else if (cache) {
            cache->mask.emplace_back();  // empty = identity
        }
    }
    return h;
}

Eigen::MatrixXd Mlp::backward(ParamPack& pack, const Cache& cache, const Eigen::MatrixXd& d_out) const {
    const int n_layers = layers();
    Eigen::MatrixXd delta = d_out;
    for (int l = n_layers - 1; l >= 0; --l) {
        const auto lu = static_cast<std::size_t>(l);
        if (l < n_layers - 1) {
            // Through dropout (mask already carries the keep scale), then ReLU.
            if (cache.mask[lu].size() > 0) delta = delta.cwiseProduct(cache.mask[lu]);
            delta = delta.cwiseProduct(
                (cache.pre[lu].array() > 0.0).cast<double>().matrix());
        }
        pack.grad_mat(w_ids_[lu]) += delta.transpose() * cache.inputs[lu];
        pack.grad_vec(b_ids_[lu]) += delta.colwise().sum().transpose();
        delta = delta * pack.mat(w_ids_[lu]);  // dL/d(input of layer l)
    }
    return delta;
}

Eigen::MatrixXd l2_normalize_rows(const Eigen::MatrixXd& u, Eigen::VectorXd* norms, int* zero_count) {
    Eigen::MatrixXd z(u.rows(), u.cols());
    Eigen::VectorXd n(u.rows());
    int zeros = 0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double norm = u.row(i).norm();
        if (norm < 1e-12) {
            z.row(i).setZero();
            z(i, 0) = 1.0;
            n[i] = 1.0;  // treated as constant; gradient does not flow
            ++zeros;
        } else {
            z.row(i) = u.row(i) / norm;
            n[i] = norm;
        }
    }
    if (norms) *norms = std::move(n);
    if (zero_count) *zero_count = zeros;
    return z;
}

Eigen::MatrixXd l2_normalize_rows_backward(const Eigen::MatrixXd& z, const Eigen::VectorXd& norms,
                                           const Eigen::MatrixXd& dz) {
    Eigen::MatrixXd du(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double dot = dz.row(i).dot(z.row(i));
        du.row(i) = (dz.row(i) - dot * z.row(i)) / norms[i];
    }
    return du;
}

}  // namespace csifp::nn
