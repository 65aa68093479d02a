#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "csifp/rng.hpp"

namespace csifp::nn {

// All trainable tensors of a model live in one flat vector with named views.
// Keeps the optimizer trivial and lets tests perturb any single scalar.
class ParamPack {
public:
    int add_matrix(const std::string& name, int rows, int cols, bool weight_decay = true);
    int add_vector(const std::string& name, int size, bool weight_decay = false);
    int add_scalar(const std::string& name, bool weight_decay = false);

    Eigen::Map<Eigen::MatrixXd> mat(int id);
    Eigen::Map<const Eigen::MatrixXd> mat(int id) const;
    Eigen::Map<Eigen::VectorXd> vec(int id);
    Eigen::Map<const Eigen::VectorXd> vec(int id) const;
    double& scalar(int id);
    double scalar(int id) const;

    Eigen::Map<Eigen::MatrixXd> grad_mat(int id);
    Eigen::Map<Eigen::VectorXd> grad_vec(int id);
    double& grad_scalar(int id);

    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return values.size(); }
    int tensors() const { return static_cast<int>(entries_.size()); }
    const std::string& name(int id) const { return entries_[static_cast<std::size_t>(id)].name; }
    int find(const std::string& name) const;  // tensor id; throws when absent

    Eigen::VectorXd values;
    Eigen::VectorXd grad;
    Eigen::VectorXd decay_mask;  // 1 where weight decay applies

    void save(std::ostream& out) const;   // raw little-endian doubles + layout
    void load(std::istream& in);          // layout must match; throws otherwise

private:
    struct Entry {
        std::string name;
        Eigen::Index offset;
        int rows, cols;
    };
    int add_entry(const std::string& name, int rows, int cols, bool weight_decay);
    std::vector<Entry> entries_;
};

// Decoupled-weight-decay Adam. Decay applies only where the pack's mask is set
// (weights, not biases or scalars).
class AdamW {
public:
    struct Config {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(const Config& cfg, Eigen::Index size);
    void step(ParamPack& pack);
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    long long steps() const { return t_; }

private:
    Config cfg_;
    Eigen::VectorXd m_, v_;
    long long t_ = 0;
};

// Fully connected stack: linear layers with ReLU between them, linear output.
// dropout[i] (optional) is applied to the activation of hidden layer i during
// training, with inverted scaling so inference needs no rescale.
class Mlp {
public:
    Mlp(ParamPack& pack, const std::string& prefix, std::vector<int> dims,
        std::vector<double> dropout = {});

    struct Cache {
        std::vector<Eigen::MatrixXd> inputs;  // input to each linear layer
        std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
        std::vector<Eigen::MatrixXd> mask;    // dropout keep-mask (already scaled)
    };

    // X: batch x input_dim, rows are samples. Training mode when dropout_rng
    // is provided (and a Cache to fill for backward).
    Eigen::MatrixXd forward(const ParamPack& pack, const Eigen::MatrixXd& x, Cache* cache = nullptr,
                            Rng* dropout_rng = nullptr) const;
    // Accumulates parameter gradients into pack.grad; returns dL/dX.
    Eigen::MatrixXd backward(ParamPack& pack, const Cache& cache, const Eigen::MatrixXd& d_out) const;

    void init_params(ParamPack& pack, Rng& rng) const;  // Glorot-uniform weights, zero biases

    int input_dim() const { return dims_.front(); }
    int output_dim() const { return dims_.back(); }
    int layers() const { return static_cast<int>(dims_.size()) - 1; }

private:
    std::vector<int> dims_;
    std::vector<double> dropout_;
    std::vector<int> w_ids_, b_ids_;
};

// Row-wise z / ||z||. Rows with norm below 1e-12 are replaced by the first
// unit basis vector; zero_count (if given) reports how many rows were hit.
Eigen::MatrixXd l2_normalize_rows(const Eigen::MatrixXd& u, Eigen::VectorXd* norms = nullptr,
                                  int* zero_count = nullptr);
// dL/dU given Z = normalize(U) and the stored norms.
Eigen::MatrixXd l2_normalize_rows_backward(const Eigen::MatrixXd& z, const Eigen::VectorXd& norms,
                                           const Eigen::MatrixXd& dz);

}  // namespace csifp::nn
