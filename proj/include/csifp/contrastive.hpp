#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "csifp/csi.hpp"
#include "csifp/nn.hpp"
#include "csifp/rng.hpp"

namespace csifp::contra {

// Fixed per-class base code: SHA-256 of the canonical MAC string, tiled or
// truncated to code_dim bytes, byte values z-scored to mean 0 / std 1.
Eigen::VectorXd label_base_code(const MacAddress& mac, int code_dim);

struct ModelConfig {
    int window_len = 4;                 // N packets per window
    std::vector<int> hidden = {256, 128};
    int embed_dim = 64;                 // D
    int code_dim = 64;                  // H
    double tau_init = 0.07;
    double tau_inv_max = 100.0;         // clamp: 1/tau <= tau_inv_max
};

// S_ij = zc_i . zl_j / tau. Rows of both inputs must be unit-norm.
Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& zc, const Eigen::MatrixXd& zl, double tau);

// Multi-positive symmetric contrastive loss over a batch similarity matrix.
// Positives of anchor i are the same-class entries j != i; anchors with no
// positive are excluded from both directional averages. Throws when every
// anchor has an empty positive set. If d_s is non-null it receives dL/dS.
double loss_contrastive(const Eigen::MatrixXd& s, const std::vector<int>& labels,
                        Eigen::MatrixXd* d_s = nullptr);

// Mean cross-entropy of each row of the batch-by-class similarity matrix
// against the true class.
double loss_cross_entropy(const Eigen::MatrixXd& s_class, const std::vector<int>& labels,
                          Eigen::MatrixXd* d_s = nullptr);

// Joint CSI/label embedding model: feed-forward CSI encoder with L2-normalized
// output, frozen per-class hash codes behind a learnable projection, and a
// log-domain temperature.
class Model {
public:
    Model(const ModelConfig& cfg, const ClassTable& table, std::uint64_t init_seed);

    int input_dim() const { return kCsiInts * cfg_.window_len; }
    const ModelConfig& config() const { return cfg_; }
    const ClassTable& classes() const { return table_; }
    const Eigen::MatrixXd& base_codes() const { return codes_; }

    // Window data (128 x N, column-major) flattened packet-major.
    static Eigen::VectorXd flatten(const CsiWindow& w);

    // Rows of x are flattened normalized windows; returns unit-norm rows.
    Eigen::MatrixXd encode(const Eigen::MatrixXd& x) const;
    Eigen::VectorXd encode_window(const CsiWindow& normalized) const;

    // One unit-norm embedding per enrolled class (L x D).
    Eigen::MatrixXd class_embeddings() const;

    // Max-similarity class; ties break to the lowest class index.
    int classify_embedding(const Eigen::VectorXd& z) const;
    int classify_window(const CsiWindow& normalized) const;

    double log_tau() const { return params.scalar(log_tau_id_); }
    double tau() const;
    void clamp_tau();

    struct BatchLoss {
        double total = 0, contrastive = 0, cross_entropy = 0;
        int zero_norm_rows = 0;
    };
    // Forward (and optionally backward into params.grad) of
    // L_total = L_con + alpha_ce * L_ce on one batch.
    BatchLoss loss_and_grad(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                            double alpha_ce, bool with_grad);

    nn::ParamPack params;

private:
    ModelConfig cfg_;
    ClassTable table_;
    Eigen::MatrixXd codes_;  // L x H, fixed
    nn::Mlp encoder_;
    int w_mac_id_ = -1;
    int log_tau_id_ = -1;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 128;
    int per_class = 4;        // windows drawn per sampled class (>= 2)
    int steps_per_epoch = 0;  // 0: one pass over the training windows
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double alpha_ce = 0.0;
    bool cosine_lr = true;    // cosine decay of the learning rate over epochs
    int val_every = 1;        // validation cadence in epochs
    std::uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double train_contrastive = 0;
    double val_accuracy = 0;
};

struct TrainResult {
    Model model;  // best-validation snapshot
    std::vector<EpochStats> history;
    double best_val_accuracy = 0;
    int best_epoch = -1;
    long long zero_norm_rows = 0;
};

// Windows must be normalized already and carry labels in [0, L). Deterministic
// given cfg.seed. Throws on an empty train set or a single-class dataset with
// a contrastive-only objective.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::vector<CsiWindow>& train_windows,
                  const std::vector<CsiWindow>& val_windows, const ClassTable& table);

// Accuracy of classify_window over labeled windows.
double evaluate_accuracy(const Model& model, const std::vector<CsiWindow>& normalized_windows);

// Versioned binary checkpoint: model config, class table, normalizer,
// parameters, and the resolved-config hash of the producing run.
void save_checkpoint(const std::string& path, const Model& model, const Normalizer& normalizer,
                     const std::string& config_hash);

struct Checkpoint {
    Model model;
    Normalizer normalizer;
    std::string config_hash;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace csifp::contra
