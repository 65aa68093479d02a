#include "csifp/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "csifp/sha256.hpp"

namespace csifp::contra {

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'S', 'F', 'P', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

// Row-wise log-sum-exp over the masked entries of one row, with max
// subtraction. Returns -inf when the mask selects nothing.
double masked_logsumexp(const Eigen::MatrixXd& s, Eigen::Index row,
                        const std::vector<char>& mask_cols) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        if (mask_cols[static_cast<std::size_t>(j)] && s(row, j) > m) m = s(row, j);
    }
    if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        if (mask_cols[static_cast<std::size_t>(j)]) sum += std::exp(s(row, j) - m);
    }
    return m + std::log(sum);
}

}  // namespace

Eigen::VectorXd label_base_code(const MacAddress& mac, int code_dim) {
    if (code_dim < 1) throw std::invalid_argument("code_dim must be >= 1");
    const Sha256Digest digest = sha256(mac.str());
    Eigen::VectorXd code(code_dim);
    for (int i = 0; i < code_dim; ++i) {
        code[i] = static_cast<double>(digest[static_cast<std::size_t>(i) % digest.size()]);
    }
    const double mean = code.mean();
    const double var = (code.array() - mean).square().mean();
    const double std = std::sqrt(var);
    if (std < 1e-12) return Eigen::VectorXd::Zero(code_dim);
    return (code.array() - mean) / std;
}

Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& zc, const Eigen::MatrixXd& zl, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
    if (zc.cols() != zl.cols()) throw std::invalid_argument("embedding dimension mismatch");
    return zc * zl.transpose() / tau;
}

double loss_contrastive(const Eigen::MatrixXd& s, const std::vector<int>& labels,
                        Eigen::MatrixXd* d_s) {
    const Eigen::Index b = s.rows();
    if (s.cols() != b) throw std::invalid_argument("contrastive loss expects a square batch matrix");
    if (static_cast<Eigen::Index>(labels.size()) != b) {
        throw std::invalid_argument("labels/batch size mismatch");
    }
    if (b < 2) throw std::invalid_argument("contrastive loss needs a batch of >= 2");

    // positive[i][j] <=> j in P(i): same class, j != i. The structure is
    // symmetric, so row and column anchors share the same inclusion set.
    std::vector<std::vector<char>> positive(static_cast<std::size_t>(b),
                                            std::vector<char>(static_cast<std::size_t>(b), 0));
    std::vector<char> included(static_cast<std::size_t>(b), 0);
    int n_included = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
        bool any = false;
        for (Eigen::Index j = 0; j < b; ++j) {
            if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                positive[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
                any = true;
            }
        }
        if (any) {
            included[static_cast<std::size_t>(i)] = 1;
            ++n_included;
        }
    }
    if (n_included == 0) {
        throw std::invalid_argument("every anchor has an empty positive set");
    }

    if (d_s) d_s->setZero(b, b);
    const double inv_m = 1.0 / static_cast<double>(n_included);

    // CSI -> label direction: anchor i over row i.
    double loss_row = 0.0;
    std::vector<char> not_i(static_cast<std::size_t>(b), 1);
    for (Eigen::Index i = 0; i < b; ++i) {
        if (!included[static_cast<std::size_t>(i)]) continue;
        not_i[static_cast<std::size_t>(i)] = 0;
        const double lse_den = masked_logsumexp(s, i, not_i);
        const double lse_num = masked_logsumexp(s, i, positive[static_cast<std::size_t>(i)]);
        loss_row += lse_den - lse_num;
        if (d_s) {
            for (Eigen::Index j = 0; j < b; ++j) {
                if (j == i) continue;
                double g = std::exp(s(i, j) - lse_den);
                if (positive[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
                    g -= std::exp(s(i, j) - lse_num);
                }
                (*d_s)(i, j) += 0.5 * inv_m * g;
            }
        }
        not_i[static_cast<std::size_t>(i)] = 1;
    }
    loss_row *= inv_m;

    // label -> CSI direction: anchor j over column j.
    double loss_col = 0.0;
    const Eigen::MatrixXd st = s.transpose();
    for (Eigen::Index j = 0; j < b; ++j) {
        if (!included[static_cast<std::size_t>(j)]) continue;
        not_i[static_cast<std::size_t>(j)] = 0;
        const double lse_den = masked_logsumexp(st, j, not_i);
        const double lse_num = masked_logsumexp(st, j, positive[static_cast<std::size_t>(j)]);
        loss_col += lse_den - lse_num;
        if (d_s) {
            for (Eigen::Index i = 0; i < b; ++i) {
                if (i == j) continue;
                double g = std::exp(s(i, j) - lse_den);
                if (positive[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]) {
                    g -= std::exp(s(i, j) - lse_num);
                }
                (*d_s)(i, j) += 0.5 * inv_m * g;
            }
        }
        not_i[static_cast<std::size_t>(j)] = 1;
    }
    loss_col *= inv_m;

    return 0.5 * (loss_row + loss_col);
}

double loss_cross_entropy(const Eigen::MatrixXd& s_class, const std::vector<int>& labels,
                          Eigen::MatrixXd* d_s) {
    const Eigen::Index b = s_class.rows();
    const Eigen::Index l = s_class.cols();
    if (static_cast<Eigen::Index>(labels.size()) != b) {
        throw std::invalid_argument("labels/batch size mismatch");
    }
    if (d_s) d_s->setZero(b, l);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= l) throw std::invalid_argument("label out of class range");
        const double m = s_class.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index k = 0; k < l; ++k) sum += std::exp(s_class(i, k) - m);
        const double lse = m + std::log(sum);
        loss += lse - s_class(i, y);
        if (d_s) {
            for (Eigen::Index k = 0; k < l; ++k) {
                (*d_s)(i, k) = std::exp(s_class(i, k) - lse) / static_cast<double>(b);
            }
            (*d_s)(i, y) -= 1.0 / static_cast<double>(b);
        }
    }
    return loss / static_cast<double>(b);
}

Model::Model(const ModelConfig& cfg, const ClassTable& table, std::uint64_t init_seed)
    : cfg_(cfg),
      table_(table),
      encoder_(params, "enc",
               [&] {
                   std::vector<int> dims;
                   dims.push_back(kCsiInts * cfg.window_len);
                   dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
                   dims.push_back(cfg.embed_dim);
                   return dims;
               }()) {
    if (table_.size() < 1) throw std::invalid_argument("model needs at least one enrolled class");
    codes_.resize(table_.size(), cfg_.code_dim);
    for (int c = 0; c < table_.size(); ++c) {
        codes_.row(c) = label_base_code(table_.mac(c), cfg_.code_dim).transpose();
    }
    w_mac_id_ = params.add_matrix("label.w_mac", cfg_.code_dim, cfg_.embed_dim);
    log_tau_id_ = params.add_scalar("log_tau");

    Rng rng(mix_seed(init_seed, 0x90DE1u));
    encoder_.init_params(params, rng);
    auto w_mac = params.mat(w_mac_id_);
    const double bound = std::sqrt(6.0 / (cfg_.code_dim + cfg_.embed_dim));
    for (Eigen::Index j = 0; j < w_mac.cols(); ++j) {
        for (Eigen::Index i = 0; i < w_mac.rows(); ++i) w_mac(i, j) = rng.uniform(-bound, bound);
    }
    params.scalar(log_tau_id_) = std::log(cfg_.tau_init);
    clamp_tau();
}

Eigen::VectorXd Model::flatten(const CsiWindow& w) {
    return Eigen::Map<const Eigen::VectorXd>(w.data.data(), w.data.size());
}

Eigen::MatrixXd Model::encode(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd u = encoder_.forward(params, x);
    return nn::l2_normalize_rows(u);
}

Eigen::VectorXd Model::encode_window(const CsiWindow& normalized) const {
    if (normalized.data.size() != input_dim()) {
        throw std::invalid_argument("window size does not match the model's window length");
    }
    return encode(flatten(normalized).transpose()).row(0).transpose();
}

Eigen::MatrixXd Model::class_embeddings() const {
    const Eigen::MatrixXd v = codes_ * params.mat(w_mac_id_);
    return nn::l2_normalize_rows(v);
}

int Model::classify_embedding(const Eigen::VectorXd& z) const {
    const Eigen::VectorXd scores = class_embeddings() * z;
    int best = 0;
    for (int c = 1; c < static_cast<int>(scores.size()); ++c) {
        if (scores[c] > scores[best]) best = c;  // strict: ties keep the lowest index
    }
    return best;
}

int Model::classify_window(const CsiWindow& normalized) const {
    return classify_embedding(encode_window(normalized));
}

double Model::tau() const { return std::exp(log_tau()); }

void Model::clamp_tau() {
    const double log_tau_min = -std::log(cfg_.tau_inv_max);
    double& lt = params.scalar(log_tau_id_);
    if (lt < log_tau_min) lt = log_tau_min;
}

Model::BatchLoss Model::loss_and_grad(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                      double alpha_ce, bool with_grad) {
    const Eigen::Index b = x.rows();
    if (static_cast<Eigen::Index>(labels.size()) != b) {
        throw std::invalid_argument("labels/batch size mismatch");
    }
    BatchLoss out;

    nn::Mlp::Cache cache;
    const Eigen::MatrixXd u = encoder_.forward(params, x, with_grad ? &cache : nullptr);
    Eigen::VectorXd norms_c;
    int zero_c = 0;
    const Eigen::MatrixXd zc = nn::l2_normalize_rows(u, &norms_c, &zero_c);

    const Eigen::MatrixXd v = codes_ * params.mat(w_mac_id_);
    Eigen::VectorXd norms_l;
    int zero_l = 0;
    const Eigen::MatrixXd zl_class = nn::l2_normalize_rows(v, &norms_l, &zero_l);
    out.zero_norm_rows = zero_c + zero_l;

    Eigen::MatrixXd zl_batch(b, cfg_.embed_dim);
    for (Eigen::Index i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= table_.size()) throw std::invalid_argument("label out of class range");
        zl_batch.row(i) = zl_class.row(y);
    }

    const double t = tau();
    const Eigen::MatrixXd s_con = similarity_matrix(zc, zl_batch, t);

    Eigen::MatrixXd g_con;
    out.contrastive = loss_contrastive(s_con, labels, with_grad ? &g_con : nullptr);
    out.total = out.contrastive;

    Eigen::MatrixXd s_ce, g_ce;
    if (alpha_ce > 0.0) {
        s_ce = similarity_matrix(zc, zl_class, t);
        out.cross_entropy = loss_cross_entropy(s_ce, labels, with_grad ? &g_ce : nullptr);
        out.total += alpha_ce * out.cross_entropy;
    }

    if (!with_grad) return out;

    // dL/dS -> embeddings, shared projection, and log-temperature.
    Eigen::MatrixXd d_zc = g_con * zl_batch / t;
    Eigen::MatrixXd d_zl_class = Eigen::MatrixXd::Zero(table_.size(), cfg_.embed_dim);
    {
        const Eigen::MatrixXd d_zl_batch = g_con.transpose() * zc / t;
        for (Eigen::Index i = 0; i < b; ++i) {
            d_zl_class.row(labels[static_cast<std::size_t>(i)]) += d_zl_batch.row(i);
        }
    }
    double d_log_tau = -g_con.cwiseProduct(s_con).sum();
    if (alpha_ce > 0.0) {
        d_zc += alpha_ce * (g_ce * zl_class) / t;
        d_zl_class += alpha_ce * (g_ce.transpose() * zc) / t;
        d_log_tau -= alpha_ce * g_ce.cwiseProduct(s_ce).sum();
    }

    const Eigen::MatrixXd d_v = nn::l2_normalize_rows_backward(zl_class, norms_l, d_zl_class);
    params.grad_mat(w_mac_id_) += codes_.transpose() * d_v;
    params.grad_scalar(log_tau_id_) += d_log_tau;

    const Eigen::MatrixXd d_u = nn::l2_normalize_rows_backward(zc, norms_c, d_zc);
    encoder_.backward(params, cache, d_u);
    return out;
}

double evaluate_accuracy(const Model& model, const std::vector<CsiWindow>& normalized_windows) {
    if (normalized_windows.empty()) return 0.0;
    // Batch the forward pass; argmax per row against the class embeddings.
    const Eigen::Index n = static_cast<Eigen::Index>(normalized_windows.size());
    Eigen::MatrixXd x(n, model.input_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = Model::flatten(normalized_windows[static_cast<std::size_t>(i)]).transpose();
    }
    const Eigen::MatrixXd scores = model.encode(x) * model.class_embeddings().transpose();
    long long correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < static_cast<int>(scores.cols()); ++c) {
            if (scores(i, c) > scores(i, best)) best = c;
        }
        if (best == normalized_windows[static_cast<std::size_t>(i)].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::vector<CsiWindow>& train_windows,
                  const std::vector<CsiWindow>& val_windows, const ClassTable& table) {
    if (train_windows.empty()) throw std::invalid_argument("empty training set");
    if (table.size() == 1 && cfg.alpha_ce <= 0.0) {
        throw std::invalid_argument(
            "single-class dataset with a contrastive-only objective cannot be trained");
    }

    // Per-class sample pools.
    std::vector<std::vector<int>> pools(static_cast<std::size_t>(table.size()));
    for (std::size_t i = 0; i < train_windows.size(); ++i) {
        const int y = train_windows[i].label;
        if (y < 0 || y >= table.size()) {
            throw std::invalid_argument("training window with out-of-table label");
        }
        if (train_windows[i].packets() != model_cfg.window_len) {
            throw std::invalid_argument("training window length does not match the model config");
        }
        pools[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
    }
    std::vector<int> live_classes;
    for (int c = 0; c < table.size(); ++c) {
        if (!pools[static_cast<std::size_t>(c)].empty()) live_classes.push_back(c);
    }
    if (live_classes.empty()) throw std::invalid_argument("no labeled training windows");

    // The sampler guarantees >= 2 windows per represented class so every
    // anchor has at least one positive.
    const int per_class = std::max(2, cfg.per_class);
    const int classes_per_batch =
        std::max(1, std::min(static_cast<int>(live_classes.size()), cfg.batch_size / per_class));
    const int batch = classes_per_batch * per_class;
    const int steps_per_epoch =
        cfg.steps_per_epoch > 0
            ? cfg.steps_per_epoch
            : std::max(1, static_cast<int>(train_windows.size() / static_cast<std::size_t>(batch)));

    Rng rng(mix_seed(cfg.seed, 0x7EA11u));
    Model model(model_cfg, table, cfg.seed);

    nn::AdamW::Config opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    nn::AdamW opt(opt_cfg, model.params.size());

    TrainResult result{Model(model_cfg, table, cfg.seed), {}, 0.0, -1, 0};

    Eigen::MatrixXd x(batch, model.input_dim());
    std::vector<int> labels(static_cast<std::size_t>(batch));
    std::vector<int> class_order = live_classes;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.cosine_lr) {
            const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
            opt.set_lr(cfg.lr * 0.5 * (1.0 + std::cos(M_PI * progress)));
        }
        double loss_sum = 0.0, con_sum = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            rng.shuffle(class_order);
            int row = 0;
            for (int ci = 0; ci < classes_per_batch; ++ci) {
                const int c = class_order[static_cast<std::size_t>(ci)];
                const auto& pool = pools[static_cast<std::size_t>(c)];
                for (int s = 0; s < per_class; ++s) {
                    const int idx = pool[static_cast<std::size_t>(
                        rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
                    x.row(row) = Model::flatten(train_windows[static_cast<std::size_t>(idx)]).transpose();
                    labels[static_cast<std::size_t>(row)] = c;
                    ++row;
                }
            }
            model.params.zero_grad();
            const auto batch_loss = model.loss_and_grad(x, labels, cfg.alpha_ce, /*with_grad=*/true);
            opt.step(model.params);
            model.clamp_tau();
            loss_sum += batch_loss.total;
            con_sum += batch_loss.contrastive;
            result.zero_norm_rows += batch_loss.zero_norm_rows;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / steps_per_epoch;
        stats.train_contrastive = con_sum / steps_per_epoch;
        const bool validate_now =
            !val_windows.empty() &&
            (epoch % std::max(1, cfg.val_every) == 0 || epoch == cfg.epochs - 1);
        stats.val_accuracy = validate_now ? evaluate_accuracy(model, val_windows) : -1.0;
        result.history.push_back(stats);

        if (validate_now &&
            (result.best_epoch < 0 || stats.val_accuracy > result.best_val_accuracy)) {
            result.best_val_accuracy = stats.val_accuracy;
            result.best_epoch = epoch;
            result.model.params.values = model.params.values;
        }
    }
    if (val_windows.empty()) {
        // No validation data: keep the final parameters.
        result.model.params.values = model.params.values;
        result.best_epoch = cfg.epochs - 1;
    }
    return result;
}

void save_checkpoint(const std::string& path, const Model& model, const Normalizer& normalizer,
                     const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));

    const ModelConfig& cfg = model.config();
    write_pod<std::int32_t>(out, cfg.window_len);
    write_pod<std::int32_t>(out, static_cast<std::int32_t>(cfg.hidden.size()));
    for (const int h : cfg.hidden) write_pod<std::int32_t>(out, h);
    write_pod<std::int32_t>(out, cfg.embed_dim);
    write_pod<std::int32_t>(out, cfg.code_dim);
    write_pod<double>(out, cfg.tau_init);
    write_pod<double>(out, cfg.tau_inv_max);

    const ClassTable& table = model.classes();
    write_pod<std::int32_t>(out, table.size());
    for (int c = 0; c < table.size(); ++c) {
        out.write(reinterpret_cast<const char*>(table.mac(c).bytes.data()), 6);
    }

    out.write(reinterpret_cast<const char*>(normalizer.mean.data()), sizeof(double) * kCsiInts);
    out.write(reinterpret_cast<const char*>(normalizer.stddev.data()), sizeof(double) * kCsiInts);

    model.params.save(out);

    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(config_hash.size()));
    out.write(config_hash.data(), static_cast<std::streamsize>(config_hash.size()));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("not a model checkpoint: " + path);
    }

    ModelConfig cfg;
    cfg.window_len = read_pod<std::int32_t>(in);
    const auto n_hidden = read_pod<std::int32_t>(in);
    cfg.hidden.clear();
    for (std::int32_t i = 0; i < n_hidden; ++i) cfg.hidden.push_back(read_pod<std::int32_t>(in));
    cfg.embed_dim = read_pod<std::int32_t>(in);
    cfg.code_dim = read_pod<std::int32_t>(in);
    cfg.tau_init = read_pod<double>(in);
    cfg.tau_inv_max = read_pod<double>(in);

    const auto n_classes = read_pod<std::int32_t>(in);
    std::vector<MacAddress> macs(static_cast<std::size_t>(n_classes));
    for (auto& mac : macs) {
        in.read(reinterpret_cast<char*>(mac.bytes.data()), 6);
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);

    Normalizer norm;
    in.read(reinterpret_cast<char*>(norm.mean.data()), sizeof(double) * kCsiInts);
    in.read(reinterpret_cast<char*>(norm.stddev.data()), sizeof(double) * kCsiInts);

    Checkpoint ckpt{Model(cfg, ClassTable::from_macs(std::move(macs)), /*init_seed=*/0), norm, ""};
    ckpt.model.params.load(in);

    const auto hash_len = read_pod<std::uint32_t>(in);
    ckpt.config_hash.resize(hash_len);
    in.read(ckpt.config_hash.data(), hash_len);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return ckpt;
}

}  // namespace csifp::contra
