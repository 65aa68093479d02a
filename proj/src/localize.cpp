#include "csifp/localize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "csifp/kvio.hpp"

namespace csifp::loc {

namespace {

constexpr double kSingularTol = 1e-10;

double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

}  // namespace

AnchorSet::AnchorSet(std::vector<Anchor> anchors) : anchors_(std::move(anchors)) {
    if (anchors_.size() < 3) throw std::invalid_argument("anchor set needs at least 3 anchors");
    // Collinearity: every pair of edge vectors from anchor 0 has ~zero cross
    // product. Scale the tolerance by the squared span.
    double span = 0.0;
    for (const auto& a : anchors_) {
        span = std::max({span, std::abs(a.x - anchors_[0].x), std::abs(a.y - anchors_[0].y)});
    }
    double max_cross = 0.0;
    for (std::size_t i = 1; i < anchors_.size(); ++i) {
        for (std::size_t j = i + 1; j < anchors_.size(); ++j) {
            max_cross = std::max(
                max_cross, std::abs(cross2(anchors_[i].x - anchors_[0].x, anchors_[i].y - anchors_[0].y,
                                           anchors_[j].x - anchors_[0].x, anchors_[j].y - anchors_[0].y)));
        }
    }
    if (max_cross <= kSingularTol * std::max(span * span, 1.0)) {
        throw std::invalid_argument("anchors are collinear; trilateration is singular");
    }
}

Position trilaterate(const AnchorSet& anchors, std::span<const double> distances) {
    const auto& a = anchors.anchors();
    if (distances.size() != a.size()) {
        throw std::invalid_argument("distance count does not match anchor count");
    }
    for (const double d : distances) {
        if (d < 0.0) throw std::invalid_argument("distances must be nonnegative");
    }
    const Eigen::Index rows = static_cast<Eigen::Index>(a.size()) - 1;
    Eigen::MatrixXd m(rows, 2);
    Eigen::VectorXd b(rows);
    const double x1 = a[0].x, y1 = a[0].y, d1 = distances[0];
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Anchor& ai = a[static_cast<std::size_t>(i) + 1];
        const double di = distances[static_cast<std::size_t>(i) + 1];
        m(i, 0) = 2.0 * (ai.x - x1);
        m(i, 1) = 2.0 * (ai.y - y1);
        b(i) = d1 * d1 - di * di + (ai.x * ai.x + ai.y * ai.y) - (x1 * x1 + y1 * y1);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(0) <= 0.0 || sv(1) <= kSingularTol * sv(0)) {
        throw std::runtime_error("singular trilateration system (collinear anchors)");
    }
    const Eigen::Vector2d solution = svd.solve(b);
    return Position{solution(0), solution(1)};
}

LocError localization_mse(std::span<const Position> truth, std::span<const Position> estimate) {
    if (truth.size() != estimate.size()) throw std::invalid_argument("position count mismatch");
    if (truth.empty()) throw std::invalid_argument("localization error needs >= 1 position");
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double dx = truth[i].x - estimate[i].x;
        const double dy = truth[i].y - estimate[i].y;
        sum += dx * dx + dy * dy;
    }
    LocError err;
    err.mse = sum / static_cast<double>(truth.size());
    err.rmse = std::sqrt(err.mse);
    return err;
}

DistanceRegressor::DistanceRegressor(std::uint64_t init_seed, double dropout)
    : mlp_(params, "reg", {kCsiInts, 256, 128, 64, 32, 1}, {dropout, dropout, 0.0, 0.0}) {
    Rng rng(mix_seed(init_seed, 0x10CA1u));
    mlp_.init_params(params, rng);
}

Eigen::VectorXd DistanceRegressor::flatten_scaled(const Eigen::Matrix<double, kSubcarriers, 2>& csi) {
    Eigen::VectorXd x(kCsiInts);
    for (int k = 0; k < kSubcarriers; ++k) {
        x[2 * k] = csi(k, 0) * kInputScale;
        x[2 * k + 1] = csi(k, 1) * kInputScale;
    }
    return x;
}

Eigen::VectorXd DistanceRegressor::predict_rows(const Eigen::MatrixXd& x) const {
    return mlp_.forward(params, x).col(0).cwiseMax(0.0);
}

double DistanceRegressor::predict(const Eigen::Matrix<double, kSubcarriers, 2>& csi) const {
    const Eigen::MatrixXd x = flatten_scaled(csi).transpose();
    return predict_rows(x)(0);
}

double DistanceRegressor::loss_and_grad(const Eigen::MatrixXd& x, const Eigen::VectorXd& target,
                                        bool with_grad, Rng* dropout_rng) {
    nn::Mlp::Cache cache;
    const Eigen::MatrixXd out = mlp_.forward(params, x, with_grad ? &cache : nullptr, dropout_rng);
    const Eigen::VectorXd residual = out.col(0) - target;
    const double loss = residual.squaredNorm() / static_cast<double>(x.rows());
    if (with_grad) {
        Eigen::MatrixXd d_out(out.rows(), 1);
        d_out.col(0) = 2.0 * residual / static_cast<double>(x.rows());
        mlp_.backward(params, cache, d_out);
    }
    return loss;
}

DistanceRegressor train_regressor(int anchor_id, const std::vector<DistanceSample>& samples,
                                  const RegressorConfig& cfg) {
    if (samples.empty()) throw std::invalid_argument("empty distance-regression dataset");
    for (const auto& s : samples) {
        if (s.anchor_id != anchor_id) {
            throw std::invalid_argument("sample anchor id does not match the regressor's anchor");
        }
    }

    DistanceRegressor reg(mix_seed(cfg.seed, static_cast<std::uint64_t>(anchor_id)), cfg.dropout);
    nn::AdamW::Config opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    nn::AdamW opt(opt_cfg, reg.params.size());

    Eigen::MatrixXd x_all(static_cast<Eigen::Index>(samples.size()), kCsiInts);
    Eigen::VectorXd y_all(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        x_all.row(static_cast<Eigen::Index>(i)) =
            DistanceRegressor::flatten_scaled(samples[i].csi).transpose();
        y_all(static_cast<Eigen::Index>(i)) = samples[i].true_dist;
    }

    Rng rng(mix_seed(cfg.seed, 0x7247u, static_cast<std::uint64_t>(anchor_id)));
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    const int batch = std::max(1, cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t count = std::min(static_cast<std::size_t>(batch), order.size() - start);
            Eigen::MatrixXd x(static_cast<Eigen::Index>(count), kCsiInts);
            Eigen::VectorXd y(static_cast<Eigen::Index>(count));
            for (std::size_t i = 0; i < count; ++i) {
                x.row(static_cast<Eigen::Index>(i)) = x_all.row(order[start + i]);
                y(static_cast<Eigen::Index>(i)) = y_all(order[start + i]);
            }
            reg.params.zero_grad();
            reg.loss_and_grad(x, y, /*with_grad=*/true, &rng);
            opt.step(reg.params);
        }
    }
    return reg;
}

std::vector<Anchor> LocDatasetConfig::effective_anchors() const {
    if (!anchors.empty()) return anchors;
    return {{1, 0.0, 0.0}, {2, width, 0.0}, {3, width / 2.0, height}};
}

void LocDatasetConfig::validate() const {
    if (grid_x < 1 || grid_y < 1) throw std::invalid_argument("grid must be at least 1x1");
    if (width <= 0.0 || height <= 0.0) throw std::invalid_argument("region must have positive size");
    if (packets_per_point < 1) throw std::invalid_argument("packets_per_point must be >= 1");
    if (train_frac <= 0.0 || train_frac >= 1.0) throw std::invalid_argument("train_frac must be in (0,1)");
    if (meters_per_sample <= 0.0) throw std::invalid_argument("meters_per_sample must be positive");
    const auto a = effective_anchors();
    AnchorSet check(a);  // validates count and collinearity
}

LocDataset gen_localization_dataset(const LocDatasetConfig& cfg) {
    cfg.validate();
    const auto anchors = cfg.effective_anchors();

    LocDataset dataset;
    dataset.cfg = cfg;

    const int n_points = cfg.grid_x * cfg.grid_y;
    std::vector<int> point_ids(static_cast<std::size_t>(n_points));
    std::iota(point_ids.begin(), point_ids.end(), 0);
    Rng split_rng(mix_seed(cfg.seed, 0x5B117u));
    split_rng.shuffle(point_ids);
    const int n_test = static_cast<int>(std::floor((1.0 - cfg.train_frac) * n_points));
    dataset.test_points.assign(point_ids.begin(), point_ids.begin() + n_test);
    dataset.train_points.assign(point_ids.begin() + n_test, point_ids.end());
    std::sort(dataset.test_points.begin(), dataset.test_points.end());
    std::sort(dataset.train_points.begin(), dataset.train_points.end());

    // Anchors are transmitters: each carries its own hardware impairment.
    std::vector<sim::DeviceImpairment> devices;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        devices.push_back(
            sim::make_device(cfg.seed, sim::device_mac(0x100 + static_cast<int>(a)), cfg.impairment));
    }

    const auto point_xy = [&](int id) {
        const int ix = id % cfg.grid_x;
        const int iy = id / cfg.grid_x;
        return Position{(ix + 0.5) * cfg.width / cfg.grid_x, (iy + 0.5) * cfg.height / cfg.grid_y};
    };

    const auto emit_point = [&](int point_id, std::vector<DistanceSample>& sink) {
        const Position p = point_xy(point_id);
        for (std::size_t a = 0; a < anchors.size(); ++a) {
            const double dx = p.x - anchors[a].x;
            const double dy = p.y - anchors[a].y;
            const double dist = std::max(std::sqrt(dx * dx + dy * dy), 0.5);
            Rng rng(mix_seed(cfg.seed, 0xE317u, static_cast<std::uint64_t>(point_id),
                             static_cast<std::uint64_t>(a)));
            for (int pkt = 0; pkt < cfg.packets_per_point; ++pkt) {
                // Line of sight: amplitude from the path-loss law, delay from
                // the propagation distance, a small carrier-phase jitter.
                sim::ChannelState ch;
                ch.mode = sim::ChannelMode::kStatic;
                ch.position_id = point_id;
                const double amp =
                    cfg.ref_amplitude / std::pow(dist, cfg.path_loss_exponent / 2.0);
                const double jitter = rng.uniform(-cfg.phase_jitter, cfg.phase_jitter);
                ch.taps.push_back({dist / cfg.meters_per_sample, std::polar(amp, jitter)});
                // Two weak late reflections (about -15 dB each).
                for (int r = 0; r < 2; ++r) {
                    const double extra = rng.uniform(0.5, 6.0);
                    ch.taps.push_back({dist / cfg.meters_per_sample + extra,
                                       rng.complex_normal(amp * amp * 0.03)});
                }

                const auto h = ch.response();
                const auto& psi = devices[a].psi;
                std::array<std::complex<double>, kSubcarriers> h_hat{};
                double power = 0.0;
                for (int k = 0; k < kSubcarriers; ++k) {
                    h_hat[static_cast<std::size_t>(k)] =
                        h[static_cast<std::size_t>(k)] * psi[static_cast<std::size_t>(k)];
                    power += std::norm(h_hat[static_cast<std::size_t>(k)]);
                }
                power /= kSubcarriers;
                const double noise_var = power / std::pow(10.0, cfg.snr_db / 10.0);

                DistanceSample sample;
                sample.point_id = point_id;
                sample.x_r = p.x;
                sample.y_r = p.y;
                sample.anchor_id = anchors[a].id;
                sample.true_dist = dist;
                for (int k = 0; k < kSubcarriers; ++k) {
                    const auto v = h_hat[static_cast<std::size_t>(k)] + rng.complex_normal(noise_var);
                    // Fixed quantization scale: absolute amplitude survives,
                    // unlike the per-record scaling of the RFF datasets.
                    sample.csi(k, 0) = std::lround(v.real() * sim::kQuantTarget);
                    sample.csi(k, 1) = std::lround(v.imag() * sim::kQuantTarget);
                }
                sink.push_back(std::move(sample));
            }
        }
    };

    for (const int id : dataset.train_points) emit_point(id, dataset.train);
    for (const int id : dataset.test_points) emit_point(id, dataset.test);
    return dataset;
}

void write_loc_csv(const std::string& path, const std::vector<DistanceSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write localization file: " + path);
    out << "point_id,x_r,y_r,anchor_id,true_dist";
    for (int i = 0; i < kCsiInts; ++i) out << ",csi_" << i;
    out << '\n';
    for (const auto& s : samples) {
        out << s.point_id << ',' << format_double(s.x_r) << ',' << format_double(s.y_r) << ','
            << s.anchor_id << ',' << format_double(s.true_dist);
        for (int k = 0; k < kSubcarriers; ++k) {
            out << ',' << static_cast<long long>(s.csi(k, 0)) << ','
                << static_cast<long long>(s.csi(k, 1));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<DistanceSample> read_loc_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open localization file: " + path);
    std::vector<DistanceSample> samples;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || (line_no == 1 && line.starts_with("point_id,"))) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 5 + kCsiInts) {
            throw std::invalid_argument("bad localization row " + std::to_string(line_no));
        }
        const auto to_double = [&](const std::string& f) {
            double v = 0;
            const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc{} || p != f.data() + f.size()) {
                throw std::invalid_argument("bad numeric field in row " + std::to_string(line_no));
            }
            return v;
        };
        DistanceSample s;
        s.point_id = static_cast<int>(to_double(fields[0]));
        s.x_r = to_double(fields[1]);
        s.y_r = to_double(fields[2]);
        s.anchor_id = static_cast<int>(to_double(fields[3]));
        s.true_dist = to_double(fields[4]);
        for (int k = 0; k < kSubcarriers; ++k) {
            s.csi(k, 0) = to_double(fields[static_cast<std::size_t>(5 + 2 * k)]);
            s.csi(k, 1) = to_double(fields[static_cast<std::size_t>(5 + 2 * k + 1)]);
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

LocEvalResult evaluate_localization(const LocDataset& dataset,
                                    const std::vector<DistanceRegressor>& regressors,
                                    const AnchorSet& anchors) {
    const auto& anchor_list = anchors.anchors();
    if (regressors.size() != anchor_list.size()) {
        throw std::invalid_argument("one regressor per anchor is required");
    }

    LocEvalResult result;
    // anchor id -> index
    std::map<int, std::size_t> anchor_index;
    for (std::size_t a = 0; a < anchor_list.size(); ++a) {
        anchor_index[anchor_list[a].id] = a;
        result.anchor_ids.push_back(anchor_list[a].id);
    }

    // Group test samples per (point, anchor), packets in file order.
    struct PointData {
        Position truth;
        std::vector<std::vector<double>> pred;  // [anchor][packet]
        std::vector<std::vector<double>> truth_dist;
    };
    std::map<int, PointData> points;
    std::vector<double> sq_err(anchor_list.size(), 0.0);
    std::vector<long long> n_err(anchor_list.size(), 0);

    for (const auto& s : dataset.test) {
        const auto it = anchor_index.find(s.anchor_id);
        if (it == anchor_index.end()) throw std::invalid_argument("sample from unknown anchor");
        const std::size_t a = it->second;
        auto& pd = points[s.point_id];
        if (pd.pred.empty()) {
            pd.pred.resize(anchor_list.size());
            pd.truth_dist.resize(anchor_list.size());
            pd.truth = Position{s.x_r, s.y_r};
        }
        const double d_hat = regressors[a].predict(s.csi);
        pd.pred[a].push_back(d_hat);
        pd.truth_dist[a].push_back(s.true_dist);
        sq_err[a] += (d_hat - s.true_dist) * (d_hat - s.true_dist);
        n_err[a] += 1;
    }
    if (points.empty()) throw std::invalid_argument("no test samples");

    for (std::size_t a = 0; a < anchor_list.size(); ++a) {
        result.per_anchor_rmse.push_back(n_err[a] > 0 ? std::sqrt(sq_err[a] / n_err[a]) : 0.0);
    }

    // Per-packet mode: one fix per aligned packet index.
    std::vector<Position> truth_pp, est_pp;
    // Per-point-mean mode: average the predicted distances per anchor first.
    std::vector<Position> truth_pt, est_pt;
    for (const auto& [id, pd] : points) {
        std::size_t min_packets = pd.pred[0].size();
        for (const auto& v : pd.pred) min_packets = std::min(min_packets, v.size());
        std::vector<double> dists(anchor_list.size());
        for (std::size_t pkt = 0; pkt < min_packets; ++pkt) {
            for (std::size_t a = 0; a < anchor_list.size(); ++a) dists[a] = pd.pred[a][pkt];
            truth_pp.push_back(pd.truth);
            est_pp.push_back(trilaterate(anchors, dists));
        }
        for (std::size_t a = 0; a < anchor_list.size(); ++a) {
            double mean = 0.0;
            for (const double d : pd.pred[a]) mean += d;
            dists[a] = pd.pred[a].empty() ? 0.0 : mean / static_cast<double>(pd.pred[a].size());
        }
        truth_pt.push_back(pd.truth);
        est_pt.push_back(trilaterate(anchors, dists));
    }
    result.trilat_per_packet = localization_mse(truth_pp, est_pp);
    result.trilat_per_point = localization_mse(truth_pt, est_pt);
    result.truth = std::move(truth_pt);
    result.estimate = std::move(est_pt);
    return result;
}

}  // namespace csifp::loc
