#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csifp/csi.hpp"
#include "csifp/nn.hpp"
#include "csifp/sim.hpp"

namespace csifp::loc {

struct Anchor {
    int id = 0;
    double x = 0, y = 0;  // meters
};

struct Position {
    double x = 0, y = 0;
};

// At least three anchors, not all collinear (checked at construction).
class AnchorSet {
public:
    explicit AnchorSet(std::vector<Anchor> anchors);
    const std::vector<Anchor>& anchors() const { return anchors_; }
    int size() const { return static_cast<int>(anchors_.size()); }

private:
    std::vector<Anchor> anchors_;
};

// Solves the linearized pairwise circle-difference system
//   2(x_i - x_1) x + 2(y_i - y_1) y
//     = d_1^2 - d_i^2 + (x_i^2 + y_i^2) - (x_1^2 + y_1^2),  i = 2..M
// by least squares. Throws std::runtime_error when the system is singular
// (collinear anchors).
Position trilaterate(const AnchorSet& anchors, std::span<const double> distances);

struct LocError {
    double mse = 0;   // m^2
    double rmse = 0;  // m
};
LocError localization_mse(std::span<const Position> truth, std::span<const Position> estimate);

struct DistanceSample {
    Eigen::Matrix<double, kSubcarriers, 2> csi;
    int anchor_id = 0;
    double true_dist = 0;  // meters
    int point_id = 0;
    double x_r = 0, y_r = 0;
};

struct RegressorConfig {
    int epochs = 50;
    int batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double dropout = 0.2;  // first two hidden layers, training only
    std::uint64_t seed = 1;
};

// Per-anchor CSI-to-distance network: 128 -> 256 -> 128 -> 64 -> 32 -> 1 with
// rectifier activations and dropout on the first two layers during training.
// Predictions are clamped at zero.
class DistanceRegressor {
public:
    explicit DistanceRegressor(std::uint64_t init_seed, double dropout = 0.2);

    double predict(const Eigen::Matrix<double, kSubcarriers, 2>& csi) const;
    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const;  // rows = scaled inputs

    // Mean squared error over the batch; accumulates gradients when asked.
    // Used by training and by the finite-difference checks.
    double loss_and_grad(const Eigen::MatrixXd& x, const Eigen::VectorXd& target, bool with_grad,
                         Rng* dropout_rng = nullptr);

    // Raw CSI components are divided by this fixed constant before the first
    // layer (integer CSI spans roughly +-100).
    static constexpr double kInputScale = 0.01;
    static Eigen::VectorXd flatten_scaled(const Eigen::Matrix<double, kSubcarriers, 2>& csi);

    nn::ParamPack params;

private:
    nn::Mlp mlp_;
};

// Throws on an empty sample set or samples from a different anchor.
DistanceRegressor train_regressor(int anchor_id, const std::vector<DistanceSample>& samples,
                                  const RegressorConfig& cfg);

struct LocDatasetConfig {
    int grid_x = 14;
    int grid_y = 7;
    double width = 22.0;   // meters
    double height = 17.0;  // meters
    std::vector<Anchor> anchors;  // defaults to three non-collinear corners
    int packets_per_point = 12;
    double snr_db = 25.0;
    double train_frac = 0.8;      // grid-point level split
    double path_loss_exponent = 2.0;
    double meters_per_sample = 3.0;  // propagation delay scale
    double ref_amplitude = 1.0;      // amplitude at 1 m
    double phase_jitter = 0.2;       // per-packet carrier phase jitter, radians
    std::uint64_t seed = 1;
    sim::ImpairmentShape impairment;

    std::vector<Anchor> effective_anchors() const;
    void validate() const;
};

struct LocDataset {
    LocDatasetConfig cfg;
    std::vector<DistanceSample> train, test;
    std::vector<int> train_points, test_points;  // grid point ids
};

// Uniform receiver grid; per point and anchor, CSI whose amplitude follows the
// path-loss law and whose phase slope follows the propagation delay. The split
// is at grid-point granularity: n_test = floor((1 - train_frac) * points).
LocDataset gen_localization_dataset(const LocDatasetConfig& cfg);

// CSV schema: point_id,x_r,y_r,anchor_id,true_dist,csi_0..csi_127
void write_loc_csv(const std::string& path, const std::vector<DistanceSample>& samples);
std::vector<DistanceSample> read_loc_csv(const std::string& path);

struct LocEvalResult {
    std::vector<int> anchor_ids;
    std::vector<double> per_anchor_rmse;  // distance RMSE per anchor, per packet
    LocError trilat_per_packet;           // one fix per aligned packet index
    LocError trilat_per_point;            // distances averaged per point first
    std::vector<Position> truth;          // per test point
    std::vector<Position> estimate;       // per-point-mean trilateration fixes
};

LocEvalResult evaluate_localization(const LocDataset& dataset,
                                    const std::vector<DistanceRegressor>& regressors,
                                    const AnchorSet& anchors);

}  // namespace csifp::loc
