#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csifp::openset {

// Disjoint random partition of nominal embeddings (rows) into a reference set
// s1 and a calibration set s2. Throws when there are too few rows.
struct NominalSplit {
    Eigen::MatrixXd s1;
    Eigen::MatrixXd s2;
};
NominalSplit split_nominal(const Eigen::MatrixXd& embeddings, double n1_frac, std::uint64_t seed);

// Sum of Euclidean distances from z to its k nearest rows of s1.
// Throws when k < 1 or k > rows(s1).
double knn_distance(const Eigen::VectorXd& z, const Eigen::MatrixXd& s1, int k);

// knn_distance of every row of s2 against s1, sorted ascending.
std::vector<double> calibrate(const Eigen::MatrixXd& s2, const Eigen::MatrixXd& s1, int k);

// Empirical tail probability: fraction of calibration distances >= d
// (weak inequality). O(log n) on the sorted array. Throws on empty input.
double p_value(double d, const std::vector<double>& sorted_calibration);

struct CusumParams {
    double alpha_sig = 0.05;  // must be < exp(-1)
    double eps = 1e-12;
    double h = 10.0;          // alarm threshold
    int trial_len = 20;       // T

    void validate() const;
};

struct CusumState {
    double g = 0.0;
    int t = 0;
};

struct StepResult {
    double score = 0.0;  // s_t = log(alpha / (p + eps))
    double g = 0.0;
    bool alarm = false;
};

// s_t = log(alpha/(p+eps)); g_t = max(0, g_{t-1} + s_t); alarm when g_t >= h.
StepResult cusum_step(CusumState& state, double p_hat, const CusumParams& params);

struct TrialOutcome {
    bool reject = false;
    int alarm_step = -1;            // 1-based step of the first alarm
    double score = 0.0;             // max_t g_t (threshold-free trial score)
    std::vector<double> trajectory; // g_1..g_T
};

// Frozen verifier: reference embeddings, sorted calibration distances and the
// CUSUM parameters, plus the hash of the encoder checkpoint that produced the
// embedding space.
class GemCusumVerifier {
public:
    GemCusumVerifier(Eigen::MatrixXd s1, std::vector<double> sorted_calibration, int k,
                     CusumParams params, std::string encoder_hash = {});

    // Build from nominal embeddings via split_nominal + calibrate.
    static GemCusumVerifier fit(const Eigen::MatrixXd& nominal_embeddings, double n1_frac, int k,
                                CusumParams params, std::uint64_t seed,
                                std::string encoder_hash = {});

    // Runs exactly params.trial_len embeddings (rows); g starts at 0.
    TrialOutcome run_trial(const Eigen::MatrixXd& embeddings) const;

    double distance(const Eigen::VectorXd& z) const;  // kNN statistic vs s1

    const Eigen::MatrixXd& reference() const { return s1_; }
    const std::vector<double>& calibration() const { return calibration_; }
    int k() const { return k_; }
    const CusumParams& params() const { return params_; }
    CusumParams& params() { return params_; }
    const std::string& encoder_hash() const { return encoder_hash_; }

    void save(const std::string& path) const;
    static GemCusumVerifier load(const std::string& path);

private:
    Eigen::MatrixXd s1_;
    std::vector<double> calibration_;  // sorted ascending
    int k_;
    CusumParams params_;
    std::string encoder_hash_;
};

struct TrialRecord {
    bool anomaly = false;  // ground truth
    double score = 0.0;
    bool rejected = false;  // at the selected threshold
    int alarm_step = -1;
};

struct OperatingPoint {
    double h = 0.0;
    double f1 = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

struct EvalResult {
    double auc = 0.0;
    std::vector<OperatingPoint> curve;  // one point per grid threshold
    OperatingPoint best_f1;
    std::vector<TrialRecord> trials;    // decisions at best_f1.h
};

// Trial-level open-set evaluation; anomaly trials are the positive class.
// A trial rejects at threshold h iff its score (max_t g_t) >= h.
EvalResult evaluate_openset(const GemCusumVerifier& verifier,
                            const std::vector<Eigen::MatrixXd>& legit_trials,
                            const std::vector<Eigen::MatrixXd>& anomaly_trials,
                            std::span<const double> h_grid);

// Groups rows into consecutive non-overlapping trials of trial_len rows;
// the remainder is dropped.
std::vector<Eigen::MatrixXd> make_trials(const Eigen::MatrixXd& embeddings, int trial_len);

}  // namespace csifp::openset
