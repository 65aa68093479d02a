#include "csifp/openset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "csifp/metrics.hpp"
#include "csifp/rng.hpp"

namespace csifp::openset {

namespace {

constexpr char kVerifierMagic[8] = {'C', 'S', 'F', 'P', 'V', 'R', 'F', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated verifier file");
    return v;
}

}  // namespace

NominalSplit split_nominal(const Eigen::MatrixXd& embeddings, double n1_frac, std::uint64_t seed) {
    const Eigen::Index n = embeddings.rows();
    if (n1_frac <= 0.0 || n1_frac >= 1.0) throw std::invalid_argument("n1_frac must be in (0, 1)");
    const Eigen::Index n1 = static_cast<Eigen::Index>(std::llround(n1_frac * static_cast<double>(n)));
    if (n1 < 1 || n - n1 < 1) {
        throw std::invalid_argument("too few embeddings for a reference/calibration split");
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x5917u));
    rng.shuffle(order);

    NominalSplit split;
    split.s1.resize(n1, embeddings.cols());
    split.s2.resize(n - n1, embeddings.cols());
    for (Eigen::Index i = 0; i < n1; ++i) split.s1.row(i) = embeddings.row(order[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = n1; i < n; ++i) {
        split.s2.row(i - n1) = embeddings.row(order[static_cast<std::size_t>(i)]);
    }
    return split;
}

double knn_distance(const Eigen::VectorXd& z, const Eigen::MatrixXd& s1, int k) {
    const Eigen::Index n = s1.rows();
    if (k < 1 || static_cast<Eigen::Index>(k) > n) {
        throw std::invalid_argument("k must satisfy 1 <= k <= |S1|");
    }
    std::vector<double> dists(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        dists[static_cast<std::size_t>(i)] = (s1.row(i).transpose() - z).norm();
    }
    // Summed in ascending order so the result is bit-identical to a
    // full-sort reference.
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += dists[static_cast<std::size_t>(i)];
    return sum;
}

std::vector<double> calibrate(const Eigen::MatrixXd& s2, const Eigen::MatrixXd& s1, int k) {
    std::vector<double> out(static_cast<std::size_t>(s2.rows()));
    for (Eigen::Index j = 0; j < s2.rows(); ++j) {
        out[static_cast<std::size_t>(j)] = knn_distance(s2.row(j).transpose(), s1, k);
    }
    std::sort(out.begin(), out.end());
    return out;
}

double p_value(double d, const std::vector<double>& sorted_calibration) {
    if (sorted_calibration.empty()) throw std::invalid_argument("empty calibration set");
    const auto it = std::lower_bound(sorted_calibration.begin(), sorted_calibration.end(), d);
    const auto at_least = sorted_calibration.end() - it;  // entries >= d
    return static_cast<double>(at_least) / static_cast<double>(sorted_calibration.size());
}

void CusumParams::validate() const {
    if (!(alpha_sig > 0.0) || alpha_sig >= std::exp(-1.0)) {
        throw std::invalid_argument("alpha_sig must lie in (0, exp(-1))");
    }
    if (eps < 0.0) throw std::invalid_argument("eps must be >= 0");
    if (trial_len < 1) throw std::invalid_argument("trial length must be >= 1");
}

StepResult cusum_step(CusumState& state, double p_hat, const CusumParams& params) {
    StepResult out;
    out.score = std::log(params.alpha_sig / (p_hat + params.eps));
    state.g = std::max(0.0, state.g + out.score);
    state.t += 1;
    out.g = state.g;
    out.alarm = state.g >= params.h;
    return out;
}

GemCusumVerifier::GemCusumVerifier(Eigen::MatrixXd s1, std::vector<double> sorted_calibration,
                                   int k, CusumParams params, std::string encoder_hash)
    : s1_(std::move(s1)),
      calibration_(std::move(sorted_calibration)),
      k_(k),
      params_(params),
      encoder_hash_(std::move(encoder_hash)) {
    params_.validate();
    if (k_ < 1 || static_cast<Eigen::Index>(k_) > s1_.rows()) {
        throw std::invalid_argument("k must satisfy 1 <= k <= |S1|");
    }
    if (calibration_.empty()) throw std::invalid_argument("empty calibration set");
    if (!std::is_sorted(calibration_.begin(), calibration_.end())) {
        throw std::invalid_argument("calibration distances must be sorted ascending");
    }
}

GemCusumVerifier GemCusumVerifier::fit(const Eigen::MatrixXd& nominal_embeddings, double n1_frac,
                                       int k, CusumParams params, std::uint64_t seed,
                                       std::string encoder_hash) {
    NominalSplit split = split_nominal(nominal_embeddings, n1_frac, seed);
    auto cal = calibrate(split.s2, split.s1, k);
    return GemCusumVerifier(std::move(split.s1), std::move(cal), k, params, std::move(encoder_hash));
}

double GemCusumVerifier::distance(const Eigen::VectorXd& z) const {
    return knn_distance(z, s1_, k_);
}

TrialOutcome GemCusumVerifier::run_trial(const Eigen::MatrixXd& embeddings) const {
    if (embeddings.rows() != params_.trial_len) {
        throw std::invalid_argument("trial must contain exactly T embeddings");
    }
    TrialOutcome out;
    out.trajectory.reserve(static_cast<std::size_t>(params_.trial_len));
    CusumState state;  // g resets to 0 at each trial boundary
    for (Eigen::Index t = 0; t < embeddings.rows(); ++t) {
        const double d = distance(embeddings.row(t).transpose());
        const double p = p_value(d, calibration_);
        const StepResult step = cusum_step(state, p, params_);
        out.trajectory.push_back(step.g);
        out.score = std::max(out.score, step.g);
        if (step.alarm && !out.reject) {
            out.reject = true;
            out.alarm_step = static_cast<int>(t) + 1;
        }
    }
    return out;
}

std::vector<Eigen::MatrixXd> make_trials(const Eigen::MatrixXd& embeddings, int trial_len) {
    if (trial_len < 1) throw std::invalid_argument("trial length must be >= 1");
    std::vector<Eigen::MatrixXd> trials;
    const Eigen::Index full = embeddings.rows() / trial_len;
    trials.reserve(static_cast<std::size_t>(full));
    for (Eigen::Index i = 0; i < full; ++i) {
        trials.push_back(embeddings.middleRows(i * trial_len, trial_len));
    }
    return trials;
}

EvalResult evaluate_openset(const GemCusumVerifier& verifier,
                            const std::vector<Eigen::MatrixXd>& legit_trials,
                            const std::vector<Eigen::MatrixXd>& anomaly_trials,
                            std::span<const double> h_grid) {
    if (legit_trials.empty() || anomaly_trials.empty()) {
        throw std::invalid_argument("open-set evaluation needs trials of both kinds");
    }
    std::vector<double> legit_scores, anomaly_scores;
    std::vector<TrialOutcome> outcomes;
    legit_scores.reserve(legit_trials.size());
    anomaly_scores.reserve(anomaly_trials.size());
    for (const auto& t : legit_trials) {
        outcomes.push_back(verifier.run_trial(t));
        legit_scores.push_back(outcomes.back().score);
    }
    for (const auto& t : anomaly_trials) {
        outcomes.push_back(verifier.run_trial(t));
        anomaly_scores.push_back(outcomes.back().score);
    }

    EvalResult result;
    result.auc = metrics::roc_auc(anomaly_scores, legit_scores);

    const auto point_at = [&](double h) {
        long long tp = 0, fp = 0;
        for (const double s : anomaly_scores) tp += s >= h;
        for (const double s : legit_scores) fp += s >= h;
        const long long fn = static_cast<long long>(anomaly_scores.size()) - tp;
        const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        OperatingPoint point;
        point.h = h;
        point.f1 = (precision + recall) > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        point.tpr = recall;
        point.fpr = static_cast<double>(fp) / static_cast<double>(legit_scores.size());
        return point;
    };

    bool have_best = false;
    for (const double h : h_grid) {
        const OperatingPoint point = point_at(h);
        result.curve.push_back(point);
        if (!have_best || point.f1 > result.best_f1.f1) {
            result.best_f1 = point;
            have_best = true;
        }
    }
    if (!have_best) throw std::invalid_argument("empty threshold grid");

    // Per-trial records at the best-F1 threshold. Alarm step re-derived from
    // each trajectory (first t with g_t >= h).
    std::size_t idx = 0;
    for (std::size_t i = 0; i < legit_trials.size() + anomaly_trials.size(); ++i, ++idx) {
        const TrialOutcome& o = outcomes[idx];
        TrialRecord rec;
        rec.anomaly = i >= legit_trials.size();
        rec.score = o.score;
        rec.rejected = o.score >= result.best_f1.h;
        if (rec.rejected) {
            for (std::size_t t = 0; t < o.trajectory.size(); ++t) {
                if (o.trajectory[t] >= result.best_f1.h) {
                    rec.alarm_step = static_cast<int>(t) + 1;
                    break;
                }
            }
        }
        result.trials.push_back(rec);
    }
    return result;
}

void GemCusumVerifier::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write verifier file: " + path);
    out.write(kVerifierMagic, sizeof(kVerifierMagic));
    write_pod<std::int32_t>(out, static_cast<std::int32_t>(s1_.rows()));
    write_pod<std::int32_t>(out, static_cast<std::int32_t>(s1_.cols()));
    out.write(reinterpret_cast<const char*>(s1_.data()),
              static_cast<std::streamsize>(sizeof(double)) * s1_.size());
    write_pod<std::int32_t>(out, static_cast<std::int32_t>(calibration_.size()));
    out.write(reinterpret_cast<const char*>(calibration_.data()),
              static_cast<std::streamsize>(sizeof(double) * calibration_.size()));
    write_pod<std::int32_t>(out, k_);
    write_pod<double>(out, params_.alpha_sig);
    write_pod<double>(out, params_.eps);
    write_pod<double>(out, params_.h);
    write_pod<std::int32_t>(out, params_.trial_len);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(encoder_hash_.size()));
    out.write(encoder_hash_.data(), static_cast<std::streamsize>(encoder_hash_.size()));
    if (!out) throw std::runtime_error("verifier write failed: " + path);
}

GemCusumVerifier GemCusumVerifier::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open verifier file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kVerifierMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("not a verifier file: " + path);
    }
    const auto rows = read_pod<std::int32_t>(in);
    const auto cols = read_pod<std::int32_t>(in);
    Eigen::MatrixXd s1(rows, cols);
    in.read(reinterpret_cast<char*>(s1.data()), static_cast<std::streamsize>(sizeof(double)) * s1.size());
    const auto n_cal = read_pod<std::int32_t>(in);
    std::vector<double> cal(static_cast<std::size_t>(n_cal));
    in.read(reinterpret_cast<char*>(cal.data()), static_cast<std::streamsize>(sizeof(double) * cal.size()));
    const auto k = read_pod<std::int32_t>(in);
    CusumParams params;
    params.alpha_sig = read_pod<double>(in);
    params.eps = read_pod<double>(in);
    params.h = read_pod<double>(in);
    params.trial_len = read_pod<std::int32_t>(in);
    const auto hash_len = read_pod<std::uint32_t>(in);
    std::string hash(hash_len, '\0');
    in.read(hash.data(), hash_len);
    if (!in) throw std::runtime_error("truncated verifier file: " + path);
    return GemCusumVerifier(std::move(s1), std::move(cal), k, params, std::move(hash));
}

}  // namespace csifp::openset
