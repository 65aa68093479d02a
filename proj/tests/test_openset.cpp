#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "csifp/metrics.hpp"
#include "csifp/openset.hpp"
#include "csifp/rng.hpp"

using namespace csifp;
using namespace csifp::openset;

namespace {

Eigen::MatrixXd gaussian_cloud(int n, int d, Rng& rng, double shift = 0.0) {
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = rng.normal() + shift;
    }
    return m;
}

double brute_knn(const Eigen::VectorXd& z, const Eigen::MatrixXd& s1, int k) {
    std::vector<double> d(static_cast<std::size_t>(s1.rows()));
    for (Eigen::Index i = 0; i < s1.rows(); ++i) d[(std::size_t)i] = (s1.row(i).transpose() - z).norm();
    std::sort(d.begin(), d.end());
    double sum = 0;
    for (int i = 0; i < k; ++i) sum += d[(std::size_t)i];
    return sum;
}

}  // namespace

TEST_CASE("split_nominal: sizes, determinism, multiset preservation") {
    Rng rng(3);
    const auto data = gaussian_cloud(100, 4, rng);
    const auto split = split_nominal(data, 0.7, 11);
    CHECK(split.s1.rows() == 70);
    CHECK(split.s2.rows() == 30);

    const auto again = split_nominal(data, 0.7, 11);
    CHECK(split.s1 == again.s1);
    CHECK(split.s2 == again.s2);

    // Union of the splits equals the input as a multiset of rows.
    std::multiset<std::vector<double>> input_rows, split_rows;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        input_rows.insert({data(i, 0), data(i, 1), data(i, 2), data(i, 3)});
    }
    for (const auto* m : {&split.s1, &split.s2}) {
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
            split_rows.insert({(*m)(i, 0), (*m)(i, 1), (*m)(i, 2), (*m)(i, 3)});
        }
    }
    CHECK(input_rows == split_rows);

    CHECK_THROWS_AS(split_nominal(gaussian_cloud(1, 4, rng), 0.7, 1), std::invalid_argument);
}

TEST_CASE("knn_distance: self member, hand geometry, brute-force oracle") {
    Eigen::MatrixXd s1(3, 2);
    s1 << 0, 0, 3, 4, 6, 8;

    SUBCASE("member of the reference set at k=1") {
        CHECK(knn_distance(Eigen::Vector2d(0, 0), s1, 1) == 0.0);
    }
    SUBCASE("sum of the two nearest: 0 + 5") {
        CHECK(knn_distance(Eigen::Vector2d(0, 0), s1, 2) == doctest::Approx(5.0).epsilon(1e-15));
    }
    SUBCASE("k out of range") {
        CHECK_THROWS_AS(knn_distance(Eigen::Vector2d(0, 0), s1, 4), std::invalid_argument);
        CHECK_THROWS_AS(knn_distance(Eigen::Vector2d(0, 0), s1, 0), std::invalid_argument);
    }
    SUBCASE("matches the full-sort oracle exactly on random sets") {
        Rng rng(8);
        const auto ref = gaussian_cloud(50, 5, rng);
        for (int rep = 0; rep < 25; ++rep) {
            Eigen::VectorXd z(5);
            for (int j = 0; j < 5; ++j) z[j] = rng.normal();
            CHECK(knn_distance(z, ref, 10) == brute_knn(z, ref, 10));
        }
    }
}

TEST_CASE("calibrate: zeros for subset, sorted output, brute-force match") {
    Rng rng(21);
    const auto s1 = gaussian_cloud(40, 3, rng);

    SUBCASE("calibration points inside the reference set give zero at k=1") {
        const Eigen::MatrixXd s2 = s1.topRows(10);
        for (const double d : calibrate(s2, s1, 1)) CHECK(d == 0.0);
    }
    SUBCASE("output is sorted and matches per-point brute force") {
        const auto s2 = gaussian_cloud(30, 3, rng);
        const auto cal = calibrate(s2, s1, 5);
        REQUIRE(cal.size() == 30);
        CHECK(std::is_sorted(cal.begin(), cal.end()));
        std::vector<double> expect;
        for (Eigen::Index j = 0; j < s2.rows(); ++j) {
            expect.push_back(brute_knn(s2.row(j).transpose(), s1, 5));
        }
        std::sort(expect.begin(), expect.end());
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(cal[i] == expect[i]);
    }
}

TEST_CASE("p_value: weak inequality, boundaries, monotonicity") {
    const std::vector<double> cal = {1, 2, 3, 4};
    CHECK(p_value(0.0, cal) == 1.0);
    CHECK(p_value(2.5, cal) == 0.5);
    CHECK(p_value(4.0, cal) == 0.25);  // weak: d == max still counts
    CHECK(p_value(5.0, cal) == 0.0);
    CHECK_THROWS_AS(p_value(1.0, {}), std::invalid_argument);

    // Nonincreasing in d.
    double prev = 1.1;
    for (double d = 0.0; d < 6.0; d += 0.1) {
        const double p = p_value(d, cal);
        CHECK(p <= prev);
        prev = p;
    }
}

TEST_CASE("cusum_step: score formula, zero floor, hand recursion") {
    CusumParams params;
    params.alpha_sig = 0.05;
    params.eps = 1e-12;
    params.h = 100.0;

    SUBCASE("p equal to alpha keeps g in place") {
        CusumState state;
        const auto r = cusum_step(state, params.alpha_sig, params);
        CHECK(std::abs(r.score) < 1e-9);
        CHECK(state.g == 0.0);
    }
    SUBCASE("p = 1 drives the score negative and the floor holds") {
        CusumState state;
        const auto r = cusum_step(state, 1.0, params);
        CHECK(r.score < 0.0);
        CHECK(state.g == 0.0);
    }
    SUBCASE("hand recursion: p-values 1, 0.01, 0.01") {
        CusumState state;
        cusum_step(state, 1.0, params);
        CHECK(state.g == doctest::Approx(0.0).epsilon(1e-12));
        cusum_step(state, 0.01, params);
        CHECK(state.g == doctest::Approx(std::log(5.0)).epsilon(1e-9));
        cusum_step(state, 0.01, params);
        CHECK(state.g == doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-9));
    }
    SUBCASE("alpha must stay below exp(-1)") {
        CusumParams bad = params;
        bad.alpha_sig = 0.4;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("verifier trials: degenerate thresholds and scalar reference") {
    Rng rng(5);
    const auto nominal = gaussian_cloud(300, 4, rng);
    CusumParams params;
    params.alpha_sig = 0.05;
    params.trial_len = 10;
    params.h = 0.0;
    auto verifier = GemCusumVerifier::fit(nominal, 0.6, 5, params, 7);

    const auto trial_data = gaussian_cloud(params.trial_len, 4, rng, 0.3);

    SUBCASE("h = 0 rejects every trial at step 1") {
        const auto outcome = verifier.run_trial(trial_data);
        CHECK(outcome.reject);
        CHECK(outcome.alarm_step == 1);
    }
    SUBCASE("h = +inf accepts every trial") {
        verifier.params().h = std::numeric_limits<double>::infinity();
        const auto outcome = verifier.run_trial(trial_data);
        CHECK_FALSE(outcome.reject);
        CHECK(outcome.alarm_step == -1);
    }
    SUBCASE("wrong trial length is rejected") {
        CHECK_THROWS_AS(verifier.run_trial(gaussian_cloud(params.trial_len + 1, 4, rng)),
                        std::invalid_argument);
    }
    SUBCASE("step-for-step agreement with a scalar reference") {
        verifier.params().h = 2.0;
        const auto outcome = verifier.run_trial(trial_data);
        double g = 0.0;
        bool rejected = false;
        int alarm_step = -1;
        for (int t = 0; t < params.trial_len; ++t) {
            const double d = brute_knn(trial_data.row(t).transpose(), verifier.reference(), 5);
            long long count = 0;
            for (const double c : verifier.calibration()) count += c >= d;
            const double p = double(count) / double(verifier.calibration().size());
            const double s = std::log(verifier.params().alpha_sig / (p + verifier.params().eps));
            g = std::max(0.0, g + s);
            CHECK(outcome.trajectory[(std::size_t)t] == g);
            if (!rejected && g >= 2.0) {
                rejected = true;
                alarm_step = t + 1;
            }
        }
        CHECK(outcome.reject == rejected);
        CHECK(outcome.alarm_step == alarm_step);
    }
    SUBCASE("verifier state file round trip") {
        verifier.params().h = 3.5;
        verifier.save("verifier_test.bin");
        const auto loaded = GemCusumVerifier::load("verifier_test.bin");
        CHECK(loaded.reference() == verifier.reference());
        CHECK(loaded.calibration() == verifier.calibration());
        CHECK(loaded.k() == verifier.k());
        CHECK(loaded.params().h == 3.5);
        const auto a = verifier.run_trial(trial_data);
        const auto b = loaded.run_trial(trial_data);
        CHECK(a.score == b.score);
        std::remove("verifier_test.bin");
    }
}

TEST_CASE("nominal drift: mean score is negative on calibration-distributed data") {
    Rng rng(31);
    const auto nominal = gaussian_cloud(2000, 6, rng);
    CusumParams params;
    params.alpha_sig = 0.05;
    auto verifier = GemCusumVerifier::fit(nominal, 0.5, 10, params, 3);

    double mean_score = 0.0;
    const int n = 10'000;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd z(6);
        for (int j = 0; j < 6; ++j) z[j] = rng.normal();
        const double d = verifier.distance(z);
        const double p = p_value(d, verifier.calibration());
        mean_score += std::log(params.alpha_sig / (p + params.eps));
    }
    mean_score /= n;
    CHECK(mean_score < 0.0);
}

TEST_CASE("evaluate_openset: separated, exchangeable, oracle AUC, h monotonicity") {
    Rng rng(17);
    const auto nominal = gaussian_cloud(600, 4, rng);
    CusumParams params;
    params.alpha_sig = 0.05;
    params.trial_len = 10;
    auto verifier = GemCusumVerifier::fit(nominal, 0.6, 5, params, 5);

    std::vector<Eigen::MatrixXd> legit, anomaly;
    for (int i = 0; i < 20; ++i) legit.push_back(gaussian_cloud(params.trial_len, 4, rng));
    for (int i = 0; i < 20; ++i) anomaly.push_back(gaussian_cloud(params.trial_len, 4, rng, 4.0));

    std::vector<double> grid;
    for (double h = 0.0; h <= 60.0; h += 1.0) grid.push_back(h);

    SUBCASE("far anomalies are perfectly separated") {
        const auto result = evaluate_openset(verifier, legit, anomaly, grid);
        CHECK(result.auc == 1.0);
        CHECK(result.best_f1.f1 == 1.0);
    }
    SUBCASE("identical distributions sit near chance") {
        std::vector<Eigen::MatrixXd> fake_anomaly;
        for (int i = 0; i < 20; ++i) fake_anomaly.push_back(gaussian_cloud(params.trial_len, 4, rng));
        const auto result = evaluate_openset(verifier, legit, fake_anomaly, grid);
        CHECK(result.auc > 0.2);
        CHECK(result.auc < 0.8);
    }
    SUBCASE("AUC equals the pair-counting oracle on trial scores") {
        const auto result = evaluate_openset(verifier, legit, anomaly, grid);
        std::vector<double> legit_scores, anomaly_scores;
        for (const auto& t : legit) legit_scores.push_back(verifier.run_trial(t).score);
        for (const auto& t : anomaly) anomaly_scores.push_back(verifier.run_trial(t).score);
        double credit = 0;
        for (const double a : anomaly_scores) {
            for (const double l : legit_scores) credit += a > l ? 1.0 : (a == l ? 0.5 : 0.0);
        }
        CHECK(result.auc == credit / double(anomaly_scores.size() * legit_scores.size()));
    }
    SUBCASE("raising h never creates new rejects") {
        const auto result = evaluate_openset(verifier, legit, anomaly, grid);
        // Reject counts along the grid are nonincreasing in h.
        long long prev = std::numeric_limits<long long>::max();
        for (const auto& point : result.curve) {
            const auto rejects = static_cast<long long>(
                std::llround(point.tpr * double(anomaly.size()) + point.fpr * double(legit.size())));
            CHECK(rejects <= prev);
            prev = rejects;
        }
    }
}
