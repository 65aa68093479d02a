#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "csifp/metrics.hpp"
#include "csifp/rng.hpp"

using namespace csifp;
using metrics::ConfusionMatrix;

namespace {

// O(n^2) pair counting: wins + half ties over all (pos, neg) pairs.
double auc_pair_oracle(const std::vector<double>& pos, const std::vector<double>& neg) {
    double credit = 0.0;
    for (const double p : pos) {
        for (const double n : neg) {
            if (p > n) credit += 1.0;
            else if (p == n) credit += 0.5;
        }
    }
    return credit / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace

TEST_CASE("confusion matrix: diagonal and uniform cases") {
    ConfusionMatrix diag(4);
    for (int c = 0; c < 4; ++c) diag.add(c, c, 10);
    CHECK(diag.top1_accuracy() == 1.0);
    CHECK(diag.macro_f1() == 1.0);

    ConfusionMatrix uniform(2);
    for (int t = 0; t < 2; ++t) {
        for (int p = 0; p < 2; ++p) uniform.add(t, p, 5);
    }
    CHECK(uniform.top1_accuracy() == doctest::Approx(0.5));
    CHECK(uniform.macro_f1() == doctest::Approx(0.5));
}

TEST_CASE("macro F1 matches a scalar per-class hand computation") {
    Rng rng(404);
    const int classes = 5;
    ConfusionMatrix cm(classes);
    std::vector<std::vector<long long>> counts(classes, std::vector<long long>(classes, 0));
    for (int t = 0; t < classes; ++t) {
        for (int p = 0; p < classes; ++p) {
            const long long c = rng.uniform_int(0, 30);
            counts[t][p] = c;
            if (c > 0) cm.add(t, p, c);
        }
    }
    double f1_sum = 0.0;
    long long trace = 0, total = 0;
    for (int c = 0; c < classes; ++c) {
        long long tp = counts[c][c], row = 0, col = 0;
        for (int j = 0; j < classes; ++j) {
            row += counts[c][j];
            col += counts[j][c];
        }
        trace += tp;
        total += row;
        const double precision = (col > 0) ? double(tp) / double(col) : 0.0;
        const double recall = (row > 0) ? double(tp) / double(row) : 0.0;
        f1_sum += (precision + recall > 0) ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    CHECK(cm.macro_f1() == doctest::Approx(f1_sum / classes).epsilon(1e-12));
    CHECK(cm.top1_accuracy() == doctest::Approx(double(trace) / double(total)).epsilon(1e-12));
}

TEST_CASE("macro F1: empty class counts as zero but stays in the mean") {
    ConfusionMatrix cm(3);
    cm.add(0, 0, 10);
    cm.add(1, 1, 10);
    // class 2 never appears as truth or prediction
    CHECK(cm.macro_f1() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("macro F1 is invariant to simultaneous class relabeling") {
    Rng rng(55);
    const int classes = 4;
    std::vector<std::vector<long long>> counts(classes, std::vector<long long>(classes, 0));
    ConfusionMatrix cm(classes), permuted(classes);
    const std::vector<int> perm = {2, 0, 3, 1};
    for (int t = 0; t < classes; ++t) {
        for (int p = 0; p < classes; ++p) {
            const long long c = rng.uniform_int(0, 20);
            if (c > 0) {
                cm.add(t, p, c);
                permuted.add(perm[t], perm[p], c);
            }
        }
    }
    CHECK(cm.macro_f1() == doctest::Approx(permuted.macro_f1()).epsilon(1e-14));
}

TEST_CASE("roc_auc: separated and degenerate cases") {
    CHECK(metrics::roc_auc(std::vector<double>{3, 4, 5}, std::vector<double>{0, 1, 2}) == 1.0);
    CHECK(metrics::roc_auc(std::vector<double>{1, 1, 1}, std::vector<double>{1, 1}) == 0.5);
    CHECK_THROWS_AS(metrics::roc_auc({}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("roc_auc equals brute-force pair counting exactly, ties included") {
    Rng rng(99);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> pos(static_cast<std::size_t>(rng.uniform_int(5, 60)));
        std::vector<double> neg(static_cast<std::size_t>(rng.uniform_int(5, 60)));
        // Coarse grid scores force plenty of ties.
        for (auto& v : pos) v = static_cast<double>(rng.uniform_int(0, 12)) * 0.5;
        for (auto& v : neg) v = static_cast<double>(rng.uniform_int(0, 12)) * 0.5 - 0.5;
        const double got = metrics::roc_auc(pos, neg);
        const double want = auc_pair_oracle(pos, neg);
        CHECK(got == want);  // bitwise
        // Symmetry identity.
        CHECK(got + metrics::roc_auc(neg, pos) == 1.0);
    }
}

TEST_CASE("aggregate_seeds") {
    const std::vector<double> same = {0.7, 0.7, 0.7};
    const auto s1 = metrics::aggregate_seeds(same);
    CHECK(s1.mean == doctest::Approx(0.7));
    CHECK(s1.std == 0.0);

    const std::vector<double> two = {1.0, 3.0};
    const auto s2 = metrics::aggregate_seeds(two);
    CHECK(s2.mean == doctest::Approx(2.0));
    CHECK(s2.std == doctest::Approx(std::sqrt(2.0)));
    CHECK(s2.min == 1.0);
    CHECK(s2.max == 3.0);

    // Independent two-pass recomputation on 10 seeded values.
    Rng rng(17);
    std::vector<double> values(10);
    for (auto& v : values) v = rng.uniform(0.0, 1.0);
    const auto s3 = metrics::aggregate_seeds(values);
    double mean = 0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0;
    for (const double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size() - 1);
    CHECK(s3.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(s3.std == doctest::Approx(std::sqrt(var)).epsilon(1e-14));
    CHECK(s3.min == *std::min_element(values.begin(), values.end()));
    CHECK(s3.max == *std::max_element(values.begin(), values.end()));

    CHECK(metrics::aggregate_seeds(std::vector<double>{0.42}).std == 0.0);
    CHECK_THROWS_AS(metrics::aggregate_seeds({}), std::invalid_argument);
}
