#pragma once

#include <span>
#include <vector>

namespace csifp::metrics {

// L x L counts, rows = true class, cols = predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void add(int truth, int predicted, long long count = 1);
    long long count(int truth, int predicted) const;
    long long total() const { return total_; }
    int classes() const { return classes_; }

    // trace / total.
    double top1_accuracy() const;
    // Unweighted mean of per-class F1; a class with zero precision+recall
    // denominators contributes 0 and still counts in the mean.
    double macro_f1() const;

private:
    int classes_;
    long long total_ = 0;
    std::vector<long long> counts_;  // row-major
};

// Mann-Whitney AUC of pos vs neg scores, half credit for ties. Equals
// brute-force pair counting: (#{p > n} + 0.5 #{p == n}) / (|pos| |neg|).
double roc_auc(std::span<const double> pos_scores, std::span<const double> neg_scores);

struct SeedStats {
    double mean = 0, std = 0, min = 0, max = 0;
};

// Sample statistics over per-seed values; std uses the n-1 denominator
// (0 when n == 1).
SeedStats aggregate_seeds(std::span<const double> values);

}  // namespace csifp::metrics
