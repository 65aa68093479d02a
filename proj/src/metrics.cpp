#include "csifp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csifp::metrics {

ConfusionMatrix::ConfusionMatrix(int num_classes) : classes_(num_classes) {
    if (num_classes < 1) throw std::invalid_argument("confusion matrix needs >= 1 class");
    counts_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

void ConfusionMatrix::add(int truth, int predicted, long long count) {
    if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
        throw std::out_of_range("confusion matrix index out of range");
    }
    counts_[static_cast<std::size_t>(truth) * classes_ + predicted] += count;
    total_ += count;
}

long long ConfusionMatrix::count(int truth, int predicted) const {
    return counts_[static_cast<std::size_t>(truth) * classes_ + predicted];
}

double ConfusionMatrix::top1_accuracy() const {
    if (total_ == 0) throw std::invalid_argument("empty confusion matrix");
    long long trace = 0;
    for (int c = 0; c < classes_; ++c) trace += count(c, c);
    return static_cast<double>(trace) / static_cast<double>(total_);
}

double ConfusionMatrix::macro_f1() const {
    if (total_ == 0) throw std::invalid_argument("empty confusion matrix");
    double f1_sum = 0.0;
    for (int c = 0; c < classes_; ++c) {
        long long tp = count(c, c), row = 0, col = 0;
        for (int j = 0; j < classes_; ++j) {
            row += count(c, j);
            col += count(j, c);
        }
        const long long fp = col - tp, fn = row - tp;
        const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        f1_sum += (precision + recall) > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return f1_sum / classes_;
}

double roc_auc(std::span<const double> pos_scores, std::span<const double> neg_scores) {
    if (pos_scores.empty() || neg_scores.empty()) {
        throw std::invalid_argument("roc_auc needs non-empty score sets on both sides");
    }
    struct Entry {
        double score;
        bool positive;
    };
    std::vector<Entry> entries;
    entries.reserve(pos_scores.size() + neg_scores.size());
    for (const double s : pos_scores) entries.push_back({s, true});
    for (const double s : neg_scores) entries.push_back({s, false});
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // Rank sum of positives with tie groups given their average rank.
    // Average ranks are half-integers, so the sum is exact in doubles.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < entries.size()) {
        std::size_t j = i;
        while (j < entries.size() && entries[j].score == entries[i].score) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t) {
            if (entries[t].positive) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(pos_scores.size());
    const double nn = static_cast<double>(neg_scores.size());
    const double u = rank_sum_pos - np * (np + 1.0) / 2.0;  // wins + 0.5 * ties, exactly
    return u / (np * nn);
}

SeedStats aggregate_seeds(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("aggregate_seeds needs >= 1 value");
    SeedStats stats;
    stats.min = values[0];
    stats.max = values[0];
    double sum = 0.0;
    for (const double v : values) {
        sum += v;
        stats.min = std::min(stats.min, v);
        stats.max = std::max(stats.max, v);
    }
    stats.mean = sum / static_cast<double>(values.size());
    // Identical values have zero spread by definition; skip the arithmetic
    // that would otherwise leave rounding dust.
    if (values.size() > 1 && stats.min != stats.max) {
        double sq = 0.0;
        for (const double v : values) sq += (v - stats.mean) * (v - stats.mean);
        stats.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
    return stats;
}

}  // namespace csifp::metrics
