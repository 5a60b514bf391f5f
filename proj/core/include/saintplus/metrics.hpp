#pragma once

#include <cstddef>
#include <span>

namespace saintplus::metrics {

struct MetricsReport {
  double acc = 0.0;
  /// NaN when only one class is present.
  double auc = 0.0;
  std::size_t n_total = 0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
  double threshold = 0.5;
};

/// Fraction of positions where (score >= threshold) equals the label.
/// A score exactly at the threshold is a positive prediction.
double accuracy(std::span<const double> scores, std::span<const int> labels,
                double threshold = 0.5);

/// Mann-Whitney AUC with average ranks for tied scores. Equals
/// (wins + ties / 2) / (n_pos * n_neg) exactly: the rank sum is carried as an
/// integer of doubled ranks so no rounding occurs before the final division.
double auc(std::span<const double> scores, std::span<const int> labels);

MetricsReport summarize(std::span<const double> scores, std::span<const int> labels,
                        double threshold = 0.5);

}  // namespace saintplus::metrics
