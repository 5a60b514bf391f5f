#include "saintplus/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "saintplus/errors.hpp"

namespace saintplus::metrics {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("metrics: " + std::to_string(scores.size()) + " scores vs " +
                        std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw ContractError("metrics: empty input");
  for (const int l : labels)
    if (l != 0 && l != 1) throw ContractError("metrics: labels must be 0 or 1");
}

}  // namespace

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    hits += (scores[i] >= threshold ? 1 : 0) == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // A tie group occupying sorted positions [i, j) has average 1-based rank
  // (i + 1 + j) / 2, so its doubled rank i + 1 + j is an integer.
  std::uint64_t pos_rank_sum_x2 = 0;
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    std::uint64_t pos_in_group = 0;
    for (std::size_t k = i; k < j; ++k) pos_in_group += labels[order[k]] == 1 ? 1 : 0;
    pos_rank_sum_x2 += pos_in_group * (i + 1 + j);
    n_pos += pos_in_group;
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("AUC is undefined: only one class present (" + std::to_string(n_pos) +
                      " positive, " + std::to_string(n_neg) + " negative)");
  }
  // 2U = 2 * rank_sum - n_pos (n_pos + 1) = 2 wins + ties.
  const std::uint64_t u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
  return static_cast<double>(u_x2) / static_cast<double>(2 * n_pos * n_neg);
}

MetricsReport summarize(std::span<const double> scores, std::span<const int> labels,
                        double threshold) {
  MetricsReport r;
  r.threshold = threshold;
  r.acc = accuracy(scores, labels, threshold);
  r.n_total = labels.size();
  r.n_positive = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.n_negative = r.n_total - r.n_positive;
  r.auc = (r.n_positive > 0 && r.n_negative > 0) ? auc(scores, labels)
                                                  : std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace saintplus::metrics
