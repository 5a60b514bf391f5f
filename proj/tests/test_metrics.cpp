#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "saintplus/errors.hpp"
#include "saintplus/metrics.hpp"
#include "saintplus/rng.hpp"

using namespace saintplus;
using namespace saintplus::metrics;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    ++pos;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  for (const int v : y) neg += v == 0 ? 1 : 0;
  return static_cast<double>(twice) / static_cast<double>(2 * pos * neg);
}

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Scores on a coarse grid k/64 so that ties are frequent and the affine and
// cubic maps below are exact in floating point.
Instance random_instance(std::uint64_t seed, std::size_t n) {
  CounterRng rng(seed);
  Instance r;
  const auto levels = 2 + rng.below(20);
  for (std::size_t i = 0; i < n; ++i) {
    r.scores.push_back(static_cast<double>(rng.below(levels)) / 64.0);
    r.labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
  }
  r.labels[0] = 1;
  r.labels[1] = 0;
  return r;
}

}  // namespace

TEST_CASE("accuracy") {
  CHECK(accuracy(std::vector{0.9, 0.1}, std::vector{1, 0}) == 1.0);
  CHECK(accuracy(std::vector{0.5}, std::vector{1}) == 1.0);
  CHECK(accuracy(std::vector{0.5}, std::vector{0}) == 0.0);
  CHECK_THROWS_AS(accuracy(std::vector<double>{}, std::vector<int>{}), ContractError);
  CHECK_THROWS_AS(accuracy(std::vector{0.2, 0.3}, std::vector{1}), ContractError);

  CounterRng rng(1);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 50; ++i) {
    s.push_back(rng.uniform());
    y.push_back(rng.bernoulli(0.5) ? 1 : 0);
  }
  std::size_t hits = 0;
  for (int i = 0; i < 50; ++i) hits += (s[i] >= 0.5 ? 1 : 0) == y[i] ? 1 : 0;
  CHECK(accuracy(s, y) == static_cast<double>(hits) / 50.0);
  CHECK(accuracy(std::vector{0.4, 0.6}, std::vector{1, 1}, 0.3) == 1.0);
  CHECK(accuracy(std::vector{0.4, 0.6}, std::vector{1, 1}, 0.7) == 0.0);
}

TEST_CASE("auc") {
  CHECK(auc(std::vector{0.9, 0.1}, std::vector{1, 0}) == 1.0);
  CHECK(auc(std::vector{0.1, 0.9}, std::vector{1, 0}) == 0.0);
  CHECK(auc(std::vector{0.3, 0.3, 0.3, 0.3}, std::vector{1, 0, 0, 1}) == 0.5);
  CHECK_THROWS_AS(auc(std::vector{0.3, 0.4}, std::vector{1, 1}), MetricError);
  CHECK_THROWS_AS(auc(std::vector{0.3, 0.4}, std::vector{0, 0}), MetricError);
  const auto report = summarize(std::vector{0.3, 0.4}, std::vector{1, 1});
  CHECK(std::isnan(report.auc));
  CHECK(report.n_total == report.n_positive + report.n_negative);
}

TEST_CASE("auc equals the pairwise oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = random_instance(seed, 200);
    CAPTURE(seed);
    CHECK(auc(inst.scores, inst.labels) == pairwise_auc(inst.scores, inst.labels));
  }
}

TEST_CASE("auc invariances") {
  for (std::uint64_t seed = 100; seed < 200; ++seed) {
    CAPTURE(seed);
    const auto inst = random_instance(seed, 150);
    const double a = auc(inst.scores, inst.labels);

    auto flipped = inst.labels;
    for (auto& v : flipped) v = 1 - v;
    CHECK(a + auc(inst.scores, flipped) == 1.0);

    auto affine = inst.scores, cubic = inst.scores;
    for (auto& v : affine) v = 3.0 * v + 1.0;
    for (auto& v : cubic) v = v * v * v;
    CHECK(auc(affine, inst.labels) == a);
    CHECK(auc(cubic, inst.labels) == a);

    std::vector<std::size_t> perm(inst.scores.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    CounterRng rng(seed);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<double> ps;
    std::vector<int> pl;
    for (const auto i : perm) {
      ps.push_back(inst.scores[i]);
      pl.push_back(inst.labels[i]);
    }
    CHECK(auc(ps, pl) == a);
    CHECK(accuracy(ps, pl) == accuracy(inst.scores, inst.labels));
  }
}
