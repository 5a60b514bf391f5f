#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "saintplus/config.hpp"
#include "saintplus/data.hpp"
#include "saintplus/errors.hpp"
#include "saintplus/metrics.hpp"
#include "saintplus/synth.hpp"

using namespace saintplus;
using namespace saintplus::synth;

namespace fs = std::filesystem;

namespace {

SynthConfig small_config(std::uint64_t seed = 1) {
  SynthConfig c;
  c.n_students = 60;
  c.n_exercises = 30;
  c.min_interactions = 20;
  c.max_interactions = 60;
  c.seed = seed;
  return c;
}

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "saintplus_test_synth";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("without learning or forgetting correctness follows the item response model") {
  SynthConfig c;
  c.n_students = 100;
  c.n_exercises = 8;
  c.min_interactions = 1000;
  c.max_interactions = 1000;
  c.forget_rate = 0.0;
  c.learn_rate = 1e-300;
  c.mastery_sd = 0.0;
  c.seed = 3;
  const auto bank = make_exercise_bank(c);
  const auto m0 = initial_mastery(c, student_name(0));
  const auto sim = simulate(c);

  std::map<std::int64_t, std::pair<double, double>> tally;  // successes, draws
  for (std::size_t i = 0; i < sim.interactions.size(); ++i) {
    const auto& it = sim.interactions[i];
    tally[it.exercise_id].first += it.correct;
    tally[it.exercise_id].second += 1;
  }
  for (const auto& [e, counts] : tally) {
    CAPTURE(e);
    const auto& q = bank.loading[static_cast<std::size_t>(e - 1)];
    double z = -bank.difficulty[static_cast<std::size_t>(e - 1)];
    for (std::size_t k = 0; k < q.size(); ++k) z += m0[k] * q[k];
    const double p = logistic(z);
    const double n = counts.second;
    CHECK(n > 10'000);
    const double sigma = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(counts.first / n - p) <= 3 * sigma);
  }
}

TEST_CASE("simulate") {
  const auto c = small_config();
  const auto sim = simulate(c);
  CHECK(sim.interactions.size() == sim.probs.size());
  CHECK(sim.interactions.size() == sim.lags.size());

  SUBCASE("timestamps, elapsed floor and ids") {
    for (std::size_t i = 0; i < sim.interactions.size(); ++i) {
      const auto& it = sim.interactions[i];
      CHECK(it.elapsed_ms >= 500);
      CHECK(it.exercise_id >= 1);
      CHECK(it.exercise_id <= 30);
      CHECK(it.category_id >= 1);
      CHECK(it.category_id <= 5);
      CHECK(sim.probs[i] > 0.0);
      CHECK(sim.probs[i] < 1.0);
      if (i > 0 && sim.interactions[i - 1].student_id == it.student_id) {
        const auto& prev = sim.interactions[i - 1];
        CHECK(it.start_timestamp_ms == prev.start_timestamp_ms + prev.elapsed_ms + sim.lags[i]);
        CHECK(it.start_timestamp_ms > prev.start_timestamp_ms);
      } else {
        CHECK(sim.lags[i] == 0);
      }
    }
  }
  SUBCASE("compute_lag recovers the sampled lags exactly") {
    std::vector<std::int64_t> recovered;
    for (const auto& s : data::group_by_student(sim.interactions))
      recovered.insert(recovered.end(), s.lag_ms.begin(), s.lag_ms.end());
    CHECK(recovered == sim.lags);
  }
  SUBCASE("same seed, same log") {
    const auto again = simulate(c);
    CHECK(again.interactions == sim.interactions);
    CHECK(again.probs == sim.probs);
    CHECK_FALSE(simulate(small_config(2)).interactions == sim.interactions);
  }
  SUBCASE("invalid configs fail before any output") {
    auto bad = c;
    bad.n_students = 0;
    CHECK_THROWS_AS(simulate(bad), ConfigError);
    bad = c;
    bad.learn_rate = 0.0;
    CHECK_THROWS_AS(simulate(bad), ConfigError);
    bad = c;
    bad.max_interactions = 3;
    CHECK_THROWS_AS(simulate(bad), ConfigError);
    bad = c;
    bad.lag = {0, 0, 0};
    CHECK_THROWS_AS(simulate(bad), ConfigError);
    bad = c;
    bad.forget_rate = -1;
    const auto path = temp_dir() / "never.csv";
    fs::remove(path);
    CHECK_THROWS_AS(write_simulation(path, bad, sim), ConfigError);
    CHECK_FALSE(fs::exists(path));
  }
}

TEST_CASE("long gaps hurt accuracy under strong forgetting") {
  SynthConfig c;
  c.n_students = 400;
  c.min_interactions = 60;
  c.max_interactions = 60;
  c.forget_rate = 10.0;
  c.lag = {0.5, 0.0, 0.5};
  c.seed = 5;
  const auto sim = simulate(c);
  double long_ok = 0, long_n = 0, short_ok = 0, short_n = 0;
  for (std::size_t i = 0; i < sim.interactions.size(); ++i) {
    if (sim.lags[i] == 0) continue;
    if (sim.lags[i] >= 3'600'000) {
      long_ok += sim.interactions[i].correct;
      long_n += 1;
    } else {
      short_ok += sim.interactions[i].correct;
      short_n += 1;
    }
  }
  REQUIRE(long_n > 10'000);
  REQUIRE(short_n > 10'000);
  const double p1 = short_ok / short_n, p2 = long_ok / long_n;
  const double pooled = (short_ok + long_ok) / (short_n + long_n);
  const double z = (p1 - p2) / std::sqrt(pooled * (1 - pooled) * (1 / short_n + 1 / long_n));
  CHECK(p2 < p1);
  CHECK(z > 2.326);  // one-sided p < 0.01
}

TEST_CASE("ground truth replay") {
  const auto c = small_config(9);
  const auto sim = simulate(c);
  CHECK(ground_truth_probs(c, sim.interactions) == sim.probs);

  std::vector<int> labels;
  for (const auto& it : sim.interactions) labels.push_back(it.correct);
  CHECK(metrics::auc(sim.probs, labels) > 0.5);

  const auto dir = temp_dir();
  const auto path = dir / "log.csv";
  write_simulation(path, c, sim);
  CHECK(fs::exists(sidecar_path(path)));
  CHECK(ground_truth_probs(c, path) == sim.probs);

  SUBCASE("byte-identical files for the same seed") {
    const auto other = dir / "log2.csv";
    write_simulation(other, c, simulate(c));
    CHECK(slurp(other) == slurp(path));
    CHECK(slurp(sidecar_path(other)) == slurp(sidecar_path(path)));
    const auto meta = KeyValueConfig::parse(slurp(sidecar_path(path)));
    CHECK(meta.get_int("integrity", "rows", -1) == static_cast<std::int64_t>(sim.interactions.size()));
    CHECK(SynthConfig::read(meta) == c);
  }
  SUBCASE("a shuffled log is rejected") {
    std::istringstream in(slurp(path));
    std::string header, line;
    std::getline(in, header);
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    std::reverse(rows.begin(), rows.end());
    const auto shuffled = dir / "shuffled.csv";
    {
      std::ofstream out(shuffled, std::ios::binary);
      out << header << '\n';
      for (const auto& r : rows) out << r << '\n';
    }
    fs::copy_file(sidecar_path(path), sidecar_path(shuffled), fs::copy_options::overwrite_existing);
    CHECK_THROWS_AS(ground_truth_probs(c, shuffled), LoadError);

    // reordered rows also fail the replay itself
    auto reordered = sim.interactions;
    std::swap(reordered[3], reordered[4]);
    CHECK_THROWS_AS(ground_truth_probs(c, reordered), LoadError);
  }
  SUBCASE("a different config is rejected") {
    auto other = c;
    other.seed = 10;
    CHECK_THROWS_AS(ground_truth_probs(other, path), LoadError);
    fs::remove(dir / "nometa.csv");
    fs::copy_file(path, dir / "nometa.csv");
    CHECK_THROWS_AS(ground_truth_probs(c, dir / "nometa.csv"), LoadError);
  }
  SUBCASE("the log parses back into the simulated interactions") {
    const auto parsed = data::parse_log(path);
    CHECK(parsed.warnings.empty());
    CHECK(parsed.interactions == sim.interactions);
  }
}

TEST_CASE("synth config round trip") {
  auto c = small_config(123456789012345ULL);
  c.lag = {0.2, 0.3, 0.5};
  c.elapsed_mastery_slope = 0.0;
  KeyValueConfig kv;
  c.write(kv);
  CHECK(SynthConfig::read(KeyValueConfig::parse(kv.serialize())) == c);
  KeyValueConfig partial;
  partial.set("synth", "n_students", std::int64_t{7});
  const auto r = SynthConfig::read(partial, "synth", c);
  CHECK(r.n_students == 7);
  CHECK(r.n_exercises == c.n_exercises);
  partial.set("synth", "seed", std::string("-3"));
  CHECK_THROWS_AS(SynthConfig::read(partial), ConfigError);
}
