#include "saintplus/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "saintplus/config.hpp"
#include "saintplus/errors.hpp"
#include "saintplus/rng.hpp"

namespace saintplus::synth {

namespace {

constexpr std::int64_t kEpochMs = 1'600'000'000'000;
constexpr std::int64_t kYearMs = 365LL * 24 * 3600 * 1000;
constexpr double kSecondMs = 1000.0;
constexpr double kMinuteMs = 60'000.0;
constexpr double kHourMs = 3'600'000.0;

std::uint64_t student_key(const SynthConfig& c, std::string_view id) {
  return derive_key(c.seed, fnv1a64(id));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// The three steps below are shared by simulate() and the replay so that both
// produce bit-identical probabilities.

void decay(std::vector<double>& m, std::int64_t lag_ms, double forget_rate) {
  const double f = std::exp(-forget_rate * static_cast<double>(lag_ms) / kMinuteMs);
  for (auto& x : m) x *= f;
}

double proficiency(const std::vector<double>& m, const ExerciseBank& bank, std::int64_t exercise) {
  const auto e = static_cast<std::size_t>(exercise - 1);
  return dot(m, bank.loading[e]) - bank.difficulty[e];
}

void learn(std::vector<double>& m, const ExerciseBank& bank, std::int64_t exercise, int correct,
           double learn_rate) {
  if (correct != 1) return;
  const auto& q = bank.loading[static_cast<std::size_t>(exercise - 1)];
  for (std::size_t k = 0; k < m.size(); ++k) m[k] += learn_rate * q[k];
}

std::int64_t sample_lag(CounterRng& rng, const LagMixture& mix) {
  const double total = mix.seconds + mix.minutes + mix.hours;
  const double u = rng.uniform() * total;
  double lo = kSecondMs, hi = 60 * kSecondMs;
  if (u >= mix.seconds + mix.minutes) {
    lo = kHourMs;
    hi = 72 * kHourMs;
  } else if (u >= mix.seconds) {
    lo = kMinuteMs;
    hi = 60 * kMinuteMs;
  }
  return std::llround(std::exp(rng.uniform(std::log(lo), std::log(hi))));
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_digest(const SynthConfig& c) {
  KeyValueConfig kv;
  c.write(kv, "synth");
  return hex(fnv1a64(kv.serialize()));
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void SynthConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("synth.") + name + " must be at least 1");
  };
  positive(n_students, "n_students");
  positive(n_exercises, "n_exercises");
  positive(n_categories, "n_categories");
  positive(min_interactions, "min_interactions");
  positive(skill_dim, "skill_dim");
  if (max_interactions < min_interactions) {
    throw ConfigError("synth.max_interactions must be >= synth.min_interactions");
  }
  if (skill_dim < n_categories) {
    throw ConfigError("synth.skill_dim must be >= synth.n_categories (one skill per category)");
  }
  if (!(learn_rate > 0.0)) throw ConfigError("synth.learn_rate must be positive");
  if (!(forget_rate >= 0.0)) throw ConfigError("synth.forget_rate must be non-negative");
  if (!(base_elapsed_ms > 0.0)) throw ConfigError("synth.base_elapsed_ms must be positive");
  if (!std::isfinite(elapsed_mastery_slope)) {
    throw ConfigError("synth.elapsed_mastery_slope must be finite");
  }
  if (!(elapsed_noise_ms >= 0.0)) throw ConfigError("synth.elapsed_noise_ms must be non-negative");
  if (!std::isfinite(mastery_mean)) throw ConfigError("synth.mastery_mean must be finite");
  if (!(mastery_sd >= 0.0)) throw ConfigError("synth.mastery_sd must be non-negative");
  if (!(difficulty_sd >= 0.0)) throw ConfigError("synth.difficulty_sd must be non-negative");
  if (!(loading_noise >= 0.0)) throw ConfigError("synth.loading_noise must be non-negative");
  if (!(lag.seconds >= 0.0 && lag.minutes >= 0.0 && lag.hours >= 0.0) ||
      !(lag.seconds + lag.minutes + lag.hours > 0.0)) {
    throw ConfigError("synth.lag_* weights must be non-negative with a positive sum");
  }
}

void SynthConfig::write(KeyValueConfig& out, std::string_view s) const {
  out.set(s, "n_students", static_cast<std::int64_t>(n_students));
  out.set(s, "n_exercises", static_cast<std::int64_t>(n_exercises));
  out.set(s, "n_categories", static_cast<std::int64_t>(n_categories));
  out.set(s, "min_interactions", static_cast<std::int64_t>(min_interactions));
  out.set(s, "max_interactions", static_cast<std::int64_t>(max_interactions));
  out.set(s, "skill_dim", static_cast<std::int64_t>(skill_dim));
  out.set(s, "learn_rate", learn_rate);
  out.set(s, "forget_rate", forget_rate);
  out.set(s, "base_elapsed_ms", base_elapsed_ms);
  out.set(s, "elapsed_mastery_slope", elapsed_mastery_slope);
  out.set(s, "elapsed_noise_ms", elapsed_noise_ms);
  out.set(s, "mastery_mean", mastery_mean);
  out.set(s, "mastery_sd", mastery_sd);
  out.set(s, "difficulty_sd", difficulty_sd);
  out.set(s, "loading_noise", loading_noise);
  out.set(s, "lag_seconds", lag.seconds);
  out.set(s, "lag_minutes", lag.minutes);
  out.set(s, "lag_hours", lag.hours);
  out.set(s, "seed", std::to_string(seed));
}

SynthConfig SynthConfig::read(const KeyValueConfig& in, std::string_view s,
                              const SynthConfig& d) {
  auto count = [&](const char* key, std::size_t fallback) {
    const auto v = in.get_int(s, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(s) + "." + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  SynthConfig c;
  c.n_students = count("n_students", d.n_students);
  c.n_exercises = count("n_exercises", d.n_exercises);
  c.n_categories = count("n_categories", d.n_categories);
  c.min_interactions = count("min_interactions", d.min_interactions);
  c.max_interactions = count("max_interactions", d.max_interactions);
  c.skill_dim = count("skill_dim", d.skill_dim);
  c.learn_rate = in.get_double(s, "learn_rate", d.learn_rate);
  c.forget_rate = in.get_double(s, "forget_rate", d.forget_rate);
  c.base_elapsed_ms = in.get_double(s, "base_elapsed_ms", d.base_elapsed_ms);
  c.elapsed_mastery_slope = in.get_double(s, "elapsed_mastery_slope", d.elapsed_mastery_slope);
  c.elapsed_noise_ms = in.get_double(s, "elapsed_noise_ms", d.elapsed_noise_ms);
  c.mastery_mean = in.get_double(s, "mastery_mean", d.mastery_mean);
  c.mastery_sd = in.get_double(s, "mastery_sd", d.mastery_sd);
  c.difficulty_sd = in.get_double(s, "difficulty_sd", d.difficulty_sd);
  c.loading_noise = in.get_double(s, "loading_noise", d.loading_noise);
  c.lag.seconds = in.get_double(s, "lag_seconds", d.lag.seconds);
  c.lag.minutes = in.get_double(s, "lag_minutes", d.lag.minutes);
  c.lag.hours = in.get_double(s, "lag_hours", d.lag.hours);
  c.seed = in.get_u64(s, "seed", d.seed);
  return c;
}

SynthConfig SynthConfig::read(const KeyValueConfig& in, std::string_view section) {
  return read(in, section, SynthConfig{});
}

// ---------------------------------------------------------------------------
// Simulation

ExerciseBank make_exercise_bank(const SynthConfig& c) {
  c.validate();
  CounterRng rng(derive_key(c.seed, 0xE8E8C15EULL));
  ExerciseBank bank;
  for (std::size_t e = 0; e < c.n_exercises; ++e) {
    const auto cat = static_cast<std::int64_t>(rng.below(c.n_categories));
    std::vector<double> q(c.skill_dim);
    for (std::size_t k = 0; k < c.skill_dim; ++k)
      q[k] = static_cast<std::int64_t>(k) == cat ? 1.0 : rng.uniform(0.0, c.loading_noise);
    bank.category.push_back(cat + 1);
    bank.loading.push_back(std::move(q));
    bank.difficulty.push_back(rng.normal(0.0, c.difficulty_sd));
  }
  return bank;
}

std::vector<double> initial_mastery(const SynthConfig& c, std::string_view student_id) {
  CounterRng rng(derive_key(student_key(c, student_id), 1));
  std::vector<double> m(c.skill_dim);
  for (auto& x : m) x = rng.normal(c.mastery_mean, c.mastery_sd);
  return m;
}

std::string student_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", index);
  return buf;
}

Simulation simulate(const SynthConfig& c) {
  c.validate();
  const auto bank = make_exercise_bank(c);
  Simulation sim;
  for (std::size_t s = 0; s < c.n_students; ++s) {
    const auto id = student_name(s);
    CounterRng rng(derive_key(student_key(c, id), 2));
    auto m = initial_mastery(c, id);
    const std::size_t count =
        c.min_interactions + rng.below(c.max_interactions - c.min_interactions + 1);
    std::int64_t start = kEpochMs + static_cast<std::int64_t>(rng.below(kYearMs));
    std::int64_t prev_elapsed = 0;
    for (std::size_t t = 0; t < count; ++t) {
      const std::int64_t lag = t == 0 ? 0 : sample_lag(rng, c.lag);
      start += prev_elapsed + lag;
      decay(m, lag, c.forget_rate);
      const auto exercise = static_cast<std::int64_t>(1 + rng.below(c.n_exercises));
      const double z = proficiency(m, bank, exercise);
      const double p = logistic(z);
      const int correct = rng.bernoulli(p) ? 1 : 0;
      const double raw = c.base_elapsed_ms * std::exp(-c.elapsed_mastery_slope * z) +
                         c.elapsed_noise_ms * rng.normal();
      const std::int64_t elapsed = std::max<std::int64_t>(500, std::llround(raw));
      learn(m, bank, exercise, correct, c.learn_rate);

      data::Interaction it;
      it.student_id = id;
      it.exercise_id = exercise;
      it.category_id = bank.category[static_cast<std::size_t>(exercise - 1)];
      it.start_timestamp_ms = start;
      it.elapsed_ms = elapsed;
      it.correct = correct;
      sim.interactions.push_back(std::move(it));
      sim.probs.push_back(p);
      sim.lags.push_back(lag);
      prev_elapsed = elapsed;
    }
  }
  return sim;
}

std::vector<double> ground_truth_probs(const SynthConfig& c, std::span<const data::Interaction> log) {
  c.validate();
  const auto bank = make_exercise_bank(c);
  std::vector<double> probs;
  probs.reserve(log.size());
  std::vector<double> m;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& it = log[i];
    if (it.exercise_id < 1 || static_cast<std::size_t>(it.exercise_id) > c.n_exercises ||
        bank.category[static_cast<std::size_t>(it.exercise_id - 1)] != it.category_id) {
      throw LoadError("log row " + std::to_string(i) + " does not match the exercise bank");
    }
    std::int64_t lag = 0;
    if (i == 0 || log[i - 1].student_id != it.student_id) {
      m = initial_mastery(c, it.student_id);
    } else {
      const auto& prev = log[i - 1];
      lag = it.start_timestamp_ms - (prev.start_timestamp_ms + prev.elapsed_ms);
      if (lag < 0) throw LoadError("log row " + std::to_string(i) + " is out of simulation order");
    }
    decay(m, lag, c.forget_rate);
    probs.push_back(logistic(proficiency(m, bank, it.exercise_id)));
    learn(m, bank, it.exercise_id, it.correct, c.learn_rate);
  }
  return probs;
}

std::filesystem::path sidecar_path(const std::filesystem::path& log_path) {
  auto p = log_path;
  p += ".meta";
  return p;
}

void write_simulation(const std::filesystem::path& log_path, const SynthConfig& config,
                      const Simulation& simulation) {
  config.validate();
  std::ostringstream log;
  data::write_log(log, simulation.interactions);
  const std::string bytes = log.str();

  KeyValueConfig meta;
  config.write(meta, "synth");
  meta.set("integrity", "seed", std::to_string(config.seed));
  meta.set("integrity", "config_hash", config_digest(config));
  meta.set("integrity", "log_hash", hex(fnv1a64(bytes)));
  meta.set("integrity", "rows", static_cast<std::int64_t>(simulation.interactions.size()));

  write_atomically(sidecar_path(log_path), meta.serialize());
  write_atomically(log_path, bytes);
}

std::vector<double> ground_truth_probs(const SynthConfig& config,
                                       const std::filesystem::path& log_path) {
  const auto meta_path = sidecar_path(log_path);
  if (!std::filesystem::exists(meta_path)) throw LoadError("missing sidecar " + meta_path.string());
  const auto meta = KeyValueConfig::load(meta_path);
  if (meta.get_string("integrity", "config_hash", "") != config_digest(config)) {
    throw LoadError("sidecar config hash does not match the given synth config");
  }
  const auto bytes = read_bytes(log_path);
  if (meta.get_string("integrity", "log_hash", "") != hex(fnv1a64(bytes))) {
    throw LoadError("log contents do not match the sidecar digest");
  }
  std::istringstream in(bytes);
  const auto parsed = data::parse_log(in);
  return ground_truth_probs(config, parsed.interactions);
}

}  // namespace saintplus::synth
