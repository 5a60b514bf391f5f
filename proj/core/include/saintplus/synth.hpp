#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saintplus/data.hpp"

namespace saintplus {
class KeyValueConfig;
}

namespace saintplus::synth {

/// Relative weights of the three gap scales. Within a scale the gap is
/// log-uniform: seconds in [1 s, 60 s), minutes in [1 min, 60 min), hours in
/// [1 h, 72 h).
struct LagMixture {
  double seconds = 0.5;
  double minutes = 0.3;
  double hours = 0.2;

  friend bool operator==(const LagMixture&, const LagMixture&) = default;
};

struct SynthConfig {
  std::size_t n_students = 2000;
  std::size_t n_exercises = 100;
  std::size_t n_categories = 5;
  std::size_t min_interactions = 50;
  std::size_t max_interactions = 200;
  std::size_t skill_dim = 5;
  double learn_rate = 0.3;
  /// Mastery decays by exp(-forget_rate * lag_minutes) before each interaction.
  double forget_rate = 0.0005;
  double base_elapsed_ms = 20000.0;
  double elapsed_mastery_slope = 1.0;
  double elapsed_noise_ms = 500.0;
  double mastery_mean = 0.5;
  double mastery_sd = 2.0;
  double difficulty_sd = 1.0;
  /// Off-category skill loading, uniform in [0, loading_noise).
  double loading_noise = 0.1;
  LagMixture lag;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  void write(KeyValueConfig& out, std::string_view section = "synth") const;
  static SynthConfig read(const KeyValueConfig& in, std::string_view section,
                          const SynthConfig& defaults);
  static SynthConfig read(const KeyValueConfig& in, std::string_view section = "synth");

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// Exercise e (1-based) lives at index e - 1.
struct ExerciseBank {
  std::vector<std::int64_t> category;
  std::vector<std::vector<double>> loading;
  std::vector<double> difficulty;
};

ExerciseBank make_exercise_bank(const SynthConfig& config);

/// Initial mastery vector of a student.
std::vector<double> initial_mastery(const SynthConfig& config, std::string_view student_id);

std::string student_name(std::size_t index);

struct Simulation {
  /// Ascending student id, each student in time order.
  std::vector<data::Interaction> interactions;
  /// Bernoulli parameter used for each interaction.
  std::vector<double> probs;
  /// Lag sampled before each interaction (0 for a student's first).
  std::vector<std::int64_t> lags;
};

Simulation simulate(const SynthConfig& config);

/// Sidecar next to a log: `<log>.meta`.
std::filesystem::path sidecar_path(const std::filesystem::path& log_path);

/// Writes the log and its sidecar (config, seed, config and log digests).
/// Both are written to temporaries first, so a failure leaves no partial file.
void write_simulation(const std::filesystem::path& log_path, const SynthConfig& config,
                      const Simulation& simulation);

/// Replays the latent dynamics over a log in simulate() order.
std::vector<double> ground_truth_probs(const SynthConfig& config,
                                       std::span<const data::Interaction> log);

/// Checks the sidecar digests against `config` and the log bytes, then
/// replays. Throws LoadError on any mismatch.
std::vector<double> ground_truth_probs(const SynthConfig& config,
                                       const std::filesystem::path& log_path);

}  // namespace saintplus::synth
