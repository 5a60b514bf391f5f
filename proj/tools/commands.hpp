#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "saintplus/config.hpp"
#include "saintplus/data.hpp"
#include "saintplus/metrics.hpp"
#include "saintplus/model.hpp"
#include "saintplus/training.hpp"

namespace saintplus::cli {

/// Named bundle of config defaults: tiny, overfit, desk or paper.
KeyValueConfig preset(std::string_view name);

/// Applies `--section.key value`, `--section.key=value` and bare `--key value`
/// overrides. Dotted keys must already exist (except under [columns]); a bare
/// key must name exactly one key of `base`.
void apply_overrides(KeyValueConfig& base, const std::vector<std::string>& args);

/// Everything a training run needs, resolved from a config.
struct Experiment {
  KeyValueConfig config;
  data::DatasetSplit split;
  model::ModelConfig model;
  training::TrainConfig train;
};

/// Loads (or, without [data] path, simulates) the log, splits it and resolves
/// vocabulary sizes of 0 from the training split.
Experiment prepare_experiment(const KeyValueConfig& config, std::ostream& log);

struct RunOutcome {
  training::TrainResult result;
  metrics::MetricsReport test;
};

/// Trains from the given init/train seed and scores the best parameters on
/// the test split.
RunOutcome run_once(const Experiment& experiment, const model::ModelConfig& model_config,
                    std::uint64_t seed);

struct Variant {
  std::string name;
  std::vector<std::pair<std::string, std::string>> columns;  // extra table columns
  std::function<void(model::ModelConfig&)> apply;
};

/// Rows of one ablation axis: embedding_modes, temporal_features, placement.
std::vector<Variant> ablation_variants(std::string_view axis);

struct AblationRow {
  std::string name;
  std::vector<std::pair<std::string, std::string>> columns;
  std::vector<double> acc;  // one per seed
  std::vector<double> auc;
  double mean_acc() const;
  double mean_auc() const;
};

/// Trains each variant once per seed (seed, seed+1, ...); `jobs` > 1 runs
/// variants on separate threads.
std::vector<AblationRow> run_ablation(const Experiment& experiment,
                                      const std::vector<Variant>& variants, std::size_t seeds,
                                      std::size_t jobs, std::ostream& log);

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);

/// Entry point shared by the executable and the tests. Returns the exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace saintplus::cli
