#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saintplus/data.hpp"
#include "saintplus/metrics.hpp"
#include "saintplus/model.hpp"

namespace saintplus {
class KeyValueConfig;
}

namespace saintplus::training {

using model::ParameterSet;
using model::SaintPlus;
using tensor::Tensor;
using tensor::Var;

enum class LrDecay { inverse_sqrt, constant };

const char* to_string(LrDecay decay) noexcept;
LrDecay parse_lr_decay(std::string_view text);

struct TrainConfig {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 4000;
  LrDecay decay = LrDecay::inverse_sqrt;
  std::size_t batch_size = 64;
  /// Total optimizer steps; 0 means max_epochs full passes.
  std::size_t max_steps = 0;
  std::size_t max_epochs = 1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  bool shuffle = true;

  void validate() const;
  void write(KeyValueConfig& out, std::string_view section = "train") const;
  static TrainConfig read(const KeyValueConfig& in, std::string_view section,
                          const TrainConfig& defaults);
  static TrainConfig read(const KeyValueConfig& in, std::string_view section = "train");

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static OptimizerState fresh(const ParameterSet& params);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// peak_lr * min(step / warmup, sqrt(warmup / step)); with LrDecay::constant
/// the rate stays at peak_lr after warmup.
double lr_schedule(std::size_t step, const TrainConfig& config);

/// Bias-corrected Adam update from the gradients held by `params`. Every
/// gradient is checked before any parameter is touched; a non-finite entry
/// raises NumericError naming the parameter and leaves params/state unchanged.
void adam_step(ParameterSet& params, OptimizerState& state, const TrainConfig& config, double lr);

/// Loss weight per position: 1 where the position is valid and both ids are
/// in vocabulary (non-zero after SaintPlus::conform), else 0.
std::vector<double> scored_weights(const data::Window& window);

/// -mean over valid positions of c log p + (1 - c) log(1 - p), log arguments
/// clamped at 1e-12. Throws ContractError when no position is valid.
Var bce_loss(Var probs, std::span<const int> labels, std::span<const std::uint8_t> valid);

/// Forward and backward over a batch of windows. Gradients of the batch loss
/// (summed BCE over scored positions / number of scored positions) are added,
/// window by window in the given order, into the parameter gradients.
/// Returns the batch loss; throws ContractError when nothing is scored.
double accumulate_batch_gradients(SaintPlus& model, std::span<const data::Window* const> batch,
                                  bool train_mode = false, std::uint64_t dropout_seed = 0);

/// Batch loss without gradients.
double batch_loss(const SaintPlus& model, std::span<const data::Window* const> batch);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_acc;
  std::optional<double> val_auc;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Header `step,lr,train_loss,val_acc,val_auc`; unevaluated steps leave the
/// last two fields empty.
void write_step_log(std::ostream& out, std::span<const StepRecord> log);

struct Prediction {
  std::string student_id;
  std::size_t window = 0;
  std::size_t position = 0;
  int label = 0;
  double score = 0.0;
};

struct Evaluation {
  metrics::MetricsReport report;
  std::vector<Prediction> predictions;
};

/// Inference-mode predictions over every scored position, in window order.
Evaluation evaluate(const SaintPlus& model, std::span<const data::Window> windows);

/// Header `student_id,window,position,label,score`.
void write_predictions(std::ostream& out, std::span<const Prediction> predictions);

/// Where a resumed run picks up.
struct TrainProgress {
  OptimizerState optimizer;
  double best_auc = -1.0;
  std::size_t best_step = 0;
};

struct TrainResult {
  std::vector<StepRecord> log;
  /// Set when this call found a new best validation AUC.
  std::optional<ParameterSet> best_parameters;
  double best_auc = -1.0;
  std::size_t best_step = 0;
  OptimizerState optimizer;
  bool aborted = false;
  std::string abort_reason;
};

/// Called after each step with the record just appended and the run so far.
/// On the step where `so_far.best_step == record.step` the model holds the
/// new best parameters.
using StepCallback = std::function<void(const StepRecord& record, const TrainResult& so_far)>;

/// Seeded loop of make_batches -> forward -> loss -> backward -> Adam. Batch
/// order for epoch e comes from derive_key(seed, e), so a run resumed from a
/// TrainProgress replays exactly the batches an uninterrupted run would.
/// Validation runs every eval_every steps and at the final step; the best
/// parameters are the first strict maximum of validation AUC. A non-finite
/// loss or gradient stops the run with `aborted` set.
TrainResult train(SaintPlus& model, std::span<const data::Window> train_windows,
                  std::span<const data::Window> validation_windows, const TrainConfig& config,
                  const TrainProgress* resume = nullptr, const StepCallback& on_step = {});

/// Steps implied by the config for a training set of the given size.
std::size_t total_steps(const TrainConfig& config, std::size_t train_window_count);

}  // namespace saintplus::training
