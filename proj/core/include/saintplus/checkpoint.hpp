#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "saintplus/config.hpp"
#include "saintplus/model.hpp"
#include "saintplus/training.hpp"

namespace saintplus::training {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///
///   "SPKT"  u32 version  u32 config_length  config_text
///   repeated: u32 name_length  name  u32 rank  u64 dims[rank]  f64 values[...]
///
/// Parameter records come first in name order. When the config text has
/// `checkpoint.optimizer = true` they are followed by the Adam moments, named
/// "adam.m:<param>" and "adam.v:<param>", in the same order.
struct Checkpoint {
  /// Stored verbatim so that decode -> encode is byte-identical.
  std::string config_text;
  std::vector<std::pair<std::string, tensor::Tensor>> parameters;
  std::optional<OptimizerState> optimizer;  // moments in parameter name order

  KeyValueConfig config() const { return KeyValueConfig::parse(config_text); }
};

/// Snapshot of a model. The config text holds the [model] and [train]
/// sections, a [checkpoint] section (step, seed, parameter count) and `extra`.
Checkpoint make_checkpoint(const model::SaintPlus& model, const TrainConfig& train_config,
                           const OptimizerState* optimizer = nullptr,
                           const KeyValueConfig& extra = {});

std::string encode(const Checkpoint& checkpoint);
/// Throws LoadError naming the offending field.
Checkpoint decode(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the checkpoint's parameters into `model` after checking that every
/// name and shape agrees with the model's own configuration. Nothing is
/// modified when a check fails.
void restore(model::SaintPlus& model, const Checkpoint& checkpoint);

/// Builds a model from the checkpoint's [model] section and restores it.
model::SaintPlus model_from_checkpoint(const Checkpoint& checkpoint);

/// Adam state reordered from name order into `model`'s parameter order.
OptimizerState optimizer_for(const model::SaintPlus& model, const Checkpoint& checkpoint);

}  // namespace saintplus::training
