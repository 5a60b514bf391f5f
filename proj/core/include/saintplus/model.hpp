#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saintplus/data.hpp"
#include "saintplus/tensor.hpp"

namespace saintplus {
class KeyValueConfig;
}

namespace saintplus::model {

using tensor::Graph;
using tensor::Tensor;
using tensor::Var;

enum class TemporalMode { continuous, categorical };
enum class TemporalPlacement { none, encoder, decoder, both };

const char* to_string(TemporalMode mode) noexcept;
const char* to_string(TemporalPlacement placement) noexcept;
TemporalMode parse_temporal_mode(std::string_view text);
TemporalPlacement parse_temporal_placement(std::string_view text);

inline constexpr std::int64_t kElapsedCapSeconds = 300;
inline constexpr std::size_t kElapsedRows = 301;
inline constexpr std::int64_t kLagCapMinutes = 1440;
inline constexpr std::size_t kLagBuckets = 150;
inline constexpr double kLayerNormEps = 1e-5;

/// Bucket values in minutes: 0..5, then 10, 20, ..., 1440.
std::int64_t lag_bucket_minutes(std::size_t index);
/// Index of the largest bucket value not exceeding floor(lag_ms / 60000).
std::size_t lag_bucket(std::int64_t lag_ms);
/// min(elapsed_ms / 1000, 300) as a real number of seconds.
double elapsed_seconds(std::int64_t elapsed_ms);
/// min(floor(elapsed_ms / 1000), 300).
std::size_t elapsed_row(std::int64_t elapsed_ms);
/// min(lag_ms / 60000, 1440) as a real number of minutes.
double lag_minutes(std::int64_t lag_ms);

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t window = 100;
  double dropout_rate = 0.0;
  std::size_t ffn_hidden = 256;
  TemporalMode et_mode = TemporalMode::continuous;
  TemporalMode lt_mode = TemporalMode::categorical;
  TemporalPlacement temporal_placement = TemporalPlacement::decoder;
  /// Feature switches for the single-feature variants; ignored when the
  /// placement is none.
  bool use_elapsed = true;
  bool use_lag = true;
  std::size_t num_exercises = 100;
  std::size_t num_categories = 5;

  std::size_t head_dim() const noexcept { return d_model / num_heads; }
  bool temporal_in_encoder() const noexcept;
  bool temporal_in_decoder() const noexcept;
  /// Throws ConfigError naming the offending field.
  void validate() const;

  void write(KeyValueConfig& out, std::string_view section = "model") const;
  /// Absent keys take their values from `defaults`.
  static ModelConfig read(const KeyValueConfig& in, std::string_view section,
                          const ModelConfig& defaults);
  static ModelConfig read(const KeyValueConfig& in, std::string_view section = "model");

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameter tensors in creation order.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  /// Indices sorted by name; the checkpoint record order.
  std::vector<std::size_t> canonical_order() const;
  std::size_t scalar_count() const noexcept;
  void zero_grads();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Parameter blocks, parameterized on the handle type: std::size_t indexes a
// ParameterSet, Var is a handle bound into a graph.

template <class H>
struct NormBlock {
  H gamma, beta;
};

template <class H>
struct AttentionBlock {
  std::vector<H> wq, wk, wv;  // one [d_model x head_dim] matrix per head
  H wo;                       // [d_model x d_model]
};

template <class H>
struct FeedForwardBlock {
  H w1, b1, w2, b2;
};

template <class H>
struct EncoderLayerBlock {
  NormBlock<H> norm1;
  AttentionBlock<H> attention;
  NormBlock<H> norm2;
  FeedForwardBlock<H> ffn;
};

template <class H>
struct DecoderLayerBlock {
  NormBlock<H> norm1;
  AttentionBlock<H> self_attention;
  NormBlock<H> norm2;
  AttentionBlock<H> cross_attention;
  NormBlock<H> norm3;
  FeedForwardBlock<H> ffn;
};

template <class H>
struct EmbeddingBlock {
  H exercise, category, position_enc, position_dec, correctness, start_token;
  H elapsed;  // [d] weight vector (continuous) or [301 x d] table (categorical)
  H lag;      // [d] weight vector (continuous) or [150 x d] table (categorical)
};

template <class H>
struct ModelBlock {
  EmbeddingBlock<H> embedding;
  std::vector<EncoderLayerBlock<H>> encoder;
  std::vector<DecoderLayerBlock<H>> decoder;
  H head_weight, head_bias;
};

using ModelLayout = ModelBlock<std::size_t>;
using ModelVars = ModelBlock<Var>;
using AttentionVars = AttentionBlock<Var>;
using FeedForwardVars = FeedForwardBlock<Var>;
using NormVars = NormBlock<Var>;
using EncoderLayerVars = EncoderLayerBlock<Var>;
using DecoderLayerVars = DecoderLayerBlock<Var>;
using EmbeddingVars = EmbeddingBlock<Var>;

/// Dropout state for one forward pass. A null rng or zero rate disables dropout.
struct SublayerContext {
  double dropout_rate = 0.0;
  CounterRng* rng = nullptr;
};

// Host-side embedding lookups, used by tests and tooling.
std::vector<double> elapsed_embed(std::int64_t elapsed_ms, TemporalMode mode, const Tensor& param);
std::vector<double> lag_embed(std::int64_t lag_ms, TemporalMode mode, const Tensor& param);

/// exercise + category + encoder position rows, plus the shifted temporal rows
/// when the placement includes the encoder.
Var embed_exercises(const EmbeddingVars& emb, const ModelConfig& config, const data::Window& w);
/// Start token at position 0; position t >= 1 carries the response (and, when
/// the placement includes the decoder, the temporal features) of t - 1.
Var embed_responses(const EmbeddingVars& emb, const ModelConfig& config, const data::Window& w);
/// Shifted temporal addend: row 0 is zero, row t encodes interaction t - 1.
/// Invalid Var when no temporal feature is enabled.
Var temporal_embeddings(const EmbeddingVars& emb, const ModelConfig& config,
                        const data::Window& w);

/// Concat_i(Softmax(Mask(Q W_i^Q (K W_i^K)^T / sqrt(d))) V W_i^V) W^O with a causal mask.
Var multi_head_attention(Var q_in, Var k_in, Var v_in, const AttentionVars& p);
/// ReLU(x W_1 + b_1) W_2 + b_2.
Var feed_forward(Var x, const FeedForwardVars& p);
Var encoder_layer(Var x, const EncoderLayerVars& p, const SublayerContext& ctx = {});
Var decoder_layer(Var x, Var encoder_out, const DecoderLayerVars& p,
                  const SublayerContext& ctx = {});

struct ForwardOptions {
  bool train_mode = false;
  std::uint64_t dropout_seed = 0;
};

/// Encoder-decoder knowledge-tracing network with temporal response features.
class SaintPlus {
 public:
  SaintPlus(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  const ModelLayout& layout() const noexcept { return layout_; }

  /// Binds every parameter into `g` as a gradient-receiving leaf. The returned
  /// vector is in parameter order; pass it to resolve().
  std::vector<Var> bind_parameters(Graph& g) const;
  std::vector<Var> bind_constants(Graph& g) const;
  ModelVars resolve(std::span<const Var> bound) const;

  /// Correctness probabilities, one per window position, in (0, 1).
  Var forward(const ModelVars& vars, const data::Window& window,
              const ForwardOptions& options = {}) const;
  std::vector<double> predict(const data::Window& window) const;

  /// Maps out-of-vocabulary exercise/category ids to the padding row 0.
  data::Window conform(const data::Window& window) const;

  /// Closed-form parameter count:
  ///   (E+1)d + (C+1)d + 2Wd + 2d + d                 embeddings + start token
  ///   + et (d or 301d) + lt (d or 150d)
  ///   + N [4d^2 + 2df + f + d + 4d]                  encoder layers
  ///   + N [8d^2 + 2df + f + d + 6d]                  decoder layers
  ///   + d + 1                                        head
  static std::size_t expected_parameter_count(const ModelConfig& config);

 private:
  ModelConfig config_;
  ParameterSet params_;
  ModelLayout layout_;
};

}  // namespace saintplus::model
