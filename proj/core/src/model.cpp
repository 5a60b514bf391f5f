#include "saintplus/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saintplus/config.hpp"
#include "saintplus/errors.hpp"

namespace saintplus::model {

using tensor::Shape;

// ---------------------------------------------------------------------------
// Temporal feature discretization

std::int64_t lag_bucket_minutes(std::size_t index) {
  if (index >= kLagBuckets) throw IndexError("lag bucket index " + std::to_string(index) + " >= 150");
  if (index <= 5) return static_cast<std::int64_t>(index);
  return static_cast<std::int64_t>(index - 5) * 10;
}

std::size_t lag_bucket(std::int64_t lag_ms) {
  if (lag_ms < 0) throw ContractError("lag_bucket: negative lag " + std::to_string(lag_ms) + " ms");
  const std::int64_t minutes = lag_ms / 60000;
  if (minutes <= 5) return static_cast<std::size_t>(minutes);
  if (minutes < 10) return 5;
  return static_cast<std::size_t>(5 + std::min<std::int64_t>(minutes / 10, kLagCapMinutes / 10));
}

double elapsed_seconds(std::int64_t elapsed_ms) {
  if (elapsed_ms < 0) {
    throw ContractError("elapsed time must be non-negative, got " + std::to_string(elapsed_ms) + " ms");
  }
  return std::min(static_cast<double>(elapsed_ms) / 1000.0, static_cast<double>(kElapsedCapSeconds));
}

std::size_t elapsed_row(std::int64_t elapsed_ms) {
  if (elapsed_ms < 0) {
    throw ContractError("elapsed time must be non-negative, got " + std::to_string(elapsed_ms) + " ms");
  }
  return static_cast<std::size_t>(std::min<std::int64_t>(elapsed_ms / 1000, kElapsedCapSeconds));
}

double lag_minutes(std::int64_t lag_ms) {
  if (lag_ms < 0) throw ContractError("lag time must be non-negative, got " + std::to_string(lag_ms) + " ms");
  return std::min(static_cast<double>(lag_ms) / 60000.0, static_cast<double>(kLagCapMinutes));
}

namespace {

std::vector<double> row_of(const Tensor& table, std::size_t row) {
  const std::size_t d = table.dim(1);
  if (row >= table.dim(0)) throw IndexError("row " + std::to_string(row) + " outside table");
  const auto v = table.values();
  return {v.begin() + static_cast<std::ptrdiff_t>(row * d),
          v.begin() + static_cast<std::ptrdiff_t>((row + 1) * d)};
}

std::vector<double> scaled(const Tensor& w, double coeff) {
  std::vector<double> out(w.values().begin(), w.values().end());
  for (auto& x : out) x *= coeff;
  return out;
}

}  // namespace

std::vector<double> elapsed_embed(std::int64_t elapsed_ms, TemporalMode mode, const Tensor& param) {
  if (mode == TemporalMode::continuous) return scaled(param, elapsed_seconds(elapsed_ms));
  return row_of(param, elapsed_row(elapsed_ms));
}

std::vector<double> lag_embed(std::int64_t lag_ms, TemporalMode mode, const Tensor& param) {
  if (mode == TemporalMode::continuous) return scaled(param, lag_minutes(lag_ms));
  return row_of(param, lag_bucket(lag_ms));
}

// ---------------------------------------------------------------------------
// Config

const char* to_string(TemporalMode mode) noexcept {
  return mode == TemporalMode::continuous ? "continuous" : "categorical";
}

const char* to_string(TemporalPlacement placement) noexcept {
  switch (placement) {
    case TemporalPlacement::none:
      return "none";
    case TemporalPlacement::encoder:
      return "encoder";
    case TemporalPlacement::decoder:
      return "decoder";
    case TemporalPlacement::both:
      return "both";
  }
  return "none";
}

TemporalMode parse_temporal_mode(std::string_view text) {
  if (text == "continuous") return TemporalMode::continuous;
  if (text == "categorical") return TemporalMode::categorical;
  throw ConfigError("temporal mode must be continuous or categorical, got '" + std::string(text) + "'");
}

TemporalPlacement parse_temporal_placement(std::string_view text) {
  if (text == "none") return TemporalPlacement::none;
  if (text == "encoder") return TemporalPlacement::encoder;
  if (text == "decoder") return TemporalPlacement::decoder;
  if (text == "both") return TemporalPlacement::both;
  throw ConfigError("temporal placement must be none, encoder, decoder or both, got '" +
                    std::string(text) + "'");
}

bool ModelConfig::temporal_in_encoder() const noexcept {
  return (use_elapsed || use_lag) && (temporal_placement == TemporalPlacement::encoder ||
                                      temporal_placement == TemporalPlacement::both);
}

bool ModelConfig::temporal_in_decoder() const noexcept {
  return (use_elapsed || use_lag) && (temporal_placement == TemporalPlacement::decoder ||
                                      temporal_placement == TemporalPlacement::both);
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(d_model, "d_model");
  positive(num_heads, "num_heads");
  positive(window, "window");
  positive(ffn_hidden, "ffn_hidden");
  positive(num_exercises, "num_exercises");
  positive(num_categories, "num_categories");
  if (d_model % num_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be divisible by model.num_heads (" + std::to_string(num_heads) + ")");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("model.dropout_rate must lie in [0, 1)");
  }
}

void ModelConfig::write(KeyValueConfig& out, std::string_view s) const {
  out.set(s, "num_layers", static_cast<std::int64_t>(num_layers));
  out.set(s, "d_model", static_cast<std::int64_t>(d_model));
  out.set(s, "num_heads", static_cast<std::int64_t>(num_heads));
  out.set(s, "window", static_cast<std::int64_t>(window));
  out.set(s, "dropout_rate", dropout_rate);
  out.set(s, "ffn_hidden", static_cast<std::int64_t>(ffn_hidden));
  out.set(s, "et_mode", std::string(to_string(et_mode)));
  out.set(s, "lt_mode", std::string(to_string(lt_mode)));
  out.set(s, "temporal_placement", std::string(to_string(temporal_placement)));
  out.set_bool(s, "use_elapsed", use_elapsed);
  out.set_bool(s, "use_lag", use_lag);
  out.set(s, "num_exercises", static_cast<std::int64_t>(num_exercises));
  out.set(s, "num_categories", static_cast<std::int64_t>(num_categories));
}

ModelConfig ModelConfig::read(const KeyValueConfig& in, std::string_view s,
                              const ModelConfig& defaults) {
  auto count = [&](const char* key, std::size_t fallback) {
    const auto v = in.get_int(s, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(s) + "." + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  ModelConfig c;
  c.num_layers = count("num_layers", defaults.num_layers);
  c.d_model = count("d_model", defaults.d_model);
  c.num_heads = count("num_heads", defaults.num_heads);
  c.window = count("window", defaults.window);
  c.dropout_rate = in.get_double(s, "dropout_rate", defaults.dropout_rate);
  c.ffn_hidden = count("ffn_hidden", defaults.ffn_hidden);
  c.et_mode = parse_temporal_mode(in.get_string(s, "et_mode", to_string(defaults.et_mode)));
  c.lt_mode = parse_temporal_mode(in.get_string(s, "lt_mode", to_string(defaults.lt_mode)));
  c.temporal_placement = parse_temporal_placement(
      in.get_string(s, "temporal_placement", to_string(defaults.temporal_placement)));
  c.use_elapsed = in.get_bool(s, "use_elapsed", defaults.use_elapsed);
  c.use_lag = in.get_bool(s, "use_lag", defaults.use_lag);
  c.num_exercises = count("num_exercises", defaults.num_exercises);
  c.num_categories = count("num_categories", defaults.num_categories);
  return c;
}

ModelConfig ModelConfig::read(const KeyValueConfig& in, std::string_view section) {
  return read(in, section, ModelConfig{});
}

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

Tensor& ParameterSet::at(std::string_view name) {
  const auto i = find(name);
  if (!i) throw IndexError("no parameter named " + std::string(name));
  return tensors_[*i];
}

const Tensor& ParameterSet::at(std::string_view name) const {
  const auto i = find(name);
  if (!i) throw IndexError("no parameter named " + std::string(name));
  return tensors_[*i];
}

std::vector<std::size_t> ParameterSet::canonical_order() const {
  std::vector<std::size_t> order(names_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return names_[a] < names_[b]; });
  return order;
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParameterSet::zero_grads() {
  for (auto& t : tensors_) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Layers

namespace {

Var apply_dropout(Var x, const SublayerContext& ctx) {
  if (ctx.rng == nullptr || ctx.dropout_rate == 0.0) return x;
  return tensor::dropout(x, ctx.dropout_rate, *ctx.rng);
}

std::vector<std::int64_t> positions(std::size_t n) {
  std::vector<std::int64_t> p(n);
  std::iota(p.begin(), p.end(), std::int64_t{0});
  return p;
}

// Row 0 is zero; row t >= 1 is table[ids[t - 1]].
Var shifted_lookup(Var table, const std::vector<std::int64_t>& ids) {
  auto& g = table.graph();
  const std::size_t d = table.dim(1);
  Var zero = g.constant(Tensor({1, d}, 0.0));
  if (ids.size() <= 1) return zero;
  const std::vector<std::int64_t> prev(ids.begin(), ids.end() - 1);
  const Var parts[] = {zero, tensor::embedding(table, prev)};
  return tensor::concat_rows(parts);
}

std::vector<double> shifted(const std::vector<double>& values) {
  std::vector<double> out(values.size(), 0.0);
  for (std::size_t t = 1; t < values.size(); ++t) out[t] = values[t - 1];
  return out;
}

}  // namespace

Var temporal_embeddings(const EmbeddingVars& emb, const ModelConfig& config,
                        const data::Window& w) {
  const std::size_t n = w.length();
  Var total;
  auto accumulate = [&total](Var v) { total = total.valid() ? tensor::add(total, v) : v; };
  if (config.use_elapsed) {
    if (config.et_mode == TemporalMode::continuous) {
      std::vector<double> secs(n);
      for (std::size_t t = 0; t < n; ++t) secs[t] = elapsed_seconds(w.elapsed_ms[t]);
      accumulate(tensor::scaled_rows(shifted(secs), emb.elapsed));
    } else {
      std::vector<std::int64_t> rows(n);
      for (std::size_t t = 0; t < n; ++t) rows[t] = static_cast<std::int64_t>(elapsed_row(w.elapsed_ms[t]));
      accumulate(shifted_lookup(emb.elapsed, rows));
    }
  }
  if (config.use_lag) {
    if (config.lt_mode == TemporalMode::continuous) {
      std::vector<double> mins(n);
      for (std::size_t t = 0; t < n; ++t) mins[t] = lag_minutes(w.lag_ms[t]);
      accumulate(tensor::scaled_rows(shifted(mins), emb.lag));
    } else {
      std::vector<std::int64_t> rows(n);
      for (std::size_t t = 0; t < n; ++t) rows[t] = static_cast<std::int64_t>(lag_bucket(w.lag_ms[t]));
      accumulate(shifted_lookup(emb.lag, rows));
    }
  }
  return total;
}

Var embed_exercises(const EmbeddingVars& emb, const ModelConfig& config, const data::Window& w) {
  const auto pos = positions(w.length());
  Var x = tensor::add(tensor::add(tensor::embedding(emb.exercise, w.exercise_id),
                                  tensor::embedding(emb.category, w.category_id)),
                      tensor::embedding(emb.position_enc, pos));
  if (config.temporal_in_encoder()) x = tensor::add(x, temporal_embeddings(emb, config, w));
  return x;
}

Var embed_responses(const EmbeddingVars& emb, const ModelConfig& config, const data::Window& w) {
  const std::size_t n = w.length();
  for (std::size_t t = 0; t < n; ++t) {
    if (w.correct[t] != 0 && w.correct[t] != 1) {
      throw ContractError("embed_responses: correctness at position " + std::to_string(t) +
                          " is " + std::to_string(w.correct[t]) + ", expected 0 or 1");
    }
  }
  const std::size_t d = emb.start_token.dim(0);
  Var resp = tensor::reshape(emb.start_token, {1, d});
  if (n > 1) {
    const std::vector<std::int64_t> prev(w.correct.begin(), w.correct.end() - 1);
    const Var parts[] = {resp, tensor::embedding(emb.correctness, prev)};
    resp = tensor::concat_rows(parts);
  }
  resp = tensor::add(resp, tensor::embedding(emb.position_dec, positions(n)));
  if (config.temporal_in_decoder()) resp = tensor::add(resp, temporal_embeddings(emb, config, w));
  return resp;
}

Var multi_head_attention(Var q_in, Var k_in, Var v_in, const AttentionVars& p) {
  if (p.wq.empty() || p.wq.size() != p.wk.size() || p.wq.size() != p.wv.size()) {
    throw ContractError("multi_head_attention: inconsistent head projections");
  }
  if (q_in.dim(0) != k_in.dim(0) || k_in.dim(0) != v_in.dim(0)) {
    throw DimensionError("multi_head_attention: query/key/value lengths differ");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.wq[0].dim(1)));
  std::vector<Var> heads;
  heads.reserve(p.wq.size());
  for (std::size_t i = 0; i < p.wq.size(); ++i) {
    const Var q = tensor::matmul(q_in, p.wq[i]);
    const Var k = tensor::matmul(k_in, p.wk[i]);
    const Var v = tensor::matmul(v_in, p.wv[i]);
    const Var scores = tensor::scale(tensor::matmul_nt(q, k), inv_sqrt_d);
    heads.push_back(tensor::matmul(tensor::masked_softmax(scores, tensor::Mask::causal), v));
  }
  return tensor::matmul(tensor::concat_cols(heads), p.wo);
}

Var feed_forward(Var x, const FeedForwardVars& p) {
  const Var hidden = tensor::relu(tensor::add_bias(tensor::matmul(x, p.w1), p.b1));
  return tensor::add_bias(tensor::matmul(hidden, p.w2), p.b2);
}

Var encoder_layer(Var x, const EncoderLayerVars& p, const SublayerContext& ctx) {
  const Var h = tensor::layer_norm(x, p.norm1.gamma, p.norm1.beta, kLayerNormEps);
  const Var m = tensor::add(x, apply_dropout(multi_head_attention(h, h, h, p.attention), ctx));
  const Var hm = tensor::layer_norm(m, p.norm2.gamma, p.norm2.beta, kLayerNormEps);
  return tensor::add(m, apply_dropout(feed_forward(hm, p.ffn), ctx));
}

Var decoder_layer(Var x, Var encoder_out, const DecoderLayerVars& p, const SublayerContext& ctx) {
  const Var h1 = tensor::layer_norm(x, p.norm1.gamma, p.norm1.beta, kLayerNormEps);
  const Var m1 = tensor::add(x, apply_dropout(multi_head_attention(h1, h1, h1, p.self_attention), ctx));
  const Var h2 = tensor::layer_norm(m1, p.norm2.gamma, p.norm2.beta, kLayerNormEps);
  const Var m2 = tensor::add(
      m1, apply_dropout(multi_head_attention(h2, encoder_out, encoder_out, p.cross_attention), ctx));
  const Var h3 = tensor::layer_norm(m2, p.norm3.gamma, p.norm3.beta, kLayerNormEps);
  return tensor::add(m2, apply_dropout(feed_forward(h3, p.ffn), ctx));
}

// ---------------------------------------------------------------------------
// SaintPlus

namespace {

class Initializer {
 public:
  Initializer(ParameterSet& params, std::uint64_t seed) : params_(params), seed_(seed) {}

  std::size_t uniform(const std::string& name, Shape shape, double bound) {
    CounterRng rng(derive_key(seed_, fnv1a64(name)));
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    return params_.add(name, std::move(t));
  }

  /// Weight matrix scaled by its fan-in (row count).
  std::size_t matrix(const std::string& name, std::size_t rows, std::size_t cols) {
    return uniform(name, {rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)));
  }

  std::size_t filled(const std::string& name, Shape shape, double value) {
    return params_.add(name, Tensor(std::move(shape), value));
  }

 private:
  ParameterSet& params_;
  std::uint64_t seed_;
};

AttentionBlock<std::size_t> make_attention(Initializer& init, const std::string& prefix,
                                           const ModelConfig& c) {
  AttentionBlock<std::size_t> a;
  for (std::size_t i = 0; i < c.num_heads; ++i) {
    const auto head = prefix + ".head" + std::to_string(i);
    a.wq.push_back(init.matrix(head + ".wq", c.d_model, c.head_dim()));
    a.wk.push_back(init.matrix(head + ".wk", c.d_model, c.head_dim()));
    a.wv.push_back(init.matrix(head + ".wv", c.d_model, c.head_dim()));
  }
  a.wo = init.matrix(prefix + ".wo", c.d_model, c.d_model);
  return a;
}

NormBlock<std::size_t> make_norm(Initializer& init, const std::string& prefix, std::size_t d) {
  return {init.filled(prefix + ".gamma", {d}, 1.0), init.filled(prefix + ".beta", {d}, 0.0)};
}

FeedForwardBlock<std::size_t> make_ffn(Initializer& init, const std::string& prefix,
                                       const ModelConfig& c) {
  return {init.matrix(prefix + ".w1", c.d_model, c.ffn_hidden),
          init.filled(prefix + ".b1", {c.ffn_hidden}, 0.0),
          init.matrix(prefix + ".w2", c.ffn_hidden, c.d_model),
          init.filled(prefix + ".b2", {c.d_model}, 0.0)};
}

template <class From, class To, class F>
AttentionBlock<To> map_block(const AttentionBlock<From>& a, F f) {
  AttentionBlock<To> out;
  for (auto i : a.wq) out.wq.push_back(f(i));
  for (auto i : a.wk) out.wk.push_back(f(i));
  for (auto i : a.wv) out.wv.push_back(f(i));
  out.wo = f(a.wo);
  return out;
}

}  // namespace

SaintPlus::SaintPlus(ModelConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  const std::size_t d = c.d_model;
  const double table_bound = 1.0 / std::sqrt(static_cast<double>(d));
  Initializer init(params_, init_seed);

  auto& e = layout_.embedding;
  e.exercise = init.uniform("emb.exercise", {c.num_exercises + 1, d}, table_bound);
  e.category = init.uniform("emb.category", {c.num_categories + 1, d}, table_bound);
  e.position_enc = init.uniform("emb.position_enc", {c.window, d}, table_bound);
  e.position_dec = init.uniform("emb.position_dec", {c.window, d}, table_bound);
  e.correctness = init.uniform("emb.correctness", {2, d}, table_bound);
  e.start_token = init.uniform("emb.start_token", {d}, table_bound);
  e.elapsed = c.et_mode == TemporalMode::continuous
                  ? init.uniform("emb.elapsed", {d}, table_bound)
                  : init.uniform("emb.elapsed", {kElapsedRows, d}, table_bound);
  e.lag = c.lt_mode == TemporalMode::continuous ? init.uniform("emb.lag", {d}, table_bound)
                                                : init.uniform("emb.lag", {kLagBuckets, d}, table_bound);

  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto p = "enc." + std::to_string(l);
    EncoderLayerBlock<std::size_t> layer;
    layer.norm1 = make_norm(init, p + ".norm1", d);
    layer.attention = make_attention(init, p + ".attn", c);
    layer.norm2 = make_norm(init, p + ".norm2", d);
    layer.ffn = make_ffn(init, p + ".ffn", c);
    layout_.encoder.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto p = "dec." + std::to_string(l);
    DecoderLayerBlock<std::size_t> layer;
    layer.norm1 = make_norm(init, p + ".norm1", d);
    layer.self_attention = make_attention(init, p + ".self_attn", c);
    layer.norm2 = make_norm(init, p + ".norm2", d);
    layer.cross_attention = make_attention(init, p + ".cross_attn", c);
    layer.norm3 = make_norm(init, p + ".norm3", d);
    layer.ffn = make_ffn(init, p + ".ffn", c);
    layout_.decoder.push_back(std::move(layer));
  }
  layout_.head_weight = init.matrix("head.weight", d, 1);
  layout_.head_bias = init.filled("head.bias", {1}, 0.0);
}

std::vector<Var> SaintPlus::bind_parameters(Graph& g) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(g.variable(params_[i]));
  return out;
}

std::vector<Var> SaintPlus::bind_constants(Graph& g) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(g.constant(params_[i]));
  return out;
}

ModelVars SaintPlus::resolve(std::span<const Var> bound) const {
  if (bound.size() != params_.size()) {
    throw ContractError("resolve: expected " + std::to_string(params_.size()) +
                        " bound parameters, got " + std::to_string(bound.size()));
  }
  for (std::size_t i = 0; i < bound.size(); ++i) {
    if (bound[i].shape() != params_[i].shape()) {
      throw DimensionError("resolve: parameter " + params_.name(i) + " bound with shape " +
                           tensor::shape_string(bound[i].shape()) + ", expected " +
                           tensor::shape_string(params_[i].shape()));
    }
  }
  const auto f = [&](std::size_t i) { return bound[i]; };
  const auto norm = [&](const NormBlock<std::size_t>& n) { return NormVars{f(n.gamma), f(n.beta)}; };
  const auto ffn = [&](const FeedForwardBlock<std::size_t>& p) {
    return FeedForwardVars{f(p.w1), f(p.b1), f(p.w2), f(p.b2)};
  };
  ModelVars v;
  const auto& e = layout_.embedding;
  v.embedding = {f(e.exercise),   f(e.category),    f(e.position_enc), f(e.position_dec),
                 f(e.correctness), f(e.start_token), f(e.elapsed),      f(e.lag)};
  for (const auto& l : layout_.encoder) {
    v.encoder.push_back({norm(l.norm1), map_block<std::size_t, Var>(l.attention, f), norm(l.norm2),
                         ffn(l.ffn)});
  }
  for (const auto& l : layout_.decoder) {
    v.decoder.push_back({norm(l.norm1), map_block<std::size_t, Var>(l.self_attention, f),
                         norm(l.norm2), map_block<std::size_t, Var>(l.cross_attention, f),
                         norm(l.norm3), ffn(l.ffn)});
  }
  v.head_weight = f(layout_.head_weight);
  v.head_bias = f(layout_.head_bias);
  return v;
}

Var SaintPlus::forward(const ModelVars& vars, const data::Window& window,
                       const ForwardOptions& options) const {
  const std::size_t n = window.length();
  if (n != config_.window || window.exercise_id.size() != n || window.category_id.size() != n ||
      window.correct.size() != n || window.elapsed_ms.size() != n || window.lag_ms.size() != n) {
    throw ContractError("forward: window arrays must all have the configured length " +
                        std::to_string(config_.window));
  }
  if (vars.encoder.size() != config_.num_layers || vars.decoder.size() != config_.num_layers) {
    throw ContractError("forward: bound parameters do not match the model configuration");
  }
  CounterRng rng(derive_key(options.dropout_seed, 0x64726f70ULL));
  SublayerContext ctx;
  if (options.train_mode && config_.dropout_rate > 0.0) {
    ctx.dropout_rate = config_.dropout_rate;
    ctx.rng = &rng;
  }
  Var enc = embed_exercises(vars.embedding, config_, window);
  for (const auto& layer : vars.encoder) enc = encoder_layer(enc, layer, ctx);
  Var dec = embed_responses(vars.embedding, config_, window);
  for (const auto& layer : vars.decoder) dec = decoder_layer(dec, enc, layer, ctx);
  const Var logits = tensor::add_bias(tensor::matmul(dec, vars.head_weight), vars.head_bias);
  return tensor::sigmoid(tensor::reshape(logits, {n}));
}

std::vector<double> SaintPlus::predict(const data::Window& window) const {
  Graph g;
  const auto bound = bind_constants(g);
  const Var p = forward(resolve(bound), conform(window));
  return {p.value().begin(), p.value().end()};
}

data::Window SaintPlus::conform(const data::Window& window) const {
  data::Window w = window;
  for (auto& id : w.exercise_id)
    if (id < 0 || static_cast<std::size_t>(id) > config_.num_exercises) id = 0;
  for (auto& id : w.category_id)
    if (id < 0 || static_cast<std::size_t>(id) > config_.num_categories) id = 0;
  return w;
}

std::size_t SaintPlus::expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_hidden, n = c.num_layers;
  std::size_t count = (c.num_exercises + 1) * d + (c.num_categories + 1) * d + 2 * c.window * d +
                      2 * d + d;
  count += c.et_mode == TemporalMode::continuous ? d : kElapsedRows * d;
  count += c.lt_mode == TemporalMode::continuous ? d : kLagBuckets * d;
  count += n * (4 * d * d + 2 * d * f + f + d + 4 * d);
  count += n * (8 * d * d + 2 * d * f + f + d + 6 * d);
  count += d + 1;
  return count;
}

}  // namespace saintplus::model
