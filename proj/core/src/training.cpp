#include "saintplus/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <utility>

#include "saintplus/config.hpp"
#include "saintplus/errors.hpp"

namespace saintplus::training {

const char* to_string(LrDecay decay) noexcept {
  return decay == LrDecay::inverse_sqrt ? "inverse_sqrt" : "constant";
}

LrDecay parse_lr_decay(std::string_view text) {
  if (text == "inverse_sqrt") return LrDecay::inverse_sqrt;
  if (text == "constant") return LrDecay::constant;
  throw ConfigError("train.decay must be inverse_sqrt or constant, got '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0 && std::isfinite(peak_lr))) throw ConfigError("train.peak_lr must be positive");
  if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must satisfy 0 < beta1 < beta2 < 1");
  }
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (warmup_steps < 1) throw ConfigError("train.warmup_steps must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (max_steps == 0 && max_epochs == 0) {
    throw ConfigError("train.max_steps or train.max_epochs must be positive");
  }
  if (eval_every < 1) throw ConfigError("train.eval_every must be at least 1");
}

void TrainConfig::write(KeyValueConfig& out, std::string_view s) const {
  out.set(s, "peak_lr", peak_lr);
  out.set(s, "beta1", beta1);
  out.set(s, "beta2", beta2);
  out.set(s, "eps", eps);
  out.set(s, "warmup_steps", static_cast<std::int64_t>(warmup_steps));
  out.set(s, "decay", std::string(to_string(decay)));
  out.set(s, "batch_size", static_cast<std::int64_t>(batch_size));
  out.set(s, "max_steps", static_cast<std::int64_t>(max_steps));
  out.set(s, "max_epochs", static_cast<std::int64_t>(max_epochs));
  out.set(s, "seed", std::to_string(seed));
  out.set(s, "eval_every", static_cast<std::int64_t>(eval_every));
  out.set_bool(s, "shuffle", shuffle);
}

TrainConfig TrainConfig::read(const KeyValueConfig& in, std::string_view s,
                              const TrainConfig& defaults) {
  auto count = [&](const char* key, std::size_t fallback) {
    const auto v = in.get_int(s, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(s) + "." + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  TrainConfig c;
  c.peak_lr = in.get_double(s, "peak_lr", defaults.peak_lr);
  c.beta1 = in.get_double(s, "beta1", defaults.beta1);
  c.beta2 = in.get_double(s, "beta2", defaults.beta2);
  c.eps = in.get_double(s, "eps", defaults.eps);
  c.warmup_steps = count("warmup_steps", defaults.warmup_steps);
  c.decay = parse_lr_decay(in.get_string(s, "decay", to_string(defaults.decay)));
  c.batch_size = count("batch_size", defaults.batch_size);
  c.max_steps = count("max_steps", defaults.max_steps);
  c.max_epochs = count("max_epochs", defaults.max_epochs);
  c.seed = in.get_u64(s, "seed", defaults.seed);
  c.eval_every = count("eval_every", defaults.eval_every);
  c.shuffle = in.get_bool(s, "shuffle", defaults.shuffle);
  return c;
}

TrainConfig TrainConfig::read(const KeyValueConfig& in, std::string_view section) {
  return read(in, section, TrainConfig{});
}

// ---------------------------------------------------------------------------
// Optimizer

OptimizerState OptimizerState::fresh(const ParameterSet& params) {
  OptimizerState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params[i].shape(), 0.0);
    s.v.emplace_back(params[i].shape(), 0.0);
  }
  return s;
}

double lr_schedule(std::size_t step, const TrainConfig& config) {
  if (step < 1) throw ContractError("lr_schedule: step must be at least 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(config.warmup_steps);
  if (step <= config.warmup_steps) return config.peak_lr * s / w;
  if (config.decay == LrDecay::constant) return config.peak_lr;
  return config.peak_lr * std::sqrt(w / s);
}

void adam_step(ParameterSet& params, OptimizerState& state, const TrainConfig& config, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match the parameter set");
  }
  if (!(lr >= 0.0)) throw ContractError("adam_step: learning rate must be non-negative");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i].shape() || state.v[i].shape() != params[i].shape()) {
      throw DimensionError("adam_step: moment shape mismatch for " + params.name(i));
    }
    for (const double g : std::as_const(params[i]).grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + params.name(i));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    const auto g = std::as_const(params[i]).grad();
    if (g.empty()) continue;
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss

std::vector<double> scored_weights(const data::Window& w) {
  std::vector<double> out(w.length(), 0.0);
  for (std::size_t t = 0; t < w.length(); ++t)
    out[t] = (w.valid[t] != 0 && w.exercise_id[t] != 0 && w.category_id[t] != 0) ? 1.0 : 0.0;
  return out;
}

Var bce_loss(Var probs, std::span<const int> labels, std::span<const std::uint8_t> valid) {
  if (labels.size() != probs.size() || valid.size() != probs.size()) {
    throw DimensionError("bce_loss: probabilities, labels and mask lengths differ");
  }
  std::vector<double> l(labels.size()), w(valid.size());
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    l[i] = labels[i];
    w[i] = valid[i] != 0 ? 1.0 : 0.0;
    count += valid[i] != 0 ? 1 : 0;
  }
  if (count == 0) throw ContractError("bce_loss: no valid positions");
  return tensor::weighted_bce(probs, l, w, static_cast<double>(count));
}

namespace {

std::size_t scored_total(const SaintPlus& model, std::span<const data::Window* const> batch,
                         std::vector<data::Window>& conformed) {
  std::size_t total = 0;
  conformed.clear();
  conformed.reserve(batch.size());
  for (const auto* w : batch) {
    conformed.push_back(model.conform(*w));
    for (const double x : scored_weights(conformed.back())) total += x != 0.0 ? 1 : 0;
  }
  if (total == 0) throw ContractError("batch has no scored positions");
  return total;
}

std::vector<double> label_vector(const data::Window& w) {
  return {w.correct.begin(), w.correct.end()};
}

}  // namespace

double accumulate_batch_gradients(SaintPlus& model, std::span<const data::Window* const> batch,
                                  bool train_mode, std::uint64_t dropout_seed) {
  std::vector<data::Window> windows;
  const double normalizer = static_cast<double>(scored_total(model, batch, windows));
  auto& params = model.parameters();
  double loss = 0.0;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto weights = scored_weights(windows[b]);
    if (std::none_of(weights.begin(), weights.end(), [](double x) { return x != 0.0; })) continue;
    tensor::Graph g;
    const auto bound = model.bind_parameters(g);
    const model::ForwardOptions options{train_mode, derive_key(dropout_seed, b)};
    const Var probs = model.forward(model.resolve(bound), windows[b], options);
    const Var l = tensor::weighted_bce(probs, label_vector(windows[b]), weights, normalizer);
    loss += l.value()[0];
    g.backward(l);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto gi = bound[i].grad();
      if (gi.empty()) continue;
      auto dst = params[i].grad();
      for (std::size_t j = 0; j < gi.size(); ++j) dst[j] += gi[j];
    }
  }
  return loss;
}

double batch_loss(const SaintPlus& model, std::span<const data::Window* const> batch) {
  std::vector<data::Window> windows;
  const double normalizer = static_cast<double>(scored_total(model, batch, windows));
  double loss = 0.0;
  for (const auto& w : windows) {
    const auto weights = scored_weights(w);
    tensor::Graph g;
    const auto bound = model.bind_constants(g);
    const Var probs = model.forward(model.resolve(bound), w);
    loss += tensor::weighted_bce(probs, label_vector(w), weights, normalizer).value()[0];
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Reporting

void write_step_log(std::ostream& out, std::span<const StepRecord> log) {
  out << "step,lr,train_loss,val_acc,val_auc\n";
  for (const auto& r : log) {
    out << r.step << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ',';
    if (r.val_acc) out << format_double(*r.val_acc);
    out << ',';
    if (r.val_auc) out << format_double(*r.val_auc);
    out << '\n';
  }
}

Evaluation evaluate(const SaintPlus& model, std::span<const data::Window> windows) {
  Evaluation e;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& raw : windows) {
    const auto w = model.conform(raw);
    const auto weights = scored_weights(w);
    if (std::none_of(weights.begin(), weights.end(), [](double x) { return x != 0.0; })) continue;
    const auto probs = model.predict(w);
    for (std::size_t t = 0; t < w.length(); ++t) {
      if (weights[t] == 0.0) continue;
      e.predictions.push_back({w.student_id, w.window_index, t, w.correct[t], probs[t]});
      scores.push_back(probs[t]);
      labels.push_back(w.correct[t]);
    }
  }
  if (scores.empty()) throw ContractError("evaluate: no scored positions");
  e.report = metrics::summarize(scores, labels);
  return e;
}

void write_predictions(std::ostream& out, std::span<const Prediction> predictions) {
  out << "student_id,window,position,label,score\n";
  for (const auto& p : predictions) {
    out << p.student_id << ',' << p.window << ',' << p.position << ',' << p.label << ','
        << format_double(p.score) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Training loop

std::size_t total_steps(const TrainConfig& config, std::size_t train_window_count) {
  if (config.max_steps > 0) return config.max_steps;
  const std::size_t per_epoch = (train_window_count + config.batch_size - 1) / config.batch_size;
  return per_epoch * config.max_epochs;
}

TrainResult train(SaintPlus& model, std::span<const data::Window> train_windows,
                  std::span<const data::Window> validation_windows, const TrainConfig& config,
                  const TrainProgress* resume, const StepCallback& on_step) {
  config.validate();
  if (train_windows.empty()) throw ContractError("train: empty training split");
  if (validation_windows.empty()) throw ContractError("train: empty validation split");

  auto& params = model.parameters();
  TrainResult result;
  result.optimizer = resume ? resume->optimizer : OptimizerState::fresh(params);
  if (resume) {
    result.best_auc = resume->best_auc;
    result.best_step = resume->best_step;
  }
  const std::size_t n = train_windows.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t last = total_steps(config, n);

  std::size_t plan_epoch = std::numeric_limits<std::size_t>::max();
  data::BatchPlan plan;
  std::vector<const data::Window*> batch;

  for (std::size_t step = static_cast<std::size_t>(result.optimizer.step) + 1; step <= last; ++step) {
    const std::size_t epoch = (step - 1) / per_epoch;
    if (epoch != plan_epoch) {
      plan = data::make_batches(n, config.batch_size, derive_key(config.seed, epoch), config.shuffle);
      plan_epoch = epoch;
    }
    batch.clear();
    for (const auto i : plan[(step - 1) % per_epoch]) batch.push_back(&train_windows[i]);

    StepRecord record;
    record.step = step;
    record.lr = lr_schedule(step, config);
    params.zero_grads();
    record.train_loss =
        accumulate_batch_gradients(model, batch, true, derive_key(config.seed ^ 0x5eedULL, step));
    if (!std::isfinite(record.train_loss)) {
      result.aborted = true;
      result.abort_reason = "non-finite training loss at step " + std::to_string(step);
      break;
    }
    try {
      adam_step(params, result.optimizer, config, record.lr);
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    if (step % config.eval_every == 0 || step == last) {
      const auto eval = evaluate(model, validation_windows);
      record.val_acc = eval.report.acc;
      record.val_auc = eval.report.auc;
      if (std::isfinite(eval.report.auc) && eval.report.auc > result.best_auc) {
        result.best_auc = eval.report.auc;
        result.best_step = step;
        result.best_parameters = params;
      }
    }
    result.log.push_back(record);
    if (on_step) on_step(result.log.back(), result);
  }
  params.zero_grads();
  return result;
}

}  // namespace saintplus::training
