#pragma once

#include <cstdint>
#include <string>

#include "saintplus/data.hpp"
#include "saintplus/model.hpp"
#include "saintplus/rng.hpp"

namespace saintplus::testing {

// Window of the configured length with `valid` real positions and random
// in-vocabulary content. Elapsed times reach past the 300 s cap and lags past
// a day so that every embedding branch is exercised.
inline data::Window random_window(const model::ModelConfig& cfg, CounterRng& rng,
                                  std::size_t valid) {
  auto w = data::Window::empty(cfg.window);
  w.student_id = "s" + std::to_string(rng.below(1000));
  for (std::size_t t = 0; t < valid && t < cfg.window; ++t) {
    w.exercise_id[t] = 1 + static_cast<std::int64_t>(rng.below(cfg.num_exercises));
    w.category_id[t] = 1 + static_cast<std::int64_t>(rng.below(cfg.num_categories));
    w.correct[t] = rng.bernoulli(0.6) ? 1 : 0;
    w.elapsed_ms[t] = static_cast<std::int64_t>(rng.below(400'000));
    w.lag_ms[t] = t == 0 ? 0 : static_cast<std::int64_t>(rng.below(2'000 * 60'000));
    w.valid[t] = 1;
  }
  return w;
}

inline data::Window random_window(const model::ModelConfig& cfg, CounterRng& rng) {
  return random_window(cfg, rng, cfg.window);
}

inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.num_layers = 1;
  c.d_model = 16;
  c.num_heads = 2;
  c.window = 8;
  c.ffn_hidden = 32;
  c.num_exercises = 20;
  c.num_categories = 5;
  return c;
}

}  // namespace saintplus::testing
