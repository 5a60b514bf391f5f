#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "helpers.hpp"
#include "saintplus/checkpoint.hpp"
#include "saintplus/errors.hpp"
#include "saintplus/synth.hpp"
#include "saintplus/training.hpp"

using namespace saintplus;
using namespace saintplus::training;
using saintplus::testing::random_window;
using saintplus::testing::tiny_config;
using tensor::Graph;
using tensor::Tensor;

namespace fs = std::filesystem;

namespace {

double bce_of(const std::vector<double>& p, const std::vector<int>& y, const std::vector<std::uint8_t>& valid) {
  Graph g;
  const auto probs = g.constant(Tensor({p.size()}, p));
  return bce_loss(probs, y, valid).value()[0];
}

std::vector<data::Window> windows_of(const std::vector<data::Interaction>& log, std::size_t w) {
  std::vector<data::Window> out;
  for (const auto& s : data::group_by_student(log))
    for (auto& x : windowize(s, w)) out.push_back(std::move(x));
  return out;
}

struct Fixture {
  model::ModelConfig model;
  TrainConfig train;
  std::vector<data::Window> train_windows, val_windows;
};

// Tiny problem: 64 full training windows of 16 positions.
Fixture overfit_fixture() {
  synth::SynthConfig sc;
  sc.n_students = 80;
  sc.n_exercises = 20;
  sc.min_interactions = 16;
  sc.max_interactions = 16;
  sc.seed = 4;
  const auto sim = synth::simulate(sc);
  Fixture f;
  f.model.num_layers = 1;
  f.model.d_model = 32;
  f.model.num_heads = 2;
  f.model.window = 16;
  f.model.ffn_hidden = 64;
  f.model.num_exercises = 20;
  f.model.num_categories = 5;
  auto all = windows_of(sim.interactions, 16);
  f.train_windows.assign(all.begin(), all.begin() + 64);
  f.val_windows.assign(all.begin() + 64, all.end());
  f.train.peak_lr = 5e-3;
  f.train.warmup_steps = 20;
  f.train.decay = LrDecay::constant;
  f.train.batch_size = 64;
  f.train.max_steps = 500;
  f.train.eval_every = 50;
  f.train.seed = 2;
  return f;
}

Fixture small_fixture() {
  auto f = overfit_fixture();
  f.train.batch_size = 16;
  f.train.max_steps = 12;
  f.train.eval_every = 4;
  f.train.decay = LrDecay::inverse_sqrt;
  f.train.warmup_steps = 4;
  return f;
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "saintplus_test_training";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("bce_loss") {
  CHECK(bce_of({0.5, 0.5, 0.5}, {1, 0, 1}, {1, 1, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_of({1.0, 0.0}, {1, 0}, {1, 1}) <= 1e-11 * std::abs(std::log(1e-12)));
  CHECK(std::isfinite(bce_of({0.0, 1.0}, {1, 0}, {1, 1})));
  CHECK(bce_of({0.0, 1.0}, {1, 0}, {1, 1}) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(bce_of({0.3, 0.3}, {1, 0}, {0, 0}), ContractError);

  CounterRng rng(1);
  std::vector<double> p;
  std::vector<int> y;
  std::vector<std::uint8_t> valid;
  for (int i = 0; i < 40; ++i) {
    p.push_back(rng.uniform(0.01, 0.99));
    y.push_back(rng.bernoulli(0.5) ? 1 : 0);
    valid.push_back(rng.bernoulli(0.7) ? 1 : 0);
  }
  double sum = 0;
  int n = 0;
  for (int i = 0; i < 40; ++i) {
    if (!valid[i]) continue;
    sum += y[i] ? std::log(p[i]) : std::log(1 - p[i]);
    ++n;
  }
  CHECK(bce_of(p, y, valid) == doctest::Approx(-sum / n).epsilon(1e-13));
}

TEST_CASE("lr_schedule") {
  TrainConfig c;
  CHECK(lr_schedule(4000, c) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_schedule(1000, c) == doctest::Approx(0.00025).epsilon(1e-15));
  CHECK(lr_schedule(16000, c) == doctest::Approx(0.0005).epsilon(1e-15));
  double peak = 0;
  std::size_t arg = 0;
  for (std::size_t s = 1; s <= 20000; ++s) {
    const double lr = lr_schedule(s, c);
    if (lr > peak) {
      peak = lr;
      arg = s;
    }
  }
  CHECK(arg == 4000);
  c.decay = LrDecay::constant;
  CHECK(lr_schedule(16000, c) == 0.001);
  CHECK(lr_schedule(2000, c) == 0.0005);
  CHECK_THROWS_AS(lr_schedule(0, c), ContractError);
}

TEST_CASE("adam_step") {
  TrainConfig c;
  SUBCASE("first scalar step moves by the learning rate") {
    model::ParameterSet params;
    params.add("p", Tensor::vector({1.0}));
    auto state = OptimizerState::fresh(params);
    params[0].grad()[0] = 0.5;
    adam_step(params, state, c, 0.001);
    CHECK(params[0][0] == doctest::Approx(0.999).epsilon(1e-10));
    CHECK(state.step == 1);
  }
  SUBCASE("zero gradients and zero learning rate leave parameters unchanged") {
    model::ParameterSet params;
    params.add("a", Tensor::matrix({{1.5, -2.0}, {0.25, 3.0}}));
    const auto before = params[0];
    auto state = OptimizerState::fresh(params);
    params[0].zero_grad();
    adam_step(params, state, c, 0.001);
    CHECK(params[0] == before);
    params[0].grad()[1] = 7.0;
    adam_step(params, state, c, 0.0);
    CHECK(params[0] == before);
  }
  SUBCASE("deterministic") {
    auto run = [&] {
      model::ParameterSet params;
      params.add("a", Tensor::vector({0.1, 0.2, 0.3}));
      auto state = OptimizerState::fresh(params);
      for (int s = 0; s < 2; ++s) {
        for (std::size_t i = 0; i < 3; ++i) params[0].grad()[i] = 0.3 * static_cast<double>(i) - 0.2;
        adam_step(params, state, c, 0.01);
      }
      return std::pair{params[0], state};
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }
  SUBCASE("non-finite gradient names the parameter and changes nothing") {
    model::ParameterSet params;
    params.add("good", Tensor::vector({1.0}));
    params.add("bad", Tensor::vector({2.0}));
    auto state = OptimizerState::fresh(params);
    params[0].grad()[0] = 1.0;
    params[1].grad()[0] = std::numeric_limits<double>::quiet_NaN();
    try {
      adam_step(params, state, c, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
    CHECK(params[0][0] == 1.0);
    CHECK(state.step == 0);
  }
}

TEST_CASE("batch loss") {
  const auto cfg = tiny_config();
  model::SaintPlus m(cfg, 3);
  CounterRng rng(4);
  std::vector<data::Window> ws;
  for (int i = 0; i < 5; ++i) ws.push_back(random_window(cfg, rng, 3 + static_cast<std::size_t>(i)));
  std::vector<const data::Window*> fwd, rev;
  for (auto& w : ws) fwd.push_back(&w);
  rev.assign(fwd.rbegin(), fwd.rend());
  const double a = batch_loss(m, fwd), b = batch_loss(m, rev);
  CHECK(std::abs(a - b) < 1e-14);
  CHECK(accumulate_batch_gradients(m, fwd) == doctest::Approx(a).epsilon(1e-14));

  // a padded window contributes nothing
  auto pad = data::Window::empty(cfg.window);
  auto with_pad = fwd;
  with_pad.push_back(&pad);
  CHECK(batch_loss(m, with_pad) == doctest::Approx(a).epsilon(1e-14));
  std::vector<const data::Window*> only_pad{&pad};
  CHECK_THROWS_AS(batch_loss(m, only_pad), ContractError);
}

TEST_CASE("evaluate") {
  const auto cfg = tiny_config();
  model::SaintPlus m(cfg, 5);
  CounterRng rng(6);
  std::vector<data::Window> ws;
  std::size_t valid = 0;
  for (int i = 0; i < 6; ++i) {
    ws.push_back(random_window(cfg, rng, 2 + static_cast<std::size_t>(i)));
    valid += ws.back().valid_count();
  }
  const auto a = evaluate(m, ws), b = evaluate(m, ws);
  CHECK(a.report.auc == b.report.auc);
  CHECK(a.predictions.size() == valid);
  for (std::size_t i = 0; i < valid; ++i) CHECK(a.predictions[i].score == b.predictions[i].score);

  for (auto& x : m.parameters().at("head.weight").values()) x = 0.0;
  CHECK(evaluate(m, ws).report.auc == 0.5);

  std::ostringstream out;
  write_predictions(out, a.predictions);
  const auto text = out.str();
  CHECK(text.rfind("student_id,window,position,label,score\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == valid + 1);
}

TEST_CASE("train") {
  SUBCASE("same seed gives identical step logs") {
    auto f = small_fixture();
    model::SaintPlus a(f.model, 1), b(f.model, 1);
    const auto ra = train(a, f.train_windows, f.val_windows, f.train);
    const auto rb = train(b, f.train_windows, f.val_windows, f.train);
    CHECK(ra.log == rb.log);
    CHECK(ra.log.size() == 12);
    for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(a.parameters()[i] == b.parameters()[i]);
    std::ostringstream la, lb;
    write_step_log(la, ra.log);
    write_step_log(lb, rb.log);
    CHECK(la.str() == lb.str());
    CHECK(la.str().rfind("step,lr,train_loss,val_acc,val_auc\n", 0) == 0);
  }
  SUBCASE("best parameters are the first argmax of validation AUC") {
    auto f = small_fixture();
    model::SaintPlus m(f.model, 1);
    const auto r = train(m, f.train_windows, f.val_windows, f.train);
    double best = -1;
    std::size_t step = 0;
    std::size_t evals = 0;
    for (const auto& rec : r.log) {
      if (!rec.val_auc) continue;
      ++evals;
      if (*rec.val_auc > best) {
        best = *rec.val_auc;
        step = rec.step;
      }
    }
    CHECK(evals == 3);
    CHECK(r.best_step == step);
    CHECK(r.best_auc == best);
    REQUIRE(r.best_parameters);
    model::SaintPlus check(f.model, 0);
    check.parameters() = *r.best_parameters;
    CHECK(evaluate(check, f.val_windows).report.auc == best);
  }
  SUBCASE("resume continues the uninterrupted run exactly") {
    auto f = small_fixture();
    model::SaintPlus full(f.model, 1);
    const auto whole = train(full, f.train_windows, f.val_windows, f.train);

    auto first = f.train;
    first.max_steps = 8;  // an evaluation step, so the logs line up
    model::SaintPlus part(f.model, 1);
    const auto head = train(part, f.train_windows, f.val_windows, first);
    // through a checkpoint, as the CLI does
    const auto bytes = encode(make_checkpoint(part, f.train, &head.optimizer));
    const auto ck = decode(bytes);
    auto resumed = model_from_checkpoint(ck);
    TrainProgress progress{optimizer_for(resumed, ck), head.best_auc, head.best_step};
    const auto tail = train(resumed, f.train_windows, f.val_windows, f.train, &progress);

    std::vector<StepRecord> joined = head.log;
    joined.insert(joined.end(), tail.log.begin(), tail.log.end());
    CHECK(joined == whole.log);
    for (std::size_t i = 0; i < full.parameters().size(); ++i)
      CHECK(full.parameters()[i] == resumed.parameters()[i]);
  }
  SUBCASE("overfit trend") {
    auto f = overfit_fixture();
    f.train.max_steps = 50;
    model::SaintPlus m(f.model, 1);
    const auto r = train(m, f.train_windows, f.val_windows, f.train);
    std::vector<double> diffs;
    for (std::size_t i = 1; i < r.log.size(); ++i) diffs.push_back(r.log[i].train_loss - r.log[i - 1].train_loss);
    std::nth_element(diffs.begin(), diffs.begin() + static_cast<std::ptrdiff_t>(diffs.size() / 2), diffs.end());
    CHECK(diffs[diffs.size() / 2] <= 0.0);
    CHECK(r.log.back().train_loss < r.log.front().train_loss);
  }
  SUBCASE("non-finite parameters abort the run") {
    auto f = small_fixture();
    model::SaintPlus m(f.model, 1);
    m.parameters().at("head.bias")[0] = std::numeric_limits<double>::quiet_NaN();
    const auto r = train(m, f.train_windows, f.val_windows, f.train);
    CHECK(r.aborted);
    CHECK(r.log.empty());
    CHECK_FALSE(r.abort_reason.empty());
  }
  SUBCASE("empty splits") {
    auto f = small_fixture();
    model::SaintPlus m(f.model, 1);
    CHECK_THROWS_AS(train(m, {}, f.val_windows, f.train), ContractError);
    CHECK_THROWS_AS(train(m, f.train_windows, {}, f.train), ContractError);
  }
}

TEST_CASE("checkpoint") {
  const auto cfg = tiny_config();
  model::SaintPlus m(cfg, 7);
  TrainConfig tc;
  auto opt = OptimizerState::fresh(m.parameters());
  CounterRng rng(8);
  for (auto& t : opt.m)
    for (auto& v : t.values()) v = rng.uniform(-1, 1);
  opt.step = 17;
  const auto ck = make_checkpoint(m, tc, &opt);
  const auto bytes = encode(ck);

  SUBCASE("layout") {
    CHECK(bytes.substr(0, 4) == "SPKT");
    CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
    CHECK(ck.config().get_int("checkpoint", "step", -1) == 17);
    for (std::size_t i = 1; i < ck.parameters.size(); ++i)
      CHECK(ck.parameters[i - 1].first < ck.parameters[i].first);
  }
  SUBCASE("save, load, save is byte-identical and forward is bit-exact") {
    const auto path = temp_path("round.ckpt");
    save_checkpoint(path, ck);
    const auto loaded = load_checkpoint(path);
    CHECK(encode(loaded) == bytes);
    const auto restored = model_from_checkpoint(loaded);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      const auto j = restored.parameters().find(m.parameters().name(i));
      REQUIRE(j);
      CHECK(restored.parameters()[*j] == m.parameters()[i]);
    }
    CHECK(optimizer_for(restored, loaded) == opt);
    for (int k = 0; k < 5; ++k) {
      const auto w = random_window(cfg, rng);
      CHECK(restored.predict(w) == m.predict(w));
    }
  }
  SUBCASE("truncation is detected at every length") {
    for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 7) {
      CAPTURE(len);
      CHECK_THROWS_AS(decode(std::string_view(bytes).substr(0, len)), LoadError);
    }
    CHECK_THROWS_AS(decode(std::string_view(bytes).substr(0, bytes.size() - 1)), LoadError);
  }
  SUBCASE("corrupt header fields") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode(bad), LoadError);
    bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(decode(bad), LoadError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), LoadError);
  }
  SUBCASE("a checkpoint of another configuration is rejected") {
    auto other_cfg = cfg;
    other_cfg.d_model = 8;
    model::SaintPlus other(other_cfg, 1);
    const auto before = other.parameters()[0];
    CHECK_THROWS_AS(restore(other, ck), LoadError);
    CHECK(other.parameters()[0] == before);
  }
  SUBCASE("without optimizer state") {
    const auto plain = make_checkpoint(m, tc);
    const auto again = decode(encode(plain));
    CHECK_FALSE(again.optimizer);
    CHECK(encode(again) == encode(plain));
  }
}
