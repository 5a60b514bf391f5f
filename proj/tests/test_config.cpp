#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "saintplus/config.hpp"
#include "saintplus/errors.hpp"
#include "saintplus/model.hpp"
#include "saintplus/rng.hpp"
#include "saintplus/training.hpp"

using namespace saintplus;

TEST_CASE("parse and serialize") {
  const auto c = KeyValueConfig::parse(
      "# comment\n"
      "top = 1\n"
      "[model]\n"
      "d_model = 64   \n"
      "  name =  two words \n"
      "\n"
      "[train]\n"
      "peak_lr = 2e-3\n");
  CHECK(c.get_int("", "top", 0) == 1);
  CHECK(c.get_int("model", "d_model", 0) == 64);
  CHECK(c.get_string("model", "name", "") == "two words");
  CHECK(c.get_double("train", "peak_lr", 0) == 2e-3);
  CHECK(c.get_double("train", "missing", 7.5) == 7.5);
  CHECK_FALSE(c.contains("train", "d_model"));

  const auto text = c.serialize();
  CHECK(KeyValueConfig::parse(text).serialize() == text);

  CHECK_THROWS_AS(KeyValueConfig::parse("[open\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(c.get_int("model", "name", 0), ConfigError);
  CHECK_THROWS_AS(c.require_int("model", "absent"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/dir/x.ini"), ConfigError);
}

TEST_CASE("typed setters and merge") {
  KeyValueConfig a;
  a.set("s", "i", std::int64_t{-4});
  a.set("s", "d", 0.1);
  a.set_bool("s", "b", true);
  a.set("s", "t", std::string("x"));
  CHECK(a.get_int("s", "i", 0) == -4);
  CHECK(a.get_double("s", "d", 0) == 0.1);
  CHECK(a.get_bool("s", "b", false));
  KeyValueConfig b;
  b.set("s", "t", std::string("y"));
  b.set("u", "k", std::string("z"));
  a.merge(b);
  CHECK(a.get_string("s", "t", "") == "y");
  CHECK(a.get_string("u", "k", "") == "z");
  CHECK(a.get_u64("s", "missing", 18446744073709551615ULL) == 18446744073709551615ULL);
  a.set("s", "seed", std::string("18446744073709551615"));
  CHECK(a.get_u64("s", "seed", 0) == 18446744073709551615ULL);
  a.set("s", "seed", std::string("-1"));
  CHECK_THROWS_AS(a.get_u64("s", "seed", 0), ConfigError);
}

TEST_CASE("format_double round trips") {
  CounterRng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("model config") {
  model::ModelConfig c;
  c.temporal_placement = model::TemporalPlacement::both;
  c.et_mode = model::TemporalMode::categorical;
  c.use_lag = false;
  KeyValueConfig kv;
  c.write(kv);
  CHECK(model::ModelConfig::read(KeyValueConfig::parse(kv.serialize())) == c);

  auto bad = c;
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.window = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  kv.set("model", "temporal_placement", std::string("sideways"));
  CHECK_THROWS_AS(model::ModelConfig::read(kv), ConfigError);
}

TEST_CASE("train config") {
  training::TrainConfig c;
  c.decay = training::LrDecay::constant;
  c.seed = 987654321987654321ULL;
  KeyValueConfig kv;
  c.write(kv);
  CHECK(training::TrainConfig::read(KeyValueConfig::parse(kv.serialize())) == c);
  auto bad = c;
  bad.beta1 = 0.9999;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.warmup_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
