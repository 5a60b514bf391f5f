#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "saintplus/checkpoint.hpp"
#include "saintplus/errors.hpp"
#include "saintplus/grad_check.hpp"
#include "saintplus/synth.hpp"

namespace saintplus::cli {

namespace fs = std::filesystem;
using model::ModelConfig;
using model::TemporalMode;
using model::TemporalPlacement;
using training::TrainConfig;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void base_sections(KeyValueConfig& c) {
  ModelConfig m;
  m.num_exercises = 0;
  m.num_categories = 0;
  m.write(c, "model");
  TrainConfig t;
  t.peak_lr = 2e-3;
  t.warmup_steps = 100;
  t.batch_size = 16;
  t.max_epochs = 6;
  t.eval_every = 64;
  t.write(c, "train");
  c.set("split", "test_fraction", 0.2);
  c.set("split", "val_fraction", 0.2);
  c.set("split", "seed", std::string("0"));
  c.set("data", "path", std::string());
  synth::SynthConfig{}.write(c, "synth");
  c.set("ablate", "seeds", std::int64_t{3});
  c.set("ablate", "jobs", std::int64_t{1});
  c.set("gradcheck", "windows", std::int64_t{10});
  c.set("gradcheck", "step", 1e-5);
  c.set("gradcheck", "tolerance", 1e-4);
  c.set("gradcheck", "max_coords", std::int64_t{0});
}

std::uint64_t parse_seed(const std::string& text, const char* what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec == std::errc{} && res.ptr == end && !text.empty()) return v;
  throw ConfigError(std::string(what) + " must be an unsigned integer, got '" + text + "'");
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void ensure_dir(const fs::path& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace

KeyValueConfig preset(std::string_view name) {
  KeyValueConfig c;
  base_sections(c);
  if (name == "desk") return c;
  if (name == "paper") {
    c.set("model", "num_layers", std::int64_t{4});
    c.set("model", "d_model", std::int64_t{512});
    c.set("model", "num_heads", std::int64_t{8});
    c.set("model", "ffn_hidden", std::int64_t{2048});
    c.set("train", "peak_lr", 1e-3);
    c.set("train", "warmup_steps", std::int64_t{4000});
    c.set("train", "batch_size", std::int64_t{64});
    c.set("train", "max_epochs", std::int64_t{30});
    c.set("train", "eval_every", std::int64_t{500});
    return c;
  }
  if (name == "tiny") {
    c.set("model", "num_layers", std::int64_t{1});
    c.set("model", "d_model", std::int64_t{16});
    c.set("model", "num_heads", std::int64_t{2});
    c.set("model", "window", std::int64_t{8});
    c.set("model", "ffn_hidden", std::int64_t{32});
    c.set("synth", "n_students", std::int64_t{20});
    c.set("synth", "n_exercises", std::int64_t{20});
    c.set("synth", "min_interactions", std::int64_t{6});
    c.set("synth", "max_interactions", std::int64_t{12});
    c.set("train", "batch_size", std::int64_t{8});
    c.set("train", "warmup_steps", std::int64_t{10});
    c.set("train", "max_epochs", std::int64_t{2});
    c.set("train", "eval_every", std::int64_t{5});
    return c;
  }
  if (name == "overfit") {
    // 100 students -> 20 test, 16 validation, 64 training windows of 16.
    c.set("model", "num_layers", std::int64_t{1});
    c.set("model", "d_model", std::int64_t{32});
    c.set("model", "num_heads", std::int64_t{2});
    c.set("model", "window", std::int64_t{16});
    c.set("model", "ffn_hidden", std::int64_t{64});
    c.set("synth", "n_students", std::int64_t{100});
    c.set("synth", "n_exercises", std::int64_t{20});
    c.set("synth", "min_interactions", std::int64_t{16});
    c.set("synth", "max_interactions", std::int64_t{16});
    c.set("train", "peak_lr", 5e-3);
    c.set("train", "warmup_steps", std::int64_t{50});
    c.set("train", "batch_size", std::int64_t{64});
    c.set("train", "max_steps", std::int64_t{500});
    c.set("train", "eval_every", std::int64_t{100});
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (tiny, overfit, desk, paper)");
}

void apply_overrides(KeyValueConfig& base, const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& arg = args[i];
    if (!arg.starts_with("--") || arg.size() == 2) {
      throw ConfigError("unexpected argument '" + arg + "'");
    }
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= args.size()) throw ConfigError("override --" + key + " needs a value");
      value = args[++i];
    }
    std::string section;
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      section = key.substr(0, dot);
      key = key.substr(dot + 1);
      // [columns] keys are optional, everything else must already exist
      if (section != "columns" && !base.contains(section, key)) {
        throw ConfigError("override --" + section + "." + key + " matches no config key");
      }
    } else {
      std::vector<std::string> owners;
      for (const auto& e : base.entries())
        if (e.key == key) owners.push_back(e.section);
      if (owners.size() != 1) {
        throw ConfigError("override --" + key + (owners.empty() ? " matches no config key"
                                                                : " is ambiguous; use --section." + key));
      }
      section = owners.front();
    }
    base.set(section, key, value);
  }
}

// ---------------------------------------------------------------------------
// Experiments

Experiment prepare_experiment(const KeyValueConfig& config, std::ostream& log) {
  Experiment e;
  e.config = config;
  e.model = ModelConfig::read(config, "model");
  e.train = TrainConfig::read(config, "train");
  e.train.validate();

  std::vector<data::Interaction> interactions;
  const auto path = config.get_string("data", "path", "");
  if (path.empty()) {
    const auto sc = synth::SynthConfig::read(config, "synth");
    interactions = synth::simulate(sc).interactions;
    log << "simulated " << interactions.size() << " interactions (synth seed " << sc.seed << ")\n";
  } else {
    auto report = data::parse_log(fs::path(path), data::ColumnMap::from_config(config));
    log << "read " << report.rows_read << " rows from " << path << ", skipped " << report.rows_skipped
        << "\n";
    for (const auto& w : report.warnings) log << "  warning: " << w << "\n";
    interactions = std::move(report.interactions);
  }
  const auto students = data::group_by_student(interactions);
  data::SplitConfig sc;
  sc.test_fraction = config.get_double("split", "test_fraction", sc.test_fraction);
  sc.val_fraction = config.get_double("split", "val_fraction", sc.val_fraction);
  sc.seed = parse_seed(config.get_string("split", "seed", "0"), "split.seed");
  if (e.model.window == 0) throw ConfigError("model.window must be positive");
  e.split = data::split_dataset(students, sc, e.model.window);

  std::int64_t max_ex = 0, max_cat = 0;
  for (const auto& w : e.split.train) {
    for (const auto x : w.exercise_id) max_ex = std::max(max_ex, x);
    for (const auto x : w.category_id) max_cat = std::max(max_cat, x);
  }
  if (e.model.num_exercises == 0) e.model.num_exercises = static_cast<std::size_t>(max_ex);
  if (e.model.num_categories == 0) e.model.num_categories = static_cast<std::size_t>(max_cat);
  e.model.validate();
  e.model.write(e.config, "model");
  log << "windows: " << e.split.train.size() << " train, " << e.split.validation.size()
      << " validation, " << e.split.test.size() << " test\n";
  return e;
}

RunOutcome run_once(const Experiment& experiment, const ModelConfig& model_config,
                    std::uint64_t seed) {
  TrainConfig tc = experiment.train;
  tc.seed = seed;
  model::SaintPlus m(model_config, seed);
  RunOutcome out;
  out.result = training::train(m, experiment.split.train, experiment.split.validation, tc);
  if (out.result.best_parameters) m.parameters() = *out.result.best_parameters;
  out.test = training::evaluate(m, experiment.split.test).report;
  return out;
}

std::vector<Variant> ablation_variants(std::string_view axis) {
  std::vector<Variant> v;
  if (axis == "embedding_modes") {
    for (const auto et : {TemporalMode::continuous, TemporalMode::categorical}) {
      for (const auto lt : {TemporalMode::continuous, TemporalMode::categorical}) {
        const std::string a = et == TemporalMode::continuous ? "Continuous" : "Categorical";
        const std::string b = lt == TemporalMode::continuous ? "Continuous" : "Categorical";
        v.push_back({a + "/" + b, {{"elapsed_time", a}, {"lag_time", b}}, [et, lt](ModelConfig& c) {
                       c.et_mode = et;
                       c.lt_mode = lt;
                     }});
      }
    }
  } else if (axis == "temporal_features") {
    v.push_back({"SAINT", {}, [](ModelConfig& c) { c.temporal_placement = TemporalPlacement::none; }});
    v.push_back({"SAINT+ET", {}, [](ModelConfig& c) { c.use_lag = false; }});
    v.push_back({"SAINT+LT", {}, [](ModelConfig& c) { c.use_elapsed = false; }});
    v.push_back({"SAINT+ET+LT", {}, [](ModelConfig&) {}});
  } else if (axis == "placement") {
    v.push_back({"SAINT", {}, [](ModelConfig& c) { c.temporal_placement = TemporalPlacement::none; }});
    v.push_back({"Enc", {}, [](ModelConfig& c) { c.temporal_placement = TemporalPlacement::encoder; }});
    v.push_back({"Dec", {}, [](ModelConfig& c) { c.temporal_placement = TemporalPlacement::decoder; }});
    v.push_back({"Enc+Dec", {}, [](ModelConfig& c) { c.temporal_placement = TemporalPlacement::both; }});
  } else {
    throw ConfigError("unknown ablation axis '" + std::string(axis) +
                      "' (embedding_modes, temporal_features, placement)");
  }
  return v;
}

double AblationRow::mean_acc() const {
  return std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
}

double AblationRow::mean_auc() const {
  return std::accumulate(auc.begin(), auc.end(), 0.0) / static_cast<double>(auc.size());
}

std::vector<AblationRow> run_ablation(const Experiment& experiment,
                                      const std::vector<Variant>& variants, std::size_t seeds,
                                      std::size_t jobs, std::ostream& log) {
  if (seeds == 0) throw ConfigError("ablate.seeds must be positive");
  std::vector<AblationRow> rows(variants.size());
  std::mutex log_mutex;
  auto run_variant = [&](std::size_t i) {
    ModelConfig mc = experiment.model;
    variants[i].apply(mc);
    rows[i].name = variants[i].name;
    rows[i].columns = variants[i].columns;
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto outcome = run_once(experiment, mc, experiment.train.seed + s);
      rows[i].acc.push_back(outcome.test.acc);
      rows[i].auc.push_back(outcome.test.auc);
      std::lock_guard lock(log_mutex);
      log << variants[i].name << " seed " << experiment.train.seed + s << ": test acc "
          << fixed(outcome.test.acc) << " auc " << fixed(outcome.test.auc) << " (best step "
          << outcome.result.best_step << ")\n";
    }
  };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < variants.size(); ++i) run_variant(i);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex next_mutex;
    std::exception_ptr failure;
    for (std::size_t j = 0; j < std::min(jobs, variants.size()); ++j) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(next_mutex);
            if (next >= variants.size() || failure) return;
            i = next++;
          }
          try {
            run_variant(i);
          } catch (...) {
            std::lock_guard lock(next_mutex);
            failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  return rows;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant";
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().columns) out << ',' << k;
  out << ",acc,auc,auc_min,auc_max,runs\n";
  for (const auto& r : rows) {
    out << r.name;
    for (const auto& [k, v] : r.columns) out << ',' << v;
    out << ',' << format_double(r.mean_acc()) << ',' << format_double(r.mean_auc()) << ','
        << format_double(*std::min_element(r.auc.begin(), r.auc.end())) << ','
        << format_double(*std::max_element(r.auc.begin(), r.auc.end())) << ',' << r.auc.size()
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset_name;
  std::string seed;
  std::string out_dir;
  std::string data;
};

void add_common(CLI::App* app, CommonOptions& o, const char* default_preset) {
  o.preset_name = default_preset;
  app->add_option("--config", o.config_path, "Config file (key = value with [sections])");
  app->add_option("--preset", o.preset_name, "Defaults: tiny, overfit, desk, paper")
      ->capture_default_str();
  app->add_option("--seed", o.seed, "Seed (synth.seed for gen-data, train.seed otherwise)");
  app->add_option("--out-dir", o.out_dir, "Output directory");
  app->add_option("--data", o.data, "Interaction log in the native schema");
  app->allow_extras();
}

KeyValueConfig resolve(const CommonOptions& o, const std::vector<std::string>& extras,
                       const char* seed_section) {
  auto config = preset(o.preset_name);
  if (!o.config_path.empty()) config.merge(KeyValueConfig::load(o.config_path));
  if (!o.seed.empty()) {
    parse_seed(o.seed, "--seed");
    config.set(seed_section, "seed", o.seed);
  }
  if (!o.data.empty()) config.set("data", "path", o.data);
  apply_overrides(config, extras);
  return config;
}

int cmd_gen_data(const KeyValueConfig& config, const fs::path& out_dir, const std::string& out_file,
                 std::ostream& out) {
  const auto sc = synth::SynthConfig::read(config, "synth");
  sc.validate();
  const fs::path log_path = out_file.empty() ? out_dir / "data.csv" : fs::path(out_file);
  ensure_dir(log_path.parent_path());
  const auto sim = synth::simulate(sc);
  synth::write_simulation(log_path, sc, sim);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir / "config.ini", config.serialize());
  }
  out << "wrote " << sim.interactions.size() << " interactions for " << sc.n_students
      << " students to " << log_path.string() << "\n";
  return 0;
}

training::Checkpoint snapshot(const model::SaintPlus& m, const Experiment& e,
                              const training::OptimizerState* opt, double best_auc,
                              std::size_t best_step) {
  KeyValueConfig extra = e.config;
  extra.set("checkpoint", "best_auc", best_auc);
  extra.set("checkpoint", "best_step", std::to_string(best_step));
  extra.set("checkpoint", "step", std::to_string(opt ? opt->step : best_step));
  return training::make_checkpoint(m, e.train, opt, extra);
}

void write_report(const fs::path& path, const metrics::MetricsReport& test,
                  const training::TrainResult* result, double best_auc, std::size_t best_step) {
  KeyValueConfig r;
  r.set("report", "test_acc", test.acc);
  r.set("report", "test_auc", test.auc);
  r.set("report", "test_positions", static_cast<std::int64_t>(test.n_total));
  r.set("report", "best_val_auc", best_auc);
  r.set("report", "best_step", std::to_string(best_step));
  if (result) {
    r.set("report", "steps", static_cast<std::int64_t>(result->optimizer.step));
    if (!result->log.empty()) r.set("report", "final_train_loss", result->log.back().train_loss);
    r.set_bool("report", "aborted", result->aborted);
    if (result->aborted) r.set("report", "abort_reason", result->abort_reason);
  }
  write_text(path, r.serialize());
}

int cmd_train(const KeyValueConfig& config, const fs::path& out_dir, bool resume, std::ostream& out) {
  if (out_dir.empty()) throw ConfigError("train needs --out-dir");
  const auto e = prepare_experiment(config, out);
  ensure_dir(out_dir);
  write_text(out_dir / "config.ini", e.config.serialize());
  {
    std::ofstream manifest(out_dir / "manifest.tsv");
    data::write_manifest(manifest, e.split);
  }

  model::SaintPlus m(e.model, e.train.seed);
  training::TrainProgress progress;
  const training::TrainProgress* resume_from = nullptr;
  const auto last_path = out_dir / "last.ckpt";
  const auto best_path = out_dir / "best.ckpt";
  if (resume) {
    if (!fs::exists(last_path)) throw ConfigError("nothing to resume: " + last_path.string() + " missing");
    const auto ck = training::load_checkpoint(last_path);
    training::restore(m, ck);
    progress.optimizer = training::optimizer_for(m, ck);
    const auto meta = ck.config();
    progress.best_auc = meta.get_double("checkpoint", "best_auc", -1.0);
    progress.best_step = static_cast<std::size_t>(
        parse_seed(meta.get_string("checkpoint", "best_step", "0"), "checkpoint.best_step"));
    resume_from = &progress;
    out << "resuming at step " << progress.optimizer.step << "\n";
  }

  const auto log_path = out_dir / "steps.csv";
  std::ofstream step_log;
  if (resume && fs::exists(log_path)) {
    // drop rows written after the checkpoint; they are about to be replayed
    std::ifstream in(log_path);
    std::string line, kept;
    std::getline(in, line);
    kept = line + "\n";
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (parse_seed(line.substr(0, line.find(',')), "steps.csv step") > progress.optimizer.step) break;
      kept += line + "\n";
    }
    in.close();
    write_text(log_path, kept);
    step_log.open(log_path, std::ios::app);
  } else {
    step_log.open(log_path, std::ios::trunc);
    step_log << "step,lr,train_loss,val_acc,val_auc\n";
  }
  const auto on_step = [&](const training::StepRecord& r, const training::TrainResult& so_far) {
    std::ostringstream row;
    training::write_step_log(row, std::span(&r, 1));
    const auto text = row.str();
    step_log << text.substr(text.find('\n') + 1) << std::flush;
    if (!r.val_auc) return;
    out << "step " << r.step << " loss " << fixed(r.train_loss) << " val auc " << fixed(*r.val_auc)
        << "\n";
    if (so_far.best_step == r.step) {
      training::save_checkpoint(best_path, snapshot(m, e, nullptr, so_far.best_auc, so_far.best_step));
    }
    training::save_checkpoint(last_path,
                              snapshot(m, e, &so_far.optimizer, so_far.best_auc, so_far.best_step));
  };
  const auto result = training::train(m, e.split.train, e.split.validation, e.train, resume_from, on_step);

  if (fs::exists(best_path)) training::restore(m, training::load_checkpoint(best_path));
  const auto eval = training::evaluate(m, e.split.test);
  {
    std::ofstream preds(out_dir / "test_predictions.csv");
    training::write_predictions(preds, eval.predictions);
  }
  write_report(out_dir / "report.ini", eval.report, &result, result.best_auc, result.best_step);
  out << "test acc " << fixed(eval.report.acc) << " auc " << fixed(eval.report.auc) << "\n";
  if (result.aborted) {
    out << "aborted: " << result.abort_reason << "\n";
    return 3;
  }
  return 0;
}

int cmd_eval(const KeyValueConfig& config, const fs::path& out_dir,
             const std::string& checkpoint_path, const std::string& split_name, std::ostream& out) {
  const auto m = training::model_from_checkpoint(training::load_checkpoint(checkpoint_path));
  const auto e = prepare_experiment(config, out);
  const std::vector<data::Window>* windows = nullptr;
  if (split_name == "test") windows = &e.split.test;
  else if (split_name == "validation") windows = &e.split.validation;
  else if (split_name == "train") windows = &e.split.train;
  else throw ConfigError("--split must be train, validation or test");
  const auto eval = training::evaluate(m, *windows);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir / "config.ini", config.serialize());
    std::ofstream preds(out_dir / (split_name + "_predictions.csv"));
    training::write_predictions(preds, eval.predictions);
    write_report(out_dir / "eval_report.ini", eval.report, nullptr,
                 config.get_double("checkpoint", "best_auc", -1.0), 0);
  }
  out << split_name << " acc " << fixed(eval.report.acc) << " auc " << fixed(eval.report.auc)
      << " positions " << eval.report.n_total << "\n";
  return 0;
}

int cmd_ablate(const KeyValueConfig& config, const fs::path& out_dir, const std::string& axis,
               std::ostream& out) {
  const auto variants = ablation_variants(axis);
  const auto e = prepare_experiment(config, out);
  const auto seeds = static_cast<std::size_t>(config.get_int("ablate", "seeds", 3));
  const auto jobs = static_cast<std::size_t>(config.get_int("ablate", "jobs", 1));
  const auto rows = run_ablation(e, variants, seeds, jobs, out);
  std::ostringstream table;
  write_ablation_table(table, rows);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir / "config.ini", e.config.serialize());
    write_text(out_dir / ("ablation_" + axis + ".csv"), table.str());
  }
  out << table.str();
  return 0;
}

int cmd_grad_check(const KeyValueConfig& config, const fs::path& out_dir, bool corrupt,
                   std::ostream& out) {
  const auto e = prepare_experiment(config, out);
  const model::SaintPlus m(e.model, e.train.seed);
  const auto limit = static_cast<std::size_t>(config.get_int("gradcheck", "windows", 10));
  std::vector<data::Window> windows;
  for (const auto* part : {&e.split.train, &e.split.validation, &e.split.test})
    for (const auto& w : *part)
      if (windows.size() < limit) windows.push_back(m.conform(w));
  std::size_t scored = 0;
  for (const auto& w : windows)
    for (const double x : training::scored_weights(w)) scored += x != 0.0 ? 1 : 0;
  if (scored == 0) throw ConfigError("grad-check: no scored positions in the selected windows");

  const tensor::ScalarFunction loss = [&](tensor::Graph& g, std::span<const tensor::Var> params) {
    const auto vars = m.resolve(params);
    tensor::Var total;
    for (const auto& w : windows) {
      const auto probs = m.forward(vars, w);
      const std::vector<double> labels(w.correct.begin(), w.correct.end());
      const auto l = tensor::weighted_bce(probs, labels, training::scored_weights(w),
                                          static_cast<double>(scored));
      total = total.valid() ? tensor::add(total, l) : l;
    }
    (void)g;
    return total;
  };
  std::vector<tensor::Tensor> inputs;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) inputs.push_back(m.parameters()[i]);
  tensor::GradCheckOptions options;
  options.step = config.get_double("gradcheck", "step", 1e-5);
  options.max_coords_per_input = static_cast<std::size_t>(config.get_int("gradcheck", "max_coords", 0));
  options.sample_seed = e.train.seed;
  options.graph.corrupt_backward = corrupt;
  const auto report = tensor::grad_check(loss, inputs, options);
  const double tolerance = config.get_double("gradcheck", "tolerance", 1e-4);
  const bool pass = report.max_rel_error < tolerance;

  std::ostringstream text;
  text << "windows " << windows.size() << "\n"
       << "parameters " << m.parameters().size() << " (" << m.parameters().scalar_count()
       << " scalars)\n"
       << "checked " << report.checked << " excluded " << report.excluded << "\n"
       << "max_rel_error " << format_double(report.max_rel_error) << "\n"
       << "worst_parameter " << m.parameters().name(report.worst_input) << "[" << report.worst_index
       << "]\n"
       << "tolerance " << format_double(tolerance) << "\n"
       << (pass ? "PASS" : "FAIL") << "\n";
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir / "config.ini", e.config.serialize());
    write_text(out_dir / "grad_check.txt", text.str());
  }
  out << text.str();
  return pass ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SAINT+ knowledge tracing: data generation, training, evaluation, ablations"};
  app.name("saintplus");
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, ablate_o, grad_o;
  std::string gen_out, eval_ckpt, eval_split = "test", axis;
  bool resume = false, corrupt = false;

  auto* gen = app.add_subcommand("gen-data", "Simulate a synthetic interaction log");
  add_common(gen, gen_o, "desk");
  gen->add_option("--out", gen_out, "Log file (default <out-dir>/data.csv)");

  auto* tr = app.add_subcommand("train", "Train and keep the best-validation-AUC checkpoint");
  add_common(tr, train_o, "desk");
  tr->add_flag("--resume", resume, "Continue from <out-dir>/last.ckpt");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a split");
  add_common(ev, eval_o, "desk");
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--split", eval_split, "train, validation or test")->capture_default_str();

  auto* ab = app.add_subcommand("ablate", "Train the variants of one ablation axis");
  add_common(ab, ablate_o, "desk");
  ab->add_option("--axis", axis, "embedding_modes, temporal_features or placement")->required();

  auto* gc = app.add_subcommand("grad-check", "Compare gradients against finite differences");
  add_common(gc, grad_o, "tiny");
  gc->add_flag("--corrupt-backward", corrupt, "Negative control: perturb the matmul backward");

  std::vector<std::string> argv_store{"saintplus"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gen->parsed()) {
      // An explicit --seed seeds the simulator here.
      const auto config = resolve(gen_o, gen->remaining(), "synth");
      return cmd_gen_data(config, gen_o.out_dir, gen_out, out);
    }
    if (tr->parsed()) {
      const auto config = resolve(train_o, tr->remaining(), "train");
      return cmd_train(config, train_o.out_dir, resume, out);
    }
    if (ev->parsed()) {
      auto config = training::load_checkpoint(eval_ckpt).config();
      if (!eval_o.config_path.empty()) config.merge(KeyValueConfig::load(eval_o.config_path));
      if (!eval_o.data.empty()) config.set("data", "path", eval_o.data);
      apply_overrides(config, ev->remaining());
      return cmd_eval(config, eval_o.out_dir, eval_ckpt, eval_split, out);
    }
    if (ab->parsed()) {
      const auto config = resolve(ablate_o, ab->remaining(), "train");
      return cmd_ablate(config, ablate_o.out_dir, axis, out);
    }
    if (gc->parsed()) {
      const auto config = resolve(grad_o, gc->remaining(), "train");
      return cmd_grad_check(config, grad_o.out_dir, corrupt, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace saintplus::cli
