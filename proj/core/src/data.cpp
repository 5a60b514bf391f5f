#include "saintplus/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string_view>

#include "saintplus/config.hpp"
#include "saintplus/errors.hpp"
#include "saintplus/rng.hpp"

namespace saintplus::data {

namespace {

constexpr std::size_t kMaxStoredWarnings = 32;

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

bool parse_int(std::string_view s, std::int64_t& out) {
  s = strip(s);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

}  // namespace

ColumnMap ColumnMap::from_config(const KeyValueConfig& config) {
  ColumnMap m;
  m.student_id = config.get_string("columns", "student_id", m.student_id);
  m.timestamp_ms = config.get_string("columns", "timestamp_ms", m.timestamp_ms);
  m.exercise_id = config.get_string("columns", "exercise_id", m.exercise_id);
  m.category_id = config.get_string("columns", "category_id", m.category_id);
  m.correct = config.get_string("columns", "correct", m.correct);
  m.elapsed_ms = config.get_string("columns", "elapsed_ms", m.elapsed_ms);
  const auto delim = config.get_string("columns", "delimiter", ",");
  if (delim == "\\t" || delim == "tab") {
    m.delimiter = '\t';
  } else if (delim.size() == 1) {
    m.delimiter = delim[0];
  } else {
    throw ConfigError("columns.delimiter must be a single character, got '" + delim + "'");
  }
  return m;
}

ParseReport parse_log(std::istream& in, const ColumnMap& columns) {
  ParseReport report;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("log has no header row");
  const auto header = split_fields(strip(line), columns.delimiter);
  auto column_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (strip(header[i]) == name) return i;
    throw ConfigError("log header lacks mapped column '" + name + "'");
  };
  const std::size_t c_student = column_index(columns.student_id);
  const std::size_t c_time = column_index(columns.timestamp_ms);
  const std::size_t c_exercise = column_index(columns.exercise_id);
  const std::size_t c_category = column_index(columns.category_id);
  const std::size_t c_correct = column_index(columns.correct);
  const std::size_t c_elapsed = column_index(columns.elapsed_ms);
  const std::size_t needed =
      std::max({c_student, c_time, c_exercise, c_category, c_correct, c_elapsed}) + 1;

  std::size_t line_no = 1;
  auto skip = [&](std::string reason) {
    ++report.rows_skipped;
    if (report.warnings.size() < kMaxStoredWarnings)
      report.warnings.push_back("line " + std::to_string(line_no) + ": " + std::move(reason));
  };

  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = strip(line);
    if (trimmed.empty()) continue;
    ++report.rows_read;
    const auto fields = split_fields(trimmed, columns.delimiter);
    if (fields.size() < needed) {
      skip("expected at least " + std::to_string(needed) + " fields, got " +
           std::to_string(fields.size()));
      continue;
    }
    Interaction it;
    it.student_id = std::string(strip(fields[c_student]));
    std::int64_t correct = 0;
    if (it.student_id.empty()) {
      skip("empty student id");
      continue;
    }
    if (!parse_int(fields[c_time], it.start_timestamp_ms) ||
        !parse_int(fields[c_exercise], it.exercise_id) ||
        !parse_int(fields[c_category], it.category_id) || !parse_int(fields[c_correct], correct) ||
        !parse_int(fields[c_elapsed], it.elapsed_ms)) {
      skip("unparseable integer field");
      continue;
    }
    if (it.elapsed_ms < 0) {
      skip("negative elapsed_ms");
      continue;
    }
    if (correct != 0 && correct != 1) {
      skip("correct must be 0 or 1");
      continue;
    }
    if (it.exercise_id < 1 || it.category_id < 1) {
      skip("exercise_id and category_id must be >= 1");
      continue;
    }
    it.correct = static_cast<int>(correct);
    report.interactions.push_back(std::move(it));
  }

  std::stable_sort(report.interactions.begin(), report.interactions.end(),
                   [](const Interaction& a, const Interaction& b) {
                     if (a.student_id != b.student_id) return a.student_id < b.student_id;
                     return a.start_timestamp_ms < b.start_timestamp_ms;
                   });
  return report;
}

ParseReport parse_log(const std::filesystem::path& path, const ColumnMap& columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open log file " + path.string());
  return parse_log(in, columns);
}

void write_log(std::ostream& out, std::span<const Interaction> interactions) {
  out << "student_id,timestamp_ms,exercise_id,category_id,correct,elapsed_ms\n";
  for (const auto& it : interactions) {
    out << it.student_id << ',' << it.start_timestamp_ms << ',' << it.exercise_id << ','
        << it.category_id << ',' << it.correct << ',' << it.elapsed_ms << '\n';
  }
}

std::vector<std::int64_t> compute_lag(std::span<const Interaction> s) {
  std::vector<std::int64_t> lag(s.size(), 0);
  for (std::size_t t = 1; t < s.size(); ++t) {
    const auto prev_end = s[t - 1].start_timestamp_ms + s[t - 1].elapsed_ms;
    lag[t] = std::max<std::int64_t>(0, s[t].start_timestamp_ms - prev_end);
  }
  return lag;
}

std::vector<StudentSequence> group_by_student(std::span<const Interaction> interactions) {
  std::vector<std::size_t> order(interactions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = interactions[a];
    const auto& y = interactions[b];
    if (x.student_id != y.student_id) return x.student_id < y.student_id;
    return x.start_timestamp_ms < y.start_timestamp_ms;
  });
  std::vector<StudentSequence> out;
  for (const auto idx : order) {
    const auto& it = interactions[idx];
    if (out.empty() || out.back().student_id != it.student_id)
      out.push_back(StudentSequence{it.student_id, {}, {}});
    out.back().interactions.push_back(it);
  }
  for (auto& s : out) s.lag_ms = compute_lag(s.interactions);
  return out;
}

std::size_t Window::valid_count() const noexcept {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

Window Window::empty(std::size_t length) {
  Window w;
  w.exercise_id.assign(length, 0);
  w.category_id.assign(length, 0);
  w.correct.assign(length, 0);
  w.elapsed_ms.assign(length, 0);
  w.lag_ms.assign(length, 0);
  w.valid.assign(length, 0);
  return w;
}

std::vector<Window> windowize(const StudentSequence& seq, std::size_t window) {
  if (window == 0) throw ContractError("windowize: window length must be positive");
  if (seq.lag_ms.size() != seq.interactions.size()) {
    throw ContractError("windowize: lag has not been computed for student " + seq.student_id);
  }
  std::vector<Window> out;
  const std::size_t n = seq.interactions.size();
  for (std::size_t start = 0, k = 0; start < n; start += window, ++k) {
    Window w = Window::empty(window);
    w.student_id = seq.student_id;
    w.window_index = k;
    for (std::size_t t = 0; t < window && start + t < n; ++t) {
      const auto& it = seq.interactions[start + t];
      w.exercise_id[t] = it.exercise_id;
      w.category_id[t] = it.category_id;
      w.correct[t] = it.correct;
      w.elapsed_ms[t] = it.elapsed_ms;
      w.lag_ms[t] = seq.lag_ms[start + t];
      w.valid[t] = 1;
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<WindowEntry> flatten(std::span<const Window> windows) {
  std::vector<WindowEntry> out;
  for (const auto& w : windows) {
    for (std::size_t t = 0; t < w.length() && w.valid[t]; ++t) {
      out.push_back(WindowEntry{w.student_id, w.exercise_id[t], w.category_id[t], w.correct[t],
                                w.elapsed_ms[t], w.lag_ms[t]});
    }
  }
  return out;
}

const char* split_name(Split split) noexcept {
  switch (split) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::test:
      return "test";
  }
  return "unknown";
}

DatasetSplit split_dataset(std::span<const StudentSequence> students, const SplitConfig& config,
                           std::size_t window) {
  if (students.empty()) throw ContractError("split_dataset: empty student set");
  const auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_unit(config.test_fraction) || !in_unit(config.val_fraction) ||
      config.test_fraction + config.val_fraction >= 1.0) {
    throw ContractError("split_dataset: fractions must lie in (0,1) with a sum below 1");
  }
  const std::size_t n = students.size();
  std::vector<std::int64_t> latest(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (students[i].interactions.empty()) {
      throw ContractError("split_dataset: student " + students[i].student_id + " has no interactions");
    }
    for (const auto& it : students[i].interactions)
      latest[i] = std::max(latest[i], it.start_timestamp_ms);
  }

  std::vector<std::size_t> by_recency(n);
  std::iota(by_recency.begin(), by_recency.end(), std::size_t{0});
  std::sort(by_recency.begin(), by_recency.end(), [&](std::size_t a, std::size_t b) {
    if (latest[a] != latest[b]) return latest[a] > latest[b];
    return students[a].student_id < students[b].student_id;
  });
  const auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * double(n)));

  std::vector<Split> assignment(n, Split::train);
  std::vector<std::size_t> rest;
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_test) {
      assignment[by_recency[r]] = Split::test;
    } else {
      rest.push_back(by_recency[r]);
    }
  }
  const auto hash_of = [&](std::size_t i) {
    return mix64(config.seed ^ fnv1a64(students[i].student_id));
  };
  std::sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = hash_of(a), hb = hash_of(b);
    if (ha != hb) return ha < hb;
    return students[a].student_id < students[b].student_id;
  });
  const auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * double(rest.size())));
  for (std::size_t r = 0; r < n_val && r < rest.size(); ++r) assignment[rest[r]] = Split::validation;

  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
    return students[a].student_id < students[b].student_id;
  });

  DatasetSplit out;
  for (const auto i : by_id) {
    out.manifest.emplace_back(students[i].student_id, assignment[i]);
    auto windows = windowize(students[i], window);
    auto& dst = assignment[i] == Split::train        ? out.train
                : assignment[i] == Split::validation ? out.validation
                                                     : out.test;
    for (auto& w : windows) dst.push_back(std::move(w));
  }
  return out;
}

void write_manifest(std::ostream& out, const DatasetSplit& split) {
  for (const auto& [id, s] : split.manifest) out << id << '\t' << split_name(s) << '\n';
}

BatchPlan make_batches(std::size_t window_count, std::size_t batch_size, std::uint64_t seed,
                       bool shuffle) {
  if (batch_size == 0) throw ContractError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(window_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    CounterRng rng(derive_key(seed, 0x62617463686573ULL));
    for (std::size_t i = window_count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  BatchPlan plan;
  for (std::size_t start = 0; start < window_count; start += batch_size) {
    const auto end = std::min(window_count, start + batch_size);
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                      order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

}  // namespace saintplus::data
