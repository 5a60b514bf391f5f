#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace saintplus {
class KeyValueConfig;
}

namespace saintplus::data {

/// One student/exercise event in the native log schema.
struct Interaction {
  std::string student_id;
  std::int64_t exercise_id = 0;
  std::int64_t category_id = 0;
  std::int64_t start_timestamp_ms = 0;
  std::int64_t elapsed_ms = 0;
  int correct = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Header names of the native schema, overridable for foreign logs.
struct ColumnMap {
  std::string student_id = "student_id";
  std::string timestamp_ms = "timestamp_ms";
  std::string exercise_id = "exercise_id";
  std::string category_id = "category_id";
  std::string correct = "correct";
  std::string elapsed_ms = "elapsed_ms";
  char delimiter = ',';

  /// Reads keys of the [columns] section; absent keys keep the native names.
  static ColumnMap from_config(const KeyValueConfig& config);
};

struct ParseReport {
  /// Grouped by student (ascending id), each student sorted by start time.
  std::vector<Interaction> interactions;
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::vector<std::string> warnings;
};

ParseReport parse_log(std::istream& in, const ColumnMap& columns = {});
ParseReport parse_log(const std::filesystem::path& path, const ColumnMap& columns = {});

/// Writes interactions in the native schema, in the given order.
void write_log(std::ostream& out, std::span<const Interaction> interactions);

/// Interval between the end of the previous interaction and the start of the
/// current one, clamped at 0; the first interaction has lag 0.
std::vector<std::int64_t> compute_lag(std::span<const Interaction> student_interactions);

struct StudentSequence {
  std::string student_id;
  std::vector<Interaction> interactions;
  std::vector<std::int64_t> lag_ms;
};

/// Groups by student (ascending id), stable-sorts each student by start time
/// and computes lags.
std::vector<StudentSequence> group_by_student(std::span<const Interaction> interactions);

/// Fixed-length model input. `valid` is a prefix mask; padded positions carry 0s.
struct Window {
  std::string student_id;
  std::size_t window_index = 0;
  std::vector<std::int64_t> exercise_id;
  std::vector<std::int64_t> category_id;
  std::vector<int> correct;
  std::vector<std::int64_t> elapsed_ms;
  std::vector<std::int64_t> lag_ms;
  std::vector<std::uint8_t> valid;

  std::size_t length() const noexcept { return valid.size(); }
  std::size_t valid_count() const noexcept;

  static Window empty(std::size_t length);
};

std::vector<Window> windowize(const StudentSequence& sequence, std::size_t window);

/// Valid position of a window, in time order.
struct WindowEntry {
  std::string student_id;
  std::int64_t exercise_id = 0;
  std::int64_t category_id = 0;
  int correct = 0;
  std::int64_t elapsed_ms = 0;
  std::int64_t lag_ms = 0;

  friend bool operator==(const WindowEntry&, const WindowEntry&) = default;
};

std::vector<WindowEntry> flatten(std::span<const Window> windows);

enum class Split { train, validation, test };
const char* split_name(Split split) noexcept;

struct SplitConfig {
  double test_fraction = 0.2;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<Window> train;
  std::vector<Window> validation;
  std::vector<Window> test;
  /// Ascending student id.
  std::vector<std::pair<std::string, Split>> manifest;
};

/// The most recently active test_fraction of students form the test split;
/// the rest are ordered by a seeded hash of their id and the first
/// val_fraction of them form the validation split.
DatasetSplit split_dataset(std::span<const StudentSequence> students, const SplitConfig& config,
                           std::size_t window);

/// `student_id<TAB>split` lines.
void write_manifest(std::ostream& out, const DatasetSplit& split);

/// Window indices grouped into batches; the last batch may be short.
using BatchPlan = std::vector<std::vector<std::size_t>>;

BatchPlan make_batches(std::size_t window_count, std::size_t batch_size, std::uint64_t seed,
                       bool shuffle);

}  // namespace saintplus::data
