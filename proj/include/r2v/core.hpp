#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace r2v {

inline constexpr int kWindowHours = 48;
inline constexpr int kLookaheadHours = 24;
inline constexpr int kDefaultLabCount = 10;

// Error hierarchy. The CLI maps ValidationError to exit code 2 and
// BackendError to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : ValidationError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

enum class FeatureKind { continuous, binary };

struct FeatureDef {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  std::string unit;
  // Rendered in text; empty means derive from name by splitting camel case.
  std::string display_name;
};

/// Ordered, site-specific feature dictionary. Order defines serialization
/// and grid row order.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  FeatureSchema(std::string site_id, std::vector<FeatureDef> features);

  const std::string& site_id() const noexcept { return site_id_; }
  const std::vector<FeatureDef>& features() const noexcept { return features_; }
  std::size_t size() const noexcept { return features_.size(); }
  const FeatureDef& operator[](std::size_t i) const { return features_[i]; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  bool contains(std::string_view name) const { return index_of(name).has_value(); }
  std::size_t continuous_count() const;

 private:
  std::string site_id_;
  std::vector<FeatureDef> features_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Dense D x T value grid with an observation mask (1 = observed).
struct GridTensor {
  std::size_t features = 0;
  std::size_t hours = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  GridTensor() = default;
  GridTensor(std::size_t d, std::size_t t) : features(d), hours(t), values(d * t, 0.0), mask(d * t, 0) {}

  double& at(std::size_t f, std::size_t t) { return values[f * hours + t]; }
  double at(std::size_t f, std::size_t t) const { return values[f * hours + t]; }
  std::uint8_t& mask_at(std::size_t f, std::size_t t) { return mask[f * hours + t]; }
  std::uint8_t mask_at(std::size_t f, std::size_t t) const { return mask[f * hours + t]; }
  std::size_t observed_count() const;

  bool operator==(const GridTensor&) const = default;
};

enum class Sex { M, F };

struct Demographics {
  double age_years = 0.0;
  Sex sex = Sex::M;
  bool operator==(const Demographics&) const = default;
};

struct TaskLabels {
  bool mortality = false;
  double los_remaining = 0.0;
  std::array<bool, 2> drug{false, false};  // vasopressor, antibiotic
  std::vector<std::uint8_t> labs;
  GridTensor forecast_target;  // D x 24

  bool operator==(const TaskLabels&) const = default;
};

struct Observation {
  double hour = 0.0;
  double value = 0.0;
  bool operator==(const Observation&) const = default;
};

using ContinuousObs = std::map<std::string, std::vector<Observation>>;
using BinaryEvents = std::map<std::string, std::vector<int>>;

struct WindowRecord {
  std::string stay_id;
  int window_index = 0;
  ContinuousObs continuous_obs;
  BinaryEvents binary_events;
  Demographics demographics;
  TaskLabels labels;

  bool operator==(const WindowRecord&) const = default;
};

enum class PromptKind { zero_shot, cot, icd, trend, none };

std::string_view to_string(PromptKind k);
PromptKind prompt_kind_from_string(std::string_view s);

struct Summary {
  std::string stay_id;
  int window_index = 0;
  PromptKind prompt_kind = PromptKind::none;
  std::string backend_id;
  std::string text;
  std::size_t token_count = 0;

  bool operator==(const Summary&) const = default;
};

enum class Pooling { mean, cls, last, max };

std::string_view to_string(Pooling p);
Pooling pooling_from_string(std::string_view s);

struct EmbeddingVector {
  std::vector<double> values;
  Pooling pooling = Pooling::mean;
  bool normalized = false;

  std::size_t dim() const noexcept { return values.size(); }
};

enum class Direction { lower_better, higher_better };

std::string_view to_string(Direction d);
Direction direction_from_string(std::string_view s);

struct MetricRow {
  std::string method;
  std::string cohort_pair;
  std::string task;
  // Absent when the method was not evaluated on this column.
  std::optional<double> value;
  // Set when the source table typesets this cell as the column best. Only
  // consulted to separate values that tie after rounding.
  bool marked_best = false;
};

/// (method x cohort_pair x task) metric values with per-task directions.
struct MetricTable {
  std::vector<MetricRow> rows;
  std::map<std::string, Direction> directions;

  void add(std::string method, std::string cohort_pair, std::string task, std::optional<double> value,
           bool marked_best = false);
  std::vector<std::string> methods() const;
  // Distinct (cohort_pair, task) columns in first-seen order.
  std::vector<std::pair<std::string, std::string>> columns() const;
  // Throws ValidationError if any row lacks a direction.
  void check_directions() const;
};

/// Returns human-readable violations; empty iff the window is well formed
/// under the schema.
std::vector<std::string> validate_window(const WindowRecord& w, const FeatureSchema& s);

}  // namespace r2v
