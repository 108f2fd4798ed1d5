#include "r2v/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace r2v {

FeatureSchema::FeatureSchema(std::string site_id, std::vector<FeatureDef> features)
    : site_id_(std::move(site_id)), features_(std::move(features)) {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name.empty()) throw ValidationError("feature with empty name in schema " + site_id_);
    if (!index_.emplace(features_[i].name, i).second) {
      throw ValidationError("duplicate feature name " + features_[i].name + " in schema " + site_id_);
    }
  }
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t FeatureSchema::continuous_count() const {
  return static_cast<std::size_t>(std::count_if(features_.begin(), features_.end(),
                                                [](const FeatureDef& f) { return f.kind == FeatureKind::continuous; }));
}

std::size_t GridTensor::observed_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw ValidationError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr std::array<std::string_view, 5> kPromptNames{"zero_shot", "cot", "icd", "trend", "none"};
constexpr std::array<std::string_view, 4> kPoolingNames{"mean", "cls", "last", "max"};
constexpr std::array<std::string_view, 2> kDirectionNames{"lower_better", "higher_better"};

}  // namespace

std::string_view to_string(PromptKind k) { return kPromptNames[static_cast<std::size_t>(k)]; }
PromptKind prompt_kind_from_string(std::string_view s) {
  return parse_enum<PromptKind>(s, kPromptNames, "prompt kind");
}

std::string_view to_string(Pooling p) { return kPoolingNames[static_cast<std::size_t>(p)]; }
Pooling pooling_from_string(std::string_view s) { return parse_enum<Pooling>(s, kPoolingNames, "pooling"); }

std::string_view to_string(Direction d) { return kDirectionNames[static_cast<std::size_t>(d)]; }
Direction direction_from_string(std::string_view s) {
  return parse_enum<Direction>(s, kDirectionNames, "direction");
}

void MetricTable::add(std::string method, std::string cohort_pair, std::string task, std::optional<double> value,
                      bool marked_best) {
  rows.push_back({std::move(method), std::move(cohort_pair), std::move(task), value, marked_best});
}

std::vector<std::string> MetricTable::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> MetricTable::columns() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& r : rows) {
    std::pair<std::string, std::string> c{r.cohort_pair, r.task};
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(std::move(c));
  }
  return out;
}

void MetricTable::check_directions() const {
  for (const auto& r : rows) {
    if (!directions.contains(r.task)) throw ValidationError("no direction for task " + r.task);
  }
}

std::vector<std::string> validate_window(const WindowRecord& w, const FeatureSchema& s) {
  std::vector<std::string> out;
  std::set<std::string> reported;
  auto unknown = [&](const std::string& name) {
    if (reported.insert(name).second) out.push_back("unknown feature " + name);
  };

  if (w.window_index < 0) out.push_back("negative window index");

  for (const auto& [name, obs] : w.continuous_obs) {
    auto idx = s.index_of(name);
    if (!idx) {
      unknown(name);
      continue;
    }
    if (s[*idx].kind != FeatureKind::continuous) out.push_back("binary feature " + name + " has continuous observations");
    bool hour_bad = false, value_bad = false;
    for (const auto& o : obs) {
      if (!(o.hour >= 0.0 && o.hour < kWindowHours)) hour_bad = true;
      if (!std::isfinite(o.value)) value_bad = true;
    }
    if (hour_bad) out.push_back("hour out of [0,48)");
    if (value_bad) out.push_back("non-finite value for " + name);
    if (!std::is_sorted(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) { return a.hour < b.hour; })) {
      out.push_back("observations of " + name + " not sorted by hour");
    }
  }

  for (const auto& [name, hours] : w.binary_events) {
    auto idx = s.index_of(name);
    if (!idx) {
      unknown(name);
      continue;
    }
    if (s[*idx].kind != FeatureKind::binary) out.push_back("continuous feature " + name + " has binary events");
    if (std::any_of(hours.begin(), hours.end(), [](int h) { return h < 0 || h >= kWindowHours; })) {
      out.push_back("hour out of [0,48)");
    }
    if (!std::is_sorted(hours.begin(), hours.end())) out.push_back("events of " + name + " not sorted");
  }

  const auto& ft = w.labels.forecast_target;
  if (ft.features != 0 || ft.hours != 0) {
    if (ft.features != s.size() || ft.hours != kLookaheadHours) out.push_back("forecast target shape mismatch");
    if (ft.values.size() != ft.features * ft.hours || ft.mask.size() != ft.values.size()) {
      out.push_back("forecast target storage mismatch");
    } else {
      for (std::size_t i = 0; i < ft.values.size(); ++i) {
        if (ft.mask[i] && !std::isfinite(ft.values[i])) {
          out.push_back("non-finite forecast target cell");
          break;
        }
      }
    }
  }
  if (!(w.labels.los_remaining >= 0.0)) out.push_back("negative remaining length of stay");
  if (!std::isfinite(w.demographics.age_years)) out.push_back("non-finite age");
  return out;
}

}  // namespace r2v
