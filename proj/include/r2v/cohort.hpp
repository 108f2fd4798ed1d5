#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "r2v/core.hpp"
#include "r2v/textize.hpp"

namespace r2v {

/// A full ICU stay with stay-relative hours.
struct Stay {
  std::string stay_id;
  double duration_hours = 0.0;
  std::optional<bool> mortality;
  Demographics demographics;
  ContinuousObs continuous;                          // sorted by hour
  std::map<std::string, std::vector<double>> events;  // sorted hours

  bool operator==(const Stay&) const = default;
};

/// Which schema features back the drug and lab-order labels.
struct LabelSpec {
  std::string vasopressor;
  std::string antibiotic;
  std::vector<std::string> labs;

  bool operator==(const LabelSpec&) const = default;
};

/// Windows [48k, 48k+48) for every k whose 24 h lookahead fits inside the
/// stay. Trailing windows without a full lookahead are dropped.
std::vector<WindowRecord> window_stay(const Stay& stay, const FeatureSchema& s, const LabelSpec& labels,
                                      int window_hours = kWindowHours);

/// Number of windows window_stay produces for a stay of this length.
int window_count(double duration_hours, int window_hours = kWindowHours);

/// Labels for the window ending at window_end. Events count when they fall in
/// (window_end, window_end + 24]; the forecast grid bins [window_end,
/// window_end + 24) by floor hour. Throws ValidationError if the stay has no
/// outcome flag or lacks the lookahead.
TaskLabels derive_labels(const Stay& stay, double window_end, const FeatureSchema& s, const LabelSpec& labels);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct Splits {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  bool operator==(const Splits&) const = default;
};

/// Seeded by-stay split. Sizes are floor(ratio * n) for val and test, with
/// the remainder going to train.
Splits split_cohort(std::vector<std::string> stay_ids, SplitRatios ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic multi-site cohort generator.

struct FeatureSpec {
  FeatureDef def;
  FeatureGroup group = FeatureGroup::vital;

  // continuous: value = baseline + slope * severity + noise, clipped at
  // lower_bound, then multiplied by unit_scale and rounded to `decimals`.
  double baseline = 0.0;
  double severity_slope = 0.0;
  double noise_sd = 1.0;
  double lower_bound = 0.0;
  double unit_scale = 1.0;
  int decimals = 0;
  // Expected observations per hour at zero severity; scaled by
  // exp(rate_severity_gain * severity).
  double rate_per_hour = 1.0;
  double rate_severity_gain = 0.0;
  double missingness = 0.0;
  // Applied only when demographic leakage is enabled.
  double sex_effect = 0.0;
  double age_effect = 0.0;

  // binary: fires in an hour with probability
  // max_rate * sigmoid(gain * (severity - threshold)).
  double threshold = 0.0;
  double gain = 3.0;
  double max_rate = 0.9;
};

struct CohortSpec {
  std::string site_id = "A";
  int n_stays = 100;
  std::vector<FeatureSpec> features;
  LabelSpec label_features;

  // Latent severity: per-stay baseline b ~ N(0,1) plus an hourly AR(1)
  // deviation, plus a linear drift over the stay (upward for stays that end
  // in death, downward otherwise).
  double ar_phi = 0.95;
  double ar_sigma = 0.15;
  double outcome_drift = 1.0;

  double mortality_base_rate = 0.2;
  double mortality_severity_coef = 2.5;

  double min_duration_hours = 72.0;
  double duration_scale_hours = 60.0;
  double duration_severity_coef = 0.3;
  double duration_noise = 0.6;
  double max_duration_hours = 480.0;

  bool leak_demographics = false;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SyntheticCohort {
  FeatureSchema schema;
  LabelSpec labels;
  std::map<std::string, FeatureGroup> groups;
  std::vector<Stay> stays;
};

FeatureSchema schema_of(const CohortSpec& spec);
std::map<std::string, FeatureGroup> groups_of(const CohortSpec& spec);

SyntheticCohort generate_synthetic_cohort(const CohortSpec& spec);

/// Generates stays in index order until their windows reach target_windows.
/// spec.n_stays is ignored. Stay i is identical to the one
/// generate_synthetic_cohort produces at index i.
SyntheticCohort generate_cohort_with_windows(const CohortSpec& spec, int target_windows);

/// Intercept making E[sigmoid(intercept + coef * Z)] = base_rate for Z ~ N(0,1).
double calibrate_intercept(double base_rate, double coef);

/// Default shared feature menu: 10 labs, 7 vitals, 5 therapies.
CohortSpec default_cohort_spec(std::string site_id, int n_stays, std::uint64_t seed);

struct UnitChange {
  std::string unit;
  double factor = 1.0;
  int decimals = 0;
};

/// Site heterogeneity: rename a fraction of features (schema position is
/// kept) and rescale units by fixed factors.
struct SiteShift {
  std::string site_id;
  double rename_fraction = 0.0;
  std::map<std::string, UnitChange> rescale;  // keyed by the base feature name
  std::uint64_t seed = 0;
};

CohortSpec apply_site_shift(const CohortSpec& base, const SiteShift& shift);

/// A conventional unit conversion table for the default menu (e.g. creatinine
/// umol/L -> mg/dL).
std::map<std::string, UnitChange> default_unit_changes();

}  // namespace r2v
