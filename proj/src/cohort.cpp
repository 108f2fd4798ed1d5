#include "r2v/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "r2v/gridder.hpp"
#include "r2v/util.hpp"

namespace r2v {

int window_count(double duration_hours, int window_hours) {
  const double need = window_hours + kLookaheadHours;
  if (!(duration_hours >= need)) return 0;
  return static_cast<int>(std::floor((duration_hours - kLookaheadHours) / window_hours));
}

TaskLabels derive_labels(const Stay& stay, double window_end, const FeatureSchema& s, const LabelSpec& spec) {
  if (!stay.mortality.has_value()) throw ValidationError("stay " + stay.stay_id + " has no outcome flag");
  const double horizon = window_end + kLookaheadHours;
  if (stay.duration_hours < horizon) {
    throw ValidationError("stay " + stay.stay_id + " ends before the 24 h lookahead of the window");
  }

  TaskLabels y;
  y.mortality = *stay.mortality;
  y.los_remaining = stay.duration_hours - window_end;

  auto any_in_lookahead = [&](const std::vector<double>& hours) {
    return std::any_of(hours.begin(), hours.end(), [&](double h) { return h > window_end && h <= horizon; });
  };
  auto event_fired = [&](const std::string& name) {
    if (name.empty()) return false;
    auto it = stay.events.find(name);
    return it != stay.events.end() && any_in_lookahead(it->second);
  };
  y.drug = {event_fired(spec.vasopressor), event_fired(spec.antibiotic)};

  y.labs.reserve(spec.labs.size());
  for (const auto& lab : spec.labs) {
    bool ordered = false;
    if (auto it = stay.continuous.find(lab); it != stay.continuous.end()) {
      ordered = std::any_of(it->second.begin(), it->second.end(),
                            [&](const Observation& o) { return o.hour > window_end && o.hour <= horizon; });
    } else {
      ordered = event_fired(lab);
    }
    y.labs.push_back(ordered ? 1 : 0);
  }

  y.forecast_target = bin_to_grid(stay.continuous, stay.events, s, window_end, kLookaheadHours);
  return y;
}

std::vector<WindowRecord> window_stay(const Stay& stay, const FeatureSchema& s, const LabelSpec& labels,
                                      int window_hours) {
  const int n = window_count(stay.duration_hours, window_hours);
  std::vector<WindowRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double start = static_cast<double>(k) * window_hours;
    const double end = start + window_hours;
    WindowRecord w;
    w.stay_id = stay.stay_id;
    w.window_index = k;
    w.demographics = stay.demographics;
    for (const auto& [name, obs] : stay.continuous) {
      std::vector<Observation> in;
      for (const auto& o : obs) {
        if (o.hour >= start && o.hour < end) in.push_back({o.hour - start, o.value});
      }
      if (!in.empty()) w.continuous_obs.emplace(name, std::move(in));
    }
    for (const auto& [name, hours] : stay.events) {
      std::vector<int> in;
      for (double h : hours) {
        if (h >= start && h < end) {
          const int hr = static_cast<int>(std::floor(h - start));
          if (in.empty() || in.back() != hr) in.push_back(hr);
        }
      }
      if (!in.empty()) w.binary_events.emplace(name, std::move(in));
    }
    w.labels = derive_labels(stay, end, s, labels);
    out.push_back(std::move(w));
  }
  return out;
}

Splits split_cohort(std::vector<std::string> stay_ids, SplitRatios ratios, std::uint64_t seed) {
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ValidationError("split ratios must sum to 1");
  }
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0) throw ValidationError("split ratios must be >= 0");
  std::sort(stay_ids.begin(), stay_ids.end());
  if (std::adjacent_find(stay_ids.begin(), stay_ids.end()) != stay_ids.end()) {
    throw ValidationError("duplicate stay id in split input");
  }
  if (stay_ids.size() < 3) throw ValidationError("need at least 3 stays to split");

  Rng rng(seed);
  rng.shuffle(stay_ids);
  const std::size_t n = stay_ids.size();
  const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * static_cast<double>(n)));
  const std::size_t n_train = n - n_val - n_test;

  Splits out;
  out.train.assign(stay_ids.begin(), stay_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(stay_ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 stay_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(stay_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), stay_ids.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

void CohortSpec::validate() const {
  if (n_stays <= 0) throw ValidationError("cohort spec: n_stays must be > 0");
  if (!(mortality_base_rate > 0.0 && mortality_base_rate < 1.0)) {
    throw ValidationError("cohort spec: mortality_base_rate must be in (0,1)");
  }
  if (min_duration_hours < 0 || max_duration_hours < min_duration_hours) {
    throw ValidationError("cohort spec: bad duration range");
  }
  if (!(std::abs(ar_phi) < 1.0)) throw ValidationError("cohort spec: |ar_phi| must be < 1");
  std::set<std::string> names;
  for (const auto& f : features) {
    if (f.rate_per_hour < 0 || f.max_rate < 0) throw ValidationError("cohort spec: negative rate for " + f.def.name);
    if (f.missingness < 0 || f.missingness > 1) throw ValidationError("cohort spec: missingness outside [0,1]");
    if (!names.insert(f.def.name).second) throw ValidationError("cohort spec: duplicate feature " + f.def.name);
  }
  auto must_exist = [&](const std::string& n) {
    if (!n.empty() && !names.contains(n)) throw ValidationError("cohort spec: label feature " + n + " not in menu");
  };
  must_exist(label_features.vasopressor);
  must_exist(label_features.antibiotic);
  for (const auto& l : label_features.labs) must_exist(l);
}

FeatureSchema schema_of(const CohortSpec& spec) {
  std::vector<FeatureDef> defs;
  defs.reserve(spec.features.size());
  for (const auto& f : spec.features) defs.push_back(f.def);
  return FeatureSchema(spec.site_id, std::move(defs));
}

std::map<std::string, FeatureGroup> groups_of(const CohortSpec& spec) {
  std::map<std::string, FeatureGroup> out;
  for (const auto& f : spec.features) out.emplace(f.def.name, f.group);
  return out;
}

double calibrate_intercept(double base_rate, double coef) {
  // Gauss-Hermite-free: trapezoid over [-8, 8] is far below 1e-9 error for a
  // standard normal weight.
  auto marginal = [&](double a) {
    constexpr int kSteps = 4000;
    constexpr double lo = -8.0, hi = 8.0;
    const double h = (hi - lo) / kSteps;
    double acc = 0.0;
    for (int i = 0; i <= kSteps; ++i) {
      const double z = lo + i * h;
      const double w = (i == 0 || i == kSteps) ? 0.5 : 1.0;
      acc += w * sigmoid(a + coef * z) * std::exp(-0.5 * z * z);
    }
    return acc * h / std::sqrt(2.0 * std::numbers::pi);
  };
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (marginal(mid) < base_rate) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

namespace {

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double r = std::round(v * scale) / scale;
  return r == 0.0 ? 0.0 : r;
}

Stay generate_stay(const CohortSpec& spec, int index, double intercept) {
  Rng rng(derive_seed(spec.seed, spec.site_id + ":stay:" + std::to_string(index)));
  Stay st;
  char id[32];
  std::snprintf(id, sizeof id, "%s-%06d", spec.site_id.c_str(), index);
  st.stay_id = id;

  const double baseline = rng.normal();
  const bool died = rng.bernoulli(sigmoid(intercept + spec.mortality_severity_coef * baseline));
  st.mortality = died;

  const double raw_duration =
      spec.min_duration_hours +
      spec.duration_scale_hours * std::exp(spec.duration_severity_coef * baseline + spec.duration_noise * rng.normal());
  st.duration_hours = round_to(std::min(raw_duration, spec.max_duration_hours), 1);

  // Demographics come from their own stream so they stay independent of the
  // clinical draws when leakage is off.
  Rng demo_rng(derive_seed(spec.seed, spec.site_id + ":demographics:" + std::to_string(index)));
  st.demographics.age_years = round_to(std::clamp(demo_rng.normal(65.0, 15.0), 18.0, 95.0), 0);
  st.demographics.sex = demo_rng.bernoulli(0.5) ? Sex::F : Sex::M;
  const double sex_term = st.demographics.sex == Sex::F ? 1.0 : 0.0;
  const double age_term = (st.demographics.age_years - 65.0) / 15.0;

  const int hours = static_cast<int>(std::ceil(st.duration_hours));
  std::vector<double> severity(static_cast<std::size_t>(hours) + 1);
  double dev = rng.normal() * spec.ar_sigma / std::sqrt(1.0 - spec.ar_phi * spec.ar_phi);
  const double drift = died ? spec.outcome_drift : -spec.outcome_drift;
  for (int t = 0; t <= hours; ++t) {
    if (t > 0) dev = spec.ar_phi * dev + spec.ar_sigma * rng.normal();
    severity[static_cast<std::size_t>(t)] = baseline + dev + drift * (t / st.duration_hours);
  }

  for (const auto& f : spec.features) {
    Rng frng(derive_seed(spec.seed, spec.site_id + ":stay:" + std::to_string(index) + ":" + f.def.name));
    if (f.def.kind == FeatureKind::continuous) {
      std::vector<Observation> obs;
      for (int t = 0; t < hours; ++t) {
        const double s = severity[static_cast<std::size_t>(t)];
        const double rate = f.rate_per_hour * std::exp(f.rate_severity_gain * s);
        if (rate <= 0.0) continue;
        double at = t + frng.exponential(rate);
        while (at < t + 1 && at < st.duration_hours) {
          double v = f.baseline + f.severity_slope * s + f.noise_sd * frng.normal();
          if (spec.leak_demographics) v += f.sex_effect * sex_term + f.age_effect * age_term;
          v = std::max(v, f.lower_bound) * f.unit_scale;
          const bool keep = !frng.bernoulli(f.missingness);
          if (keep) obs.push_back({round_to(at, 2), round_to(v, f.decimals)});
          at += frng.exponential(rate);
        }
      }
      std::stable_sort(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) { return a.hour < b.hour; });
      if (!obs.empty()) st.continuous.emplace(f.def.name, std::move(obs));
    } else {
      std::vector<double> ev;
      for (int t = 0; t < hours && t < st.duration_hours; ++t) {
        const double s = severity[static_cast<std::size_t>(t)];
        double p = f.max_rate * sigmoid(f.gain * (s - f.threshold));
        if (spec.leak_demographics) p = std::clamp(p + 0.5 * f.sex_effect * sex_term, 0.0, 1.0);
        const bool fired = frng.bernoulli(p);
        const bool kept = !frng.bernoulli(f.missingness);
        if (fired && kept) ev.push_back(static_cast<double>(t));
      }
      if (!ev.empty()) st.events.emplace(f.def.name, std::move(ev));
    }
  }
  return st;
}

}  // namespace

SyntheticCohort generate_synthetic_cohort(const CohortSpec& spec) {
  spec.validate();
  SyntheticCohort out{schema_of(spec), spec.label_features, groups_of(spec), {}};
  const double intercept = calibrate_intercept(spec.mortality_base_rate, spec.mortality_severity_coef);
  out.stays.reserve(static_cast<std::size_t>(spec.n_stays));
  for (int i = 0; i < spec.n_stays; ++i) out.stays.push_back(generate_stay(spec, i, intercept));
  return out;
}

SyntheticCohort generate_cohort_with_windows(const CohortSpec& spec, int target_windows) {
  if (target_windows <= 0) throw ValidationError("target_windows must be > 0");
  CohortSpec probe = spec;
  probe.n_stays = 1;
  probe.validate();
  SyntheticCohort out{schema_of(spec), spec.label_features, groups_of(spec), {}};
  const double intercept = calibrate_intercept(spec.mortality_base_rate, spec.mortality_severity_coef);
  int windows = 0;
  for (int i = 0; windows < target_windows; ++i) {
    out.stays.push_back(generate_stay(spec, i, intercept));
    windows += window_count(out.stays.back().duration_hours);
  }
  return out;
}

namespace {

FeatureSpec lab(std::string name, std::string unit, double base, double slope, double noise, double rate, int decimals,
                double lower = 0.0) {
  FeatureSpec f;
  f.def = {std::move(name), FeatureKind::continuous, std::move(unit), ""};
  f.group = FeatureGroup::lab;
  f.baseline = base;
  f.severity_slope = slope;
  f.noise_sd = noise;
  f.rate_per_hour = rate;
  f.rate_severity_gain = 0.4;
  f.decimals = decimals;
  f.lower_bound = lower;
  return f;
}

FeatureSpec vital(std::string name, std::string unit, double base, double slope, double noise, double rate,
                  int decimals, double lower = 0.0) {
  FeatureSpec f = lab(std::move(name), std::move(unit), base, slope, noise, rate, decimals, lower);
  f.group = FeatureGroup::vital;
  f.rate_severity_gain = 0.0;
  f.missingness = 0.1;
  return f;
}

FeatureSpec therapy(std::string name, double threshold, double max_rate) {
  FeatureSpec f;
  f.def = {std::move(name), FeatureKind::binary, "", ""};
  f.group = FeatureGroup::bin;
  f.threshold = threshold;
  f.max_rate = max_rate;
  f.gain = 3.0;
  return f;
}

}  // namespace

CohortSpec default_cohort_spec(std::string site_id, int n_stays, std::uint64_t seed) {
  CohortSpec spec;
  spec.site_id = std::move(site_id);
  spec.n_stays = n_stays;
  spec.seed = seed;
  spec.features = {
      lab("Lactate", "mmol/L", 1.6, 0.9, 0.35, 0.05, 1, 0.2),
      lab("Creatinine", "umol/L", 95.0, 30.0, 12.0, 0.04, 0, 20.0),
      lab("Hemoglobin", "g/L", 115.0, -9.0, 6.0, 0.04, 0, 40.0),
      lab("Potassium", "mmol/L", 4.0, 0.25, 0.3, 0.05, 1, 2.0),
      lab("Sodium", "mmol/L", 140.0, 1.5, 2.5, 0.05, 0, 110.0),
      lab("WBC", "10^9/L", 9.0, 3.0, 1.5, 0.04, 1, 0.5),
      lab("Platelets", "10^9/L", 220.0, -35.0, 25.0, 0.035, 0, 5.0),
      lab("Bilirubin", "umol/L", 12.0, 7.0, 3.0, 0.03, 0, 2.0),
      lab("INR", "", 1.15, 0.2, 0.08, 0.03, 2, 0.8),
      lab("Glucose", "mmol/L", 7.5, 1.2, 1.0, 0.06, 1, 2.0),
      vital("HeartRate", "bpm", 86.0, 11.0, 4.0, 1.0, 0, 30.0),
      vital("MeanBloodPressure", "mmHg", 80.0, -7.0, 4.0, 1.0, 0, 30.0),
      vital("RespiratoryRate", "/min", 16.0, 3.0, 2.0, 0.8, 0, 4.0),
      vital("Saturation", "%", 96.5, -1.5, 1.0, 1.0, 0, 60.0),
      vital("Temperature", "C", 37.0, 0.4, 0.2, 0.25, 1, 33.0),
      vital("FiO2", "%", 32.0, 9.0, 3.0, 0.3, 0, 21.0),
      vital("UrineOutput", "mL", 90.0, -25.0, 20.0, 0.5, 0, 0.0),
      therapy("Vasopressor", 1.0, 0.9),
      therapy("Antibiotics", 0.2, 0.5),
      therapy("Sedation", 0.6, 0.9),
      therapy("Analgesia", -0.4, 0.6),
      therapy("Anticoagulants", 0.0, 0.7),
  };
  // Demographic effects, applied only when leakage is switched on.
  for (auto& f : spec.features) {
    if (f.def.name == "Hemoglobin") {
      f.sex_effect = -25.0;
      f.age_effect = -4.0;
    } else if (f.def.name == "Creatinine") {
      f.sex_effect = -20.0;
      f.age_effect = 10.0;
    } else if (f.def.name == "Anticoagulants") {
      f.sex_effect = 0.6;
    }
  }
  for (auto& f : spec.features) {
    if (f.def.name == "FiO2") f.def.display_name = "FiO2";
  }
  spec.label_features.vasopressor = "Vasopressor";
  spec.label_features.antibiotic = "Antibiotics";
  spec.label_features.labs = {"Lactate", "Creatinine", "Hemoglobin", "Potassium", "Sodium",
                              "WBC",     "Platelets",  "Bilirubin",  "INR",       "Glucose"};
  return spec;
}

std::map<std::string, UnitChange> default_unit_changes() {
  return {
      {"Lactate", {"mg/dL", 9.01, 0}},
      {"Creatinine", {"mg/dL", 1.0 / 88.4, 2}},
      {"Hemoglobin", {"g/dL", 0.1, 1}},
      {"Bilirubin", {"mg/dL", 1.0 / 17.1, 2}},
      {"Glucose", {"mg/dL", 18.0, 0}},
      {"MeanBloodPressure", {"kPa", 0.1333, 1}},
      {"Saturation", {"fraction", 0.01, 3}},
      {"FiO2", {"fraction", 0.01, 2}},
      {"UrineOutput", {"L", 0.001, 3}},
  };
}

namespace {

const std::map<std::string, std::string>& synonyms() {
  static const std::map<std::string, std::string> table{
      {"Lactate", "LacticAcid"},       {"Creatinine", "SerumCreatinine"}, {"Hemoglobin", "Hgb"},
      {"Potassium", "SerumK"},         {"Sodium", "SerumNa"},             {"WBC", "Leukocytes"},
      {"Platelets", "PlateletCount"},  {"Bilirubin", "TotalBilirubin"},   {"INR", "ProthrombinINR"},
      {"Glucose", "BloodSugar"},       {"HeartRate", "Pulse"},            {"MeanBloodPressure", "MAP"},
      {"RespiratoryRate", "BreathRate"}, {"Saturation", "SpO2"},          {"Temperature", "CoreTemp"},
      {"FiO2", "InspiredO2"},          {"UrineOutput", "Diuresis"},       {"Vasopressor", "Norepinephrine"},
      {"Antibiotics", "AntiInfectives"}, {"Sedation", "Propofol"},        {"Analgesia", "Opioids"},
      {"Anticoagulants", "Heparin"},
  };
  return table;
}

}  // namespace

CohortSpec apply_site_shift(const CohortSpec& base, const SiteShift& shift) {
  if (shift.rename_fraction < 0.0 || shift.rename_fraction > 1.0) {
    throw ValidationError("rename_fraction must be in [0,1]");
  }
  CohortSpec out = base;
  out.site_id = shift.site_id;

  std::vector<std::size_t> order(out.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(shift.seed, "rename:" + shift.site_id));
  rng.shuffle(order);
  const auto n_rename =
      static_cast<std::size_t>(std::floor(shift.rename_fraction * static_cast<double>(order.size()) + 1e-9));

  std::map<std::string, std::string> renamed;
  for (std::size_t k = 0; k < n_rename; ++k) {
    auto& f = out.features[order[k]];
    auto it = synonyms().find(f.def.name);
    const std::string to = it != synonyms().end() ? it->second : f.def.name + "Alt";
    renamed[f.def.name] = to;
    f.def.name = to;
    f.def.display_name.clear();
  }
  for (auto& f : out.features) {
    std::string original = f.def.name;
    for (const auto& [from, to] : renamed) {
      if (to == f.def.name) original = from;
    }
    auto it = shift.rescale.find(original);
    if (it == shift.rescale.end()) continue;
    f.def.unit = it->second.unit;
    f.unit_scale *= it->second.factor;
    f.decimals = it->second.decimals;
  }
  auto rename = [&](std::string& n) {
    if (auto it = renamed.find(n); it != renamed.end()) n = it->second;
  };
  rename(out.label_features.vasopressor);
  rename(out.label_features.antibiotic);
  for (auto& l : out.label_features.labs) rename(l);
  return out;
}

}  // namespace r2v
