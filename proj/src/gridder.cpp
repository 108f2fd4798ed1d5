#include "r2v/gridder.hpp"

#include <cmath>

namespace r2v {

std::string_view to_string(ImputeMode m) {
  switch (m) {
    case ImputeMode::mean_fill:
      return "mean_fill";
    case ImputeMode::right_shift:
      return "right_shift";
    case ImputeMode::linear:
      return "linear";
  }
  return "";
}

ImputeMode impute_mode_from_string(std::string_view s) {
  if (s == "mean_fill" || s == "mean") return ImputeMode::mean_fill;
  if (s == "right_shift") return ImputeMode::right_shift;
  if (s == "linear") return ImputeMode::linear;
  throw ValidationError("unknown imputation mode '" + std::string(s) + "'");
}

GridTensor bin_to_grid(const ContinuousObs& continuous, const std::map<std::string, std::vector<double>>& events,
                       const FeatureSchema& s, double start, int hours) {
  GridTensor g(s.size(), static_cast<std::size_t>(hours));
  std::vector<int> counts(g.values.size(), 0);
  const double end = start + hours;
  for (std::size_t f = 0; f < s.size(); ++f) {
    const auto& name = s[f].name;
    if (s[f].kind == FeatureKind::continuous) {
      auto it = continuous.find(name);
      if (it == continuous.end()) continue;
      for (const auto& o : it->second) {
        if (o.hour < start || o.hour >= end) continue;
        const auto t = static_cast<std::size_t>(std::floor(o.hour - start));
        g.at(f, t) += o.value;
        ++counts[f * g.hours + t];
      }
    } else {
      auto it = events.find(name);
      if (it == events.end()) continue;
      for (double h : it->second) {
        if (h < start || h >= end) continue;
        const auto t = static_cast<std::size_t>(std::floor(h - start));
        g.at(f, t) = 1.0;
        g.mask_at(f, t) = 1;
      }
    }
  }
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    if (counts[i] > 0) {
      g.values[i] /= counts[i];
      g.mask[i] = 1;
    }
  }
  return g;
}

GridTensor to_grid(const WindowRecord& w, const FeatureSchema& s) {
  std::map<std::string, std::vector<double>> events;
  for (const auto& [name, hours] : w.binary_events) {
    auto& dst = events[name];
    dst.reserve(hours.size());
    for (int h : hours) dst.push_back(h);
  }
  return bin_to_grid(w.continuous_obs, events, s, 0.0, kWindowHours);
}

NormStats fit_norm_stats(std::span<const GridTensor> grids, const FeatureSchema& s) {
  const std::size_t d = s.size();
  NormStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), std::vector<std::uint8_t>(d, 0)};
  std::vector<double> sum(d, 0.0);
  std::vector<double> sumsq(d, 0.0);
  std::vector<std::size_t> n(d, 0);
  for (const auto& g : grids) {
    if (g.features != d) throw ValidationError("grid feature count does not match schema");
    for (std::size_t f = 0; f < d; ++f) {
      if (s[f].kind != FeatureKind::continuous) continue;
      for (std::size_t t = 0; t < g.hours; ++t) {
        if (!g.mask_at(f, t)) continue;
        sum[f] += g.at(f, t);
        ++n[f];
      }
    }
  }
  for (std::size_t f = 0; f < d; ++f) {
    if (s[f].kind == FeatureKind::binary) {
      st.is_binary[f] = 1;
      continue;
    }
    if (n[f] == 0) {
      st.mean[f] = 0.0;
      st.std[f] = kStdFloor;
      continue;
    }
    st.mean[f] = sum[f] / static_cast<double>(n[f]);
  }
  // Second pass for a numerically stable population variance.
  for (const auto& g : grids) {
    for (std::size_t f = 0; f < d; ++f) {
      if (st.is_binary[f]) continue;
      for (std::size_t t = 0; t < g.hours; ++t) {
        if (!g.mask_at(f, t)) continue;
        const double dv = g.at(f, t) - st.mean[f];
        sumsq[f] += dv * dv;
      }
    }
  }
  for (std::size_t f = 0; f < d; ++f) {
    if (st.is_binary[f] || n[f] == 0) continue;
    st.std[f] = std::max(std::sqrt(sumsq[f] / static_cast<double>(n[f])), kStdFloor);
  }
  return st;
}

NormStats fit_norm_stats(std::span<const WindowRecord> train, const FeatureSchema& s) {
  std::vector<GridTensor> grids;
  grids.reserve(train.size());
  for (const auto& w : train) grids.push_back(to_grid(w, s));
  return fit_norm_stats(std::span<const GridTensor>(grids), s);
}

GridTensor impute(const GridTensor& g, const NormStats& stats, ImputeMode mode) {
  if (stats.size() != g.features) throw ValidationError("norm stats do not match grid");
  GridTensor out = g;
  const std::size_t T = g.hours;
  for (std::size_t f = 0; f < g.features; ++f) {
    if (stats.is_binary[f]) {
      for (std::size_t t = 0; t < T; ++t) {
        if (!g.mask_at(f, t)) out.at(f, t) = 0.0;
      }
      continue;
    }
    const double fill = stats.mean[f];
    switch (mode) {
      case ImputeMode::mean_fill:
        for (std::size_t t = 0; t < T; ++t) {
          if (!g.mask_at(f, t)) out.at(f, t) = fill;
        }
        break;
      case ImputeMode::right_shift: {
        double carry = fill;
        for (std::size_t t = 0; t < T; ++t) {
          if (g.mask_at(f, t)) {
            carry = g.at(f, t);
          } else {
            out.at(f, t) = carry;
          }
        }
        break;
      }
      case ImputeMode::linear: {
        std::ptrdiff_t prev = -1;
        for (std::size_t t = 0; t <= T; ++t) {
          if (t < T && !g.mask_at(f, t)) continue;
          // Fill the gap (prev, t).
          const std::size_t lo = static_cast<std::size_t>(prev + 1);
          for (std::size_t u = lo; u < t; ++u) {
            if (prev < 0 && t == T) {
              out.at(f, u) = fill;
            } else if (prev < 0) {
              out.at(f, u) = g.at(f, t);
            } else if (t == T) {
              out.at(f, u) = g.at(f, static_cast<std::size_t>(prev));
            } else {
              const double a = g.at(f, static_cast<std::size_t>(prev));
              const double b = g.at(f, t);
              const double frac = static_cast<double>(u - static_cast<std::size_t>(prev)) /
                                  static_cast<double>(t - static_cast<std::size_t>(prev));
              out.at(f, u) = a + (b - a) * frac;
            }
          }
          prev = static_cast<std::ptrdiff_t>(t);
        }
        break;
      }
    }
  }
  std::fill(out.mask.begin(), out.mask.end(), std::uint8_t{1});
  return out;
}

GridTensor apply_norm(const GridTensor& g, const NormStats& stats) {
  if (stats.size() != g.features) throw ValidationError("norm stats do not match grid");
  GridTensor out = g;
  for (std::size_t f = 0; f < g.features; ++f) {
    for (std::size_t t = 0; t < g.hours; ++t) out.at(f, t) = (g.at(f, t) - stats.mean[f]) / stats.std[f];
  }
  return out;
}

GridTensor denorm(const GridTensor& g, const NormStats& stats) {
  if (stats.size() != g.features) throw ValidationError("norm stats do not match grid");
  GridTensor out = g;
  for (std::size_t f = 0; f < g.features; ++f) {
    for (std::size_t t = 0; t < g.hours; ++t) out.at(f, t) = g.at(f, t) * stats.std[f] + stats.mean[f];
  }
  return out;
}

std::vector<double> grid_features(const WindowRecord& w, const FeatureSchema& s, const NormStats& stats,
                                  ImputeMode mode) {
  return apply_norm(impute(to_grid(w, s), stats, mode), stats).values;
}

}  // namespace r2v
