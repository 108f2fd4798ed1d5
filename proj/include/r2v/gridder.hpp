#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "r2v/core.hpp"

namespace r2v {

inline constexpr double kStdFloor = 1e-6;

/// Per-feature training statistics over observed hourly cells. Binary rows
/// carry mean 0 / std 1 so normalization leaves them untouched.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<std::uint8_t> is_binary;

  std::size_t size() const noexcept { return mean.size(); }
  bool operator==(const NormStats&) const = default;
};

enum class ImputeMode { mean_fill, right_shift, linear };

std::string_view to_string(ImputeMode m);
ImputeMode impute_mode_from_string(std::string_view s);

/// Bins observations with stay-relative hours in [start, start + hours) into
/// an hourly grid: continuous cells hold the within-hour mean, binary cells
/// hold 1 at event hours.
GridTensor bin_to_grid(const ContinuousObs& continuous, const std::map<std::string, std::vector<double>>& events,
                       const FeatureSchema& s, double start, int hours);

/// D x 48 grid of a window.
GridTensor to_grid(const WindowRecord& w, const FeatureSchema& s);

NormStats fit_norm_stats(std::span<const WindowRecord> train, const FeatureSchema& s);
NormStats fit_norm_stats(std::span<const GridTensor> train_grids, const FeatureSchema& s);

/// Fills every unobserved cell; observed cells are never altered and the
/// returned mask is all ones. Unobserved binary cells mean "no event" and
/// become 0 in every mode.
GridTensor impute(const GridTensor& g, const NormStats& stats, ImputeMode mode);

/// (value - mean) / std on every cell, masked or not.
GridTensor apply_norm(const GridTensor& g, const NormStats& stats);
GridTensor denorm(const GridTensor& g, const NormStats& stats);

/// to_grid -> impute -> apply_norm, flattened row-major.
std::vector<double> grid_features(const WindowRecord& w, const FeatureSchema& s, const NormStats& stats,
                                  ImputeMode mode);

}  // namespace r2v
