#pragma once

// Slow, obviously-correct references for the metric and imputation code.
// Written independently of src/ and shared by unit tests and the acceptance
// binary.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <vector>

#include "r2v/core.hpp"
#include "r2v/gridder.hpp"

namespace oracle {

// Counts every (positive, negative) pair.
inline double auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Step-wise average precision. Each distinct score is tried as a threshold
// "predict positive iff score >= thr", scanning thresholds from high to low.
inline double auprc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double npos = 0.0;
  for (auto v : y) npos += v;
  double prev_recall = 0.0;
  double area = 0.0;
  for (double thr : thresholds) {
    double tp = 0.0;
    double fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= thr) {
        if (y[i]) tp += 1.0;
        else fp += 1.0;
      }
    }
    const double recall = tp / npos;
    const double precision = tp / (tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

struct Prf {
  double p, r, f;
};

inline Prf micro_prf(const std::vector<std::vector<std::uint8_t>>& pred,
                     const std::vector<std::vector<std::uint8_t>>& lab) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < pred[i].size(); ++j) {
      if (pred[i][j] && lab[i][j]) tp += 1;
      if (pred[i][j] && !lab[i][j]) fp += 1;
      if (!pred[i][j] && lab[i][j]) fn += 1;
    }
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  return {p, r, f};
}

// Cell-by-cell imputation: every missing cell looks left and right for its
// nearest observed neighbours on its own.
inline r2v::GridTensor impute(const r2v::GridTensor& g, const r2v::NormStats& st, r2v::ImputeMode mode) {
  r2v::GridTensor out = g;
  const long T = static_cast<long>(g.hours);
  for (std::size_t f = 0; f < g.features; ++f) {
    for (long t = 0; t < T; ++t) {
      const auto tu = static_cast<std::size_t>(t);
      out.mask_at(f, tu) = 1;
      if (g.mask_at(f, tu)) continue;
      if (st.is_binary[f]) {
        out.at(f, tu) = 0.0;
        continue;
      }
      long left = -1;
      for (long u = t - 1; u >= 0; --u) {
        if (g.mask_at(f, static_cast<std::size_t>(u))) {
          left = u;
          break;
        }
      }
      long right = -1;
      for (long u = t + 1; u < T; ++u) {
        if (g.mask_at(f, static_cast<std::size_t>(u))) {
          right = u;
          break;
        }
      }
      const double mean = st.mean[f];
      double v = mean;
      switch (mode) {
        case r2v::ImputeMode::mean_fill:
          v = mean;
          break;
        case r2v::ImputeMode::right_shift:
          v = left >= 0 ? g.at(f, static_cast<std::size_t>(left)) : mean;
          break;
        case r2v::ImputeMode::linear:
          if (left < 0 && right < 0) {
            v = mean;
          } else if (left < 0) {
            v = g.at(f, static_cast<std::size_t>(right));
          } else if (right < 0) {
            v = g.at(f, static_cast<std::size_t>(left));
          } else {
            const double a = g.at(f, static_cast<std::size_t>(left));
            const double b = g.at(f, static_cast<std::size_t>(right));
            const double w = static_cast<double>(t - left) / static_cast<double>(right - left);
            v = a * (1.0 - w) + b * w;
          }
          break;
      }
      out.at(f, tu) = v;
    }
  }
  return out;
}

}  // namespace oracle
