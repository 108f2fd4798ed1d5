#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "r2v/core.hpp"
#include "r2v/learn.hpp"

namespace r2v {

/// Mann-Whitney statistic with ties half-credited. Throws unless both classes
/// are present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Average precision: sum over distinct thresholds (descending) of
/// (R_k - R_{k-1}) * P_k. Throws without positives.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Micro-averaged over every (sample, label) cell; 0/0 is reported as 0.
PRF micro_prf(const std::vector<std::vector<std::uint8_t>>& preds, const std::vector<std::vector<std::uint8_t>>& labels);

double mae(std::span<const double> preds, std::span<const double> targets);

/// Mean squared error over cells with mask != 0. Masked-out target cells are
/// never read.
double masked_mse(std::span<const double> preds, std::span<const double> targets, std::span<const std::uint8_t> mask);

inline constexpr double kDecisionThreshold = 0.5;

/// Rank 1 is best under the column's direction; ties share the minimum rank.
/// Methods with no value in the column are left out.
std::map<std::string, int> rank_methods(const MetricTable& table, std::string_view cohort_pair, std::string_view task);

/// A method wins a column when its value ties the column best. When several
/// values tie and the source marks some of them as best, only the marked ones
/// win. Every method appears in the result. Throws on a missing cell.
std::map<std::string, int> count_wins(const MetricTable& table);

/// Relative change in percent, signed so that improvement is positive.
double task_aligned_delta(double method_value, double baseline_value, Direction direction);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

enum class ProbeTarget { age, sex };

std::string_view to_string(ProbeTarget t);

struct ProbeCfg {
  double train_fraction = 0.7;
  double age_min = 18.0;
  double age_max = 90.0;
  TrainCfg train{.batch_size = 64, .lr = 1e-2, .weight_decay = 0.01, .max_epochs = 100, .patience = 10};
};

struct ProbeResult {
  ProbeTarget target = ProbeTarget::sex;
  std::string metric;  // "auroc" or "mae"
  double value = 0.0;
  std::uint64_t seed = 0;
  // Age only: held-out MAE of the training median, and probe MAE in years.
  double constant_mae = 0.0;
  double raw_mae_years = 0.0;
};

/// Fits a linear (age, MAE loss on standardized clipped ages) or logistic
/// (sex) probe on a seeded split and scores the held-out part.
ProbeResult privacy_probe(const Eigen::MatrixXd& embeddings, const std::vector<Demographics>& demographics,
                          ProbeTarget target, std::uint64_t seed, const ProbeCfg& cfg = {});

}  // namespace r2v
