#include "r2v/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "r2v/util.hpp"

namespace r2v {

namespace {

void check_binary_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("non-finite score");
  }
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_binary_inputs(scores, labels);
  const auto idx = descending(scores);
  double n_pos = 0.0;
  double n_neg = 0.0;
  for (auto l : labels) (l ? n_pos : n_neg) += 1.0;
  if (n_pos == 0.0 || n_neg == 0.0) throw ValidationError("auroc needs both classes");

  // Walk tie groups from the top; each positive beats every negative below
  // its group and splits credit with negatives inside it.
  double wins = 0.0;
  double neg_above = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double pos = 0.0;
    double neg = 0.0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? pos : neg) += 1.0;
      ++j;
    }
    wins += pos * (n_neg - neg_above - neg) + 0.5 * pos * neg;
    neg_above += neg;
    i = j;
  }
  return wins / (n_pos * n_neg);
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_binary_inputs(scores, labels);
  const auto idx = descending(scores);
  double n_pos = 0.0;
  for (auto l : labels) n_pos += l ? 1.0 : 0.0;
  if (n_pos == 0.0) throw ValidationError("auprc needs at least one positive");

  double tp = 0.0;
  double seen = 0.0;
  double prev_recall = 0.0;
  double area = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += labels[idx[j]] ? 1.0 : 0.0;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return area;
}

PRF micro_prf(const std::vector<std::vector<std::uint8_t>>& preds,
              const std::vector<std::vector<std::uint8_t>>& labels) {
  if (preds.size() != labels.size()) throw ValidationError("preds and labels differ in sample count");
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != labels[i].size()) throw ValidationError("preds and labels differ in label count");
    for (std::size_t j = 0; j < preds[i].size(); ++j) {
      const bool p = preds[i][j] != 0;
      const bool l = labels[i][j] != 0;
      if (p && l) tp += 1.0;
      if (p && !l) fp += 1.0;
      if (!p && l) fn += 1.0;
    }
  }
  PRF r;
  r.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  r.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

double mae(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw ValidationError("preds and targets differ in length");
  if (preds.empty()) throw ValidationError("mae of zero values");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - targets[i]);
  return s / static_cast<double>(preds.size());
}

double masked_mse(std::span<const double> preds, std::span<const double> targets, std::span<const std::uint8_t> mask) {
  if (preds.size() != targets.size() || preds.size() != mask.size()) {
    throw ValidationError("preds, targets and mask differ in length");
  }
  double s = 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!mask[i]) continue;
    const double d = preds[i] - targets[i];
    s += d * d;
    n += 1.0;
  }
  if (n == 0.0) throw ValidationError("masked_mse with an empty mask");
  return s / n;
}

namespace {

Direction column_direction(const MetricTable& table, std::string_view task) {
  auto it = table.directions.find(std::string(task));
  if (it == table.directions.end()) throw ValidationError("no direction for task '" + std::string(task) + "'");
  return it->second;
}

bool better(double a, double b, Direction d) { return d == Direction::lower_better ? a < b : a > b; }

}  // namespace

std::map<std::string, int> rank_methods(const MetricTable& table, std::string_view cohort_pair, std::string_view task) {
  const Direction dir = column_direction(table, task);
  std::map<std::string, double> values;
  for (const auto& r : table.rows) {
    if (r.cohort_pair != cohort_pair || r.task != task || !r.value) continue;
    if (!values.emplace(r.method, *r.value).second) {
      throw ValidationError("duplicate value for " + r.method + " in " + std::string(cohort_pair) + "/" +
                            std::string(task));
    }
  }
  if (values.empty()) throw ValidationError("no values in column " + std::string(cohort_pair) + "/" + std::string(task));
  std::map<std::string, int> ranks;
  for (const auto& [m, v] : values) {
    int strictly_better = 0;
    for (const auto& [other, w] : values) strictly_better += better(w, v, dir) ? 1 : 0;
    ranks[m] = strictly_better + 1;
  }
  return ranks;
}

std::map<std::string, int> count_wins(const MetricTable& table) {
  table.check_directions();
  const auto methods = table.methods();
  std::map<std::string, int> wins;
  for (const auto& m : methods) wins[m] = 0;

  for (const auto& [pair, task] : table.columns()) {
    const Direction dir = column_direction(table, task);
    std::map<std::string, const MetricRow*> cells;
    for (const auto& r : table.rows) {
      if (r.cohort_pair != pair || r.task != task) continue;
      if (!cells.emplace(r.method, &r).second) {
        throw ValidationError("duplicate cell for " + r.method + " in " + pair + "/" + task);
      }
    }
    for (const auto& m : methods) {
      if (!cells.count(m)) throw ValidationError("missing cell for " + m + " in " + pair + "/" + task);
    }
    std::optional<double> best;
    for (const auto& [m, row] : cells) {
      if (row->value && (!best || better(*row->value, *best, dir))) best = row->value;
    }
    if (!best) continue;
    std::vector<const MetricRow*> tied;
    for (const auto& [m, row] : cells) {
      if (row->value && *row->value == *best) tied.push_back(row);
    }
    const bool any_marked = std::any_of(tied.begin(), tied.end(), [](const MetricRow* r) { return r->marked_best; });
    for (const auto* row : tied) {
      if (!any_marked || row->marked_best) ++wins[row->method];
    }
  }
  return wins;
}

double task_aligned_delta(double method_value, double baseline_value, Direction direction) {
  if (baseline_value == 0.0) throw ValidationError("relative change against a zero baseline");
  const double diff =
      direction == Direction::lower_better ? baseline_value - method_value : method_value - baseline_value;
  return diff / baseline_value * 100.0;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean of zero values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

std::string_view to_string(ProbeTarget t) { return t == ProbeTarget::age ? "age" : "sex"; }

ProbeResult privacy_probe(const Eigen::MatrixXd& embeddings, const std::vector<Demographics>& demographics,
                          ProbeTarget target, std::uint64_t seed, const ProbeCfg& cfg) {
  const std::size_t n = demographics.size();
  if (static_cast<std::size_t>(embeddings.rows()) != n) throw ValidationError("embeddings and demographics differ in rows");
  if (n < 10) throw ValidationError("privacy probe needs at least 10 samples");

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = target == ProbeTarget::sex ? (demographics[i].sex == Sex::F ? 1.0 : 0.0)
                                      : std::clamp(demographics[i].age_years, cfg.age_min, cfg.age_max);
  }

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, std::string("probe:") + std::string(to_string(target))));
  rng.shuffle(idx);
  const auto n_fit = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n)));
  const std::size_t n_val = std::max<std::size_t>(1, n_fit / 7);
  if (n_fit <= n_val || n_fit >= n) throw ValidationError("privacy probe split leaves an empty part");
  const std::vector<std::size_t> fit_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_fit));
  const std::vector<std::size_t> test_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_fit), idx.end());

  double mu = 0.0;
  double sd = 1.0;
  if (target == ProbeTarget::age) {
    std::vector<double> fit_y;
    for (auto i : fit_idx) fit_y.push_back(y[i]);
    const auto ms = mean_std(fit_y);
    if (!(ms.std > 0.0)) throw ValidationError("age probe target is constant");
    mu = ms.mean;
    sd = ms.std;
  } else {
    std::set<double> classes;
    for (auto i : fit_idx) classes.insert(y[i]);
    for (auto i : test_idx) classes.insert(y[i]);
    if (classes.size() < 2) throw ValidationError("sex probe needs both classes");
  }

  Dataset all;
  all.x = embeddings;
  all.y.resize(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) all.y(static_cast<Eigen::Index>(i), 0) = (y[i] - mu) / sd;

  const std::vector<std::size_t> val_idx(fit_idx.begin(), fit_idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> tr_idx(fit_idx.begin() + static_cast<std::ptrdiff_t>(n_val), fit_idx.end());
  const Task task = target == ProbeTarget::age ? Task::age : Task::sex;
  TrainCfg tc = cfg.train;
  tc.seed = derive_seed(seed, "probe:train");
  Head head = make_head(HeadKind::linear, static_cast<std::size_t>(embeddings.cols()), 1, {}, derive_seed(seed, "probe:init"));
  head = train(std::move(head), all.rows(tr_idx), all.rows(val_idx), loss_for(task), tc).head;

  const Dataset test = all.rows(test_idx);
  const Eigen::MatrixXd out = forward(head, test.x);
  ProbeResult r;
  r.target = target;
  r.seed = seed;
  std::vector<double> scores(out.data(), out.data() + out.rows());
  if (target == ProbeTarget::sex) {
    std::vector<std::uint8_t> labels;
    for (Eigen::Index i = 0; i < test.y.rows(); ++i) labels.push_back(test.y(i, 0) > 0.5 ? 1 : 0);
    r.metric = "auroc";
    r.value = auroc(scores, labels);
  } else {
    std::vector<double> targets(test.y.data(), test.y.data() + test.y.rows());
    std::vector<double> fit_std;
    for (auto i : fit_idx) fit_std.push_back(all.y(static_cast<Eigen::Index>(i), 0));
    std::nth_element(fit_std.begin(), fit_std.begin() + static_cast<std::ptrdiff_t>(fit_std.size() / 2), fit_std.end());
    const double median = fit_std[fit_std.size() / 2];
    r.metric = "mae";
    r.value = mae(scores, targets);
    r.constant_mae = mae(std::vector<double>(targets.size(), median), targets);
    r.raw_mae_years = r.value * sd;
  }
  return r;
}

}  // namespace r2v
