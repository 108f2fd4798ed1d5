#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "r2v/core.hpp"

namespace r2v {

enum class Task { forecast, los, mortality, drug, labs, age, sex };

std::string_view to_string(Task t);
Task task_from_string(std::string_view s);

enum class LossKind { masked_mse, mae, bce };

/// forecast -> masked MSE; los/age -> MAE; mortality/sex/drug/labs -> sigmoid
/// cross-entropy.
LossKind loss_for(Task t);
Direction direction_for(Task t);

enum class HeadKind { linear, mlp };

std::string_view to_string(HeadKind k);
HeadKind head_kind_from_string(std::string_view s);

/// Layer parameters, output layer last. Weights are (out x in).
struct Params {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  Params zeros_like() const;
  std::size_t count() const;
  bool all_finite() const;
  bool operator==(const Params& o) const;
};

struct Head {
  HeadKind kind = HeadKind::linear;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<std::size_t> hidden;
  Params params;
};

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization. A linear
/// head ignores `hidden`.
Head make_head(HeadKind kind, std::size_t in_dim, std::size_t out_dim, std::vector<std::size_t> hidden,
               std::uint64_t seed);

/// Rows are samples. ReLU on hidden layers, raw outputs (logits for
/// classification tasks). Throws on input dim mismatch.
Eigen::MatrixXd forward(const Head& head, const Eigen::MatrixXd& x);
std::vector<double> forward(const Head& head, const std::vector<double>& x);

/// Supervised batch. An empty mask means every target cell counts.
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::MatrixXd y;
  Eigen::MatrixXd mask;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  Dataset rows(const std::vector<std::size_t>& idx) const;
};

struct LossGrad {
  double loss = 0.0;
  Params grads;
};

/// Mask-weighted mean loss over target cells with exact gradients. Masked-out
/// cells are skipped entirely. Throws if no cell is masked in.
LossGrad loss_and_grad(const Head& head, const Dataset& batch, LossKind kind);
double loss_only(const Head& head, const Dataset& batch, LossKind kind);

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  Params m;
  Params v;
  long step = 0;

  static OptimState for_params(const Params& p);
};

/// theta <- theta - lr*mult*(m_hat / (sqrt(v_hat) + eps) + wd*theta).
/// Throws on non-finite gradients.
void adamw_step(Params& params, const Params& grads, OptimState& state, const AdamWConfig& cfg,
                double lr_multiplier = 1.0);

inline constexpr double kMinLrRatio = 0.10;

struct ScheduleCfg {
  long total_steps = 0;
  long warmup_steps = 0;
  double min_ratio = kMinLrRatio;
};

/// Warmup of max(10, floor(0.03 * total)) steps.
ScheduleCfg make_schedule(long total_steps, double min_ratio = kMinLrRatio);

/// (t+1)/S_w during warmup, then cosine decay from 1 to min_ratio at t = S.
double lr_lambda(long t, const ScheduleCfg& cfg);

struct TrainCfg {
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.01;
  int max_epochs = 60;
  int patience = 10;
  std::uint64_t seed = 42;
  bool warmup_cosine = true;
};

struct HistoryEntry {
  long step = 0;
  double lr_multiplier = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Head head;  // best validation checkpoint
  std::vector<HistoryEntry> history;
  int best_epoch = 0;
};

/// Minibatch AdamW with per-epoch seeded shuffling and early stopping on
/// validation loss.
TrainResult train(Head head, const Dataset& train_set, const Dataset& val_set, LossKind kind, const TrainCfg& cfg);

inline constexpr double kFewShotBaseLr = 1e-6;
inline constexpr std::size_t kFewShotRefBatch = 16;
inline constexpr long kFewShotSteps = 100 * 16;

struct FewShotCfg {
  double base_lr = kFewShotBaseLr;
  std::size_t ref_batch = kFewShotRefBatch;
  long total_steps = kFewShotSteps;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
};

/// base_lr * batch / ref_batch.
double scaled_lr(double base_lr, std::size_t batch, std::size_t ref_batch);

/// Samples k target rows, then runs total_steps full-batch AdamW updates on
/// every head parameter under the warmup-cosine schedule.
Head fewshot_finetune(const Head& head, const Dataset& target, std::size_t k, LossKind kind, const FewShotCfg& cfg);

/// Binary checkpoint: "R2VH", u16 version, u8 kind, u32 in, u32 out,
/// u32 n_hidden, u32 widths..., then per layer W (row-major) and b as
/// little-endian f32.
void save_head(const std::filesystem::path& path, const Head& head);
Head load_head(const std::filesystem::path& path);

}  // namespace r2v
