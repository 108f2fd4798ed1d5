#include "r2v/learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "r2v/io.hpp"
#include "r2v/util.hpp"

namespace r2v {

namespace {

constexpr std::string_view kHeadMagic = "R2VH";
constexpr std::uint16_t kHeadVersion = 1;

constexpr std::array<std::string_view, 7> kTaskNames{"forecast", "los", "mortality", "drug", "labs", "age", "sex"};

}  // namespace

std::string_view to_string(Task t) { return kTaskNames[static_cast<std::size_t>(t)]; }

Task task_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i) {
    if (kTaskNames[i] == s) return static_cast<Task>(i);
  }
  throw ValidationError("unknown task '" + std::string(s) + "'");
}

LossKind loss_for(Task t) {
  switch (t) {
    case Task::forecast:
      return LossKind::masked_mse;
    case Task::los:
    case Task::age:
      return LossKind::mae;
    default:
      return LossKind::bce;
  }
}

Direction direction_for(Task t) {
  switch (t) {
    case Task::forecast:
    case Task::los:
    case Task::age:
      return Direction::lower_better;
    default:
      return Direction::higher_better;
  }
}

std::string_view to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "mlp"; }

HeadKind head_kind_from_string(std::string_view s) {
  if (s == "linear") return HeadKind::linear;
  if (s == "mlp") return HeadKind::mlp;
  throw ValidationError("unknown head kind '" + std::string(s) + "'");
}

Params Params::zeros_like() const {
  Params z;
  for (const auto& w : weights) z.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : biases) z.biases.push_back(Eigen::VectorXd::Zero(b.size()));
  return z;
}

std::size_t Params::count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
  return n;
}

bool Params::all_finite() const {
  for (const auto& w : weights) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases) {
    if (!b.allFinite()) return false;
  }
  return true;
}

bool Params::operator==(const Params& o) const {
  if (weights.size() != o.weights.size() || biases.size() != o.biases.size()) return false;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].rows() != o.weights[i].rows() || weights[i].cols() != o.weights[i].cols()) return false;
    if (weights[i] != o.weights[i]) return false;
  }
  for (std::size_t i = 0; i < biases.size(); ++i) {
    if (biases[i].size() != o.biases[i].size() || biases[i] != o.biases[i]) return false;
  }
  return true;
}

Head make_head(HeadKind kind, std::size_t in_dim, std::size_t out_dim, std::vector<std::size_t> hidden,
               std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) throw ValidationError("head dims must be > 0");
  Head h;
  h.kind = kind;
  h.in_dim = in_dim;
  h.out_dim = out_dim;
  if (kind == HeadKind::mlp) {
    if (hidden.empty()) throw ValidationError("mlp head needs at least one hidden layer");
    for (auto w : hidden) {
      if (w == 0) throw ValidationError("hidden width must be > 0");
    }
    h.hidden = std::move(hidden);
  }
  Rng rng(seed);
  std::size_t fan_in = in_dim;
  auto add_layer = [&](std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    }
    Eigen::VectorXd b(out);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = rng.uniform(-bound, bound);
    h.params.weights.push_back(std::move(w));
    h.params.biases.push_back(std::move(b));
    fan_in = out;
  };
  for (auto w : h.hidden) add_layer(w);
  add_layer(out_dim);
  return h;
}

namespace {

void check_input(const Head& head, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != head.in_dim) {
    throw ValidationError("input dim " + std::to_string(x.cols()) + " does not match head dim " +
                          std::to_string(head.in_dim));
  }
}

// Post-activation outputs of every layer; acts[0] is the input.
std::vector<Eigen::MatrixXd> forward_all(const Head& head, const Eigen::MatrixXd& x) {
  check_input(head, x);
  std::vector<Eigen::MatrixXd> acts;
  acts.push_back(x);
  const std::size_t n_layers = head.params.weights.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = acts.back() * head.params.weights[l].transpose();
    z.rowwise() += head.params.biases[l].transpose();
    if (l + 1 < n_layers) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  return acts;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

Eigen::MatrixXd effective_mask(const Dataset& batch) {
  if (batch.mask.size() == 0) return Eigen::MatrixXd::Ones(batch.y.rows(), batch.y.cols());
  if (batch.mask.rows() != batch.y.rows() || batch.mask.cols() != batch.y.cols()) {
    throw ValidationError("mask shape does not match targets");
  }
  return batch.mask;
}

void check_batch(const Head& head, const Dataset& batch) {
  if (batch.size() == 0) throw ValidationError("empty batch");
  if (batch.y.rows() != batch.x.rows()) throw ValidationError("x and y row counts differ");
  if (static_cast<std::size_t>(batch.y.cols()) != head.out_dim) {
    throw ValidationError("target dim " + std::to_string(batch.y.cols()) + " does not match head output " +
                          std::to_string(head.out_dim));
  }
}

// Loss and dL/dz over the output logits.
double output_loss(const Eigen::MatrixXd& z, const Dataset& batch, LossKind kind, Eigen::MatrixXd* dz) {
  const Eigen::MatrixXd m = effective_mask(batch);
  const double denom = m.sum();
  if (!(denom > 0.0)) throw ValidationError("no target cell is masked in");
  if (dz) dz->setZero(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double w = m(i, j);
      if (w == 0.0) continue;
      const double zi = z(i, j);
      const double yi = batch.y(i, j);
      double l = 0.0;
      double g = 0.0;
      switch (kind) {
        case LossKind::masked_mse:
          l = (zi - yi) * (zi - yi);
          g = 2.0 * (zi - yi);
          break;
        case LossKind::mae:
          l = std::abs(zi - yi);
          g = zi > yi ? 1.0 : (zi < yi ? -1.0 : 0.0);
          break;
        case LossKind::bce:
          l = softplus(zi) - yi * zi;
          g = sigmoid(zi) - yi;
          break;
      }
      total += w * l;
      if (dz) (*dz)(i, j) = w * g / denom;
    }
  }
  return total / denom;
}

}  // namespace

Eigen::MatrixXd forward(const Head& head, const Eigen::MatrixXd& x) { return forward_all(head, x).back(); }

std::vector<double> forward(const Head& head, const std::vector<double>& x) {
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
  const Eigen::MatrixXd out = forward(head, row);
  return {out.data(), out.data() + out.size()};
}

Dataset Dataset::rows(const std::vector<std::size_t>& idx) const {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(idx.size());
  d.x.resize(n, x.cols());
  d.y.resize(n, y.cols());
  if (mask.size() != 0) d.mask.resize(n, mask.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto src = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)]);
    if (src >= x.rows()) throw ValidationError("row index out of range");
    d.x.row(r) = x.row(src);
    d.y.row(r) = y.row(src);
    if (mask.size() != 0) d.mask.row(r) = mask.row(src);
  }
  return d;
}

LossGrad loss_and_grad(const Head& head, const Dataset& batch, LossKind kind) {
  check_batch(head, batch);
  const auto acts = forward_all(head, batch.x);
  Eigen::MatrixXd dz;
  LossGrad out;
  out.loss = output_loss(acts.back(), batch, kind, &dz);
  out.grads = head.params.zeros_like();
  for (std::size_t l = head.params.weights.size(); l-- > 0;) {
    out.grads.weights[l] = dz.transpose() * acts[l];
    out.grads.biases[l] = dz.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd da = dz * head.params.weights[l];
    // acts[l] is a ReLU output; its gradient passes only where it is positive.
    dz = (acts[l].array() > 0.0).select(da, 0.0);
  }
  return out;
}

double loss_only(const Head& head, const Dataset& batch, LossKind kind) {
  check_batch(head, batch);
  return output_loss(forward(head, batch.x), batch, kind, nullptr);
}

OptimState OptimState::for_params(const Params& p) { return {p.zeros_like(), p.zeros_like(), 0}; }

void adamw_step(Params& params, const Params& grads, OptimState& state, const AdamWConfig& cfg, double lr_multiplier) {
  if (grads.weights.size() != params.weights.size() || grads.biases.size() != params.biases.size()) {
    throw ValidationError("gradient structure does not match parameters");
  }
  if (!grads.all_finite()) throw Error("non-finite gradient");
  if (state.m.weights.empty() && !params.weights.empty()) state = OptimState::for_params(params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double lr = cfg.lr * lr_multiplier;

  auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
    if (theta.rows() != g.rows() || theta.cols() != g.cols()) throw ValidationError("gradient shape mismatch");
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const auto m_hat = (m / c1).array();
    const auto v_hat = (v / c2).array();
    theta.array() -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta.array());
  };
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    update(params.weights[i], grads.weights[i], state.m.weights[i], state.v.weights[i]);
  }
  for (std::size_t i = 0; i < params.biases.size(); ++i) {
    update(params.biases[i], grads.biases[i], state.m.biases[i], state.v.biases[i]);
  }
}

ScheduleCfg make_schedule(long total_steps, double min_ratio) {
  if (total_steps <= 0) throw ValidationError("schedule needs a positive step count");
  const long warmup = std::max<long>(10, static_cast<long>(std::floor(0.03 * static_cast<double>(total_steps))));
  if (warmup >= total_steps) throw ValidationError("schedule too short for its warmup");
  return {total_steps, warmup, min_ratio};
}

double lr_lambda(long t, const ScheduleCfg& cfg) {
  if (t < 0 || t > cfg.total_steps) {
    throw ValidationError("step " + std::to_string(t) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  const auto sw = static_cast<double>(cfg.warmup_steps);
  if (t < cfg.warmup_steps) return static_cast<double>(t + 1) / sw;
  const double frac = (static_cast<double>(t) - sw) / (static_cast<double>(cfg.total_steps) - sw);
  return cfg.min_ratio + (1.0 - cfg.min_ratio) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

TrainResult train(Head head, const Dataset& train_set, const Dataset& val_set, LossKind kind, const TrainCfg& cfg) {
  if (train_set.size() == 0 || val_set.size() == 0) throw ValidationError("train and val sets must be non-empty");
  if (cfg.batch_size == 0 || cfg.max_epochs <= 0) throw ValidationError("batch size and epochs must be positive");
  const std::size_t n = train_set.size();
  const long steps_per_epoch = static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
  const long total = steps_per_epoch * cfg.max_epochs;
  std::optional<ScheduleCfg> sched;
  if (cfg.warmup_cosine && total > 10) sched = make_schedule(total);

  AdamWConfig opt{cfg.lr, cfg.weight_decay};
  OptimState state = OptimState::for_params(head.params);
  Rng rng(derive_seed(cfg.seed, "train:shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.head = head;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    double mult = 1.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const Dataset batch = train_set.rows({order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(stop)});
      // A batch whose cells are all masked out carries no signal.
      if (batch.mask.size() != 0 && batch.mask.sum() == 0.0) {
        ++step;
        continue;
      }
      auto lg = loss_and_grad(head, batch, kind);
      if (!std::isfinite(lg.loss)) throw Error("training diverged: non-finite loss");
      mult = sched ? lr_lambda(std::min(step, sched->total_steps), *sched) : 1.0;
      adamw_step(head.params, lg.grads, state, opt, mult);
      loss_sum += lg.loss * static_cast<double>(stop - start);
      ++step;
    }
    const double val = loss_only(head, val_set, kind);
    result.history.push_back({step, mult, loss_sum / static_cast<double>(n), val});
    if (val < best_val) {
      best_val = val;
      result.head = head;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

double scaled_lr(double base_lr, std::size_t batch, std::size_t ref_batch) {
  if (ref_batch == 0) throw ValidationError("reference batch must be > 0");
  return base_lr * static_cast<double>(batch) / static_cast<double>(ref_batch);
}

Head fewshot_finetune(const Head& head, const Dataset& target, std::size_t k, LossKind kind, const FewShotCfg& cfg) {
  if (k == 0) return head;
  if (k > target.size()) {
    throw ValidationError("few-shot k=" + std::to_string(k) + " exceeds " + std::to_string(target.size()) +
                          " target examples");
  }
  std::vector<std::size_t> idx(target.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(cfg.seed, "fewshot:sample"));
  rng.shuffle(idx);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  const Dataset shots = target.rows(idx);

  const auto sched = make_schedule(cfg.total_steps);
  AdamWConfig opt{scaled_lr(cfg.base_lr, k, cfg.ref_batch), cfg.weight_decay};
  Head out = head;
  OptimState state = OptimState::for_params(out.params);
  for (long t = 0; t < cfg.total_steps; ++t) {
    auto lg = loss_and_grad(out, shots, kind);
    adamw_step(out.params, lg.grads, state, opt, lr_lambda(t, sched));
  }
  return out;
}

void save_head(const std::filesystem::path& path, const Head& head) {
  BinaryWriter w(path);
  w.bytes(kHeadMagic);
  w.u16(kHeadVersion);
  w.u8(head.kind == HeadKind::linear ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(head.in_dim));
  w.u32(static_cast<std::uint32_t>(head.out_dim));
  w.u32(static_cast<std::uint32_t>(head.hidden.size()));
  for (auto h : head.hidden) w.u32(static_cast<std::uint32_t>(h));
  for (std::size_t l = 0; l < head.params.weights.size(); ++l) {
    const auto& W = head.params.weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) w.f32(static_cast<float>(W(r, c)));
    }
    for (Eigen::Index r = 0; r < head.params.biases[l].size(); ++r) w.f32(static_cast<float>(head.params.biases[l](r)));
  }
  w.close();
}

Head load_head(const std::filesystem::path& path) {
  BinaryReader r(path);
  if (r.bytes(4) != kHeadMagic) throw ValidationError(path.string() + ": not a head checkpoint");
  if (const auto v = r.u16(); v != kHeadVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  const auto kind_byte = r.u8();
  if (kind_byte > 1) throw ValidationError(path.string() + ": unknown head kind");
  Head h;
  h.kind = kind_byte == 0 ? HeadKind::linear : HeadKind::mlp;
  h.in_dim = r.u32();
  h.out_dim = r.u32();
  const auto n_hidden = r.u32();
  if (h.kind == HeadKind::linear && n_hidden != 0) throw ValidationError(path.string() + ": linear head with hidden layers");
  for (std::uint32_t i = 0; i < n_hidden; ++i) h.hidden.push_back(r.u32());
  std::size_t fan_in = h.in_dim;
  auto read_layer = [&](std::size_t out) {
    Eigen::MatrixXd W(out, fan_in);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = r.f32();
    }
    Eigen::VectorXd b(out);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = r.f32();
    h.params.weights.push_back(std::move(W));
    h.params.biases.push_back(std::move(b));
    fan_in = out;
  };
  for (auto w : h.hidden) read_layer(w);
  read_layer(h.out_dim);
  if (!r.at_end()) throw ValidationError(path.string() + ": trailing bytes in checkpoint");
  return h;
}

}  // namespace r2v
