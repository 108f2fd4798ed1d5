#pragma once

// Central finite-difference check of loss_and_grad, shared by the unit tests
// and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <string>

#include "r2v/learn.hpp"
#include "r2v/util.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-5;
// Gradients smaller than this are compared absolutely rather than relatively.
inline constexpr double kFloor = 1e-6;

struct Case {
  std::string label;
  r2v::Head head;
  r2v::Dataset batch;
  r2v::LossKind kind;
};

inline double max_relative_error(const Case& c) {
  const auto analytic = r2v::loss_and_grad(c.head, c.batch, c.kind).grads;
  r2v::Head probe = c.head;
  double worst = 0.0;
  auto check = [&](double& theta, double g) {
    const double keep = theta;
    theta = keep + kStep;
    const double up = r2v::loss_only(probe, c.batch, c.kind);
    theta = keep - kStep;
    const double down = r2v::loss_only(probe, c.batch, c.kind);
    theta = keep;
    const double numeric = (up - down) / (2.0 * kStep);
    const double scale = std::max({std::abs(g), std::abs(numeric), kFloor});
    worst = std::max(worst, std::abs(g - numeric) / scale);
  };
  for (std::size_t l = 0; l < probe.params.weights.size(); ++l) {
    auto& W = probe.params.weights[l];
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) check(W(i, j), analytic.weights[l](i, j));
    }
    auto& b = probe.params.biases[l];
    for (Eigen::Index i = 0; i < b.size(); ++i) check(b(i), analytic.biases[l](i));
  }
  return worst;
}

// Twenty seeded (head kind, task) configurations covering every loss and
// both head kinds, with partially masked forecast targets.
inline std::vector<Case> seeded_cases() {
  using r2v::Task;
  const Task tasks[] = {Task::forecast, Task::los, Task::mortality, Task::drug, Task::labs};
  std::vector<Case> out;
  for (int i = 0; i < 20; ++i) {
    const Task task = tasks[i % 5];
    const auto kind = (i / 5) % 2 == 0 ? r2v::HeadKind::linear : r2v::HeadKind::mlp;
    const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(i);
    r2v::Rng rng(seed);
    const std::size_t in = 3 + rng.below(6);
    const std::size_t outd = task == Task::forecast ? 6 : task == Task::drug ? 2 : task == Task::labs ? 4 : 1;
    std::vector<std::size_t> hidden;
    if (kind == r2v::HeadKind::mlp) {
      hidden.push_back(4 + rng.below(5));
      if (i >= 10) hidden.push_back(3 + rng.below(3));
    }
    Case c{std::string(r2v::to_string(kind)) + "/" + std::string(r2v::to_string(task)) + "/" + std::to_string(seed),
           r2v::make_head(kind, in, outd, hidden, seed), {}, r2v::loss_for(task)};
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.below(6));
    c.batch.x.resize(n, static_cast<Eigen::Index>(in));
    c.batch.y.resize(n, static_cast<Eigen::Index>(outd));
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index j = 0; j < c.batch.x.cols(); ++j) c.batch.x(r, j) = rng.normal();
      for (Eigen::Index j = 0; j < c.batch.y.cols(); ++j) {
        c.batch.y(r, j) = c.kind == r2v::LossKind::bce ? (rng.bernoulli(0.4) ? 1.0 : 0.0) : rng.normal(0, 2);
      }
    }
    if (task == Task::forecast) {
      c.batch.mask.resize(n, static_cast<Eigen::Index>(outd));
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index j = 0; j < c.batch.mask.cols(); ++j) c.batch.mask(r, j) = rng.bernoulli(0.6) ? 1.0 : 0.0;
      }
      c.batch.mask(0, 0) = 1.0;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace gradcheck
