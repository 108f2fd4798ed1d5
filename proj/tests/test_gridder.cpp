#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "r2v/gridder.hpp"
#include "support.hpp"

using namespace r2v;

namespace {

FeatureSchema one_feature() { return FeatureSchema("T", {{"X", FeatureKind::continuous, "", ""}}); }

NormStats stats_with_mean(double mean) { return {{mean}, {1.0}, {0}}; }

GridTensor row_with(std::initializer_list<std::pair<int, double>> cells) {
  GridTensor g(1, 48);
  for (auto [t, v] : cells) {
    g.at(0, static_cast<std::size_t>(t)) = v;
    g.mask_at(0, static_cast<std::size_t>(t)) = 1;
  }
  return g;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(ToGrid, FloorBinning) {
  WindowRecord w;
  w.continuous_obs["X"] = {{2.5, 4.0}};
  const auto g = to_grid(w, one_feature());
  EXPECT_EQ(g.at(0, 2), 4.0);
  EXPECT_EQ(g.mask_at(0, 2), 1);
  EXPECT_EQ(g.observed_count(), 1u);
}

TEST(ToGrid, WithinHourMean) {
  WindowRecord w;
  w.continuous_obs["X"] = {{2.2, 4.0}, {2.8, 6.0}};
  EXPECT_EQ(to_grid(w, one_feature()).at(0, 2), 5.0);
}

TEST(ToGrid, EmptyAndBinary) {
  const auto s = testsupport::small_schema();
  EXPECT_EQ(to_grid(WindowRecord{}, s).observed_count(), 0u);
  WindowRecord w;
  w.binary_events["Analgesia"] = {0, 47};
  const auto g = to_grid(w, s);
  EXPECT_EQ(g.at(3, 0), 1.0);
  EXPECT_EQ(g.at(3, 47), 1.0);
  EXPECT_EQ(g.observed_count(), 2u);
}

TEST(NormStats, HandValues) {
  const auto s = FeatureSchema("T", {{"A", FeatureKind::continuous, "", ""},
                                     {"B", FeatureKind::continuous, "", ""},
                                     {"C", FeatureKind::continuous, "", ""},
                                     {"D", FeatureKind::binary, "", ""}});
  WindowRecord w1, w2;
  w1.continuous_obs["A"] = {{1, 1}};
  w2.continuous_obs["A"] = {{1, 3}};
  w1.continuous_obs["B"] = {{1, 5}, {7, 5}};
  w1.binary_events["D"] = {3};
  const std::vector<WindowRecord> ws{w1, w2};
  const auto st = fit_norm_stats(std::span<const WindowRecord>(ws), s);
  EXPECT_EQ(st.mean[0], 2.0);
  EXPECT_EQ(st.std[0], 1.0);
  EXPECT_EQ(st.mean[1], 5.0);
  EXPECT_EQ(st.std[1], kStdFloor);
  EXPECT_EQ(st.mean[2], 0.0);
  EXPECT_EQ(st.std[2], kStdFloor);
  EXPECT_EQ(st.is_binary[3], 1);
  EXPECT_EQ(st.mean[3], 0.0);
  EXPECT_EQ(st.std[3], 1.0);
}

TEST(Impute, LinearMidpoint) {
  const auto out = impute(row_with({{2, 4.0}, {6, 8.0}}), stats_with_mean(0), ImputeMode::linear);
  EXPECT_DOUBLE_EQ(out.at(0, 4), 6.0);
  EXPECT_EQ(out.at(0, 0), 4.0);
  EXPECT_EQ(out.at(0, 47), 8.0);
}

TEST(Impute, RightShiftTrace) {
  const auto out = impute(row_with({{2, 4.0}, {5, 6.0}}), stats_with_mean(3.0), ImputeMode::right_shift);
  for (std::size_t t = 0; t < 48; ++t) {
    const double want = t < 2 ? 3.0 : t < 5 ? 4.0 : 6.0;
    EXPECT_EQ(out.at(0, t), want) << "hour " << t;
    EXPECT_EQ(out.mask_at(0, t), 1);
  }
}

TEST(Impute, MeanFillEmptyRow) {
  const auto out = impute(GridTensor(1, 48), stats_with_mean(3.0), ImputeMode::mean_fill);
  for (std::size_t t = 0; t < 48; ++t) EXPECT_EQ(out.at(0, t), 3.0);
  const auto lin = impute(GridTensor(1, 48), stats_with_mean(3.0), ImputeMode::linear);
  for (std::size_t t = 0; t < 48; ++t) EXPECT_EQ(lin.at(0, t), 3.0);
}

TEST(Impute, MatchesOracleOnRandomGrids) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [g, st] = testsupport::random_grid_case(rng);
    for (auto mode : {ImputeMode::mean_fill, ImputeMode::right_shift, ImputeMode::linear}) {
      const auto got = impute(g, st, mode);
      const auto want = oracle::impute(g, st, mode);
      ASSERT_EQ(got.mask, want.mask);
      if (mode == ImputeMode::linear) {
        for (std::size_t i = 0; i < got.values.size(); ++i) ASSERT_NEAR(got.values[i], want.values[i], 1e-12);
      } else {
        ASSERT_TRUE(bitwise_equal(got.values, want.values)) << "mode " << to_string(mode) << " trial " << trial;
      }
    }
  }
}

TEST(Impute, ObservedCellsNeverChange) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [g, st] = testsupport::random_grid_case(rng);
    for (auto mode : {ImputeMode::mean_fill, ImputeMode::right_shift, ImputeMode::linear}) {
      const auto out = impute(g, st, mode);
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        if (g.mask[i]) {
          ASSERT_EQ(std::memcmp(&out.values[i], &g.values[i], sizeof(double)), 0);
        }
      }
    }
  }
}

TEST(Norm, HandZScoreAndInverse) {
  GridTensor g(1, 2);
  g.at(0, 0) = 5;
  g.at(0, 1) = 3;
  const NormStats st{{3.0}, {1.0}, {0}};
  const auto z = apply_norm(g, st);
  EXPECT_EQ(z.at(0, 0), 2.0);
  EXPECT_EQ(z.at(0, 1), 0.0);
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto [h, s] = testsupport::random_grid_case(rng);
    const auto back = denorm(apply_norm(h, s), s);
    for (std::size_t i = 0; i < h.values.size(); ++i) ASSERT_NEAR(back.values[i], h.values[i], 1e-9);
  }
}

TEST(Norm, MismatchedStatsThrow) {
  EXPECT_THROW(apply_norm(GridTensor(2, 3), stats_with_mean(0)), ValidationError);
  EXPECT_THROW(impute(GridTensor(2, 3), stats_with_mean(0), ImputeMode::linear), ValidationError);
}

TEST(Impute, ModeNames) {
  for (auto m : {ImputeMode::mean_fill, ImputeMode::right_shift, ImputeMode::linear}) {
    EXPECT_EQ(impute_mode_from_string(to_string(m)), m);
  }
}
