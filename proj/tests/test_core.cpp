#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "r2v/core.hpp"
#include "r2v/util.hpp"
#include "support.hpp"

using namespace r2v;

TEST(ValidateWindow, WellFormed) {
  WindowRecord w;
  w.continuous_obs["ALP"] = {{0, 1}, {47.5, 2}};
  w.binary_events["Analgesia"] = {0, 47};
  EXPECT_TRUE(validate_window(w, testsupport::small_schema()).empty());
}

TEST(ValidateWindow, HourOutOfRange) {
  WindowRecord w;
  w.continuous_obs["ALP"] = {{49.0, 1}};
  EXPECT_EQ(validate_window(w, testsupport::small_schema()), std::vector<std::string>{"hour out of [0,48)"});
  w.continuous_obs["ALP"] = {{48.0, 1}};
  EXPECT_EQ(validate_window(w, testsupport::small_schema()), std::vector<std::string>{"hour out of [0,48)"});
}

TEST(ValidateWindow, UnknownFeature) {
  WindowRecord w;
  w.continuous_obs["XYZ"] = {{1.0, 1}};
  EXPECT_EQ(validate_window(w, testsupport::small_schema()), std::vector<std::string>{"unknown feature XYZ"});
}

TEST(ValidateWindow, OtherViolations) {
  const auto s = testsupport::small_schema();
  WindowRecord w;
  w.continuous_obs["ALP"] = {{3, 1}, {2, 1}};
  EXPECT_FALSE(validate_window(w, s).empty());
  w.continuous_obs["ALP"] = {{1, std::numeric_limits<double>::quiet_NaN()}};
  EXPECT_FALSE(validate_window(w, s).empty());
  w.continuous_obs.clear();
  w.binary_events["ALP"] = {1};
  EXPECT_FALSE(validate_window(w, s).empty());
  w.binary_events.clear();
  w.labels.los_remaining = -1;
  EXPECT_FALSE(validate_window(w, s).empty());
}

TEST(FeatureSchema, Lookup) {
  const auto s = testsupport::small_schema();
  EXPECT_EQ(s.index_of("Hemoglobin"), 2u);
  EXPECT_FALSE(s.contains("XYZ"));
  EXPECT_EQ(s.continuous_count(), 3u);
}

TEST(FeatureSchema, DuplicateNamesRejected) {
  EXPECT_THROW(FeatureSchema("X", {{"A", FeatureKind::continuous, "", ""}, {"A", FeatureKind::binary, "", ""}}),
               ValidationError);
}

TEST(MetricTable, DirectionsRequired) {
  MetricTable t;
  t.add("m", "p", "forecast", 1.0);
  EXPECT_THROW(t.check_directions(), ValidationError);
  t.directions["forecast"] = Direction::lower_better;
  EXPECT_NO_THROW(t.check_directions());
}

TEST(Enums, RoundTrip) {
  for (auto k : {PromptKind::zero_shot, PromptKind::cot, PromptKind::icd, PromptKind::trend, PromptKind::none}) {
    EXPECT_EQ(prompt_kind_from_string(to_string(k)), k);
  }
  for (auto p : {Pooling::mean, Pooling::cls, Pooling::last, Pooling::max}) EXPECT_EQ(pooling_from_string(to_string(p)), p);
  EXPECT_THROW(pooling_from_string("median"), ValidationError);
}

TEST(Util, SeedsDifferByName) {
  EXPECT_NE(derive_seed(42, "train"), derive_seed(42, "eval"));
  EXPECT_NE(derive_seed(42, "train"), derive_seed(84, "train"));
  EXPECT_EQ(derive_seed(42, "train"), derive_seed(42, "train"));
}

TEST(Util, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Util, ShortestDecimalRoundTrips) {
  EXPECT_EQ(format_shortest(66.0), "66");
  EXPECT_EQ(format_shortest(7.36), "7.36");
  EXPECT_EQ(format_shortest(0.5), "0.5");
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double v = rng.normal(0, 1e3);
    EXPECT_EQ(std::stod(format_shortest(v)), v);
  }
}

TEST(Util, RngIsReproducible) {
  Rng a(11), b(11);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(c.below(7), 7u);
  }
}
