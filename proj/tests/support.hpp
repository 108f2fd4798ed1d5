#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "r2v/core.hpp"
#include "r2v/gridder.hpp"
#include "r2v/http.hpp"
#include "r2v/util.hpp"

namespace testsupport {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("r2v-test-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline r2v::FeatureSchema small_schema() {
  using r2v::FeatureKind;
  return r2v::FeatureSchema("T", {{"ALP", FeatureKind::continuous, "U/L", ""},
                                  {"AirwayPressure", FeatureKind::continuous, "cmH2O", ""},
                                  {"Hemoglobin", FeatureKind::continuous, "g/L", ""},
                                  {"Analgesia", FeatureKind::binary, "", ""},
                                  {"Vasopressor", FeatureKind::binary, "", ""}});
}

// Window with arbitrary (not pre-rounded) reals and fractional hours, so the
// text round trip has to carry full double precision.
inline r2v::WindowRecord random_window(const r2v::FeatureSchema& s, r2v::Rng& rng) {
  r2v::WindowRecord w;
  w.stay_id = "s" + std::to_string(rng.below(1000));
  w.window_index = static_cast<int>(rng.below(5));
  for (const auto& f : s.features()) {
    const auto n = rng.below(6);
    if (n == 0) continue;
    if (f.kind == r2v::FeatureKind::continuous) {
      std::vector<double> hours;
      for (std::uint64_t i = 0; i < n; ++i) {
        hours.push_back(rng.bernoulli(0.5) ? static_cast<double>(rng.below(48)) : rng.uniform(0.0, 47.999));
      }
      std::sort(hours.begin(), hours.end());
      auto& obs = w.continuous_obs[f.name];
      for (double h : hours) obs.push_back({h, rng.bernoulli(0.3) ? std::round(rng.normal(50, 30)) : rng.normal(0, 100)});
    } else {
      std::set<int> hours;
      for (std::uint64_t i = 0; i < n; ++i) hours.insert(static_cast<int>(rng.below(48)));
      w.binary_events[f.name] = std::vector<int>(hours.begin(), hours.end());
    }
  }
  return w;
}

// Random D x 48 grid, D <= 5, some rows binary, random density.
inline std::pair<r2v::GridTensor, r2v::NormStats> random_grid_case(r2v::Rng& rng) {
  const std::size_t d = 1 + rng.below(5);
  r2v::GridTensor g(d, 48);
  r2v::NormStats st;
  for (std::size_t f = 0; f < d; ++f) {
    const bool binary = rng.bernoulli(0.25);
    st.is_binary.push_back(binary ? 1 : 0);
    st.mean.push_back(binary ? 0.0 : rng.normal(0, 10));
    st.std.push_back(binary ? 1.0 : rng.uniform(0.5, 3));
    const double density = rng.uniform();
    for (std::size_t t = 0; t < 48; ++t) {
      if (!rng.bernoulli(density)) continue;
      g.mask_at(f, t) = 1;
      g.at(f, t) = binary ? 1.0 : rng.normal(0, 50);
    }
  }
  return {g, st};
}

// Scripted transport: replays `responses` in order (the last one repeats);
// status 0 means "throw TransportError". Records every request body.
class FakeTransport : public r2v::HttpTransport {
 public:
  std::vector<r2v::HttpResponse> responses;
  std::vector<std::string> bodies;

  r2v::HttpResponse post(const std::string&, const std::string& body, const r2v::Headers&) override {
    bodies.push_back(body);
    const auto& r = responses.at(std::min(bodies.size(), responses.size()) - 1);
    if (r.status == 0) throw r2v::TransportError("timed out");
    return r;
  }
};

inline r2v::RetryPolicy no_sleep_retry(int retries) {
  r2v::RetryPolicy p;
  p.retries = retries;
  p.sleep = [](std::chrono::milliseconds) {};
  return p;
}

}  // namespace testsupport
