#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "r2v/cohort.hpp"
#include "r2v/embed.hpp"
#include "r2v/gridder.hpp"
#include "r2v/learn.hpp"
#include "r2v/summarize.hpp"

namespace r2v {

enum class ArmKind { record2vec, no_summary, template_text, grid };

struct Arm {
  ArmKind kind = ArmKind::record2vec;
  ImputeMode impute = ImputeMode::mean_fill;  // grid arms only

  bool is_text() const { return kind != ArmKind::grid; }
};

/// "record2vec", "no_summary", "template", "grid:mean", "grid:right_shift",
/// "grid:linear".
Arm arm_from_string(std::string_view s);
std::string to_string(const Arm& a);

struct SiteConfig {
  std::string site_id;
  // Stays are generated until the window count reaches target_windows.
  int target_windows = 2000;
  bool leak_demographics = false;
  double rename_fraction = 0.0;
  bool unit_shift = false;
};

struct BackendConfig {
  std::string backend = "mock";  // "mock" or "remote"
  std::string url;
  std::string model;
  int parallelism = 4;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::vector<std::uint64_t> seeds{42, 84, 1005, 2025};
  std::vector<SiteConfig> sites;
  std::string source;
  std::string target;
  Arm arm;
  SerializationStyle serialization = SerializationStyle::canonical;
  PromptKind prompt = PromptKind::zero_shot;
  BackendConfig summarizer;
  BackendConfig embedder;
  EmbedConfig embed;
  HeadKind head_kind = HeadKind::mlp;
  std::vector<std::size_t> hidden{256};
  TrainCfg train;
  std::vector<Task> tasks{Task::forecast, Task::los, Task::mortality, Task::drug, Task::labs};
  std::vector<std::size_t> fewshot_k{16};
  FewShotCfg fewshot;
  SplitRatios split;
  // Metric-table CSVs ranked by the `ranks` stage.
  std::vector<std::string> fixtures;

  void validate() const;
  const SiteConfig& site(std::string_view id) const;
};

nlohmann::json default_config_json();

/// Applies `path=value` where path is dot-separated ("train.lr") and value is
/// parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Parses a config document layered over the defaults. Throws
/// ValidationError on unknown keys or bad values.
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& c);

/// sha256 of the canonical JSON of the effective config.
std::string config_digest(const RunConfig& c);

RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed);

inline constexpr std::array<std::string_view, 13> kStages{"synth",   "serialize", "summarize", "embed",  "grid",
                                                          "train",   "eval",      "transfer",  "fewshot", "privacy",
                                                          "tokens",  "ranks",     "report"};

struct StageOptions {
  std::filesystem::path out;
  bool force = false;
  // Extra run directories for `report`; the output directory is always included.
  std::vector<std::filesystem::path> report_runs;
};

/// Runs one stage. Throws ValidationError for bad input or missing upstream
/// artifacts and BackendError for remote failures.
void run_stage(std::string_view stage, const RunConfig& cfg, const StageOptions& opts);

/// Every stage in dependency order, skipping those the arm does not use.
void run_all(const RunConfig& cfg, const StageOptions& opts);

// ---------------------------------------------------------------------------
// Loaders shared by stages, tests and tools.

struct SiteData {
  std::string site_id;
  FeatureSchema schema;
  std::map<std::string, FeatureGroup> groups;
  LabelSpec labels;
  Splits splits;
  std::vector<WindowRecord> windows;
};

std::filesystem::path site_dir(const std::filesystem::path& out, std::string_view site_id);
SiteData load_site(const std::filesystem::path& out, std::string_view site_id, std::string_view digest);

/// Representation matrix for a site with rows aligned to its windows.
Eigen::MatrixXd load_features(const std::filesystem::path& out, const RunConfig& cfg, const SiteData& site,
                              std::string_view digest);

struct MetricRecord {
  std::string setting;  // in_distribution, transfer, fewshot
  std::string arm;
  std::string cohort_pair;
  std::string task;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::string metric;
  double value = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const MetricRecord& m);
MetricRecord metric_from_json(const nlohmann::json& j);
std::vector<MetricRecord> load_metrics(const std::filesystem::path& file, std::string* digest_out = nullptr);

/// Reads a metric-table CSV (method,cohort_pair,task,direction,value,best).
/// Lines starting with '#' are provenance comments; value "NA" is a cell the
/// method was not evaluated on.
MetricTable read_metric_csv(const std::filesystem::path& path);

}  // namespace r2v
