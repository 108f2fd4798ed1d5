#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "r2v/io.hpp"
#include "r2v/pipeline.hpp"
#include "r2v/report.hpp"
#include "support.hpp"

using namespace r2v;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_doc(const std::string& arm = "record2vec") {
  return {{"seeds", {1}},
          {"arm", arm},
          {"sites",
           {{{"site_id", "A"}, {"target_windows", 400}, {"leak_demographics", false}, {"rename_fraction", 0.0},
             {"unit_shift", false}},
            {{"site_id", "B"}, {"target_windows", 400}, {"leak_demographics", false}, {"rename_fraction", 0.3},
             {"unit_shift", true}}}},
          {"tasks", {"mortality", "forecast"}},
          {"head", {{"kind", "mlp"}, {"hidden", {16}}}},
          {"embed", {{"dim", 64}}},
          {"train", {{"max_epochs", 3}}},
          {"fewshot", {{"total_steps", 20}}},
          {"fixtures", {"fixtures/prompts_transfer.csv"}}};
}

std::string slurp(const fs::path& p) { return read_text(p); }

// Runs the CLI and returns its exit status.
int cli(const std::string& args) {
  const std::string cmd = std::string(R2V_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto c = config_from_json(json::object());
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{42, 84, 1005, 2025}));
  EXPECT_EQ(c.sites.size(), 2u);
  EXPECT_EQ(c.embed.dim, 256u);
  EXPECT_EQ(c.embed.pooling, Pooling::mean);
  EXPECT_EQ(c.fewshot.base_lr, kFewShotBaseLr);
  EXPECT_EQ(c.serialization, SerializationStyle::canonical);

  json doc = default_config_json();
  apply_override(doc, "train.lr=0.005");
  apply_override(doc, "arm=grid:linear");
  apply_override(doc, "sites.1.site_id=C");
  apply_override(doc, "target=C");
  const auto o = config_from_json(doc);
  EXPECT_EQ(o.train.lr, 0.005);
  EXPECT_EQ(to_string(o.arm), "grid:linear");
  EXPECT_EQ(o.sites[1].site_id, "C");
  EXPECT_THROW(apply_override(doc, "sites.9.site_id=C"), ValidationError);
  EXPECT_THROW(apply_override(doc, "novalue"), ValidationError);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(config_from_json({{"trian", {{"lr", 1}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"train", {{"lr", "fast"}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"arm", "grid:cubic"}}), ValidationError);
  EXPECT_THROW(config_from_json({{"target", "Z"}}), ValidationError);
}

TEST(Config, TemplateArmImpliesTemplateSerialization) {
  EXPECT_EQ(config_from_json({{"arm", "template"}}).serialization, SerializationStyle::template_lines);
}

TEST(Config, DigestTracksEffectiveConfig) {
  const auto a = config_from_json(tiny_doc());
  const auto b = config_from_json(tiny_doc());
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_EQ(config_digest(a).size(), 64u);
  auto doc = tiny_doc();
  doc["train"]["lr"] = 0.01;
  EXPECT_NE(config_digest(config_from_json(doc)), config_digest(a));
  EXPECT_EQ(config_digest(config_from_json(to_json(a))), config_digest(a));
  EXPECT_EQ(load_config(std::nullopt, {}, 7).seed, 7u);
}

TEST(MetricCsv, ReadsFixtures) {
  const auto t = read_metric_csv("fixtures/table1_in_distribution.csv");
  EXPECT_EQ(t.methods().size(), 7u);
  EXPECT_EQ(t.columns().size(), 15u);
  EXPECT_THROW(read_metric_csv("fixtures/missing.csv"), ValidationError);
}

TEST(Pipeline, MissingUpstreamNamesTheStage) {
  testsupport::TempDir dir("upstream");
  const auto cfg = config_from_json(tiny_doc());
  StageOptions opts{dir.path(), false, {}};
  try {
    run_stage("eval", cfg, opts);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("run `r2v"), std::string::npos) << e.what();
  }
  run_stage("synth", cfg, opts);
  try {
    run_stage("embed", cfg, opts);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("run `r2v summarize` first"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_stage("nonsense", cfg, opts), ValidationError);
}

TEST(Pipeline, EndToEndIdempotentAndDigestChecked) {
  testsupport::TempDir dir("e2e");
  const auto cfg = config_from_json(tiny_doc());
  StageOptions opts{dir.path(), false, {}};
  run_all(cfg, opts);
  for (auto rel : {"config.json", "sites/A/summaries.jsonl", "sites/B/embeddings.r2ve", "metrics/in_distribution.jsonl",
                   "metrics/transfer.jsonl", "metrics/fewshot.jsonl", "metrics/privacy.jsonl", "metrics/tokens.json",
                   "ranks.json", "report.json", "report.txt"}) {
    EXPECT_TRUE(fs::exists(dir.path() / rel)) << rel;
  }
  std::string digest;
  const auto metrics = load_metrics(dir.path() / "metrics/in_distribution.jsonl", &digest);
  EXPECT_EQ(digest, config_digest(cfg));
  ASSERT_FALSE(metrics.empty());
  for (const auto& m : metrics) {
    EXPECT_TRUE(std::isfinite(m.value)) << m.task << " " << m.metric;
    EXPECT_EQ(m.arm, "record2vec");
  }
  const auto tokens = json::parse(slurp(dir.path() / "metrics/tokens.json"));
  for (const auto& s : tokens.at("sites")) EXPECT_LT(s.at("mean_summary_tokens"), s.at("mean_canonical_tokens"));

  const auto before = slurp(dir.path() / "metrics/in_distribution.jsonl");
  const auto emb_before = slurp(dir.path() / "sites/A/embeddings.r2ve");
  run_all(cfg, opts);
  EXPECT_EQ(slurp(dir.path() / "metrics/in_distribution.jsonl"), before);
  EXPECT_EQ(slurp(dir.path() / "sites/A/embeddings.r2ve"), emb_before);

  auto other = tiny_doc();
  other["train"]["lr"] = 0.01;
  EXPECT_THROW(run_stage("train", config_from_json(other), opts), ValidationError);
}

TEST(Pipeline, ForcedRerunIsBitwiseReproducible) {
  testsupport::TempDir a("repro-a");
  testsupport::TempDir b("repro-b");
  const auto cfg = config_from_json(tiny_doc("grid:mean"));
  run_all(cfg, {a.path(), false, {}});
  run_all(cfg, {b.path(), false, {}});
  EXPECT_EQ(slurp(a.path() / "metrics/in_distribution.jsonl"), slurp(b.path() / "metrics/in_distribution.jsonl"));
  EXPECT_EQ(slurp(a.path() / "sites/B/grid.r2vg"), slurp(b.path() / "sites/B/grid.r2vg"));
}

TEST(Report, CombinesArmsAndRejectsMixedRuns) {
  testsupport::TempDir r2v_run("rep-r2v");
  testsupport::TempDir grid_run("rep-grid");
  run_all(config_from_json(tiny_doc()), {r2v_run.path(), false, {}});
  run_all(config_from_json(tiny_doc("grid:mean")), {grid_run.path(), false, {}});
  const auto rep = build_report({r2v_run.path(), grid_run.path()});
  EXPECT_EQ(rep.at("runs").size(), 2u);
  bool saw_delta = false;
  for (const auto& d : rep.at("delta_vs_baseline")) saw_delta |= d.at("arm") == "record2vec";
  EXPECT_TRUE(saw_delta);
  // One seed per run: every spread is exactly zero.
  for (const auto& c : rep.at("cells")) EXPECT_EQ(c.at("std"), 0.0);
  EXPECT_FALSE(render_report(rep).empty());
  EXPECT_THROW(build_report({r2v_run.path(), r2v_run.path()}), ValidationError);

  // A metrics file from another config inside the same run is rejected.
  auto doc = tiny_doc();
  doc["train"]["lr"] = 0.02;
  const auto foreign = config_from_json(doc);
  const auto recs = read_jsonl(r2v_run.path() / "metrics/transfer.jsonl").records;
  write_jsonl(r2v_run.path() / "metrics/transfer.jsonl", "metrics", config_digest(foreign), recs);
  EXPECT_THROW(build_report({r2v_run.path()}), ValidationError);
}

TEST(Cli, ExitCodes) {
  testsupport::TempDir dir("cli");
  const std::string out = dir.path().string();
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli("bogus --out " + out), 2);
  EXPECT_EQ(cli("eval --out " + out), 2);
  EXPECT_EQ(cli("synth --out " + out + " --set arm=grid:cubic"), 2);
  EXPECT_EQ(cli("synth --out " + out + " --print-config"), 0);

  // A run directory belongs to one config until --force.
  EXPECT_EQ(cli("synth --out " + out + " --seed 9"), 2);
  EXPECT_EQ(cli("synth --out " + out + " --seed 9 --set sites.0.target_windows=20 --set sites.1.target_windows=20 --force"), 0);
  EXPECT_EQ(cli("serialize --out " + out + " --seed 9 --set sites.0.target_windows=20 --set sites.1.target_windows=20"), 0);

  // An unreachable remote summarizer is a backend failure.
  testsupport::TempDir remote("cli-remote");
  const std::string rout = remote.path().string();
  auto rdoc = tiny_doc();
  rdoc["sites"] = json::array({{{"site_id", "A"}, {"target_windows", 12}}, {{"site_id", "B"}, {"target_windows", 12}}});
  rdoc["summarizer"] = {{"backend", "remote"}, {"url", "http://127.0.0.1:9/v1"}, {"model", "m"}, {"parallelism", 64}};
  const auto rcfg = remote.path() / "cfg.json";
  std::ofstream(rcfg) << rdoc.dump();
  EXPECT_EQ(cli("synth --config " + rcfg.string() + " --out " + rout), 0);
  EXPECT_EQ(cli("serialize --config " + rcfg.string() + " --out " + rout), 0);
  EXPECT_EQ(cli("summarize --config " + rcfg.string() + " --out " + rout), 3);
}
