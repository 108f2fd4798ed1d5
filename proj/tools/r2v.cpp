#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "r2v/pipeline.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitBackend = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Summarize-then-embed pipeline for irregular clinical windows"};
  app.require_subcommand(1, 1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::string out;
  std::vector<std::string> runs;
  bool print_config = false;

  std::vector<std::string> names(r2v::kStages.begin(), r2v::kStages.end());
  names.push_back("all");
  for (const auto& name : names) {
    auto* sub = app.add_subcommand(name, name == "all" ? "run every stage in order" : "run the " + name + " stage");
    sub->add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "root seed");
    sub->add_option("--set", overrides, "override a config leaf, e.g. train.lr=0.001");
    sub->add_flag("--force", force, "overwrite artifacts produced by another config");
    sub->add_option("--out", out, "run directory")->required();
    sub->add_flag("--print-config", print_config, "print the effective config and exit");
    if (name == "report") sub->add_option("--runs", runs, "additional run directories to aggregate");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = r2v::load_config(config_file.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_file),
                                      overrides, seed);
    if (print_config) {
      std::cout << r2v::to_json(cfg).dump(2) << "\n" << "digest " << r2v::config_digest(cfg) << "\n";
      return 0;
    }
    r2v::StageOptions opts;
    opts.out = out;
    opts.force = force;
    for (const auto& r : runs) opts.report_runs.emplace_back(r);
    if (stage == "all") {
      r2v::run_all(cfg, opts);
    } else {
      r2v::run_stage(stage, cfg, opts);
    }
  } catch (const r2v::ValidationError& e) {
    std::cerr << "r2v: " << e.what() << "\n";
    return kExitValidation;
  } catch (const r2v::BackendError& e) {
    std::cerr << "r2v: backend failure: " << e.what() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << "r2v: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
