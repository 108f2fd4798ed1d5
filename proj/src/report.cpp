#include "r2v/report.hpp"

#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "r2v/evalkit.hpp"
#include "r2v/io.hpp"
#include "r2v/learn.hpp"
#include "r2v/pipeline.hpp"

namespace r2v {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kBaselineArm = "grid:mean";

struct Run {
  fs::path dir;
  std::string digest;
  std::string arm;
  std::vector<MetricRecord> metrics;
  std::vector<json> privacy;
  json tokens;
};

void check_digest(const fs::path& file, const std::string& got, const std::string& want) {
  if (got != want) {
    throw ValidationError(file.string() + " carries config digest " + got.substr(0, 12) + " but its run has " +
                          want.substr(0, 12) + "; refusing to mix configs");
  }
}

Run load_run(const fs::path& dir) {
  Run r;
  r.dir = dir;
  const fs::path cfg_file = dir / "config.json";
  if (!fs::exists(cfg_file)) throw ValidationError(dir.string() + " is not a run directory (no config.json)");
  const json cfg = json::parse(read_text(cfg_file));
  r.digest = cfg.at("config_digest").get<std::string>();
  r.arm = cfg.at("config").at("arm").get<std::string>();
  for (const char* name : {"in_distribution.jsonl", "transfer.jsonl", "fewshot.jsonl"}) {
    const fs::path f = dir / "metrics" / name;
    if (!fs::exists(f)) continue;
    std::string d;
    auto m = load_metrics(f, &d);
    check_digest(f, d, r.digest);
    r.metrics.insert(r.metrics.end(), m.begin(), m.end());
  }
  if (const fs::path f = dir / "metrics" / "privacy.jsonl"; fs::exists(f)) {
    auto doc = read_jsonl(f);
    check_digest(f, doc.config_digest, r.digest);
    r.privacy = std::move(doc.records);
  }
  if (const fs::path f = dir / "metrics" / "tokens.json"; fs::exists(f)) {
    r.tokens = json::parse(read_text(f));
    check_digest(f, r.tokens.at("config_digest").get<std::string>(), r.digest);
  }
  if (r.metrics.empty()) throw ValidationError(dir.string() + " has no metrics; run `r2v eval` first");
  return r;
}

using CellKey = std::tuple<std::string, std::string, std::string, std::string, std::size_t, std::string>;

}  // namespace

json build_report(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw ValidationError("report needs at least one run");
  std::vector<Run> runs;
  std::set<std::string> arms;
  std::optional<std::set<std::string>> task_set;
  for (const auto& d : dirs) {
    runs.push_back(load_run(d));
    const auto& r = runs.back();
    if (!arms.insert(r.arm).second) throw ValidationError("two runs share the arm " + r.arm);
    std::set<std::string> tasks;
    for (const auto& m : r.metrics) tasks.insert(m.task);
    if (task_set && *task_set != tasks) throw ValidationError("runs cover different task sets");
    task_set = tasks;
  }

  // (setting, cohort_pair, task, metric, k, arm) -> per-seed values.
  std::map<CellKey, std::vector<const MetricRecord*>> cells;
  for (const auto& r : runs) {
    for (const auto& m : r.metrics) cells[{m.setting, m.cohort_pair, m.task, m.metric, m.k, m.arm}].push_back(&m);
  }

  json out;
  json run_list = json::array();
  for (const auto& r : runs) run_list.push_back({{"dir", r.dir.string()}, {"arm", r.arm}, {"config_digest", r.digest}});
  out["runs"] = run_list;

  json cell_list = json::array();
  std::map<std::string, MetricTable> tables;
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, double>> means;
  for (const auto& [key, recs] : cells) {
    const auto& [setting, pair, task, metric, k, arm] = key;
    std::vector<double> v;
    std::map<std::string, std::vector<double>> extras;
    for (const auto* m : recs) {
      v.push_back(m->value);
      for (const auto& [ek, ev] : m->extra.items()) {
        if (ev.is_number()) extras[ek].push_back(ev.get<double>());
      }
    }
    const auto ms = mean_std(v);
    json cell = {{"setting", setting}, {"cohort_pair", pair}, {"task", task}, {"metric", metric},
                 {"arm", arm},         {"n", v.size()},       {"mean", ms.mean}, {"std", ms.std}};
    if (setting == "fewshot") cell["k"] = k;
    json ex = json::object();
    for (const auto& [ek, ev] : extras) ex[ek] = mean_std(ev).mean;
    if (!ex.empty()) cell["extra_mean"] = ex;
    cell_list.push_back(std::move(cell));

    if (setting == "fewshot") continue;
    auto& table = tables[setting];
    table.directions[task] = direction_for(task_from_string(task));
    table.add(arm, pair, task, ms.mean);
    means[{setting, pair, task}][arm] = ms.mean;
  }
  out["cells"] = cell_list;

  json columns = json::object();
  for (const auto& [setting, table] : tables) {
    json ranks = json::object();
    for (const auto& [pair, task] : table.columns()) ranks[pair + "/" + task] = rank_methods(table, pair, task);
    columns[setting] = {{"wins", count_wins(table)}, {"ranks", ranks}};
  }
  out["columns"] = columns;

  json deltas = json::array();
  for (const auto& [key, by_arm] : means) {
    auto base = by_arm.find(kBaselineArm);
    if (base == by_arm.end()) continue;
    const auto& [setting, pair, task] = key;
    for (const auto& [arm, value] : by_arm) {
      if (arm == kBaselineArm || base->second == 0.0) continue;
      deltas.push_back({{"setting", setting},
                        {"cohort_pair", pair},
                        {"task", task},
                        {"arm", arm},
                        {"baseline", kBaselineArm},
                        {"percent", task_aligned_delta(value, base->second, direction_for(task_from_string(task)))}});
    }
  }
  out["delta_vs_baseline"] = deltas;

  json privacy = json::array();
  for (const auto& r : runs) {
    std::map<std::string, std::vector<const json*>> by_target;
    for (const auto& p : r.privacy) by_target[p.at("target").get<std::string>()].push_back(&p);
    for (const auto& [target, recs] : by_target) {
      std::vector<double> v;
      std::vector<double> c;
      for (const auto* p : recs) {
        v.push_back(p->at("value").get<double>());
        if (p->contains("constant_mae")) c.push_back(p->at("constant_mae").get<double>());
      }
      const auto ms = mean_std(v);
      json entry = {{"arm", r.arm}, {"target", target}, {"metric", recs.front()->at("metric")},
                    {"n", v.size()}, {"mean", ms.mean}, {"std", ms.std}};
      if (!c.empty()) entry["constant_mae_mean"] = mean_std(c).mean;
      privacy.push_back(std::move(entry));
    }
  }
  out["privacy"] = privacy;

  json tokens = json::array();
  for (const auto& r : runs) {
    if (r.tokens.is_null()) continue;
    for (auto s : r.tokens.at("sites")) {
      s["arm"] = r.arm;
      tokens.push_back(std::move(s));
    }
  }
  out["tokens"] = tokens;
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << v;
  return ss.str();
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string render_report(const json& report) {
  std::ostringstream os;
  std::map<std::string, std::vector<const json*>> by_setting;
  for (const auto& c : report.at("cells")) {
    std::string setting = c.at("setting").get<std::string>();
    if (setting == "fewshot") setting += " k=" + std::to_string(c.at("k").get<std::size_t>());
    by_setting[setting].push_back(&c);
  }
  for (const auto& [setting, cells] : by_setting) {
    std::vector<std::string> cols;
    std::vector<std::string> arms;
    std::map<std::pair<std::string, std::string>, const json*> grid;
    for (const auto* c : cells) {
      const std::string col =
          c->at("cohort_pair").get<std::string>() + "/" + c->at("task").get<std::string>() + " " + c->at("metric").get<std::string>();
      const std::string arm = c->at("arm").get<std::string>();
      if (std::find(cols.begin(), cols.end(), col) == cols.end()) cols.push_back(col);
      if (std::find(arms.begin(), arms.end(), arm) == arms.end()) arms.push_back(arm);
      grid[{arm, col}] = c;
    }
    std::map<std::string, std::string> best;
    for (const auto& col : cols) {
      const json* top = nullptr;
      for (const auto& arm : arms) {
        auto it = grid.find({arm, col});
        if (it == grid.end()) continue;
        const json* c = it->second;
        const bool lower = direction_for(task_from_string(c->at("task").get<std::string>())) == Direction::lower_better;
        if (!top || (lower ? c->at("mean").get<double>() < top->at("mean").get<double>()
                           : c->at("mean").get<double>() > top->at("mean").get<double>())) {
          top = c;
        }
      }
      if (top) best[col] = top->at("arm").get<std::string>();
    }
    os << "== " << setting << " ==\n";
    os << pad("arm", 14);
    for (const auto& col : cols) os << " | " << pad(col, 24);
    os << "\n";
    for (const auto& arm : arms) {
      os << pad(arm, 14);
      for (const auto& col : cols) {
        auto it = grid.find({arm, col});
        std::string cell = "-";
        if (it != grid.end()) {
          cell = fmt(it->second->at("mean").get<double>()) + "+-" + fmt(it->second->at("std").get<double>());
          if (best[col] == arm && arms.size() > 1) cell += "*";
        }
        os << " | " << pad(cell, 24);
      }
      os << "\n";
    }
    os << "\n";
  }
  if (report.contains("columns")) {
    for (const auto& [setting, col] : report.at("columns").items()) {
      os << "wins (" << setting << "):";
      for (const auto& [arm, n] : col.at("wins").items()) os << " " << arm << "=" << n.get<int>();
      os << "\n";
    }
  }
  for (const auto& p : report.at("privacy")) {
    os << "privacy " << p.at("arm").get<std::string>() << " " << p.at("target").get<std::string>() << " "
       << p.at("metric").get<std::string>() << " " << fmt(p.at("mean").get<double>()) << "+-"
       << fmt(p.at("std").get<double>());
    if (p.contains("constant_mae_mean")) os << " (constant " << fmt(p.at("constant_mae_mean").get<double>()) << ")";
    os << "\n";
  }
  for (const auto& t : report.at("tokens")) {
    os << "tokens " << t.at("arm").get<std::string>() << " " << t.at("site").get<std::string>() << " canonical "
       << fmt(t.at("mean_canonical_tokens").get<double>());
    if (t.contains("mean_summary_tokens")) os << " summary " << fmt(t.at("mean_summary_tokens").get<double>());
    os << "\n";
  }
  return os.str();
}

}  // namespace r2v
