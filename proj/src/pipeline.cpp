#include "r2v/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "r2v/evalkit.hpp"
#include "r2v/io.hpp"
#include "r2v/report.hpp"
#include "r2v/util.hpp"

namespace r2v {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log_line(std::string_view msg) { std::cerr << "[r2v] " << msg << "\n"; }

fs::path metrics_dir(const fs::path& out) { return out / "metrics"; }
fs::path heads_dir(const fs::path& out, std::uint64_t seed) { return out / "heads" / ("seed-" + std::to_string(seed)); }
fs::path head_path(const fs::path& out, std::uint64_t seed, Task t) {
  return heads_dir(out, seed) / (std::string(to_string(t)) + ".r2vh");
}
fs::path history_path(const fs::path& out, std::uint64_t seed, Task t) {
  return heads_dir(out, seed) / (std::string(to_string(t)) + ".history.jsonl");
}

// Digest recorded in a JSONL header or a JSON document's "config_digest".
std::string stored_digest(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot open " + p.string());
  if (p.extension() == ".jsonl") {
    std::string line;
    std::getline(in, line);
    try {
      return json::parse(line).at("r2v_header").at("config_digest").get<std::string>();
    } catch (const json::exception&) {
      throw ValidationError(p.string() + ": missing header line");
    }
  }
  try {
    return json::parse(in).at("config_digest").get<std::string>();
  } catch (const json::exception&) {
    throw ValidationError(p.string() + ": missing config_digest");
  }
}

void require_digest(const fs::path& p, std::string_view digest, std::string_view producer) {
  if (!fs::exists(p)) {
    throw ValidationError("missing " + p.string() + "; run `r2v " + std::string(producer) + "` first");
  }
  if (stored_digest(p) != digest) {
    throw ValidationError(p.string() + " was produced by a different config; rerun `r2v " + std::string(producer) +
                          "` with --force");
  }
}

// True when every output exists with the current digest. Throws when an
// output exists under another config unless forced.
bool up_to_date(const std::vector<fs::path>& outputs, std::string_view digest, bool force) {
  bool all = true;
  for (const auto& p : outputs) {
    if (!fs::exists(p)) {
      all = false;
      continue;
    }
    if (p.extension() != ".jsonl" && p.extension() != ".json") continue;
    if (stored_digest(p) != digest) {
      if (!force) {
        throw ValidationError(p.string() + " was produced by a different config; pass --force to overwrite");
      }
      all = false;
    }
  }
  return all && !force;
}

void write_json_doc(const fs::path& p, json doc, std::string_view digest) {
  doc["config_digest"] = digest;
  write_text_atomic(p, doc.dump(2) + "\n");
}

json read_json_doc(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

CohortSpec site_spec(const RunConfig& cfg, const SiteConfig& sc) {
  CohortSpec spec = default_cohort_spec(sc.site_id, 1, derive_seed(cfg.seed, "site:" + sc.site_id));
  spec.leak_demographics = sc.leak_demographics;
  if (sc.rename_fraction > 0.0 || sc.unit_shift) {
    SiteShift shift{sc.site_id, sc.rename_fraction, sc.unit_shift ? default_unit_changes() : std::map<std::string, UnitChange>{},
                    derive_seed(cfg.seed, "shift:" + sc.site_id)};
    spec = apply_site_shift(spec, shift);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// synth

void stage_synth(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  for (const auto& sc : cfg.sites) {
    const fs::path dir = site_dir(out, sc.site_id);
    if (up_to_date({dir / "site.json", dir / "stays.jsonl", dir / "windows.jsonl"}, digest, force)) {
      log_line("synth " + sc.site_id + ": up to date");
      continue;
    }
    const auto cohort = generate_cohort_with_windows(site_spec(cfg, sc), sc.target_windows);
    std::vector<json> stays;
    std::vector<json> windows;
    std::vector<std::string> ids;
    for (const auto& st : cohort.stays) {
      stays.push_back(to_json(st));
      ids.push_back(st.stay_id);
      for (const auto& w : window_stay(st, cohort.schema, cohort.labels)) windows.push_back(to_json(w));
    }
    const Splits splits = split_cohort(ids, cfg.split, derive_seed(cfg.seed, "split:" + sc.site_id));
    json groups = json::object();
    for (const auto& [name, g] : cohort.groups) groups[name] = to_string(g);
    write_jsonl(dir / "stays.jsonl", "stays", digest, stays);
    write_jsonl(dir / "windows.jsonl", "windows", digest, windows);
    write_json_doc(dir / "site.json",
                   {{"site_id", sc.site_id},
                    {"schema", to_json(cohort.schema)},
                    {"groups", groups},
                    {"labels", to_json(cohort.labels)},
                    {"splits", to_json(splits)},
                    {"n_stays", cohort.stays.size()},
                    {"n_windows", windows.size()}},
                   digest);
    log_line("synth " + sc.site_id + ": " + std::to_string(cohort.stays.size()) + " stays, " +
             std::to_string(windows.size()) + " windows");
  }
}

// ---------------------------------------------------------------------------
// serialize / summarize / embed / grid

std::string serialize_window(const RunConfig& cfg, const SiteData& site, const WindowRecord& w) {
  return cfg.serialization == SerializationStyle::canonical ? serialize_canonical(w, site.schema)
                                                            : serialize_template(w, site.schema, site.groups);
}

void stage_serialize(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  for (const auto& sc : cfg.sites) {
    const fs::path file = site_dir(out, sc.site_id) / "serialized.jsonl";
    if (up_to_date({file}, digest, force)) {
      log_line("serialize " + sc.site_id + ": up to date");
      continue;
    }
    const SiteData site = load_site(out, sc.site_id, digest);
    std::vector<json> recs;
    for (const auto& w : site.windows) {
      const std::string text = serialize_window(cfg, site, w);
      recs.push_back({{"stay_id", w.stay_id},
                      {"window_index", w.window_index},
                      {"style", cfg.serialization == SerializationStyle::canonical ? "canonical" : "template"},
                      {"text", text},
                      {"token_count", count_tokens(text)}});
    }
    write_jsonl(file, "serialized", digest, recs);
    log_line("serialize " + sc.site_id + ": " + std::to_string(recs.size()) + " texts");
  }
}

std::vector<std::string> read_texts(const fs::path& file, const SiteData& site, std::string_view digest,
                                    std::string_view producer) {
  require_digest(file, digest, producer);
  const auto doc = read_jsonl(file);
  if (doc.records.size() != site.windows.size()) {
    throw ValidationError(file.string() + " does not match the site's windows; rerun `r2v " + std::string(producer) + "`");
  }
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < doc.records.size(); ++i) {
    const auto& r = doc.records[i];
    if (r.at("stay_id").get<std::string>() != site.windows[i].stay_id ||
        r.at("window_index").get<int>() != site.windows[i].window_index) {
      throw ValidationError(file.string() + ": row " + std::to_string(i) + " is out of order");
    }
    texts.push_back(r.at("text").get<std::string>());
  }
  return texts;
}

fs::path cache_dir(const fs::path& out) {
  if (const char* env = std::getenv("R2V_CACHE_DIR"); env && *env) return env;
  return out / "cache";
}

void stage_summarize(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  if (cfg.arm.kind != ArmKind::record2vec) {
    log_line("summarize: arm " + to_string(cfg.arm) + " does not summarize; nothing to do");
    return;
  }
  for (const auto& sc : cfg.sites) {
    const fs::path file = site_dir(out, sc.site_id) / "summaries.jsonl";
    if (up_to_date({file}, digest, force)) {
      log_line("summarize " + sc.site_id + ": up to date");
      continue;
    }
    const SiteData site = load_site(out, sc.site_id, digest);
    const auto texts = read_texts(site_dir(out, sc.site_id) / "serialized.jsonl", site, digest, "serialize");

    std::unique_ptr<SummarizerBackend> backend;
    if (cfg.summarizer.backend == "mock") {
      backend = std::make_unique<MockSummarizer>(site.schema);
    } else {
      backend = std::make_unique<RemoteChatSummarizer>(RemoteChatConfig{cfg.summarizer.url, cfg.summarizer.model, {}},
                                                       std::make_shared<HttplibTransport>());
    }
    const SummaryCache cache(cache_dir(out));
    Summarizer summarizer(*backend, &cache);
    std::vector<SummarizeRequest> reqs;
    for (const auto& t : texts) reqs.push_back(make_request(cfg.prompt, t));
    auto summaries = summarizer.summarize_all(reqs, cfg.summarizer.parallelism);
    std::vector<json> recs;
    for (std::size_t i = 0; i < summaries.size(); ++i) {
      summaries[i].stay_id = site.windows[i].stay_id;
      summaries[i].window_index = site.windows[i].window_index;
      recs.push_back(to_json(summaries[i]));
    }
    write_jsonl(file, "summaries", digest, recs);
    log_line("summarize " + sc.site_id + ": " + std::to_string(recs.size()) + " summaries, " +
             std::to_string(summarizer.backend_calls()) + " backend calls");
  }
}

void stage_embed(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  if (!cfg.arm.is_text()) {
    log_line("embed: arm " + to_string(cfg.arm) + " uses grids; nothing to do");
    return;
  }
  for (const auto& sc : cfg.sites) {
    const fs::path file = site_dir(out, sc.site_id) / "embeddings.r2ve";
    if (up_to_date({file, sidecar_path(file)}, digest, force)) {
      log_line("embed " + sc.site_id + ": up to date");
      continue;
    }
    const SiteData site = load_site(out, sc.site_id, digest);
    std::vector<std::string> texts;
    if (cfg.arm.kind == ArmKind::record2vec) {
      texts = read_texts(site_dir(out, sc.site_id) / "summaries.jsonl", site, digest, "summarize");
    } else {
      texts = read_texts(site_dir(out, sc.site_id) / "serialized.jsonl", site, digest, "serialize");
    }
    std::unique_ptr<EmbedderBackend> backend;
    if (cfg.embedder.backend == "mock") {
      backend = std::make_unique<MockEmbedder>();
    } else {
      backend = std::make_unique<RemoteEmbedder>(RemoteEmbedConfig{cfg.embedder.url, cfg.embedder.model, {}},
                                                 std::make_shared<HttplibTransport>());
    }
    const auto vecs = backend->embed_batch(texts, cfg.embed);
    RowTensor t;
    t.dims = cfg.embed.dim;
    t.config_digest = digest;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      for (double v : vecs[i].values) t.data.push_back(static_cast<float>(v));
      t.keys.push_back({site.windows[i].stay_id, site.windows[i].window_index});
    }
    write_row_tensor(file, kEmbeddingMagic, t);
    log_line("embed " + sc.site_id + ": " + std::to_string(vecs.size()) + " x " + std::to_string(t.dims));
  }
}

std::vector<WindowRecord> split_windows(const SiteData& site, const std::vector<std::string>& ids) {
  const std::set<std::string> keep(ids.begin(), ids.end());
  std::vector<WindowRecord> out;
  for (const auto& w : site.windows) {
    if (keep.count(w.stay_id)) out.push_back(w);
  }
  return out;
}

void stage_grid(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  if (cfg.arm.kind != ArmKind::grid) {
    log_line("grid: arm " + to_string(cfg.arm) + " uses embeddings; nothing to do");
    return;
  }
  std::vector<fs::path> outputs{out / "grid_norm.json"};
  for (const auto& sc : cfg.sites) {
    outputs.push_back(site_dir(out, sc.site_id) / "grid.r2vg");
    outputs.push_back(sidecar_path(outputs.back()));
  }
  if (up_to_date(outputs, digest, force)) {
    log_line("grid: up to date");
    return;
  }
  // Statistics come from the source training split only and are reused
  // unchanged at every other site.
  const SiteData source = load_site(out, cfg.source, digest);
  const auto train_windows = split_windows(source, source.splits.train);
  const NormStats stats = fit_norm_stats(train_windows, source.schema);
  write_json_doc(out / "grid_norm.json", {{"source", cfg.source}, {"stats", to_json(stats)}}, digest);
  for (const auto& sc : cfg.sites) {
    const SiteData site = load_site(out, sc.site_id, digest);
    if (site.schema.size() != source.schema.size()) {
      throw ValidationError("site " + sc.site_id + " has " + std::to_string(site.schema.size()) +
                            " features but the source has " + std::to_string(source.schema.size()));
    }
    RowTensor t;
    t.dims = site.schema.size() * kWindowHours;
    t.config_digest = digest;
    for (const auto& w : site.windows) {
      for (double v : grid_features(w, site.schema, stats, cfg.arm.impute)) t.data.push_back(static_cast<float>(v));
      t.keys.push_back({w.stay_id, w.window_index});
    }
    write_row_tensor(site_dir(out, sc.site_id) / "grid.r2vg", kGridMagic, t);
    log_line("grid " + sc.site_id + ": " + std::to_string(t.rows()) + " x " + std::to_string(t.dims));
  }
}

// ---------------------------------------------------------------------------
// Supervised tasks

struct TargetStats {
  NormStats forecast;  // continuous rows, source training split
  double los_mean = 0.0;
  double los_std = 1.0;
};

json to_json(const TargetStats& t) {
  return {{"forecast", to_json(t.forecast)}, {"los_mean", t.los_mean}, {"los_std", t.los_std}};
}

TargetStats target_stats_from_json(const json& j) {
  return {norm_stats_from_json(j.at("forecast")), j.at("los_mean").get<double>(), j.at("los_std").get<double>()};
}

TargetStats fit_target_stats(const SiteData& source) {
  const auto train = split_windows(source, source.splits.train);
  if (train.empty()) throw ValidationError("source training split is empty");
  TargetStats t;
  std::vector<GridTensor> grids;
  for (const auto& w : train) grids.push_back(w.labels.forecast_target);
  t.forecast = fit_norm_stats(grids, source.schema);
  std::vector<double> los;
  for (const auto& w : train) los.push_back(w.labels.los_remaining);
  const auto ms = mean_std(los);
  t.los_mean = ms.mean;
  t.los_std = std::max(ms.std, kStdFloor);
  return t;
}

std::size_t task_outputs(Task t, const SiteData& site) {
  switch (t) {
    case Task::forecast:
      return site.schema.continuous_count() * kLookaheadHours;
    case Task::drug:
      return 2;
    case Task::labs:
      return site.labels.labs.size();
    case Task::los:
    case Task::mortality:
    case Task::age:
    case Task::sex:
      return 1;
  }
  return 1;
}

Dataset make_dataset(const Eigen::MatrixXd& x, const SiteData& site, const std::vector<std::size_t>& rows, Task task,
                     const TargetStats& stats) {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto out = static_cast<Eigen::Index>(task_outputs(task, site));
  d.x.resize(n, x.cols());
  d.y.setZero(n, out);
  if (task == Task::forecast) d.mask.setZero(n, out);
  std::vector<std::size_t> cont;
  for (std::size_t f = 0; f < site.schema.size(); ++f) {
    if (site.schema[f].kind == FeatureKind::continuous) cont.push_back(f);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t i = rows[static_cast<std::size_t>(r)];
    d.x.row(r) = x.row(static_cast<Eigen::Index>(i));
    const auto& lab = site.windows[i].labels;
    switch (task) {
      case Task::forecast: {
        const auto& g = lab.forecast_target;
        for (std::size_t c = 0; c < cont.size(); ++c) {
          for (std::size_t h = 0; h < static_cast<std::size_t>(kLookaheadHours); ++h) {
            const auto col = static_cast<Eigen::Index>(c * kLookaheadHours + h);
            if (!g.mask_at(cont[c], h)) continue;
            d.y(r, col) = (g.at(cont[c], h) - stats.forecast.mean[cont[c]]) / stats.forecast.std[cont[c]];
            d.mask(r, col) = 1.0;
          }
        }
        break;
      }
      case Task::los:
        d.y(r, 0) = (lab.los_remaining - stats.los_mean) / stats.los_std;
        break;
      case Task::mortality:
        d.y(r, 0) = lab.mortality ? 1.0 : 0.0;
        break;
      case Task::drug:
        d.y(r, 0) = lab.drug[0] ? 1.0 : 0.0;
        d.y(r, 1) = lab.drug[1] ? 1.0 : 0.0;
        break;
      case Task::labs:
        for (std::size_t k = 0; k < lab.labs.size(); ++k) d.y(r, static_cast<Eigen::Index>(k)) = lab.labs[k];
        break;
      case Task::age:
      case Task::sex:
        throw ValidationError("demographic targets are handled by the privacy stage");
    }
  }
  return d;
}

std::vector<std::size_t> rows_of(const SiteData& site, const std::vector<std::string>& ids) {
  const std::set<std::string> keep(ids.begin(), ids.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < site.windows.size(); ++i) {
    if (keep.count(site.windows[i].stay_id)) rows.push_back(i);
  }
  return rows;
}

struct Scored {
  std::string metric;
  double value = 0.0;
  json extra = json::object();
};

Scored score(const Head& head, const Dataset& d, Task task, const TargetStats& stats) {
  const Eigen::MatrixXd out = forward(head, d.x);
  Scored s;
  switch (task) {
    case Task::forecast: {
      std::vector<double> p;
      std::vector<double> y;
      std::vector<std::uint8_t> m;
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
          p.push_back(out(i, j));
          y.push_back(d.y(i, j));
          m.push_back(d.mask(i, j) != 0.0 ? 1 : 0);
        }
      }
      s.metric = "mse";
      s.value = masked_mse(p, y, m);
      break;
    }
    case Task::los: {
      std::vector<double> p(out.data(), out.data() + out.rows());
      std::vector<double> y(d.y.data(), d.y.data() + d.y.rows());
      s.metric = "mae";
      s.value = mae(p, y);
      s.extra["mae_hours"] = s.value * stats.los_std;
      break;
    }
    case Task::mortality: {
      std::vector<double> p(out.data(), out.data() + out.rows());
      std::vector<std::uint8_t> y;
      for (Eigen::Index i = 0; i < d.y.rows(); ++i) y.push_back(d.y(i, 0) > 0.5 ? 1 : 0);
      const auto deaths = std::count(y.begin(), y.end(), std::uint8_t{1});
      if (deaths == 0 || deaths == static_cast<std::ptrdiff_t>(y.size())) {
        throw ValidationError("mortality evaluation set of " + std::to_string(y.size()) +
                              " windows has a single class; raise the sites' target_windows");
      }
      s.metric = "auroc";
      s.value = auroc(p, y);
      s.extra["auprc"] = auprc(p, y);
      break;
    }
    case Task::drug:
    case Task::labs: {
      std::vector<std::vector<std::uint8_t>> preds;
      std::vector<std::vector<std::uint8_t>> labels;
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        std::vector<std::uint8_t> p;
        std::vector<std::uint8_t> l;
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
          p.push_back(sigmoid(out(i, j)) >= kDecisionThreshold ? 1 : 0);
          l.push_back(d.y(i, j) > 0.5 ? 1 : 0);
        }
        preds.push_back(std::move(p));
        labels.push_back(std::move(l));
      }
      const PRF prf = micro_prf(preds, labels);
      s.metric = "recall";
      s.value = prf.recall;
      s.extra["precision"] = prf.precision;
      s.extra["f1"] = prf.f1;
      break;
    }
    case Task::age:
    case Task::sex:
      throw ValidationError("demographic targets are handled by the privacy stage");
  }
  return s;
}

TargetStats load_target_stats(const fs::path& out, std::string_view digest) {
  const fs::path p = out / "targets.json";
  require_digest(p, digest, "train");
  return target_stats_from_json(read_json_doc(p));
}

void stage_train(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  std::vector<fs::path> outputs{out / "targets.json"};
  for (auto seed : cfg.seeds) {
    for (auto t : cfg.tasks) {
      outputs.push_back(head_path(out, seed, t));
      outputs.push_back(history_path(out, seed, t));
    }
  }
  if (up_to_date(outputs, digest, force)) {
    log_line("train: up to date");
    return;
  }
  const SiteData source = load_site(out, cfg.source, digest);
  const Eigen::MatrixXd x = load_features(out, cfg, source, digest);
  const TargetStats stats = fit_target_stats(source);
  write_json_doc(out / "targets.json", to_json(stats), digest);

  const auto train_rows = rows_of(source, source.splits.train);
  const auto val_rows = rows_of(source, source.splits.val);
  for (auto t : cfg.tasks) {
    const Dataset tr = make_dataset(x, source, train_rows, t, stats);
    const Dataset va = make_dataset(x, source, val_rows, t, stats);
    for (auto seed : cfg.seeds) {
      TrainCfg tc = cfg.train;
      tc.seed = derive_seed(seed, "train:" + std::string(to_string(t)));
      Head head = make_head(cfg.head_kind, static_cast<std::size_t>(x.cols()), task_outputs(t, source), cfg.hidden,
                            derive_seed(seed, "init:" + std::string(to_string(t))));
      const auto res = train(std::move(head), tr, va, loss_for(t), tc);
      save_head(head_path(out, seed, t), res.head);
      std::vector<json> hist;
      for (const auto& h : res.history) {
        hist.push_back({{"step", h.step}, {"lr_multiplier", h.lr_multiplier}, {"train_loss", h.train_loss},
                        {"val_loss", h.val_loss}});
      }
      write_jsonl(history_path(out, seed, t), "history", digest, hist);
      log_line("train " + std::string(to_string(t)) + " seed " + std::to_string(seed) + ": best epoch " +
               std::to_string(res.best_epoch) + " of " + std::to_string(res.history.size()));
    }
  }
}

Head load_trained_head(const fs::path& out, std::uint64_t seed, Task t, std::string_view digest) {
  require_digest(history_path(out, seed, t), digest, "train");
  const fs::path p = head_path(out, seed, t);
  if (!fs::exists(p)) throw ValidationError("missing " + p.string() + "; run `r2v train` first");
  return load_head(p);
}

void stage_eval(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  const fs::path file = metrics_dir(out) / "in_distribution.jsonl";
  if (up_to_date({file}, digest, force)) {
    log_line("eval: up to date");
    return;
  }
  const TargetStats stats = load_target_stats(out, digest);
  const SiteData source = load_site(out, cfg.source, digest);
  const Eigen::MatrixXd x = load_features(out, cfg, source, digest);
  const auto test_rows = rows_of(source, source.splits.test);
  std::vector<json> recs;
  for (auto t : cfg.tasks) {
    const Dataset te = make_dataset(x, source, test_rows, t, stats);
    for (auto seed : cfg.seeds) {
      const auto s = score(load_trained_head(out, seed, t, digest), te, t, stats);
      recs.push_back(to_json(MetricRecord{"in_distribution", to_string(cfg.arm), cfg.source, std::string(to_string(t)),
                                          seed, 0, s.metric, s.value, s.extra}));
    }
  }
  write_jsonl(file, "metrics", digest, recs);
  log_line("eval: " + std::to_string(recs.size()) + " metric records");
}

void require_target(const RunConfig& cfg) {
  if (cfg.target.empty() || cfg.target == cfg.source) throw ValidationError("config needs a target site distinct from the source");
}

void stage_transfer(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  require_target(cfg);
  const fs::path file = metrics_dir(out) / "transfer.jsonl";
  if (up_to_date({file}, digest, force)) {
    log_line("transfer: up to date");
    return;
  }
  const TargetStats stats = load_target_stats(out, digest);
  const SiteData target = load_site(out, cfg.target, digest);
  const Eigen::MatrixXd x = load_features(out, cfg, target, digest);
  const auto test_rows = rows_of(target, target.splits.test);
  const std::string pair = cfg.source + "->" + cfg.target;
  std::vector<json> recs;
  for (auto t : cfg.tasks) {
    const Dataset te = make_dataset(x, target, test_rows, t, stats);
    for (auto seed : cfg.seeds) {
      const Head head = load_trained_head(out, seed, t, digest);
      if (head.in_dim != static_cast<std::size_t>(x.cols()) || head.out_dim != task_outputs(t, target)) {
        throw ValidationError("target site representation does not fit the source head for " + std::string(to_string(t)));
      }
      const auto s = score(head, te, t, stats);
      recs.push_back(to_json(
          MetricRecord{"transfer", to_string(cfg.arm), pair, std::string(to_string(t)), seed, 0, s.metric, s.value, s.extra}));
    }
  }
  write_jsonl(file, "metrics", digest, recs);
  log_line("transfer: " + std::to_string(recs.size()) + " metric records");
}

void stage_fewshot(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  require_target(cfg);
  const fs::path file = metrics_dir(out) / "fewshot.jsonl";
  if (up_to_date({file}, digest, force)) {
    log_line("fewshot: up to date");
    return;
  }
  const TargetStats stats = load_target_stats(out, digest);
  const SiteData target = load_site(out, cfg.target, digest);
  const Eigen::MatrixXd x = load_features(out, cfg, target, digest);
  const auto pool_rows = rows_of(target, target.splits.train);
  const auto test_rows = rows_of(target, target.splits.test);
  const std::string pair = cfg.source + "->" + cfg.target;
  std::vector<json> recs;
  for (auto t : cfg.tasks) {
    const Dataset pool = make_dataset(x, target, pool_rows, t, stats);
    const Dataset te = make_dataset(x, target, test_rows, t, stats);
    for (auto seed : cfg.seeds) {
      const Head head = load_trained_head(out, seed, t, digest);
      const auto zero_shot = score(head, te, t, stats);
      for (auto k : cfg.fewshot_k) {
        FewShotCfg fc = cfg.fewshot;
        fc.seed = derive_seed(seed, "fewshot:" + std::string(to_string(t)) + ":" + std::to_string(k));
        const Head tuned = fewshot_finetune(head, pool, k, loss_for(t), fc);
        auto s = score(tuned, te, t, stats);
        s.extra["zero_shot"] = zero_shot.value;
        recs.push_back(to_json(
            MetricRecord{"fewshot", to_string(cfg.arm), pair, std::string(to_string(t)), seed, k, s.metric, s.value, s.extra}));
      }
    }
  }
  write_jsonl(file, "metrics", digest, recs);
  log_line("fewshot: " + std::to_string(recs.size()) + " metric records");
}

void stage_privacy(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  const fs::path file = metrics_dir(out) / "privacy.jsonl";
  if (up_to_date({file}, digest, force)) {
    log_line("privacy: up to date");
    return;
  }
  const SiteData source = load_site(out, cfg.source, digest);
  const Eigen::MatrixXd x = load_features(out, cfg, source, digest);
  std::vector<Demographics> demo;
  for (const auto& w : source.windows) demo.push_back(w.demographics);
  std::vector<json> recs;
  for (auto target : {ProbeTarget::age, ProbeTarget::sex}) {
    for (auto seed : cfg.seeds) {
      const auto r = privacy_probe(x, demo, target, seed);
      json rec = {{"arm", to_string(cfg.arm)}, {"site", cfg.source}, {"target", to_string(target)},
                  {"metric", r.metric},        {"value", r.value},      {"seed", seed}};
      if (target == ProbeTarget::age) {
        rec["constant_mae"] = r.constant_mae;
        rec["raw_mae_years"] = r.raw_mae_years;
      }
      recs.push_back(std::move(rec));
    }
  }
  write_jsonl(file, "privacy", digest, recs);
  log_line("privacy: " + std::to_string(recs.size()) + " probe results");
}

void stage_tokens(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  const fs::path file = metrics_dir(out) / "tokens.json";
  if (up_to_date({file}, digest, force)) {
    log_line("tokens: up to date");
    return;
  }
  json sites = json::array();
  for (const auto& sc : cfg.sites) {
    const SiteData site = load_site(out, sc.site_id, digest);
    double canonical = 0.0;
    for (const auto& w : site.windows) canonical += static_cast<double>(count_tokens(serialize_canonical(w, site.schema)));
    const double n = static_cast<double>(site.windows.size());
    json entry = {{"site", sc.site_id}, {"windows", site.windows.size()}, {"mean_canonical_tokens", canonical / n}};
    if (cfg.arm.kind == ArmKind::record2vec) {
      const fs::path sfile = site_dir(out, sc.site_id) / "summaries.jsonl";
      require_digest(sfile, digest, "summarize");
      double summary = 0.0;
      for (const auto& r : read_jsonl(sfile).records) summary += r.at("token_count").get<double>();
      entry["mean_summary_tokens"] = summary / n;
      entry["ratio"] = canonical / std::max(summary, 1.0);
    }
    if (cfg.serialization == SerializationStyle::template_lines) {
      double templ = 0.0;
      for (const auto& w : site.windows) {
        templ += static_cast<double>(count_tokens(serialize_template(w, site.schema, site.groups)));
      }
      entry["mean_template_tokens"] = templ / n;
    }
    sites.push_back(std::move(entry));
  }
  write_json_doc(file, {{"sites", sites}}, digest);
  log_line("tokens: " + std::to_string(sites.size()) + " sites");
}

json ranks_for_table(const MetricTable& table) {
  json ranks = json::object();
  for (const auto& [pair, task] : table.columns()) ranks[pair + "/" + task] = rank_methods(table, pair, task);
  return {{"wins", count_wins(table)}, {"ranks", ranks}};
}

void stage_ranks(const RunConfig& cfg, const fs::path& out, const std::string& digest, bool force) {
  const fs::path file = out / "ranks.json";
  if (up_to_date({file}, digest, force)) {
    log_line("ranks: up to date");
    return;
  }
  json tables = json::array();
  for (const auto& f : cfg.fixtures) {
    json entry = ranks_for_table(read_metric_csv(f));
    entry["fixture"] = fs::path(f).filename().string();
    tables.push_back(std::move(entry));
  }
  write_json_doc(file, {{"fixtures", tables}}, digest);
  log_line("ranks: " + std::to_string(tables.size()) + " fixture tables");
}

void stage_report(const StageOptions& opts, const std::string& digest) {
  std::vector<fs::path> runs{opts.out};
  for (const auto& r : opts.report_runs) {
    if (fs::weakly_canonical(r) != fs::weakly_canonical(opts.out)) runs.push_back(r);
  }
  const json report = build_report(runs);
  write_json_doc(opts.out / "report.json", report, digest);
  write_text_atomic(opts.out / "report.txt", render_report(report));
  log_line("report: " + std::to_string(runs.size()) + " run(s)");
}

}  // namespace

fs::path site_dir(const fs::path& out, std::string_view site_id) { return out / "sites" / std::string(site_id); }

SiteData load_site(const fs::path& out, std::string_view site_id, std::string_view digest) {
  const fs::path dir = site_dir(out, site_id);
  require_digest(dir / "site.json", digest, "synth");
  const json meta = read_json_doc(dir / "site.json");
  SiteData s;
  s.site_id = std::string(site_id);
  s.schema = schema_from_json(meta.at("schema"));
  for (const auto& [name, g] : meta.at("groups").items()) s.groups[name] = feature_group_from_string(g.get<std::string>());
  s.labels = label_spec_from_json(meta.at("labels"));
  s.splits = splits_from_json(meta.at("splits"));
  require_digest(dir / "windows.jsonl", digest, "synth");
  for (const auto& r : read_jsonl(dir / "windows.jsonl").records) s.windows.push_back(window_from_json(r));
  return s;
}

Eigen::MatrixXd load_features(const fs::path& out, const RunConfig& cfg, const SiteData& site, std::string_view digest) {
  const bool text = cfg.arm.is_text();
  const fs::path file = site_dir(out, site.site_id) / (text ? "embeddings.r2ve" : "grid.r2vg");
  const char* producer = text ? "embed" : "grid";
  if (!fs::exists(file)) throw ValidationError("missing " + file.string() + "; run `r2v " + producer + "` first");
  const RowTensor t = read_row_tensor(file, text ? kEmbeddingMagic : kGridMagic);
  if (t.config_digest != digest) {
    throw ValidationError(file.string() + " was produced by a different config; rerun `r2v " + producer + "` with --force");
  }
  if (t.rows() != site.windows.size()) throw ValidationError(file.string() + " row count does not match the site's windows");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.dims));
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (t.keys[i].stay_id != site.windows[i].stay_id || t.keys[i].window_index != site.windows[i].window_index) {
      throw ValidationError(file.string() + ": row " + std::to_string(i) + " is out of order");
    }
    for (std::size_t j = 0; j < t.dims; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.data[i * t.dims + j];
    }
  }
  return x;
}

json to_json(const MetricRecord& m) {
  json j = {{"setting", m.setting}, {"arm", m.arm},       {"cohort_pair", m.cohort_pair}, {"task", m.task},
            {"seed", m.seed},       {"metric", m.metric}, {"value", m.value}};
  if (m.setting == "fewshot") j["k"] = m.k;
  if (!m.extra.empty()) j["extra"] = m.extra;
  return j;
}

MetricRecord metric_from_json(const json& j) {
  MetricRecord m;
  m.setting = j.at("setting").get<std::string>();
  m.arm = j.at("arm").get<std::string>();
  m.cohort_pair = j.at("cohort_pair").get<std::string>();
  m.task = j.at("task").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.k = j.value("k", std::size_t{0});
  m.metric = j.at("metric").get<std::string>();
  m.value = j.at("value").get<double>();
  m.extra = j.value("extra", json::object());
  return m;
}

std::vector<MetricRecord> load_metrics(const fs::path& file, std::string* digest_out) {
  const auto doc = read_jsonl(file);
  if (digest_out) *digest_out = doc.config_digest;
  std::vector<MetricRecord> out;
  for (const auto& r : doc.records) out.push_back(metric_from_json(r));
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ValidationError("unterminated quote in CSV line: " + line);
  cells.push_back(std::move(cur));
  return cells;
}

}  // namespace

MetricTable read_metric_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  MetricTable table;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (!header) {
      if (cells != std::vector<std::string>{"method", "cohort_pair", "task", "direction", "value", "best"}) {
        throw ValidationError(where + ": expected header method,cohort_pair,task,direction,value,best");
      }
      header = true;
      continue;
    }
    if (cells.size() != 6) throw ValidationError(where + ": expected 6 fields");
    const Direction dir = direction_from_string(cells[3]);
    auto [it, fresh] = table.directions.emplace(cells[2], dir);
    if (!fresh && it->second != dir) throw ValidationError(where + ": conflicting direction for task " + cells[2]);
    std::optional<double> value;
    if (cells[4] != "NA") {
      try {
        std::size_t used = 0;
        value = std::stod(cells[4], &used);
        if (used != cells[4].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ValidationError(where + ": bad value '" + cells[4] + "'");
      }
    }
    if (cells[5] != "0" && cells[5] != "1") throw ValidationError(where + ": best must be 0 or 1");
    table.add(cells[0], cells[1], cells[2], value, cells[5] == "1");
  }
  if (!header) throw ValidationError(path.string() + ": no header line");
  return table;
}

void run_stage(std::string_view stage, const RunConfig& cfg, const StageOptions& opts) {
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end()) {
    throw ValidationError("unknown stage '" + std::string(stage) + "'");
  }
  const std::string digest = config_digest(cfg);
  const fs::path& out = opts.out;
  fs::create_directories(out);
  const fs::path cfg_file = out / "config.json";
  if (fs::exists(cfg_file) && stored_digest(cfg_file) != digest && !opts.force) {
    throw ValidationError(out.string() + " holds a run with a different config; use another --out or pass --force");
  }
  if (!fs::exists(cfg_file) || stored_digest(cfg_file) != digest) write_json_doc(cfg_file, {{"config", to_json(cfg)}}, digest);

  const auto t0 = std::chrono::steady_clock::now();
  if (stage == "synth") stage_synth(cfg, out, digest, opts.force);
  if (stage == "serialize") stage_serialize(cfg, out, digest, opts.force);
  if (stage == "summarize") stage_summarize(cfg, out, digest, opts.force);
  if (stage == "embed") stage_embed(cfg, out, digest, opts.force);
  if (stage == "grid") stage_grid(cfg, out, digest, opts.force);
  if (stage == "train") stage_train(cfg, out, digest, opts.force);
  if (stage == "eval") stage_eval(cfg, out, digest, opts.force);
  if (stage == "transfer") stage_transfer(cfg, out, digest, opts.force);
  if (stage == "fewshot") stage_fewshot(cfg, out, digest, opts.force);
  if (stage == "privacy") stage_privacy(cfg, out, digest, opts.force);
  if (stage == "tokens") stage_tokens(cfg, out, digest, opts.force);
  if (stage == "ranks") stage_ranks(cfg, out, digest, opts.force);
  if (stage == "report") stage_report(opts, digest);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Wall-clock lives in the log only, so artifacts stay byte-identical.
  fs::create_directories(out / "logs");
  std::ofstream(out / "logs" / "timings.log", std::ios::app) << stage << " " << secs << "\n";
}

void run_all(const RunConfig& cfg, const StageOptions& opts) {
  const bool transfer = !cfg.target.empty() && cfg.target != cfg.source;
  for (auto stage : kStages) {
    if ((stage == "transfer" || stage == "fewshot") && !transfer) continue;
    if (stage == "ranks" && cfg.fixtures.empty()) continue;
    run_stage(stage, cfg, opts);
  }
}

}  // namespace r2v
