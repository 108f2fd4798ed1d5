#include <fstream>
#include <set>

#include "r2v/pipeline.hpp"
#include "r2v/util.hpp"

namespace r2v {

using nlohmann::json;

Arm arm_from_string(std::string_view s) {
  if (s == "record2vec") return {ArmKind::record2vec};
  if (s == "no_summary") return {ArmKind::no_summary};
  if (s == "template") return {ArmKind::template_text};
  if (s.starts_with("grid:")) return {ArmKind::grid, impute_mode_from_string(s.substr(5))};
  throw ValidationError("unknown representation arm '" + std::string(s) + "'");
}

std::string to_string(const Arm& a) {
  switch (a.kind) {
    case ArmKind::record2vec:
      return "record2vec";
    case ArmKind::no_summary:
      return "no_summary";
    case ArmKind::template_text:
      return "template";
    case ArmKind::grid:
      return a.impute == ImputeMode::mean_fill ? "grid:mean" : "grid:" + std::string(to_string(a.impute));
  }
  return "";
}

namespace {

std::string_view style_name(SerializationStyle s) { return s == SerializationStyle::canonical ? "canonical" : "template"; }

SerializationStyle default_style(const Arm& a) {
  return a.kind == ArmKind::template_text ? SerializationStyle::template_lines : SerializationStyle::canonical;
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ValidationError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
  }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config " + where + "." + key + ": " + e.what());
  }
}

json backend_json(const BackendConfig& b) {
  return {{"backend", b.backend}, {"url", b.url}, {"model", b.model}, {"parallelism", b.parallelism}};
}

BackendConfig backend_from(const json& j, const std::string& where) {
  check_keys(j, {"backend", "url", "model", "parallelism"}, where);
  BackendConfig b;
  b.backend = get<std::string>(j, "backend", where);
  b.url = get<std::string>(j, "url", where);
  b.model = get<std::string>(j, "model", where);
  b.parallelism = get<int>(j, "parallelism", where);
  return b;
}

}  // namespace

json default_config_json() {
  RunConfig c;
  c.sites = {{"A", 2000, false, 0.0, false}, {"B", 2000, false, 0.3, true}};
  c.source = "A";
  c.target = "B";
  c.fixtures = {};
  return to_json(c);
}

json to_json(const RunConfig& c) {
  json sites = json::array();
  for (const auto& s : c.sites) {
    sites.push_back({{"site_id", s.site_id},
                     {"target_windows", s.target_windows},
                     {"leak_demographics", s.leak_demographics},
                     {"rename_fraction", s.rename_fraction},
                     {"unit_shift", s.unit_shift}});
  }
  json tasks = json::array();
  for (auto t : c.tasks) tasks.push_back(to_string(t));
  return {
      {"seed", c.seed},
      {"seeds", c.seeds},
      {"sites", sites},
      {"source", c.source},
      {"target", c.target},
      {"arm", to_string(c.arm)},
      {"serialization", style_name(c.serialization)},
      {"prompt", to_string(c.prompt)},
      {"summarizer", backend_json(c.summarizer)},
      {"embedder", backend_json(c.embedder)},
      {"embed",
       {{"dim", c.embed.dim},
        {"pooling", to_string(c.embed.pooling)},
        {"l2_normalize", c.embed.l2_normalize},
        {"salt", c.embed.salt},
        {"batch_size", c.embed.batch_size}}},
      {"head", {{"kind", to_string(c.head_kind)}, {"hidden", c.hidden}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"warmup_cosine", c.train.warmup_cosine}}},
      {"tasks", tasks},
      {"fewshot",
       {{"k", c.fewshot_k},
        {"base_lr", c.fewshot.base_lr},
        {"ref_batch", c.fewshot.ref_batch},
        {"total_steps", c.fewshot.total_steps},
        {"weight_decay", c.fewshot.weight_decay}}},
      {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
      {"fixtures", c.fixtures},
  };
}

RunConfig config_from_json(const json& user) {
  json doc = default_config_json();
  // "serialization" is derived from the arm unless given explicitly.
  doc.erase("serialization");
  if (user.contains("sites")) doc["sites"] = json::array();
  doc.merge_patch(user);

  check_keys(doc, {"seed", "seeds", "sites", "source", "target", "arm", "serialization", "prompt", "summarizer",
                   "embedder", "embed", "head", "train", "tasks", "fewshot", "split", "fixtures"},
             "");
  RunConfig c;
  c.seed = get<std::uint64_t>(doc, "seed", "");
  c.seeds = get<std::vector<std::uint64_t>>(doc, "seeds", "");
  for (const auto& s : doc.at("sites")) {
    check_keys(s, {"site_id", "target_windows", "leak_demographics", "rename_fraction", "unit_shift"}, "sites[]");
    SiteConfig sc;
    sc.site_id = get<std::string>(s, "site_id", "sites[]");
    sc.target_windows = s.value("target_windows", sc.target_windows);
    sc.leak_demographics = s.value("leak_demographics", sc.leak_demographics);
    sc.rename_fraction = s.value("rename_fraction", sc.rename_fraction);
    sc.unit_shift = s.value("unit_shift", sc.unit_shift);
    c.sites.push_back(std::move(sc));
  }
  c.source = get<std::string>(doc, "source", "");
  c.target = get<std::string>(doc, "target", "");
  c.arm = arm_from_string(get<std::string>(doc, "arm", ""));
  c.serialization = default_style(c.arm);
  if (doc.contains("serialization")) {
    const auto s = get<std::string>(doc, "serialization", "");
    if (s == "canonical") {
      c.serialization = SerializationStyle::canonical;
    } else if (s == "template") {
      c.serialization = SerializationStyle::template_lines;
    } else {
      throw ValidationError("serialization must be canonical or template");
    }
  }
  c.prompt = prompt_kind_from_string(get<std::string>(doc, "prompt", ""));
  c.summarizer = backend_from(doc.at("summarizer"), "summarizer");
  c.embedder = backend_from(doc.at("embedder"), "embedder");

  const auto& e = doc.at("embed");
  check_keys(e, {"dim", "pooling", "l2_normalize", "salt", "batch_size"}, "embed");
  c.embed.dim = get<std::size_t>(e, "dim", "embed");
  c.embed.pooling = pooling_from_string(get<std::string>(e, "pooling", "embed"));
  c.embed.l2_normalize = get<bool>(e, "l2_normalize", "embed");
  c.embed.salt = get<std::uint64_t>(e, "salt", "embed");
  c.embed.batch_size = get<std::size_t>(e, "batch_size", "embed");
  c.embed.backend_id = c.embedder.backend;

  const auto& h = doc.at("head");
  check_keys(h, {"kind", "hidden"}, "head");
  c.head_kind = head_kind_from_string(get<std::string>(h, "kind", "head"));
  c.hidden = get<std::vector<std::size_t>>(h, "hidden", "head");
  if (c.head_kind == HeadKind::linear) c.hidden.clear();

  const auto& t = doc.at("train");
  check_keys(t, {"batch_size", "lr", "weight_decay", "max_epochs", "patience", "warmup_cosine"}, "train");
  c.train.batch_size = get<std::size_t>(t, "batch_size", "train");
  c.train.lr = get<double>(t, "lr", "train");
  c.train.weight_decay = get<double>(t, "weight_decay", "train");
  c.train.max_epochs = get<int>(t, "max_epochs", "train");
  c.train.patience = get<int>(t, "patience", "train");
  c.train.warmup_cosine = get<bool>(t, "warmup_cosine", "train");

  c.tasks.clear();
  for (const auto& name : get<std::vector<std::string>>(doc, "tasks", "")) c.tasks.push_back(task_from_string(name));

  const auto& f = doc.at("fewshot");
  check_keys(f, {"k", "base_lr", "ref_batch", "total_steps", "weight_decay"}, "fewshot");
  c.fewshot_k = get<std::vector<std::size_t>>(f, "k", "fewshot");
  c.fewshot.base_lr = get<double>(f, "base_lr", "fewshot");
  c.fewshot.ref_batch = get<std::size_t>(f, "ref_batch", "fewshot");
  c.fewshot.total_steps = get<long>(f, "total_steps", "fewshot");
  c.fewshot.weight_decay = get<double>(f, "weight_decay", "fewshot");

  const auto& sp = doc.at("split");
  check_keys(sp, {"train", "val", "test"}, "split");
  c.split = {get<double>(sp, "train", "split"), get<double>(sp, "val", "split"), get<double>(sp, "test", "split")};
  c.fixtures = get<std::vector<std::string>>(doc, "fixtures", "");
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ValidationError("seeds must not be empty");
  if (sites.empty()) throw ValidationError("at least one site is required");
  std::set<std::string> ids;
  for (const auto& s : sites) {
    if (s.site_id.empty()) throw ValidationError("site_id must not be empty");
    if (s.site_id.find_first_of("/\\.") != std::string::npos) throw ValidationError("site_id may not contain / \\ or .");
    if (!ids.insert(s.site_id).second) throw ValidationError("duplicate site_id " + s.site_id);
    if (s.target_windows <= 0) throw ValidationError("target_windows must be > 0");
  }
  site(source);
  if (!target.empty()) site(target);
  if (arm.kind == ArmKind::template_text && serialization != SerializationStyle::template_lines) {
    throw ValidationError("the template arm needs template serialization");
  }
  if (arm.kind == ArmKind::record2vec && serialization != SerializationStyle::canonical) {
    throw ValidationError("the record2vec arm summarizes canonical serializations");
  }
  if (arm.kind == ArmKind::record2vec && prompt == PromptKind::none) {
    throw ValidationError("the record2vec arm needs a prompt kind");
  }
  for (const auto* b : {&summarizer, &embedder}) {
    if (b->backend != "mock" && b->backend != "remote") throw ValidationError("backend must be mock or remote");
    if (b->backend == "remote" && b->url.empty()) throw ValidationError("remote backend needs a url");
    if (b->parallelism < 1) throw ValidationError("parallelism must be >= 1");
  }
  embed.validate();
  if (head_kind == HeadKind::mlp && hidden.empty()) throw ValidationError("mlp head needs hidden widths");
  if (tasks.empty()) throw ValidationError("tasks must not be empty");
  if (train.batch_size == 0 || train.max_epochs <= 0 || train.patience <= 0) {
    throw ValidationError("train batch_size, max_epochs and patience must be positive");
  }
}

const SiteConfig& RunConfig::site(std::string_view id) const {
  for (const auto& s : sites) {
    if (s.site_id == id) return s;
  }
  throw ValidationError("no site named '" + std::string(id) + "'");
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ValidationError("--set expects path=value, got '" + std::string(assignment) + "'");
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ValidationError("bad override path '" + path + "'");
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw ValidationError("override path '" + path + "' indexes an array with '" + key + "'");
      }
      if (idx >= node->size()) throw ValidationError("override index out of range in '" + path + "'");
      node = &(*node)[idx];
    } else {
      if (!node->is_object()) *node = json::object();
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

std::string config_digest(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed) {
  json doc = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ValidationError("cannot open config " + file->string());
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError("config " + file->string() + ": " + e.what());
    }
  }
  if (!overrides.empty()) {
    // Overrides address the effective document so defaults can be targeted.
    json full = default_config_json();
    full.erase("serialization");
    if (doc.contains("sites")) full["sites"] = json::array();
    full.merge_patch(doc);
    for (const auto& o : overrides) apply_override(full, o);
    doc = std::move(full);
  }
  if (seed) doc["seed"] = *seed;
  return config_from_json(doc);
}

}  // namespace r2v
