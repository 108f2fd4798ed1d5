#include "r2v/io.hpp"

#include <bit>
#include <sstream>

namespace r2v {

using nlohmann::json;

BinaryWriter::BinaryWriter(const std::filesystem::path& path) : path_(path), tmp_(path) {
  tmp_ += ".tmp";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error("cannot open " + tmp_.string() + " for writing");
}

void BinaryWriter::bytes(std::string_view b) { out_.write(b.data(), static_cast<std::streamsize>(b.size())); }
void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
void BinaryWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void BinaryWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void BinaryWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void BinaryWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void BinaryWriter::close() {
  out_.close();
  if (!out_) throw Error("write failed for " + path_.string());
  std::filesystem::rename(tmp_, path_);
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw ValidationError("cannot open " + path.string());
}

void BinaryReader::read(char* dst, std::size_t n) {
  in_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw ValidationError("truncated file " + path_.string());
}

std::string BinaryReader::bytes(std::size_t n) {
  std::string s(n, '\0');
  read(s.data(), n);
  return s;
}
std::uint8_t BinaryReader::u8() {
  char c;
  read(&c, 1);
  return static_cast<std::uint8_t>(c);
}
std::uint16_t BinaryReader::u16() {
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
  return v;
}
std::uint32_t BinaryReader::u32() {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
  return v;
}
std::uint64_t BinaryReader::u64() {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
  return v;
}
float BinaryReader::f32() { return std::bit_cast<float>(u32()); }
bool BinaryReader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

std::filesystem::path sidecar_path(const std::filesystem::path& tensor_path) {
  auto p = tensor_path;
  p += ".idx.jsonl";
  return p;
}

void write_row_tensor(const std::filesystem::path& path, std::string_view magic, const RowTensor& t) {
  if (t.dims == 0 || t.data.size() % t.dims != 0) throw ValidationError("row tensor with inconsistent shape");
  if (t.keys.size() != t.rows()) throw ValidationError("row tensor key count does not match rows");
  BinaryWriter w(path);
  w.bytes(magic);
  w.u16(kTensorVersion);
  w.u32(static_cast<std::uint32_t>(t.dims));
  w.u64(t.rows());
  for (float v : t.data) w.f32(v);
  w.close();

  std::vector<json> recs;
  recs.reserve(t.keys.size());
  for (std::size_t i = 0; i < t.keys.size(); ++i) {
    recs.push_back({{"row", i}, {"stay_id", t.keys[i].stay_id}, {"window_index", t.keys[i].window_index}});
  }
  write_jsonl(sidecar_path(path), std::string(magic) + "-index", t.config_digest, recs);
}

RowTensor read_row_tensor(const std::filesystem::path& path, std::string_view magic) {
  BinaryReader r(path);
  if (r.bytes(4) != magic) throw ValidationError(path.string() + ": bad magic, expected " + std::string(magic));
  if (const auto v = r.u16(); v != kTensorVersion) {
    throw ValidationError(path.string() + ": unsupported version " + std::to_string(v));
  }
  RowTensor t;
  t.dims = r.u32();
  const std::uint64_t rows = r.u64();
  t.data.resize(rows * t.dims);
  for (auto& v : t.data) v = r.f32();
  if (!r.at_end()) throw ValidationError(path.string() + ": trailing bytes");

  auto idx = read_jsonl(sidecar_path(path));
  t.config_digest = idx.config_digest;
  if (idx.records.size() != rows) throw ValidationError(path.string() + ": sidecar row count mismatch");
  t.keys.reserve(rows);
  for (const auto& rec : idx.records) {
    t.keys.push_back({rec.at("stay_id").get<std::string>(), rec.at("window_index").get<int>()});
  }
  return t;
}

json header_line(std::string_view kind, std::string_view digest) {
  return {{"r2v_header", {{"kind", kind}, {"config_digest", digest}, {"version", 1}}}};
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_jsonl(const std::filesystem::path& path, std::string_view kind, std::string_view digest,
                 const std::vector<json>& records) {
  std::string buf = header_line(kind, digest).dump();
  buf += '\n';
  for (const auto& r : records) {
    buf += r.dump();
    buf += '\n';
  }
  write_text_atomic(path, buf);
}

JsonlFile read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  JsonlFile out;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (first) {
      first = false;
      if (!j.contains("r2v_header")) throw ValidationError(path.string() + ": missing header line");
      out.kind = j["r2v_header"].at("kind").get<std::string>();
      out.config_digest = j["r2v_header"].at("config_digest").get<std::string>();
      continue;
    }
    out.records.push_back(std::move(j));
  }
  if (first) throw ValidationError(path.string() + ": empty file");
  return out;
}

json to_json(const FeatureSchema& s) {
  json feats = json::array();
  for (const auto& f : s.features()) {
    json jf = {{"name", f.name}, {"kind", f.kind == FeatureKind::continuous ? "continuous" : "binary"}, {"unit", f.unit}};
    if (!f.display_name.empty()) jf["display_name"] = f.display_name;
    feats.push_back(std::move(jf));
  }
  return {{"site_id", s.site_id()}, {"features", feats}};
}

FeatureSchema schema_from_json(const json& j) {
  std::vector<FeatureDef> defs;
  for (const auto& jf : j.at("features")) {
    FeatureDef f;
    f.name = jf.at("name").get<std::string>();
    const auto kind = jf.at("kind").get<std::string>();
    if (kind == "continuous") {
      f.kind = FeatureKind::continuous;
    } else if (kind == "binary") {
      f.kind = FeatureKind::binary;
    } else {
      throw ValidationError("unknown feature kind " + kind);
    }
    f.unit = jf.value("unit", "");
    f.display_name = jf.value("display_name", "");
    defs.push_back(std::move(f));
  }
  return FeatureSchema(j.at("site_id").get<std::string>(), std::move(defs));
}

json to_json(const GridTensor& g) {
  return {{"features", g.features}, {"hours", g.hours}, {"values", g.values}, {"mask", g.mask}};
}

GridTensor grid_from_json(const json& j) {
  GridTensor g;
  g.features = j.at("features").get<std::size_t>();
  g.hours = j.at("hours").get<std::size_t>();
  g.values = j.at("values").get<std::vector<double>>();
  g.mask = j.at("mask").get<std::vector<std::uint8_t>>();
  if (g.values.size() != g.features * g.hours || g.mask.size() != g.values.size()) {
    throw ValidationError("grid payload does not match its shape");
  }
  return g;
}

namespace {

json obs_to_json(const ContinuousObs& obs) {
  json out = json::object();
  for (const auto& [name, list] : obs) {
    json arr = json::array();
    for (const auto& o : list) arr.push_back({o.hour, o.value});
    out[name] = std::move(arr);
  }
  return out;
}

ContinuousObs obs_from_json(const json& j) {
  ContinuousObs out;
  for (const auto& [name, arr] : j.items()) {
    auto& list = out[name];
    for (const auto& p : arr) list.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  return out;
}

json demographics_to_json(const Demographics& d) {
  return {{"age_years", d.age_years}, {"sex", d.sex == Sex::M ? "M" : "F"}};
}

Demographics demographics_from_json(const json& j) {
  Demographics d;
  d.age_years = j.at("age_years").get<double>();
  const auto sex = j.at("sex").get<std::string>();
  if (sex != "M" && sex != "F") throw ValidationError("sex must be M or F");
  d.sex = sex == "M" ? Sex::M : Sex::F;
  return d;
}

}  // namespace

json to_json(const WindowRecord& w) {
  return {
      {"stay_id", w.stay_id},
      {"window_index", w.window_index},
      {"continuous_obs", obs_to_json(w.continuous_obs)},
      {"binary_events", w.binary_events},
      {"demographics", demographics_to_json(w.demographics)},
      {"labels",
       {{"mortality", w.labels.mortality},
        {"los_remaining", w.labels.los_remaining},
        {"drug", w.labels.drug},
        {"labs", w.labels.labs},
        {"forecast_target", to_json(w.labels.forecast_target)}}},
  };
}

WindowRecord window_from_json(const json& j) {
  WindowRecord w;
  w.stay_id = j.at("stay_id").get<std::string>();
  w.window_index = j.at("window_index").get<int>();
  w.continuous_obs = obs_from_json(j.at("continuous_obs"));
  w.binary_events = j.at("binary_events").get<BinaryEvents>();
  w.demographics = demographics_from_json(j.at("demographics"));
  const auto& l = j.at("labels");
  w.labels.mortality = l.at("mortality").get<bool>();
  w.labels.los_remaining = l.at("los_remaining").get<double>();
  w.labels.drug = l.at("drug").get<std::array<bool, 2>>();
  w.labels.labs = l.at("labs").get<std::vector<std::uint8_t>>();
  w.labels.forecast_target = grid_from_json(l.at("forecast_target"));
  return w;
}

json to_json(const Stay& s) {
  json j = {
      {"stay_id", s.stay_id},
      {"duration_hours", s.duration_hours},
      {"demographics", demographics_to_json(s.demographics)},
      {"continuous", obs_to_json(s.continuous)},
      {"events", s.events},
  };
  if (s.mortality) {
    j["mortality"] = *s.mortality;
  } else {
    j["mortality"] = nullptr;
  }
  return j;
}

Stay stay_from_json(const json& j) {
  Stay s;
  s.stay_id = j.at("stay_id").get<std::string>();
  s.duration_hours = j.at("duration_hours").get<double>();
  if (j.contains("mortality") && !j["mortality"].is_null()) s.mortality = j["mortality"].get<bool>();
  s.demographics = demographics_from_json(j.at("demographics"));
  s.continuous = obs_from_json(j.at("continuous"));
  s.events = j.at("events").get<std::map<std::string, std::vector<double>>>();
  return s;
}

json to_json(const Summary& s) {
  return {{"stay_id", s.stay_id},
          {"window_index", s.window_index},
          {"prompt_kind", to_string(s.prompt_kind)},
          {"backend_id", s.backend_id},
          {"text", s.text},
          {"token_count", s.token_count}};
}

Summary summary_from_json(const json& j) {
  Summary s;
  s.stay_id = j.at("stay_id").get<std::string>();
  s.window_index = j.at("window_index").get<int>();
  s.prompt_kind = prompt_kind_from_string(j.at("prompt_kind").get<std::string>());
  s.backend_id = j.at("backend_id").get<std::string>();
  s.text = j.at("text").get<std::string>();
  s.token_count = j.at("token_count").get<std::size_t>();
  return s;
}

json to_json(const LabelSpec& l) {
  return {{"vasopressor", l.vasopressor}, {"antibiotic", l.antibiotic}, {"labs", l.labs}};
}

LabelSpec label_spec_from_json(const json& j) {
  return {j.at("vasopressor").get<std::string>(), j.at("antibiotic").get<std::string>(),
          j.at("labs").get<std::vector<std::string>>()};
}

json to_json(const NormStats& n) { return {{"mean", n.mean}, {"std", n.std}, {"is_binary", n.is_binary}}; }

NormStats norm_stats_from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>(),
          j.at("is_binary").get<std::vector<std::uint8_t>>()};
}

json to_json(const Splits& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

Splits splits_from_json(const json& j) {
  return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
          j.at("test").get<std::vector<std::string>>()};
}

}  // namespace r2v
