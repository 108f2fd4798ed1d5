#include "r2v/textize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_map>

#include "r2v/util.hpp"

namespace r2v {

namespace {

constexpr std::string_view kHasValue = " has value ";
constexpr std::string_view kInHour = " in hour ";
constexpr std::string_view kNextValue = ", value ";
constexpr std::string_view kReceives = "Patient receives ";
constexpr std::string_view kAtHour = " at hour ";

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

void require_valid(const WindowRecord& w, const FeatureSchema& s) {
  auto violations = validate_window(w, s);
  if (!violations.empty()) {
    std::string msg = "invalid window " + w.stay_id + "#" + std::to_string(w.window_index) + ":";
    for (const auto& v : violations) msg += " " + v + ";";
    throw ValidationError(msg);
  }
}

}  // namespace

std::string_view to_string(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::lab:
      return "lab";
    case FeatureGroup::vital:
      return "vital";
    case FeatureGroup::bin:
      return "bin";
  }
  return "";
}

FeatureGroup feature_group_from_string(std::string_view s) {
  if (s == "lab") return FeatureGroup::lab;
  if (s == "vital") return FeatureGroup::vital;
  if (s == "bin") return FeatureGroup::bin;
  throw ValidationError("unknown feature group '" + std::string(s) + "'");
}

std::string display_name(const FeatureDef& f) {
  if (!f.display_name.empty()) return f.display_name;
  std::string out;
  out.reserve(f.name.size() + 4);
  for (std::size_t i = 0; i < f.name.size(); ++i) {
    const unsigned char c = f.name[i];
    if (i > 0 && std::isupper(c) && std::islower(static_cast<unsigned char>(f.name[i - 1]))) out.push_back(' ');
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::string serialize_canonical(const WindowRecord& w, const FeatureSchema& s) {
  require_valid(w, s);
  std::string out;
  for (const auto& f : s.features()) {
    if (f.kind != FeatureKind::continuous) continue;
    auto it = w.continuous_obs.find(f.name);
    if (it == w.continuous_obs.end() || it->second.empty()) continue;
    const auto& obs = it->second;
    out += display_name(f);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      out += i == 0 ? kHasValue : kNextValue;
      out += format_shortest(obs[i].value);
      out += kInHour;
      out += format_shortest(obs[i].hour);
    }
    out += ". ";
  }
  for (const auto& f : s.features()) {
    if (f.kind != FeatureKind::binary) continue;
    auto it = w.binary_events.find(f.name);
    if (it == w.binary_events.end() || it->second.empty()) continue;
    out += kReceives;
    out += display_name(f);
    out += kAtHour;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (i > 0) out += ", ";
      out += std::to_string(it->second[i]);
    }
    out += ". ";
  }
  if (!out.empty()) out.pop_back();
  return out;
}

std::string serialize_template(const WindowRecord& w, const FeatureSchema& s,
                               const std::map<std::string, FeatureGroup>& groups) {
  for (const auto& f : s.features()) {
    if (!groups.contains(f.name)) throw ValidationError("feature " + f.name + " has no group");
  }
  require_valid(w, s);

  struct Event {
    double hour;
    std::size_t feature;
    std::string line;
  };
  std::vector<Event> events;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& f = s[i];
    const std::string prefix = std::string(to_string(groups.at(f.name))) + "_" + f.name + " ";
    if (f.kind == FeatureKind::continuous) {
      auto it = w.continuous_obs.find(f.name);
      if (it == w.continuous_obs.end()) continue;
      for (const auto& o : it->second) {
        events.push_back({o.hour, i, prefix + format_shortest(o.value) + " hour " + format_shortest(o.hour)});
      }
    } else {
      auto it = w.binary_events.find(f.name);
      if (it == w.binary_events.end()) continue;
      for (int h : it->second) events.push_back({static_cast<double>(h), i, prefix + "1 hour " + std::to_string(h)});
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.hour != b.hour) return a.hour < b.hour;
    return a.feature < b.feature;
  });
  std::string out;
  for (const auto& e : events) {
    if (!out.empty()) out.push_back('\n');
    out += e.line;
  }
  return out;
}

namespace {

class CanonicalParser {
 public:
  CanonicalParser(std::string_view text, const FeatureSchema& s) : text_(text), schema_(s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!names_.emplace(display_name(s[i]), i).second) {
        throw ValidationError("ambiguous display name " + display_name(s[i]) + " in schema " + s.site_id());
      }
    }
  }

  ParsedObservations run() {
    ParsedObservations out;
    while (pos_ < text_.size()) {
      if (pos_ > 0) expect(" ");
      if (text_.substr(pos_).starts_with(kReceives)) {
        pos_ += kReceives.size();
        parse_binary(out);
      } else {
        parse_continuous(out);
      }
      expect(".");
    }
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }

  void expect(std::string_view lit) {
    if (!text_.substr(pos_).starts_with(lit)) fail("expected '" + std::string(lit) + "'");
    pos_ += lit.size();
  }

  std::size_t feature_before(std::string_view marker, FeatureKind kind) {
    const std::size_t at = text_.find(marker, pos_);
    if (at == std::string_view::npos) fail("expected '" + std::string(marker) + "' after feature name");
    const std::string name(text_.substr(pos_, at - pos_));
    auto it = names_.find(name);
    if (it == names_.end()) fail("unknown feature '" + name + "'");
    if (schema_[it->second].kind != kind) fail("feature '" + name + "' used with the wrong kind");
    pos_ = at + marker.size();
    return it->second;
  }

  std::string_view number_token() {
    std::size_t end = pos_;
    while (end < text_.size()) {
      const char c = text_[end];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == 'e' || c == 'E' ||
          c == '.') {
        ++end;
      } else {
        break;
      }
    }
    // A trailing '.' terminates the sentence rather than belonging to the number.
    if (end > pos_ && text_[end - 1] == '.') --end;
    if (end == pos_) fail("expected a number");
    return text_.substr(pos_, end - pos_);
  }

  double parse_real() {
    auto tok = number_token();
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size() || !std::isfinite(v)) fail("malformed number");
    pos_ += tok.size();
    return v;
  }

  int parse_int() {
    auto tok = number_token();
    int v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size()) fail("malformed integer hour");
    pos_ += tok.size();
    return v;
  }

  void parse_continuous(ParsedObservations& out) {
    const std::size_t f = feature_before(kHasValue, FeatureKind::continuous);
    auto& obs = out.continuous[schema_[f].name];
    if (!obs.empty()) fail("feature '" + schema_[f].name + "' appears twice");
    while (true) {
      Observation o;
      o.value = parse_real();
      expect(kInHour);
      o.hour = parse_real();
      obs.push_back(o);
      if (!text_.substr(pos_).starts_with(kNextValue)) break;
      pos_ += kNextValue.size();
    }
  }

  void parse_binary(ParsedObservations& out) {
    const std::size_t f = feature_before(kAtHour, FeatureKind::binary);
    auto& hours = out.binary[schema_[f].name];
    if (!hours.empty()) fail("feature '" + schema_[f].name + "' appears twice");
    while (true) {
      hours.push_back(parse_int());
      if (!text_.substr(pos_).starts_with(", ")) break;
      pos_ += 2;
    }
  }

  std::string_view text_;
  const FeatureSchema& schema_;
  std::unordered_map<std::string, std::size_t> names_;
  std::size_t pos_ = 0;
};

}  // namespace

ParsedObservations parse_canonical(std::string_view text, const FeatureSchema& s) {
  return CanonicalParser(text, s).run();
}

std::vector<std::string_view> tokenize(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = text[i];
    if (std::isspace(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::size_t j = i + 1;
      while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back(text.substr(i, j - i));
      i = j;
    } else {
      out.push_back(text.substr(i, 1));
      ++i;
    }
  }
  return out;
}

std::size_t count_tokens(std::string_view text) { return tokenize(text).size(); }

}  // namespace r2v
