#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "r2v/core.hpp"

namespace r2v {

enum class SerializationStyle { canonical, template_lines };

enum class FeatureGroup { lab, vital, bin };

std::string_view to_string(FeatureGroup g);
FeatureGroup feature_group_from_string(std::string_view s);

/// Name rendered in text: the schema's display name if set, else the
/// feature name with spaces inserted at lower-to-upper case boundaries
/// ("AirwayPressure" -> "Airway Pressure").
std::string display_name(const FeatureDef& f);

/// "<Name> has value <v> in hour <h>, value <v> in hour <h>. " per continuous
/// feature in schema order, then "Patient receives <Name> at hour <h1>, <h2>. "
/// per binary feature. Features without data are omitted and the trailing
/// space is trimmed. Throws ValidationError on an invalid window.
std::string serialize_canonical(const WindowRecord& w, const FeatureSchema& s);

/// One "<group>_<Name> <v> hour <h>" line per event, ordered by hour then
/// schema position. Binary events render value 1.
std::string serialize_template(const WindowRecord& w, const FeatureSchema& s,
                               const std::map<std::string, FeatureGroup>& groups);

struct ParsedObservations {
  ContinuousObs continuous;
  BinaryEvents binary;
  bool operator==(const ParsedObservations&) const = default;
};

/// Inverse of serialize_canonical. Throws ParseError carrying the byte
/// offset of the first malformed token.
ParsedObservations parse_canonical(std::string_view text, const FeatureSchema& s);

/// Maximal ASCII-alphanumeric runs (bytes >= 0x80 count as word characters)
/// are single tokens; every other non-space byte is its own token.
std::vector<std::string_view> tokenize(std::string_view text);
std::size_t count_tokens(std::string_view text);

}  // namespace r2v
