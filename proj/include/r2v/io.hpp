#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "r2v/cohort.hpp"
#include "r2v/core.hpp"
#include "r2v/gridder.hpp"

namespace r2v {

// ---------------------------------------------------------------------------
// Little-endian primitives.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);
  void bytes(std::string_view b);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void close();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);
  std::string bytes(std::size_t n);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  bool at_end();

 private:
  void read(char* dst, std::size_t n);
  std::filesystem::path path_;
  std::ifstream in_;
};

// ---------------------------------------------------------------------------
// Row tensors: magic ("R2VE" embeddings, "R2VG" grids), u16 version = 1,
// u32 dims, u64 rows, then rows * dims little-endian f32, row-major.

inline constexpr std::string_view kEmbeddingMagic = "R2VE";
inline constexpr std::string_view kGridMagic = "R2VG";
inline constexpr std::uint16_t kTensorVersion = 1;

struct RowKey {
  std::string stay_id;
  int window_index = 0;
  auto operator<=>(const RowKey&) const = default;
};

struct RowTensor {
  std::size_t dims = 0;
  std::vector<float> data;  // rows * dims
  std::vector<RowKey> keys;
  std::string config_digest;

  std::size_t rows() const { return dims == 0 ? 0 : data.size() / dims; }
};

/// Writes `<path>` and the sidecar `<path>.idx.jsonl` (a header line with the
/// config digest, then one {"row","stay_id","window_index"} per row).
void write_row_tensor(const std::filesystem::path& path, std::string_view magic, const RowTensor& t);
RowTensor read_row_tensor(const std::filesystem::path& path, std::string_view magic);

std::filesystem::path sidecar_path(const std::filesystem::path& tensor_path);

// ---------------------------------------------------------------------------
// JSON Lines records. Every file opens with a header line
// {"r2v_header": {"kind": ..., "config_digest": ..., "version": 1}}.

nlohmann::json header_line(std::string_view kind, std::string_view digest);

/// Writes atomically (temp file + rename).
void write_jsonl(const std::filesystem::path& path, std::string_view kind, std::string_view digest,
                 const std::vector<nlohmann::json>& records);

struct JsonlFile {
  std::string kind;
  std::string config_digest;
  std::vector<nlohmann::json> records;
};

JsonlFile read_jsonl(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

nlohmann::json to_json(const FeatureSchema& s);
FeatureSchema schema_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GridTensor& g);
GridTensor grid_from_json(const nlohmann::json& j);

nlohmann::json to_json(const WindowRecord& w);
WindowRecord window_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Stay& s);
Stay stay_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Summary& s);
Summary summary_from_json(const nlohmann::json& j);

nlohmann::json to_json(const LabelSpec& l);
LabelSpec label_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const NormStats& n);
NormStats norm_stats_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Splits& s);
Splits splits_from_json(const nlohmann::json& j);

}  // namespace r2v
