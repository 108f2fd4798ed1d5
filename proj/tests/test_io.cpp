#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "r2v/io.hpp"
#include "support.hpp"

using namespace r2v;
namespace fs = std::filesystem;

namespace {

RowTensor sample_tensor() {
  RowTensor t;
  t.dims = 3;
  t.data = {1.5f, -2.0f, 0.1f, 3.0f, 1e-30f, -0.0f};
  t.keys = {{"a", 0}, {"b", 2}};
  t.config_digest = "abc123";
  return t;
}

void append_bytes(const fs::path& p, std::string_view b) {
  std::ofstream out(p, std::ios::binary | std::ios::app);
  out << b;
}

}  // namespace

TEST(RowTensorIo, RoundTripWithSidecar) {
  testsupport::TempDir dir("tensor");
  const auto p = dir.path() / "emb.bin";
  const auto t = sample_tensor();
  write_row_tensor(p, kEmbeddingMagic, t);
  EXPECT_TRUE(fs::exists(sidecar_path(p)));
  EXPECT_EQ(fs::file_size(p), 4u + 2 + 4 + 8 + 6 * 4);
  const auto back = read_row_tensor(p, kEmbeddingMagic);
  EXPECT_EQ(back.dims, 3u);
  EXPECT_EQ(back.rows(), 2u);
  EXPECT_EQ(back.keys, t.keys);
  EXPECT_EQ(back.config_digest, "abc123");
  ASSERT_EQ(back.data.size(), t.data.size());
  EXPECT_EQ(std::memcmp(back.data.data(), t.data.data(), t.data.size() * sizeof(float)), 0);
}

TEST(RowTensorIo, LittleEndianHeader) {
  testsupport::TempDir dir("endian");
  const auto p = dir.path() / "g.bin";
  write_row_tensor(p, kGridMagic, sample_tensor());
  std::ifstream in(p, std::ios::binary);
  std::string head(10, '\0');
  in.read(head.data(), 10);
  EXPECT_EQ(head.substr(0, 4), "R2VG");
  EXPECT_EQ(head[4], '\x01');
  EXPECT_EQ(head[5], '\x00');
  EXPECT_EQ(head[6], '\x03');
}

TEST(RowTensorIo, RejectsCorruption) {
  testsupport::TempDir dir("corrupt");
  const auto p = dir.path() / "emb.bin";
  write_row_tensor(p, kEmbeddingMagic, sample_tensor());
  EXPECT_THROW(read_row_tensor(p, kGridMagic), ValidationError);
  append_bytes(p, "x");
  EXPECT_THROW(read_row_tensor(p, kEmbeddingMagic), ValidationError);
  write_row_tensor(p, kEmbeddingMagic, sample_tensor());
  fs::resize_file(p, fs::file_size(p) - 2);
  EXPECT_THROW(read_row_tensor(p, kEmbeddingMagic), ValidationError);
  EXPECT_THROW(read_row_tensor(dir.path() / "missing.bin", kEmbeddingMagic), ValidationError);

  auto bad = sample_tensor();
  bad.keys.pop_back();
  EXPECT_THROW(write_row_tensor(p, kEmbeddingMagic, bad), ValidationError);
}

TEST(Jsonl, RoundTripAndHeader) {
  testsupport::TempDir dir("jsonl");
  const auto p = dir.path() / "x.jsonl";
  const std::vector<nlohmann::json> recs{{{"a", 1}}, {{"b", "two"}}};
  write_jsonl(p, "summaries", "d1", recs);
  const auto back = read_jsonl(p);
  EXPECT_EQ(back.kind, "summaries");
  EXPECT_EQ(back.config_digest, "d1");
  EXPECT_EQ(back.records, recs);
  EXPECT_EQ(nlohmann::json::parse(read_text(p).substr(0, read_text(p).find('\n'))), header_line("summaries", "d1"));

  write_text_atomic(p, "{\"a\": 1}\n");
  EXPECT_THROW(read_jsonl(p), ValidationError);
  write_text_atomic(p, "");
  EXPECT_THROW(read_jsonl(p), ValidationError);
  write_text_atomic(p, header_line("k", "d").dump() + "\n{broken\n");
  EXPECT_THROW(read_jsonl(p), ValidationError);
}

TEST(JsonCodecs, DomainTypesRoundTrip) {
  const auto s = testsupport::small_schema();
  const auto sb = schema_from_json(to_json(s));
  ASSERT_EQ(sb.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(sb.features()[i].name, s.features()[i].name);
    EXPECT_EQ(sb.features()[i].kind, s.features()[i].kind);
    EXPECT_EQ(sb.features()[i].unit, s.features()[i].unit);
  }
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    const auto w = testsupport::random_window(s, rng);
    EXPECT_EQ(window_from_json(to_json(w)), w);
  }
  GridTensor g(2, 3);
  g.at(1, 2) = 0.1;
  g.mask_at(1, 2) = 1;
  const auto gb = grid_from_json(to_json(g));
  EXPECT_EQ(gb.values, g.values);
  EXPECT_EQ(gb.mask, g.mask);
  Summary sum{"s1", 2, PromptKind::icd, "mock", "text here", 2};
  EXPECT_EQ(summary_from_json(to_json(sum)), sum);
  const NormStats ns{{1.0, 2.5}, {0.5, 1e-6}, {0, 1}};
  const auto nb = norm_stats_from_json(to_json(ns));
  EXPECT_EQ(nb.mean, ns.mean);
  EXPECT_EQ(nb.std, ns.std);
  EXPECT_EQ(nb.is_binary, ns.is_binary);
  const Splits sp{{"a", "b"}, {"c"}, {"d"}};
  EXPECT_EQ(splits_from_json(to_json(sp)), sp);
}
