#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "r2v/core.hpp"
#include "r2v/http.hpp"

namespace r2v {

struct EmbedConfig {
  std::string backend_id = "mock";
  std::size_t dim = 256;
  Pooling pooling = Pooling::mean;
  bool l2_normalize = true;
  std::uint64_t salt = 0;
  std::size_t batch_size = 32;

  void validate() const;
};

/// mean: elementwise average; cls: first vector; last: last vector;
/// max: elementwise maximum. Throws on zero tokens or ragged dims.
std::vector<double> pool(std::span<const std::vector<double>> tokens, Pooling strategy);

/// Divides by the Euclidean norm. Throws on an all-zero vector.
std::vector<double> l2_normalize(std::vector<double> v);

/// Per-token hashed one-hot vectors: each token maps to +-1 at
/// hash64(salt, token) mod dim, sign from the hash's top bit.
std::vector<std::vector<double>> mock_embed_tokens(std::string_view text, std::size_t dim, std::uint64_t salt);

std::uint64_t token_hash(std::uint64_t salt, std::string_view token);

class EmbedderBackend {
 public:
  virtual ~EmbedderBackend() = default;
  virtual const std::string& id() const = 0;
  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts, const EmbedConfig& cfg) = 0;
};

/// Deterministic bag-of-hashed-tokens embedder. Pooling runs over sparse
/// token states; the result equals pool(mock_embed_tokens(...)).
class MockEmbedder : public EmbedderBackend {
 public:
  const std::string& id() const override { return id_; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts, const EmbedConfig& cfg) override;

 private:
  std::string id_ = "mock-embedder-v1";
};

struct RemoteEmbedConfig {
  std::string url;
  std::string model;
  RetryPolicy retry;
};

/// POST {"model", "input": [...]} per batch. Accepts either
/// {"data": [{"embedding": [...]}, ...]} or {"embeddings": [[...], ...]}.
/// Remote vectors arrive pooled, so only mean pooling is accepted.
class RemoteEmbedder : public EmbedderBackend {
 public:
  RemoteEmbedder(RemoteEmbedConfig cfg, std::shared_ptr<HttpTransport> transport);
  const std::string& id() const override { return id_; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts, const EmbedConfig& cfg) override;

  static std::vector<std::vector<double>> parse_response(const std::string& body);

 private:
  RemoteEmbedConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  std::string id_;
};

EmbeddingVector embed(std::string_view text, const EmbedConfig& cfg, EmbedderBackend& backend);

}  // namespace r2v
