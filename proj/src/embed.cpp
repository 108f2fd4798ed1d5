#include "r2v/embed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "r2v/textize.hpp"
#include "r2v/util.hpp"

namespace r2v {

void EmbedConfig::validate() const {
  if (dim == 0) throw ValidationError("embedding dim must be > 0");
  if (batch_size == 0) throw ValidationError("embedding batch size must be > 0");
}

std::vector<double> pool(std::span<const std::vector<double>> tokens, Pooling strategy) {
  if (tokens.empty()) throw ValidationError("cannot pool zero token vectors");
  const std::size_t d = tokens.front().size();
  for (const auto& t : tokens) {
    if (t.size() != d) throw ValidationError("token vectors have different dims");
  }
  switch (strategy) {
    case Pooling::cls:
      return tokens.front();
    case Pooling::last:
      return tokens.back();
    case Pooling::mean: {
      std::vector<double> out(d, 0.0);
      for (const auto& t : tokens) {
        for (std::size_t i = 0; i < d; ++i) out[i] += t[i];
      }
      for (auto& v : out) v /= static_cast<double>(tokens.size());
      return out;
    }
    case Pooling::max: {
      std::vector<double> out(d, -std::numeric_limits<double>::infinity());
      for (const auto& t : tokens) {
        for (std::size_t i = 0; i < d; ++i) out[i] = std::max(out[i], t[i]);
      }
      return out;
    }
  }
  return {};
}

std::vector<double> l2_normalize(std::vector<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (!(ss > 0.0)) throw ValidationError("cannot L2-normalize an all-zero vector");
  const double norm = std::sqrt(ss);
  for (auto& x : v) x /= norm;
  return v;
}

std::uint64_t token_hash(std::uint64_t salt, std::string_view token) {
  return mix64(fnv1a64(token) ^ mix64(salt));
}

std::vector<std::vector<double>> mock_embed_tokens(std::string_view text, std::size_t dim, std::uint64_t salt) {
  if (dim < 8) throw ValidationError("mock embedding dim must be >= 8");
  std::vector<std::vector<double>> out;
  for (auto tok : tokenize(text)) {
    const std::uint64_t h = token_hash(salt, tok);
    std::vector<double> v(dim, 0.0);
    v[h % dim] = (h >> 63) ? -1.0 : 1.0;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<EmbeddingVector> MockEmbedder::embed_batch(const std::vector<std::string>& texts, const EmbedConfig& cfg) {
  cfg.validate();
  if (cfg.dim < 8) throw ValidationError("mock embedding dim must be >= 8");
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    const auto toks = tokenize(text);
    if (toks.empty()) throw ValidationError("cannot embed empty text");
    // Sparse equivalent of pool(mock_embed_tokens(text)).
    std::vector<double> v;
    auto coord = [&](std::string_view t) {
      const std::uint64_t h = token_hash(cfg.salt, t);
      return std::pair<std::size_t, double>{h % cfg.dim, (h >> 63) ? -1.0 : 1.0};
    };
    switch (cfg.pooling) {
      case Pooling::cls:
      case Pooling::last: {
        v.assign(cfg.dim, 0.0);
        auto [i, s] = coord(cfg.pooling == Pooling::cls ? toks.front() : toks.back());
        v[i] = s;
        break;
      }
      case Pooling::mean: {
        v.assign(cfg.dim, 0.0);
        for (auto t : toks) {
          auto [i, s] = coord(t);
          v[i] += s;
        }
        for (auto& x : v) x /= static_cast<double>(toks.size());
        break;
      }
      case Pooling::max: {
        // Any token that misses coordinate i contributes a 0 there.
        std::vector<double> best(cfg.dim, -std::numeric_limits<double>::infinity());
        std::vector<std::size_t> hits(cfg.dim, 0);
        for (auto t : toks) {
          auto [i, s] = coord(t);
          best[i] = std::max(best[i], s);
          ++hits[i];
        }
        v.assign(cfg.dim, 0.0);
        for (std::size_t i = 0; i < cfg.dim; ++i) {
          if (hits[i] == toks.size()) {
            v[i] = best[i];
          } else if (hits[i] > 0) {
            v[i] = std::max(best[i], 0.0);
          }
        }
        break;
      }
    }
    EmbeddingVector e;
    e.pooling = cfg.pooling;
    e.normalized = cfg.l2_normalize;
    e.values = cfg.l2_normalize ? l2_normalize(std::move(v)) : std::move(v);
    out.push_back(std::move(e));
  }
  return out;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), id_("remote-embed:" + cfg_.model) {
  if (cfg_.url.empty()) throw ValidationError("remote embedder needs a URL");
  if (!transport_) throw ValidationError("remote embedder needs a transport");
}

std::vector<std::vector<double>> RemoteEmbedder::parse_response(const std::string& body) {
  try {
    auto doc = nlohmann::json::parse(body);
    std::vector<std::vector<double>> out;
    if (doc.contains("data")) {
      for (const auto& item : doc.at("data")) out.push_back(item.at("embedding").get<std::vector<double>>());
    } else {
      for (const auto& item : doc.at("embeddings")) out.push_back(item.get<std::vector<double>>());
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed embedding response: ") + e.what());
  }
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(const std::vector<std::string>& texts,
                                                         const EmbedConfig& cfg) {
  cfg.validate();
  if (cfg.pooling != Pooling::mean) {
    throw ValidationError("remote embedders return pooled vectors; pooling must be 'mean'");
  }
  for (const auto& t : texts) {
    if (t.empty()) throw ValidationError("cannot embed empty text");
  }
  const Headers headers = auth_headers_from_env();
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(texts.size(), start + cfg.batch_size);
    nlohmann::json body = {{"model", cfg_.model},
                           {"input", std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                                              texts.begin() + static_cast<std::ptrdiff_t>(stop))}};
    auto vectors = parse_response(post_with_retry(*transport_, cfg_.url, body.dump(), headers, cfg_.retry));
    if (vectors.size() != stop - start) {
      throw BackendError("embedding backend returned " + std::to_string(vectors.size()) + " vectors for " +
                         std::to_string(stop - start) + " inputs");
    }
    for (auto& v : vectors) {
      if (v.size() != cfg.dim) {
        throw BackendError("embedding dim mismatch: got " + std::to_string(v.size()) + ", configured " +
                           std::to_string(cfg.dim));
      }
      EmbeddingVector e;
      e.pooling = Pooling::mean;
      e.normalized = cfg.l2_normalize;
      e.values = cfg.l2_normalize ? l2_normalize(std::move(v)) : std::move(v);
      out.push_back(std::move(e));
    }
  }
  return out;
}

EmbeddingVector embed(std::string_view text, const EmbedConfig& cfg, EmbedderBackend& backend) {
  if (text.empty()) throw ValidationError("cannot embed empty text");
  return std::move(backend.embed_batch({std::string(text)}, cfg).front());
}

}  // namespace r2v
