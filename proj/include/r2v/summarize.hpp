#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "r2v/core.hpp"
#include "r2v/http.hpp"
#include "r2v/textize.hpp"

namespace r2v {

/// System prompt for a summarization strategy. Throws for PromptKind::none.
std::string_view render_prompt(PromptKind k);

struct Decoding {
  double temperature = 0.0;
  int max_tokens = 512;
};

struct SummarizeRequest {
  PromptKind kind = PromptKind::zero_shot;
  std::string system_prompt;
  std::string user_content;
  Decoding decoding;
};

SummarizeRequest make_request(PromptKind kind, std::string serialized, Decoding decoding = {});

/// 64 hex chars identifying (backend, prompt kind, serialized text).
std::string cache_key(std::string_view backend_id, PromptKind kind, std::string_view text);

class SummarizerBackend {
 public:
  virtual ~SummarizerBackend() = default;
  virtual const std::string& id() const = 0;
  /// Completion text. Throws BackendError on failure.
  virtual std::string complete(const SummarizeRequest& req) = 0;
};

/// Offline stand-in for a frozen LLM: per continuous feature
/// "<Name>: first <v> at hour <h>, last <v> at hour <h>, min <v>, max <v>, trend <dir>."
/// and per binary feature "<Name> given <n> times.".
std::string mock_summarize(const WindowRecord& w, const FeatureSchema& s);
std::string mock_summarize(const ParsedObservations& obs, const FeatureSchema& s);

/// Recovers the serialized window from the request text and applies
/// mock_summarize, so it accepts exactly what a remote backend would see.
class MockSummarizer : public SummarizerBackend {
 public:
  explicit MockSummarizer(FeatureSchema schema) : schema_(std::move(schema)) {}
  const std::string& id() const override { return id_; }
  std::string complete(const SummarizeRequest& req) override;

 private:
  FeatureSchema schema_;
  std::string id_ = "mock-summarizer-v1";
};

struct RemoteChatConfig {
  std::string url;
  std::string model;
  RetryPolicy retry;
};

/// Chat-completions style endpoint: messages = [system prompt, serialized
/// window]; reads choices[0].message.content.
class RemoteChatSummarizer : public SummarizerBackend {
 public:
  RemoteChatSummarizer(RemoteChatConfig cfg, std::shared_ptr<HttpTransport> transport);
  const std::string& id() const override { return id_; }
  std::string complete(const SummarizeRequest& req) override;

  static std::string request_body(const std::string& model, const SummarizeRequest& req);
  static std::string parse_completion(const std::string& body);

 private:
  RemoteChatConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  std::string id_;
};

/// Directory of summaries keyed by cache_key. Writes go through a temp file
/// and rename so concurrent readers never observe partial entries.
class SummaryCache {
 public:
  explicit SummaryCache(std::filesystem::path dir);
  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& text) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const;
  std::filesystem::path dir_;
};

/// Cache-first summarization. Thread-safe.
class Summarizer {
 public:
  Summarizer(SummarizerBackend& backend, const SummaryCache* cache) : backend_(backend), cache_(cache) {}

  Summary summarize(const SummarizeRequest& req);

  /// Summaries in request order. Identical requests are sent once; at most
  /// `parallelism` requests are in flight.
  std::vector<Summary> summarize_all(const std::vector<SummarizeRequest>& reqs, int parallelism);

  std::size_t backend_calls() const noexcept { return calls_.load(); }

 private:
  SummarizerBackend& backend_;
  const SummaryCache* cache_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace r2v
