#include "r2v/summarize.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "r2v/util.hpp"

namespace r2v {

namespace {

constexpr std::string_view kZeroShotPrompt =
    "You are a clinical agent that analyze and then provide the most concise summarization on ICU time series "
    "data for forecasting.";

constexpr std::string_view kIcdPrompt =
    "You are a clinical analysis agent. Summarize ICU time-series patient data for forecasting using this "
    "structure:\n"
    "- Trend — overall direction of vitals, labs, therapies, and organ support.\n"
    "- Seasonality — repeating cycles (e.g., circadian).\n"
    "- Irregularities — acute deviations or events.\n"
    "Map each diagnosis to its affected organ system (cardiac, respiratory, hepatic, renal, neurologic, etc.). "
    "For every system, assign a severity score from 1 (least affected) to 10 (most severe) based on data patterns "
    "and level of support required. Output only the summary in clear clinical prose, concluding with a "
    "semicolon-separated list of organ systems and scores (e.g., \"Cardiovascular 7/10; Respiratory 8/10; "
    "Hepatic 3/10\"). Do not explain your reasoning.";

constexpr std::string_view kTrendPrompt =
    "Examine the data closely and describe the trend changes step by step over time. For example: from [start] "
    "to [midpoint], what happened? Then from [midpoint] to [end], what happened? After describing each phase, "
    "conclude with an overall summary in natural language. Summarize as many feature as possible starting from "
    "the most significant ones in concise words. Only include your description and summarization.";

constexpr std::string_view kCotPrompt =
    "You are a healthcare agent that summarizes ICU patients' time series status for future time series "
    "forecasting. Analyze this step by step.\n"
    "1. Analyze the time series data to identify key trends.\n"
    "2. Based on the identified trends, determine potential clinical implications.\n"
    "3. Summarize the findings and suggest possible interventions.\n"
    "Summarize as many feature as possible starting from the most significant ones in concise words and only "
    "respond with your summarization.";

constexpr double kTrendDeadband = 1e-9;

}  // namespace

std::string_view render_prompt(PromptKind k) {
  switch (k) {
    case PromptKind::zero_shot:
      return kZeroShotPrompt;
    case PromptKind::cot:
      return kCotPrompt;
    case PromptKind::icd:
      return kIcdPrompt;
    case PromptKind::trend:
      return kTrendPrompt;
    case PromptKind::none:
      break;
  }
  throw ValidationError("prompt kind 'none' has no template");
}

SummarizeRequest make_request(PromptKind kind, std::string serialized, Decoding decoding) {
  if (decoding.temperature < 0) throw ValidationError("temperature must be >= 0");
  return {kind, std::string(render_prompt(kind)), std::move(serialized), decoding};
}

std::string cache_key(std::string_view backend_id, PromptKind kind, std::string_view text) {
  // Length-prefixed fields keep the encoding injective.
  std::string buf;
  for (std::string_view part : {backend_id, to_string(kind), text}) {
    buf += std::to_string(part.size());
    buf += ':';
    buf += part;
  }
  return sha256_hex(buf);
}

std::string mock_summarize(const ParsedObservations& obs, const FeatureSchema& s) {
  std::string out;
  auto sentence = [&](const std::string& text) {
    if (!out.empty()) out += ' ';
    out += text;
  };
  for (const auto& f : s.features()) {
    if (f.kind != FeatureKind::continuous) continue;
    auto it = obs.continuous.find(f.name);
    if (it == obs.continuous.end() || it->second.empty()) continue;
    const auto& v = it->second;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end(),
                                              [](const Observation& a, const Observation& b) { return a.value < b.value; });
    const double delta = v.back().value - v.front().value;
    const char* trend = delta > kTrendDeadband ? "rising" : (delta < -kTrendDeadband ? "falling" : "flat");
    sentence(display_name(f) + ": first " + format_shortest(v.front().value) + " at hour " +
             format_shortest(v.front().hour) + ", last " + format_shortest(v.back().value) + " at hour " +
             format_shortest(v.back().hour) + ", min " + format_shortest(lo->value) + ", max " +
             format_shortest(hi->value) + ", trend " + trend + ".");
  }
  for (const auto& f : s.features()) {
    if (f.kind != FeatureKind::binary) continue;
    auto it = obs.binary.find(f.name);
    if (it == obs.binary.end() || it->second.empty()) continue;
    sentence(display_name(f) + " given " + std::to_string(it->second.size()) + " times.");
  }
  return out;
}

std::string mock_summarize(const WindowRecord& w, const FeatureSchema& s) {
  return mock_summarize(ParsedObservations{w.continuous_obs, w.binary_events}, s);
}

std::string MockSummarizer::complete(const SummarizeRequest& req) {
  return mock_summarize(parse_canonical(req.user_content, schema_), schema_);
}

RemoteChatSummarizer::RemoteChatSummarizer(RemoteChatConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), id_("remote-chat:" + cfg_.model) {
  if (cfg_.url.empty()) throw ValidationError("remote summarizer needs a URL");
  if (!transport_) throw ValidationError("remote summarizer needs a transport");
}

std::string RemoteChatSummarizer::request_body(const std::string& model, const SummarizeRequest& req) {
  nlohmann::json body = {
      {"model", model},
      {"temperature", req.decoding.temperature},
      {"max_tokens", req.decoding.max_tokens},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", req.system_prompt}},
                              {{"role", "user"}, {"content", req.user_content}}})},
  };
  return body.dump();
}

std::string RemoteChatSummarizer::parse_completion(const std::string& body) {
  try {
    auto doc = nlohmann::json::parse(body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed chat completion: ") + e.what());
  }
}

std::string RemoteChatSummarizer::complete(const SummarizeRequest& req) {
  Headers headers = auth_headers_from_env();
  return parse_completion(post_with_retry(*transport_, cfg_.url, request_body(cfg_.model, req), headers, cfg_.retry));
}

SummaryCache::SummaryCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path SummaryCache::path_for(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".txt");
}

std::optional<std::string> SummaryCache::get(const std::string& key) const {
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void SummaryCache::put(const std::string& key, const std::string& text) const {
  const auto dst = path_for(key);
  std::filesystem::create_directories(dst.parent_path());
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  auto tmp = dst;
  tmp += ".tmp." + tid.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write cache entry " + tmp.string());
  }
  std::filesystem::rename(tmp, dst);
}

Summary Summarizer::summarize(const SummarizeRequest& req) {
  Summary out;
  out.prompt_kind = req.kind;
  out.backend_id = backend_.id();
  const std::string key = cache_key(backend_.id(), req.kind, req.user_content);
  std::optional<std::string> hit = cache_ ? cache_->get(key) : std::nullopt;
  if (hit) {
    out.text = std::move(*hit);
  } else {
    ++calls_;
    out.text = backend_.complete(req);
    if (out.text.empty()) throw BackendError("empty summary");
    if (cache_) cache_->put(key, out.text);
  }
  out.token_count = count_tokens(out.text);
  return out;
}

std::vector<Summary> Summarizer::summarize_all(const std::vector<SummarizeRequest>& reqs, int parallelism) {
  // Deduplicate so two identical requests never race past the cache.
  std::map<std::string, std::size_t> first_of;
  std::vector<std::size_t> unique;
  std::vector<std::size_t> source(reqs.size());
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    auto [it, fresh] = first_of.emplace(cache_key(backend_.id(), reqs[i].kind, reqs[i].user_content), i);
    if (fresh) unique.push_back(i);
    source[i] = it->second;
  }

  std::vector<std::optional<Summary>> done(reqs.size());
  std::vector<std::exception_ptr> errors(reqs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < unique.size(); k = next++) {
      const std::size_t i = unique[k];
      try {
        done[i] = summarize(reqs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(parallelism, static_cast<int>(unique.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i : unique) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }
  std::vector<Summary> out;
  out.reserve(reqs.size());
  for (std::size_t i = 0; i < reqs.size(); ++i) out.push_back(*done[source[i]]);
  return out;
}

}  // namespace r2v
