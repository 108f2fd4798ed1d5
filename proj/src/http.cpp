#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "r2v/http.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"

namespace r2v {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("URL without scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpResponse HttplibTransport::post(const std::string& url, const std::string& body, const Headers& headers) {
  const auto parts = split_url(url);
  httplib::Client client(parts.origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(parts.path, h, body, "application/json");
  if (!res) throw TransportError("POST " + url + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

std::string post_with_retry(HttpTransport& transport, const std::string& url, const std::string& body,
                            const Headers& headers, const RetryPolicy& policy) {
  std::string log;
  auto delay = policy.base_delay;
  const int attempts = policy.retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    bool retryable = true;
    try {
      auto res = transport.post(url, body, headers);
      if (res.status >= 200 && res.status < 300) return res.body;
      log += "attempt " + std::to_string(attempt) + ": HTTP " + std::to_string(res.status) + "; ";
      retryable = res.status == 429 || res.status == 408 || res.status >= 500;
    } catch (const TransportError& e) {
      log += "attempt " + std::to_string(attempt) + ": " + e.what() + "; ";
    }
    if (!retryable || attempt == attempts) break;
    if (policy.sleep) {
      policy.sleep(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
    delay *= 2;
  }
  throw BackendError("backend request to " + url + " failed: " + log);
}

Headers auth_headers_from_env() {
  Headers h;
  if (const char* key = std::getenv("R2V_API_KEY"); key && *key) {
    h.emplace_back("Authorization", std::string("Bearer ") + key);
  }
  return h;
}

}  // namespace r2v
