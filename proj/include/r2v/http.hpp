#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "r2v/core.hpp"

namespace r2v {

using Headers = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Raised by a transport when no HTTP response was obtained (connect
/// failure, timeout).
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body, const Headers& headers) = 0;
};

/// cpp-httplib backed transport. Supports http:// and https:// URLs.
class HttplibTransport : public HttpTransport {
 public:
  explicit HttplibTransport(std::chrono::seconds timeout = std::chrono::seconds(60)) : timeout_(timeout) {}
  HttpResponse post(const std::string& url, const std::string& body, const Headers& headers) override;

 private:
  std::chrono::seconds timeout_;
};

struct RetryPolicy {
  int retries = 3;
  std::chrono::milliseconds base_delay{500};
  // Replaced in tests to avoid real sleeping.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// POSTs with exponential backoff (base, 2*base, 4*base, ...). Network
/// errors, 429 and 5xx are retried; other statuses fail immediately. Throws
/// BackendError listing every attempt.
std::string post_with_retry(HttpTransport& transport, const std::string& url, const std::string& body,
                            const Headers& headers, const RetryPolicy& policy);

/// Bearer header from R2V_API_KEY, if set.
Headers auth_headers_from_env();

}  // namespace r2v
