#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <semaphore>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace drselect {

struct HttpSettings {
    std::string base_url;  ///< http://host[:port][/prefix]
    int timeout_ms = 30000;
    int max_retries = 3;
    int backoff_ms = 250;    ///< first retry delay; doubles each retry, no jitter
    int max_in_flight = 8;
};

/// JSON-over-HTTP POST with bounded retries and an in-flight request cap.
/// Safe to call from many threads.
class HttpTransport {
public:
    /// DRSELECT_HTTP_TIMEOUT_MS, when set, overrides settings.timeout_ms.
    explicit HttpTransport(HttpSettings settings);
    ~HttpTransport();
    HttpTransport(const HttpTransport&) = delete;
    HttpTransport& operator=(const HttpTransport&) = delete;

    /// Issues at most max_retries + 1 requests. Non-200 statuses and transport
    /// failures are retried; throws BackendUnavailable when all attempts fail.
    std::string post(std::string_view path, const std::string& body,
                     const std::vector<std::pair<std::string, std::string>>& headers = {}) const;

    const HttpSettings& settings() const noexcept { return settings_; }
    std::size_t requests_sent() const noexcept { return requests_.load(); }

private:
    HttpSettings settings_;
    std::string host_;
    std::string prefix_;
    std::unique_ptr<std::counting_semaphore<>> in_flight_;
    mutable std::atomic<std::size_t> requests_{0};
};

}  // namespace drselect
