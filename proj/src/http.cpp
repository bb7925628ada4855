#include "drselect/http.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "drselect/error.hpp"

namespace drselect {

namespace {

// Splits "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_base_url(const std::string& url)
{
    const auto scheme = url.find("://");
    const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
    const auto slash = url.find('/', host_start);
    if (slash == std::string::npos) {
        return {url, ""};
    }
    std::string prefix = url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }
    return {url.substr(0, slash), prefix};
}

}  // namespace

HttpTransport::HttpTransport(HttpSettings settings) : settings_(std::move(settings))
{
    if (settings_.base_url.empty()) {
        throw ValidationError("HTTP backend needs a base url");
    }
    if (const char* env = std::getenv("DRSELECT_HTTP_TIMEOUT_MS")) {
        const int v = std::atoi(env);
        if (v > 0) {
            settings_.timeout_ms = v;
        }
    }
    if (settings_.base_url.rfind("https://", 0) == 0) {
        throw ValidationError("https backends are not supported (built without TLS): " + settings_.base_url);
    }
    if (settings_.max_in_flight < 1) {
        settings_.max_in_flight = 1;
    }
    std::tie(host_, prefix_) = split_base_url(settings_.base_url);
    in_flight_ = std::make_unique<std::counting_semaphore<>>(settings_.max_in_flight);
}

HttpTransport::~HttpTransport() = default;

std::string HttpTransport::post(std::string_view path, const std::string& body,
                                const std::vector<std::pair<std::string, std::string>>& headers) const
{
    httplib::Headers hdrs;
    for (const auto& [k, v] : headers) {
        hdrs.emplace(k, v);
    }
    const std::string full_path = prefix_ + std::string(path);
    std::string last_error;
    int delay_ms = settings_.backoff_ms;
    for (int attempt = 0; attempt <= settings_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            delay_ms *= 2;
        }
        in_flight_->acquire();
        ++requests_;
        httplib::Result res;
        {
            httplib::Client cli(host_);
            const auto timeout = std::chrono::milliseconds(settings_.timeout_ms);
            cli.set_connection_timeout(timeout);
            cli.set_read_timeout(timeout);
            cli.set_write_timeout(timeout);
            res = cli.Post(full_path, hdrs, body, "application/json");
        }
        in_flight_->release();
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) {
            return res->body;
        }
        last_error = "HTTP status " + std::to_string(res->status);
    }
    throw BackendUnavailable("POST " + settings_.base_url + std::string(path) + " failed after " +
                             std::to_string(settings_.max_retries + 1) + " attempts: " + last_error);
}

}  // namespace drselect
