#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <httplib.h>

#include "fapo/service.hpp"

namespace fapo {

struct ClientConfig {
    std::string base_url;  // falls back to REWARD_SERVICE_URL when empty
    int max_in_flight = 8;
    int retries = 2;
    double backoff_initial_ms = 50.0;
    double backoff_max_ms = 2000.0;
    double timeout_sec = 10.0;
};

// Terminal per-request outcome: either a response or an error code, never
// both. attempts counts every send, including the successful one.
struct ScoreOutcome {
    std::string request_id;
    std::optional<ScoreResponse> response;
    std::optional<std::string> error_code;
    int attempts = 0;

    bool ok() const { return response.has_value(); }
};

struct BatchResult {
    std::vector<ScoreOutcome> outcomes;  // in submission order
    int peak_in_flight = 0;
};

inline std::string resolve_service_url(const ClientConfig& cfg) {
    if (!cfg.base_url.empty()) return cfg.base_url;
    if (const char* env = std::getenv("REWARD_SERVICE_URL"); env && *env) return env;
    throw InvalidArgument("no service url: set base_url or REWARD_SERVICE_URL");
}

// Scores a batch against the service with at most max_in_flight requests
// outstanding. Failed sends are retried with exponential backoff; a request
// that exhausts its retries becomes a terminal error entry without aborting
// the rest of the batch.
inline BatchResult submit_batch(const ClientConfig& cfg,
                                const std::vector<ScoreRequest>& requests) {
    if (cfg.max_in_flight < 1) throw InvalidArgument("max_in_flight must be >= 1");
    if (cfg.retries < 0) throw InvalidArgument("negative retries");
    {
        std::unordered_set<std::string> seen;
        for (const ScoreRequest& r : requests)
            if (!seen.insert(r.request_id).second)
                throw InvalidArgument("duplicate request_id in batch: " + r.request_id);
    }

    const std::string url = resolve_service_url(cfg);
    BatchResult result;
    result.outcomes.resize(requests.size());
    if (requests.empty()) return result;

    std::atomic<std::size_t> next{0};
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};

    auto run_one = [&](httplib::Client& client, std::size_t index) {
        const ScoreRequest& request = requests[index];
        ScoreOutcome outcome;
        outcome.request_id = request.request_id;
        const std::string body = io::score_request_to_json(request).dump();

        double backoff_ms = cfg.backoff_initial_ms;
        for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
            outcome.attempts = attempt + 1;
            const int current = in_flight.fetch_add(1) + 1;
            int observed_peak = peak.load();
            while (current > observed_peak && !peak.compare_exchange_weak(observed_peak, current)) {
            }
            httplib::Result res = client.Post("/score", body, "application/json");
            in_flight.fetch_sub(1);

            bool retryable = false;
            if (!res) {
                outcome.error_code = "unreachable";
                retryable = true;
            } else if (res->status == 200) {
                try {
                    outcome.response = io::score_response_from_json(json::parse(res->body));
                    outcome.error_code.reset();
                    return outcome;
                } catch (const std::exception&) {
                    outcome.error_code = "bad_response";
                    retryable = false;
                }
            } else {
                outcome.error_code = "http_" + std::to_string(res->status);
                try {
                    const json j = json::parse(res->body);
                    if (j.contains("error")) {
                        outcome.error_code = j["error"].value("code", *outcome.error_code);
                        retryable = j["error"].value("retryable", false);
                    }
                } catch (const std::exception&) {
                    retryable = res->status >= 500;
                }
            }
            if (!retryable || attempt == cfg.retries) return outcome;
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff_ms));
            backoff_ms = std::min(backoff_ms * 2.0, cfg.backoff_max_ms);
        }
        return outcome;
    };

    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.max_in_flight), requests.size());
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            httplib::Client client(url);
            client.set_connection_timeout(std::chrono::duration<double>(cfg.timeout_sec));
            client.set_read_timeout(std::chrono::duration<double>(cfg.timeout_sec));
            for (;;) {
                const std::size_t index = next.fetch_add(1);
                if (index >= requests.size()) return;
                result.outcomes[index] = run_one(client, index);
            }
        });
    }
    for (std::thread& t : pool) t.join();
    result.peak_in_flight = peak.load();
    return result;
}

}  // namespace fapo
