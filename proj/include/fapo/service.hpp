#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "fapo/io.hpp"
#include "fapo/judge.hpp"
#include "fapo/rewards.hpp"

namespace fapo {

class ServiceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct WorkerStats {
    long long dispatched = 0;
    long long completed = 0;
    long long failed = 0;
    long long in_flight = 0;
};

struct RouterStats {
    std::vector<WorkerStats> workers;
    long long queue_depth = 0;
};

// Least-loaded routing over a stats snapshot: fewest in-flight first, then
// fewest dispatched, then lowest worker id. The dispatched tie-break is what
// keeps a serialized request stream round-robin instead of pinned to worker 0.
inline int route(const RouterStats& stats) {
    if (stats.workers.empty()) throw InvalidArgument("no capacity");
    int best = 0;
    for (int w = 1; w < static_cast<int>(stats.workers.size()); ++w) {
        const WorkerStats& cand = stats.workers[static_cast<std::size_t>(w)];
        const WorkerStats& cur = stats.workers[static_cast<std::size_t>(best)];
        if (cand.in_flight < cur.in_flight ||
            (cand.in_flight == cur.in_flight && cand.dispatched < cur.dispatched))
            best = w;
    }
    return best;
}

enum class ScoreMode { VerdictOnly, VerdictAndReward };

struct ScoreRequest {
    std::string request_id;
    Question question;
    Rollout rollout;
    PenaltyConfig penalty;
    ScoreMode mode = ScoreMode::VerdictAndReward;
};

struct ScoreResponse {
    std::string request_id;
    Verdict verdict;
    std::optional<double> reward;
    int worker_id = -1;
    double latency_ms = 0.0;
};

namespace io {

inline json score_request_to_json(const ScoreRequest& r) {
    json j;
    j["v"] = 1;
    j["request_id"] = r.request_id;
    j["mode"] = r.mode == ScoreMode::VerdictOnly ? "verdict_only" : "verdict_and_reward";
    j["question"] = question_to_json(r.question);
    j["rollout"] = rollout_to_json(r.rollout);
    j["penalty"] = {{"lambda", r.penalty.lambda},
                    {"reward_correct", r.penalty.reward_correct},
                    {"reward_incorrect", r.penalty.reward_incorrect}};
    return j;
}

inline ScoreRequest score_request_from_json(const json& j) {
    ScoreRequest r;
    try {
        r.request_id = j.at("request_id").get<std::string>();
        const std::string mode = j.value("mode", "verdict_and_reward");
        if (mode == "verdict_only")
            r.mode = ScoreMode::VerdictOnly;
        else if (mode == "verdict_and_reward")
            r.mode = ScoreMode::VerdictAndReward;
        else
            throw DataError("unknown mode: " + mode);
        r.question = question_from_json(j.at("question"));
        r.rollout = rollout_from_json(j.at("rollout"));
        if (j.contains("penalty")) {
            const json& p = j["penalty"];
            r.penalty.lambda = p.value("lambda", r.penalty.lambda);
            r.penalty.reward_correct = p.value("reward_correct", r.penalty.reward_correct);
            r.penalty.reward_incorrect = p.value("reward_incorrect", r.penalty.reward_incorrect);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid score request: ") + e.what());
    }
    if (r.request_id.empty()) throw DataError("request_id must be non-empty");
    if (r.rollout.question_id != r.question.id)
        throw DataError("rollout question_id does not match question");
    try {
        validate_penalty(r.penalty);
    } catch (const InvalidArgument& e) {
        throw DataError(e.what());
    }
    return r;
}

inline json score_response_to_json(const ScoreResponse& r) {
    json j;
    j["v"] = 1;
    j["request_id"] = r.request_id;
    j["verdict"] = verdict_to_json(r.verdict);
    j["reward"] = r.reward ? json(*r.reward) : json(nullptr);
    j["worker_id"] = r.worker_id;
    j["latency_ms"] = r.latency_ms;
    return j;
}

inline ScoreResponse score_response_from_json(const json& j) {
    ScoreResponse r;
    try {
        r.request_id = j.at("request_id").get<std::string>();
        r.verdict = verdict_from_json(j.at("verdict"));
        if (j.contains("reward") && !j["reward"].is_null()) r.reward = j["reward"].get<double>();
        r.worker_id = j.value("worker_id", -1);
        r.latency_ms = j.value("latency_ms", 0.0);
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid score response: ") + e.what());
    }
    return r;
}

inline json router_stats_to_json(const RouterStats& stats) {
    json workers = json::array();
    for (int w = 0; w < static_cast<int>(stats.workers.size()); ++w) {
        const WorkerStats& s = stats.workers[static_cast<std::size_t>(w)];
        workers.push_back({{"worker_id", w},
                           {"dispatched", s.dispatched},
                           {"completed", s.completed},
                           {"failed", s.failed},
                           {"in_flight", s.in_flight}});
    }
    return json{{"v", 1}, {"workers", workers}, {"queue_depth", stats.queue_depth}};
}

inline RouterStats router_stats_from_json(const json& j) {
    RouterStats stats;
    try {
        for (const json& w : j.at("workers")) {
            WorkerStats s;
            s.dispatched = w.at("dispatched").get<long long>();
            s.completed = w.at("completed").get<long long>();
            s.failed = w.at("failed").get<long long>();
            s.in_flight = w.at("in_flight").get<long long>();
            stats.workers.push_back(s);
        }
        stats.queue_depth = j.value("queue_depth", 0LL);
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid stats payload: ") + e.what());
    }
    return stats;
}

}  // namespace io

// The verdict and reward a request scores to, independent of transport. The
// service must return exactly this; tests hold it to that.
inline ScoreResponse score_request_locally(const ScoreRequest& request,
                                           const JudgeNoiseConfig& judge_cfg, int worker_id = -1) {
    ScoreResponse response;
    response.request_id = request.request_id;
    response.worker_id = worker_id;
    response.verdict = scripted_judge(request.rollout, judge_cfg);
    if (request.mode == ScoreMode::VerdictAndReward)
        response.reward = fapo_reward(request.rollout, request.question,
                                      response.verdict.is_flawed_positive, request.penalty);
    return response;
}

struct ServiceConfig {
    int workers = 4;
    std::string host = "127.0.0.1";
    int port = 0;  // 0 picks a free port
    JudgeNoiseConfig judge;
    double work_delay_ms = 0.0;  // artificial judge latency, for load tests
    int http_threads = 16;
};

// Asynchronous scoring service: an HTTP front end routing each /score request
// onto a fixed pool of judge workers with least-loaded balancing.
class RewardService {
public:
    explicit RewardService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.workers < 1) throw InvalidArgument("no capacity");
    }

    RewardService(const RewardService&) = delete;
    RewardService& operator=(const RewardService&) = delete;

    ~RewardService() { stop(); }

    void start() {
        if (running_) return;
        stats_.workers.assign(static_cast<std::size_t>(cfg_.workers), WorkerStats{});
        stats_.queue_depth = 0;
        workers_stop_ = false;
        queues_.assign(static_cast<std::size_t>(cfg_.workers), {});

        server_ = std::make_unique<httplib::Server>();
        server_->new_task_queue = [n = cfg_.http_threads] { return new httplib::ThreadPool(n); };

        server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(json{{"status", "ok"}}.dump(), "application/json");
        });

        server_->Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(io::router_stats_to_json(stats()).dump(), "application/json");
        });

        server_->Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
            handle_score(req, res);
        });

        if (cfg_.port == 0) {
            port_ = server_->bind_to_any_port(cfg_.host);
            if (port_ < 0) throw ServiceError("bind failed on " + cfg_.host);
        } else {
            if (!server_->bind_to_port(cfg_.host, cfg_.port))
                throw ServiceError("bind failed on " + cfg_.host + ":" + std::to_string(cfg_.port));
            port_ = cfg_.port;
        }

        for (int w = 0; w < cfg_.workers; ++w)
            worker_threads_.emplace_back([this, w] { worker_loop(w); });
        listen_thread_ = std::thread([this] { server_->listen_after_bind(); });
        while (!server_->is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
        running_ = true;
    }

    // Stops accepting, waits for in-flight requests to drain, then joins the
    // worker pool.
    void stop() {
        if (!running_) return;
        running_ = false;
        server_->stop();
        if (listen_thread_.joinable()) listen_thread_.join();
        {
            std::lock_guard<std::mutex> lock(mutex_);
            workers_stop_ = true;
        }
        queue_cv_.notify_all();
        for (std::thread& t : worker_threads_)
            if (t.joinable()) t.join();
        worker_threads_.clear();
        server_.reset();
    }

    bool running() const { return running_; }
    int port() const { return port_; }
    std::string base_url() const { return "http://" + cfg_.host + ":" + std::to_string(port_); }

    RouterStats stats() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return stats_;
    }

private:
    struct Job {
        ScoreRequest request;
        std::promise<std::pair<int, json>> done;  // (http status, body)
    };

    void handle_score(const httplib::Request& req, httplib::Response& res) {
        ScoreRequest request;
        try {
            request = io::score_request_from_json(json::parse(req.body));
        } catch (const json::exception& e) {
            respond_error(res, 400, "bad_request", e.what(), false);
            return;
        } catch (const DataError& e) {
            respond_error(res, 400, "bad_request", e.what(), false);
            return;
        }

        std::future<std::pair<int, json>> result;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            const int worker = route(stats_);
            auto job = std::make_shared<Job>();
            job->request = std::move(request);
            result = job->done.get_future();
            stats_.workers[static_cast<std::size_t>(worker)].dispatched += 1;
            stats_.workers[static_cast<std::size_t>(worker)].in_flight += 1;
            stats_.queue_depth += 1;
            queues_[static_cast<std::size_t>(worker)].push_back(std::move(job));
        }
        queue_cv_.notify_all();

        const std::pair<int, json> outcome = result.get();
        res.status = outcome.first;
        res.set_content(outcome.second.dump(), "application/json");
    }

    void worker_loop(int worker_id) {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                queue_cv_.wait(lock, [this, worker_id] {
                    return workers_stop_ || !queues_[static_cast<std::size_t>(worker_id)].empty();
                });
                auto& queue = queues_[static_cast<std::size_t>(worker_id)];
                if (queue.empty()) {
                    if (workers_stop_) return;
                    continue;
                }
                job = std::move(queue.front());
                queue.pop_front();
                stats_.queue_depth -= 1;
            }

            const auto started = std::chrono::steady_clock::now();
            if (cfg_.work_delay_ms > 0.0)
                std::this_thread::sleep_for(
                    std::chrono::duration<double, std::milli>(cfg_.work_delay_ms));

            int status = 200;
            json body;
            bool ok = true;
            try {
                ScoreResponse response = score_request_locally(job->request, cfg_.judge, worker_id);
                response.latency_ms = std::chrono::duration<double, std::milli>(
                                          std::chrono::steady_clock::now() - started)
                                          .count();
                body = io::score_response_to_json(response);
            } catch (const InvalidArgument& e) {
                ok = false;
                status = 422;
                body = error_body("unjudgeable", e.what(), false);
            } catch (const std::exception& e) {
                ok = false;
                status = 503;
                body = error_body("judge_failure", e.what(), true);
            }

            {
                std::lock_guard<std::mutex> lock(mutex_);
                WorkerStats& s = stats_.workers[static_cast<std::size_t>(worker_id)];
                s.in_flight -= 1;
                (ok ? s.completed : s.failed) += 1;
            }
            job->done.set_value({status, std::move(body)});
        }
    }

    static json error_body(std::string_view code, std::string_view message, bool retryable) {
        return json{{"v", 1},
                    {"error", {{"code", std::string(code)},
                               {"message", std::string(message)},
                               {"retryable", retryable}}}};
    }

    static void respond_error(httplib::Response& res, int status, std::string_view code,
                              std::string_view message, bool retryable) {
        res.status = status;
        res.set_content(error_body(code, message, retryable).dump(), "application/json");
    }

    ServiceConfig cfg_;
    std::unique_ptr<httplib::Server> server_;
    std::thread listen_thread_;
    std::vector<std::thread> worker_threads_;
    std::vector<std::deque<std::shared_ptr<Job>>> queues_;
    mutable std::mutex mutex_;
    std::condition_variable queue_cv_;
    RouterStats stats_;
    bool workers_stop_ = false;
    std::atomic<bool> running_{false};
    int port_ = -1;
};

}  // namespace fapo
