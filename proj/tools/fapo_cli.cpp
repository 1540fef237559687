// fapo — command-line front end: closed-form dynamics sweeps, synthetic
// training runs, detection-metric evaluation, and the reward-scoring service.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 verification failure,
// 4 service error.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fapo/client.hpp"
#include "fapo/core.hpp"
#include "fapo/dynamics.hpp"
#include "fapo/io.hpp"
#include "fapo/judge.hpp"
#include "fapo/manifest.hpp"
#include "fapo/service.hpp"
#include "fapo/simulator.hpp"

namespace fs = std::filesystem;
using fapo::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerification = 3;
constexpr int kExitService = 4;

volatile std::sig_atomic_t g_stop_requested = 0;

void handle_signal(int) { g_stop_requested = 1; }

// ---- dynamics ---------------------------------------------------------------

struct DynamicsArgs {
    std::vector<double> lambdas{1.0};
    std::string grid = "coarse";
    std::string out = "fapo_dynamics.csv";
    std::string manifest_path;
};

int cmd_dynamics(const DynamicsArgs& args) {
    const long long grid_size = args.grid == "fine" ? 100 : 20;
    fapo::RunManifest manifest;
    manifest.command = "dynamics";
    manifest.started_at = fapo::iso8601_now();
    manifest.resolved_config = {
        {"lambdas", args.lambdas}, {"grid", args.grid}, {"grid_size", grid_size}, {"out", args.out}};

    std::ofstream out(args.out, std::ios::binary);
    if (!out.good()) {
        std::cerr << "cannot write " << args.out << "\n";
        return kExitData;
    }
    out << "lambda,alpha,beta,gamma,mu_grpo,var_grpo,mu_fapo,var_fapo,stage,"
           "variance_regime,empirical_dev\n";

    double worst = 0.0;
    for (double lambda : args.lambdas) {
        for (long long fc = 0; fc <= grid_size; ++fc) {
            for (long long neg = 0; neg + fc <= grid_size; ++neg) {
                const long long fp = grid_size - fc - neg;
                const double g = static_cast<double>(grid_size);
                const fapo::GroupComposition comp{static_cast<double>(fc) / g,
                                                  static_cast<double>(neg) / g,
                                                  static_cast<double>(fp) / g, grid_size};
                const fapo::MomentPair grpo = fapo::grpo_moments(comp.beta);
                const fapo::MomentPair fapo_m = fapo::fapo_moments(comp, lambda);
                const fapo::MomentPair oracle = fapo::empirical_moments(comp, lambda);
                const double dev = std::max(std::abs(fapo_m.mean - oracle.mean),
                                            std::abs(fapo_m.variance - oracle.variance));
                worst = std::max(worst, dev);

                std::string stage = "undefined";
                if (lambda > 0.0 && comp.gamma > 0.0)
                    stage = std::string(fapo::stage_name(fapo::flawed_stage(comp, lambda)));
                std::string regime = "undefined";
                if (lambda > 0.0 && comp.gamma > 0.0 && comp.gamma < 1.0)
                    regime = std::string(
                        fapo::variance_regime_name(fapo::variance_regime(comp, lambda)));

                out << fapo::io::format_double(lambda) << ','
                    << fapo::io::format_double(comp.alpha) << ','
                    << fapo::io::format_double(comp.beta) << ','
                    << fapo::io::format_double(comp.gamma) << ','
                    << fapo::io::format_double(grpo.mean) << ','
                    << fapo::io::format_double(grpo.variance) << ','
                    << fapo::io::format_double(fapo_m.mean) << ','
                    << fapo::io::format_double(fapo_m.variance) << ',' << stage << ',' << regime
                    << ',' << fapo::io::format_double(dev) << '\n';
            }
        }
    }
    out.close();

    manifest.finished_at = fapo::iso8601_now();
    fapo::manifest_add_output(manifest, args.out);
    const std::string manifest_path =
        args.manifest_path.empty() ? args.out + ".manifest.json" : args.manifest_path;
    fapo::write_manifest(manifest, manifest_path);

    std::cout << json{{"v", 1}, {"out", args.out}, {"max_empirical_dev", worst}}.dump() << "\n";
    if (worst > 1e-12) {
        std::cerr << "closed-form vs empirical deviation " << worst << " exceeds 1e-12\n";
        return kExitVerification;
    }
    return kExitOk;
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::string algo = "fapo";
    std::string config_path;
    std::string out_dir = "fapo_run";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int iterations = -1;
    double lambda = -1.0;
    double learning_rate = -1.0;
};

int cmd_simulate(const SimulateArgs& args) {
    const auto algo = fapo::algo_from_name(args.algo);
    if (!algo) {
        std::cerr << "unknown algo: " << args.algo << "\n";
        return kExitUsage;
    }

    fapo::io::SimConfig cfg;
    if (!args.config_path.empty()) cfg = fapo::io::load_sim_config(args.config_path);
    // flags override the config file, which overrides built-in defaults
    if (args.seed_set) cfg.env.seed = args.seed;
    if (args.iterations >= 0) cfg.train.iterations = args.iterations;
    if (args.lambda >= 0.0) cfg.train.penalty.lambda = args.lambda;
    if (args.learning_rate >= 0.0) cfg.train.learning_rate = args.learning_rate;

    fapo::RunManifest manifest;
    manifest.command = "simulate";
    manifest.seed = cfg.env.seed;
    manifest.started_at = fapo::iso8601_now();
    json resolved = fapo::io::sim_config_to_json(cfg);
    resolved["algo"] = args.algo;
    manifest.resolved_config = resolved;

    const fapo::TrajectoryLog log = fapo::run_training(cfg.env, *algo, cfg.train);

    fs::create_directories(args.out_dir);
    const std::string csv_path = (fs::path(args.out_dir) / "trajectory.csv").string();
    const std::string jsonl_path = (fs::path(args.out_dir) / "trajectory.jsonl").string();
    {
        std::ofstream csv(csv_path, std::ios::binary);
        fapo::io::write_trajectory_csv(csv, log);
        std::ofstream jsonl(jsonl_path, std::ios::binary);
        fapo::io::write_trajectory_jsonl(jsonl, log);
    }
    manifest.finished_at = fapo::iso8601_now();
    fapo::manifest_add_output(manifest, csv_path);
    fapo::manifest_add_output(manifest, jsonl_path);
    fapo::write_manifest(manifest, (fs::path(args.out_dir) / "manifest.json").string());

    json summary{{"v", 1}, {"algo", args.algo}, {"seed", cfg.env.seed}};
    if (log.records.empty()) {
        summary["note"] = "no iterations";
    } else {
        const int window = std::min<int>(cfg.train.window, static_cast<int>(log.records.size()));
        const fapo::StageProfile profile = fapo::stage_profile(log);
        summary["iterations"] = log.records.size();
        summary["final_accuracy"] = log.records.back().accuracy;
        summary["final_flawed_ratio"] = log.records.back().flawed_ratio;
        summary["window_flawed_ratio"] = fapo::flawed_ratio_window(log, window);
        summary["final_mean_length"] = log.records.back().mean_length;
        summary["shift_iteration"] =
            profile.shift_iteration ? json(*profile.shift_iteration) : json(nullptr);
        // flawed ratio against rollout accuracy, the learning-stage proxy view
        json by_accuracy = json::array();
        for (const auto& bucket : fapo::flawed_ratio_by_accuracy(log))
            by_accuracy.push_back(bucket ? json(*bucket) : json(nullptr));
        summary["flawed_ratio_by_accuracy"] = by_accuracy;
    }
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string mode = "fp-bench";
    std::string predictions_path;
    std::string gold_path;
    std::string manifest_path = "fapo_eval_manifest.json";
};

struct PredictionRecord {
    std::string id;
    fapo::Verdict verdict;
};

PredictionRecord prediction_from_json(const json& j) {
    PredictionRecord rec;
    try {
        rec.id = j.value("id", std::string{});
        rec.verdict = fapo::io::verdict_from_json(j);
    } catch (const json::exception& e) {
        throw fapo::DataError(std::string("invalid prediction record: ") + e.what());
    }
    return rec;
}

int cmd_eval(const EvalArgs& args) {
    const auto gold = fapo::io::read_jsonl_file<fapo::BenchmarkRecord>(
        args.gold_path, fapo::io::benchmark_record_from_json);
    const auto predictions =
        fapo::io::read_jsonl_file<PredictionRecord>(args.predictions_path, prediction_from_json);
    if (gold.empty()) throw fapo::DataError("gold file is empty");
    if (predictions.size() != gold.size())
        throw fapo::DataError("predictions and gold differ in length (" +
                              std::to_string(predictions.size()) + " vs " +
                              std::to_string(gold.size()) + ")");
    std::vector<fapo::Verdict> verdicts;
    verdicts.reserve(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (!predictions[i].id.empty() && predictions[i].id != gold[i].question.id)
            throw fapo::DataError("line " + std::to_string(i + 1) + ": prediction id '" +
                                  predictions[i].id + "' does not match gold id '" +
                                  gold[i].question.id + "'");
        verdicts.push_back(predictions[i].verdict);
    }

    fapo::RunManifest manifest;
    manifest.command = "eval";
    manifest.started_at = fapo::iso8601_now();
    manifest.resolved_config = {{"mode", args.mode},
                                {"predictions", args.predictions_path},
                                {"gold", args.gold_path}};

    json result{{"v", 1}, {"mode", args.mode}};
    if (args.mode == "fp-bench") {
        const fapo::DetectionScores scores = fapo::eval_detection(verdicts, gold);
        result["precision"] = scores.precision;
        result["recall"] = scores.recall;
        result["f1"] = scores.f1;
        result["no_predicted_fp"] = scores.no_predicted_fp;
    } else if (args.mode == "processbench") {
        result["harmonic_mean"] = fapo::eval_processbench_style(verdicts, gold);
    } else {
        std::cerr << "unknown eval mode: " << args.mode << "\n";
        return kExitUsage;
    }
    std::cout << result.dump() << "\n";

    manifest.finished_at = fapo::iso8601_now();
    if (!args.manifest_path.empty()) fapo::write_manifest(manifest, args.manifest_path);
    return kExitOk;
}

// ---- serve ------------------------------------------------------------------

struct ServeArgs {
    int workers = 4;
    std::string host = "127.0.0.1";
    int port = 0;
    double flip_prob = 0.0;
    double jitter = 0.0;
    std::uint64_t judge_seed = 0;
    double work_delay_ms = 0.0;
    std::string manifest_path;
};

int cmd_serve(const ServeArgs& args) {
    fapo::ServiceConfig cfg;
    cfg.workers = args.workers;
    cfg.host = args.host;
    cfg.port = args.port;
    cfg.judge = fapo::JudgeNoiseConfig{args.flip_prob, args.jitter, args.judge_seed};
    cfg.work_delay_ms = args.work_delay_ms;

    fapo::RunManifest manifest;
    manifest.command = "serve";
    manifest.seed = args.judge_seed;
    manifest.started_at = fapo::iso8601_now();
    manifest.resolved_config = {{"workers", args.workers},
                                {"host", args.host},
                                {"flip_prob", args.flip_prob},
                                {"jitter", args.jitter},
                                {"judge_seed", args.judge_seed}};

    fapo::RewardService service(cfg);
    try {
        service.start();
    } catch (const fapo::ServiceError& e) {
        std::cerr << e.what() << "\n";
        return kExitService;
    }
    std::cout << json{{"v", 1},
                      {"status", "serving"},
                      {"url", service.base_url()},
                      {"workers", args.workers}}
                     .dump()
              << std::endl;

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    std::cerr << "draining in-flight requests\n";
    service.stop();

    manifest.finished_at = fapo::iso8601_now();
    if (!args.manifest_path.empty()) fapo::write_manifest(manifest, args.manifest_path);
    return kExitOk;
}

// ---- score ------------------------------------------------------------------

struct ScoreArgs {
    std::string input_path;
    std::string questions_path;
    std::string url;
    std::string out = "-";
    std::string manifest_path;
    int max_in_flight = 8;
    int retries = 2;
    double timeout_ms = 10000.0;
    double lambda = 1.0;
    std::string mode = "verdict_and_reward";
};

int cmd_score(const ScoreArgs& args) {
    const auto rollouts =
        fapo::io::read_jsonl_file<fapo::Rollout>(args.input_path, fapo::io::rollout_from_json);
    const auto questions = fapo::io::read_jsonl_file<fapo::Question>(
        args.questions_path, fapo::io::question_from_json);
    std::map<std::string, fapo::Question> by_id;
    for (const fapo::Question& q : questions) by_id[q.id] = q;

    std::vector<fapo::ScoreRequest> requests;
    requests.reserve(rollouts.size());
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
        const auto it = by_id.find(rollouts[i].question_id);
        if (it == by_id.end())
            throw fapo::DataError("line " + std::to_string(i + 1) + ": unknown question_id '" +
                                  rollouts[i].question_id + "'");
        fapo::ScoreRequest req;
        req.request_id = "req-" + std::to_string(i);
        req.question = it->second;
        req.rollout = rollouts[i];
        req.penalty.lambda = args.lambda;
        req.mode = args.mode == "verdict_only" ? fapo::ScoreMode::VerdictOnly
                                               : fapo::ScoreMode::VerdictAndReward;
        requests.push_back(std::move(req));
    }

    fapo::ClientConfig client;
    client.base_url = args.url;
    client.max_in_flight = args.max_in_flight;
    client.retries = args.retries;
    client.timeout_sec = args.timeout_ms / 1000.0;

    fapo::RunManifest manifest;
    manifest.command = "score";
    manifest.started_at = fapo::iso8601_now();
    manifest.resolved_config = {{"input", args.input_path},
                                {"questions", args.questions_path},
                                {"max_in_flight", args.max_in_flight},
                                {"retries", args.retries},
                                {"lambda", args.lambda},
                                {"mode", args.mode}};

    const fapo::BatchResult result = fapo::submit_batch(client, requests);

    std::ofstream file_out;
    const bool to_stdout = args.out == "-";
    if (!to_stdout) {
        file_out.open(args.out, std::ios::binary);
        if (!file_out.good()) throw fapo::DataError("cannot write " + args.out);
    }
    std::ostream& out = to_stdout ? std::cout : file_out;

    std::vector<std::string> failed_ids;
    for (std::size_t i = 0; i < result.outcomes.size(); ++i) {
        const fapo::ScoreOutcome& o = result.outcomes[i];
        json line{{"v", 1},
                  {"request_id", o.request_id},
                  {"question_id", requests[i].rollout.question_id},
                  {"ok", o.ok()}};
        if (o.ok()) {
            line["verdict"] = fapo::io::verdict_to_json(o.response->verdict);
            line["reward"] = o.response->reward ? json(*o.response->reward) : json(nullptr);
            line["worker_id"] = o.response->worker_id;
        } else {
            line["error"] = *o.error_code;
            failed_ids.push_back(o.request_id);
        }
        out << line.dump() << '\n';
    }
    out.flush();

    manifest.finished_at = fapo::iso8601_now();
    if (!to_stdout) {
        file_out.close();
        fapo::manifest_add_output(manifest, args.out);
        fapo::write_manifest(manifest, args.manifest_path.empty() ? args.out + ".manifest.json"
                                                                  : args.manifest_path);
    } else if (!args.manifest_path.empty()) {
        fapo::write_manifest(manifest, args.manifest_path);
    }

    if (!failed_ids.empty()) {
        std::cerr << "failed requests:";
        for (const std::string& id : failed_ids) std::cerr << ' ' << id;
        std::cerr << "\n";
        return kExitService;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flawed-aware policy optimization lab"};
    app.require_subcommand(1);

    DynamicsArgs dyn;
    CLI::App* dynamics = app.add_subcommand("dynamics", "closed-form moment sweep with oracle check");
    dynamics->add_option("--lambda", dyn.lambdas, "penalty strengths to sweep")
        ->check(CLI::Range(0.0, 2.0));
    dynamics->add_option("--grid", dyn.grid, "composition grid: coarse|fine")
        ->check(CLI::IsMember({"coarse", "fine"}));
    dynamics->add_option("--out", dyn.out, "output CSV path");
    dynamics->add_option("--manifest", dyn.manifest_path, "manifest path");

    SimulateArgs sim;
    CLI::App* simulate = app.add_subcommand("simulate", "train on the synthetic environment");
    simulate->add_option("--algo", sim.algo, "grpo|fapo|stepratio")
        ->check(CLI::IsMember({"grpo", "fapo", "stepratio"}));
    simulate->add_option("--config", sim.config_path, "simulation config JSON");
    CLI::Option* seed_opt = simulate->add_option("--seed", sim.seed, "environment seed");
    simulate->add_option("--iterations", sim.iterations, "iteration count override");
    simulate->add_option("--lambda", sim.lambda, "penalty override")->check(CLI::Range(0.0, 2.0));
    simulate->add_option("--learning-rate", sim.learning_rate, "learning rate override");
    simulate->add_option("--out", sim.out_dir, "output directory");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions against a benchmark");
    eval_cmd->add_option("--mode", eval.mode, "fp-bench|processbench")
        ->check(CLI::IsMember({"fp-bench", "processbench"}));
    eval_cmd->add_option("--predictions", eval.predictions_path, "predictions JSONL")->required();
    eval_cmd->add_option("--gold", eval.gold_path, "gold benchmark JSONL")->required();
    eval_cmd->add_option("--manifest", eval.manifest_path, "manifest path ('' to skip)");

    ServeArgs serve;
    CLI::App* serve_cmd = app.add_subcommand("serve", "run the reward-scoring service");
    serve_cmd->add_option("--workers", serve.workers, "judge worker count")
        ->check(CLI::PositiveNumber);
    serve_cmd->add_option("--host", serve.host, "bind host");
    serve_cmd->add_option("--port", serve.port, "bind port (0 = any)");
    serve_cmd->add_option("--flip-prob", serve.flip_prob, "judge label flip probability")
        ->check(CLI::Range(0.0, 1.0));
    serve_cmd->add_option("--jitter", serve.jitter, "judge index jitter stddev");
    serve_cmd->add_option("--judge-seed", serve.judge_seed, "judge seed");
    serve_cmd->add_option("--work-delay-ms", serve.work_delay_ms, "artificial judge latency");
    serve_cmd->add_option("--manifest", serve.manifest_path, "manifest path");

    ScoreArgs score;
    CLI::App* score_cmd = app.add_subcommand("score", "score a rollout JSONL via the service");
    score_cmd->add_option("--input", score.input_path, "rollout JSONL")->required();
    score_cmd->add_option("--questions", score.questions_path, "questions JSONL")->required();
    score_cmd->add_option("--url", score.url, "service URL (else REWARD_SERVICE_URL)");
    score_cmd->add_option("--out", score.out, "output JSONL path ('-' = stdout)");
    score_cmd->add_option("--manifest", score.manifest_path, "manifest path");
    score_cmd->add_option("--max-in-flight", score.max_in_flight, "client concurrency bound")
        ->check(CLI::PositiveNumber);
    score_cmd->add_option("--retries", score.retries, "retries per request");
    score_cmd->add_option("--timeout-ms", score.timeout_ms, "per-request timeout");
    score_cmd->add_option("--lambda", score.lambda, "penalty strength")
        ->check(CLI::Range(0.0, 2.0));
    score_cmd->add_option("--mode", score.mode, "verdict_only|verdict_and_reward")
        ->check(CLI::IsMember({"verdict_only", "verdict_and_reward"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints usage/help
        return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
    }

    sim.seed_set = seed_opt->count() > 0;

    try {
        if (dynamics->parsed()) return cmd_dynamics(dyn);
        if (simulate->parsed()) return cmd_simulate(sim);
        if (eval_cmd->parsed()) return cmd_eval(eval);
        if (serve_cmd->parsed()) return cmd_serve(serve);
        if (score_cmd->parsed()) return cmd_score(score);
    } catch (const fapo::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const fapo::InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitData;
    } catch (const fapo::ServiceError& e) {
        std::cerr << "service error: " << e.what() << "\n";
        return kExitService;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
