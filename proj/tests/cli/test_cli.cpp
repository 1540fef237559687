#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fapo/judge.hpp"
#include "fapo/io.hpp"
#include "fapo/rewards.hpp"
#include "fapo/sha256.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommandResult {
    int exit_code = -1;
    std::string output;  // stdout only
};

CommandResult run_command(const std::string& cmd) {
    CommandResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (std::fgets(buf, sizeof(buf), pipe)) result.output += buf;
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string cli() { return std::string(FAPO_CLI_PATH); }
std::string source_path(const std::string& rel) {
    return std::string(FAPO_SOURCE_DIR) + "/" + rel;
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("fapo_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("dynamics sweep writes a verified csv and a reproducible manifest") {
    const fs::path dir = fresh_dir("dynamics");
    const std::string out = (dir / "dyn.csv").string();
    const CommandResult r =
        run_command(cli() + " dynamics --lambda 1 --grid coarse --out " + out + " 2>/dev/null");
    CHECK(r.exit_code == 0);
    const json summary = json::parse(r.output);
    CHECK(summary["max_empirical_dev"].get<double>() <= 1e-12);

    const std::string csv = read_file(out);
    CHECK(csv.rfind("lambda,alpha,beta,gamma,mu_grpo,var_grpo,mu_fapo,var_fapo,stage,"
                    "variance_regime,empirical_dev\n",
                    0) == 0);
    // the lambda=1 sweep must contain both sides of the rho=1 shift
    CHECK(csv.find(",warmup,") != std::string::npos);
    CHECK(csv.find(",refinement,") != std::string::npos);

    const json manifest = json::parse(read_file(out + ".manifest.json"));
    CHECK(manifest["command"] == "dynamics");
    REQUIRE(manifest["outputs"].size() == 1);
    CHECK(manifest["outputs"][0]["sha256"] == fapo::sha256_hex(csv));

    // re-running reproduces the identical artifact
    const std::string out2 = (dir / "dyn2.csv").string();
    run_command(cli() + " dynamics --lambda 1 --grid coarse --out " + out2 + " 2>/dev/null");
    CHECK(fapo::sha256_hex(read_file(out2)) == fapo::sha256_hex(csv));
}

TEST_CASE("dynamics at lambda zero degenerates to the baseline moments") {
    const fs::path dir = fresh_dir("dynamics0");
    const std::string out = (dir / "dyn.csv").string();
    const CommandResult r =
        run_command(cli() + " dynamics --lambda 0 --grid coarse --out " + out + " 2>/dev/null");
    CHECK(r.exit_code == 0);
    const std::vector<std::string> lines = split_lines(read_file(out));
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::istringstream row(lines[i]);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        REQUIRE(fields.size() == 11);
        CHECK(fields[4] == fields[6]);  // mu_grpo == mu_fapo
        CHECK(fields[8] == "undefined");
    }
}

TEST_CASE("usage errors exit with code 1") {
    CHECK(run_command(cli() + " dynamics --lambda nonsense 2>/dev/null").exit_code == 1);
    CHECK(run_command(cli() + " 2>/dev/null").exit_code == 1);
    CHECK(run_command(cli() + " simulate --algo sideways 2>/dev/null").exit_code == 1);
}

TEST_CASE("simulate is deterministic and writes hashed artifacts") {
    const fs::path dir = fresh_dir("simulate");
    const std::string base_cmd = cli() + " simulate --algo fapo --seed 7 --iterations 60 --out ";
    const CommandResult a = run_command(base_cmd + (dir / "a").string() + " 2>/dev/null");
    const CommandResult b = run_command(base_cmd + (dir / "b").string() + " 2>/dev/null");
    CHECK(a.exit_code == 0);
    CHECK(b.exit_code == 0);

    const std::string csv_a = read_file(dir / "a" / "trajectory.csv");
    CHECK(fapo::sha256_hex(csv_a) == fapo::sha256_hex(read_file(dir / "b" / "trajectory.csv")));
    CHECK(fapo::sha256_hex(read_file(dir / "a" / "trajectory.jsonl")) ==
          fapo::sha256_hex(read_file(dir / "b" / "trajectory.jsonl")));

    const json manifest = json::parse(read_file(dir / "a" / "manifest.json"));
    CHECK(manifest["command"] == "simulate");
    CHECK(manifest["seed"] == 7);
    CHECK(manifest["config"]["train"]["lambda"] == 1.0);
    for (const json& output : manifest["outputs"])
        CHECK(output["sha256"] ==
              fapo::sha256_hex(read_file(output["path"].get<std::string>())));

    const json summary = json::parse(a.output);
    CHECK(summary["iterations"] == 60);
    CHECK(summary["final_accuracy"].is_number());
}

TEST_CASE("simulate with the reference config lands in the pinned baseline band") {
    const fs::path dir = fresh_dir("simulate_band");
    const CommandResult r = run_command(cli() + " simulate --algo grpo --seed 7 --config " +
                                        source_path("configs/reference_env.json") + " --out " +
                                        (dir / "run").string() + " 2>/dev/null");
    CHECK(r.exit_code == 0);
    const json summary = json::parse(r.output);
    const double ratio = summary["window_flawed_ratio"].get<double>();
    CHECK(ratio >= 0.2);
    CHECK(ratio <= 0.4);
}

TEST_CASE("simulate with zero iterations reports no iterations") {
    const fs::path dir = fresh_dir("simulate0");
    const CommandResult r = run_command(cli() + " simulate --iterations 0 --out " +
                                        (dir / "run").string() + " 2>/dev/null");
    CHECK(r.exit_code == 0);
    const json summary = json::parse(r.output);
    CHECK(summary["note"] == "no iterations");
    const std::string csv = read_file(dir / "run" / "trajectory.csv");
    CHECK(split_lines(csv).size() == 1);  // header only
}

TEST_CASE("eval scores the shipped fixtures") {
    const fs::path dir = fresh_dir("eval");
    const CommandResult r = run_command(
        cli() + " eval --mode fp-bench --predictions " + source_path("data/fpbench_predictions.jsonl") +
        " --gold " + source_path("data/fpbench_gold.jsonl") + " --manifest " +
        (dir / "m.json").string() + " 2>/dev/null");
    CHECK(r.exit_code == 0);
    const json scores = json::parse(r.output);
    CHECK(scores["precision"].get<double>() == doctest::Approx(0.6));
    CHECK(scores["recall"].get<double>() == doctest::Approx(0.75));
    CHECK(scores["f1"].get<double>() == doctest::Approx(0.666667).epsilon(1e-5));

    const CommandResult pb = run_command(
        cli() + " eval --mode processbench --predictions " +
        source_path("data/processbench_predictions.jsonl") + " --gold " +
        source_path("data/processbench_gold.jsonl") + " --manifest " + (dir / "m2.json").string() +
        " 2>/dev/null");
    CHECK(pb.exit_code == 0);
    CHECK(json::parse(pb.output)["harmonic_mean"].get<double>() ==
          doctest::Approx(0.685714).epsilon(1e-5));
}

TEST_CASE("eval with predictions equal to gold yields all ones") {
    const fs::path dir = fresh_dir("eval_identity");
    const auto gold = fapo::io::read_jsonl_file<fapo::BenchmarkRecord>(
        source_path("data/fpbench_gold.jsonl"), fapo::io::benchmark_record_from_json);
    std::ofstream preds(dir / "perfect.jsonl", std::ios::binary);
    for (const fapo::BenchmarkRecord& rec : gold) {
        json j{{"id", rec.question.id}, {"is_flawed_positive", rec.gold_is_fp}};
        j["first_error_index"] =
            rec.gold_first_error ? json(*rec.gold_first_error) : json(nullptr);
        preds << j.dump() << "\n";
    }
    preds.close();
    const CommandResult r = run_command(
        cli() + " eval --mode fp-bench --predictions " + (dir / "perfect.jsonl").string() +
        " --gold " + source_path("data/fpbench_gold.jsonl") + " --manifest '' 2>/dev/null");
    CHECK(r.exit_code == 0);
    const json scores = json::parse(r.output);
    CHECK(scores["precision"] == 1.0);
    CHECK(scores["recall"] == 1.0);
    CHECK(scores["f1"] == 1.0);
}

TEST_CASE("eval data errors exit with code 2 and line diagnostics") {
    const fs::path dir = fresh_dir("eval_bad");
    std::ofstream(dir / "empty.jsonl").close();
    const CommandResult empty = run_command(
        cli() + " eval --mode fp-bench --predictions " + source_path("data/fpbench_predictions.jsonl") +
        " --gold " + (dir / "empty.jsonl").string() + " --manifest '' 2>/dev/null");
    CHECK(empty.exit_code == 2);

    std::ofstream bad(dir / "bad.jsonl", std::ios::binary);
    bad << R"({"id": "x", "problem": "p", "gold_answer": "1", "steps": ["a"], "gold_is_fp": true})"
        << "\n";
    bad.close();
    const CommandResult schema = run_command(
        cli() + " eval --mode fp-bench --predictions " + source_path("data/fpbench_predictions.jsonl") +
        " --gold " + (dir / "bad.jsonl").string() + " --manifest '' 2>" +
        (dir / "err.txt").string());
    CHECK(schema.exit_code == 2);
    CHECK(read_file(dir / "err.txt").find("line 1") != std::string::npos);
}

TEST_CASE("serve and score run end to end") {
    const fs::path dir = fresh_dir("serve");
    const std::string out_json = (dir / "serve_out.json").string();
    const std::string pid_file = (dir / "pid").string();
    const int launch = std::system((cli() + " serve --workers 4 --port 0 > " + out_json + " 2>" +
                                    (dir / "serve_err.log").string() + " & echo $! > " + pid_file)
                                       .c_str());
    REQUIRE(launch == 0);

    // wait for the startup line announcing the bound URL
    std::string url;
    for (int spin = 0; spin < 200 && url.empty(); ++spin) {
        std::this_thread::sleep_for(std::chrono::milliseconds(25));
        std::ifstream in(out_json);
        std::string line;
        if (std::getline(in, line) && !line.empty()) url = json::parse(line)["url"];
    }
    REQUIRE_FALSE(url.empty());

    httplib::Client probe(url);
    const httplib::Result health = probe.Get("/health");
    REQUIRE(health);
    CHECK(json::parse(health->body)["status"] == "ok");

    // score the shipped fixture through the service, serialized for balance
    const std::string scored_path = (dir / "scored.jsonl").string();
    const CommandResult score = run_command(
        cli() + " score --input " + source_path("data/score_rollouts.jsonl") + " --questions " +
        source_path("data/score_questions.jsonl") + " --url " + url +
        " --max-in-flight 1 --out " + scored_path + " 2>/dev/null");
    CHECK(score.exit_code == 0);

    // offline recomputation must match every line, in input order
    const auto rollouts = fapo::io::read_jsonl_file<fapo::Rollout>(
        source_path("data/score_rollouts.jsonl"), fapo::io::rollout_from_json);
    const auto questions = fapo::io::read_jsonl_file<fapo::Question>(
        source_path("data/score_questions.jsonl"), fapo::io::question_from_json);
    const std::vector<std::string> lines = split_lines(read_file(scored_path));
    REQUIRE(lines.size() == rollouts.size());
    const fapo::JudgeNoiseConfig default_judge{};
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const json line = json::parse(lines[i]);
        CHECK(line["ok"] == true);
        CHECK(line["request_id"] == "req-" + std::to_string(i));
        CHECK(line["question_id"] == rollouts[i].question_id);
        const fapo::Verdict expected_verdict = fapo::scripted_judge(rollouts[i], default_judge);
        CHECK(line["verdict"]["is_flawed_positive"] == expected_verdict.is_flawed_positive);
        const fapo::Question* q = nullptr;
        for (const fapo::Question& cand : questions)
            if (cand.id == rollouts[i].question_id) q = &cand;
        REQUIRE(q != nullptr);
        const double expected_reward = fapo::fapo_reward(
            rollouts[i], *q, expected_verdict.is_flawed_positive, fapo::PenaltyConfig{});
        CHECK(line["reward"].get<double>() == expected_reward);
    }

    // serialized uniform batch must leave balanced per-worker counts
    const httplib::Result stats_res = probe.Get("/stats");
    REQUIRE(stats_res);
    const json stats = json::parse(stats_res->body);
    long long lo = -1, hi = -1;
    for (const json& w : stats["workers"]) {
        const long long completed = w["completed"].get<long long>();
        lo = lo < 0 ? completed : std::min(lo, completed);
        hi = hi < 0 ? completed : std::max(hi, completed);
    }
    CHECK(hi - lo <= 1);

    // the manifest hashes the scored output
    const json manifest = json::parse(read_file(scored_path + ".manifest.json"));
    CHECK(manifest["outputs"][0]["sha256"] == fapo::sha256_hex(read_file(scored_path)));

    // REWARD_SERVICE_URL is honored when --url is omitted
    const CommandResult env_score = run_command(
        "REWARD_SERVICE_URL=" + url + " " + cli() + " score --input " +
        source_path("data/score_rollouts.jsonl") + " --questions " +
        source_path("data/score_questions.jsonl") + " --out - 2>/dev/null | head -1");
    CHECK(env_score.exit_code == 0);
    CHECK(json::parse(env_score.output)["ok"] == true);

    // graceful shutdown on SIGTERM
    const std::string pid = read_file(pid_file);
    CHECK(std::system(("kill -TERM " + pid).c_str()) == 0);
    bool down = false;
    for (int spin = 0; spin < 200 && !down; ++spin) {
        std::this_thread::sleep_for(std::chrono::milliseconds(25));
        httplib::Client check(url);
        check.set_connection_timeout(std::chrono::milliseconds(200));
        if (!check.Get("/health")) down = true;
    }
    CHECK(down);

    // scoring against the dead service exits with the service code and lists ids
    const CommandResult dead = run_command(
        cli() + " score --input " + source_path("data/score_rollouts.jsonl") + " --questions " +
        source_path("data/score_questions.jsonl") + " --url " + url +
        " --retries 0 --timeout-ms 300 --out - 2>" + (dir / "dead_err.txt").string());
    CHECK(dead.exit_code == 4);
    CHECK(read_file(dir / "dead_err.txt").find("req-0") != std::string::npos);
}
