#include <doctest.h>

#include <sstream>

#include "fapo/io.hpp"
#include "fapo/manifest.hpp"
#include "fapo/rng.hpp"
#include "fapo/sha256.hpp"

using namespace fapo;

TEST_CASE("rollout json round trip preserves every field") {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        Rollout r;
        r.question_id = "q" + std::to_string(i);
        r.num_steps = 1 + static_cast<int>(rng.below(12));
        r.length_tokens = static_cast<long long>(rng.below(10000));
        if (rng.bernoulli(0.7)) r.predicted_answer = "ans" + std::to_string(i);
        switch (rng.below(4)) {
            case 0: r.gold_label = RolloutLabel::FullyCorrect; break;
            case 1: r.gold_label = RolloutLabel::Negative; break;
            case 2:
                r.gold_label = RolloutLabel::FlawedPositive;
                r.gold_first_error = static_cast<int>(rng.below(static_cast<std::uint64_t>(r.num_steps)));
                break;
            default: break;  // unlabeled
        }
        const Rollout back = io::rollout_from_json(io::rollout_to_json(r));
        CHECK(back.question_id == r.question_id);
        CHECK(back.predicted_answer == r.predicted_answer);
        CHECK(back.num_steps == r.num_steps);
        CHECK(back.length_tokens == r.length_tokens);
        CHECK(back.gold_label == r.gold_label);
        CHECK(back.gold_first_error == r.gold_first_error);
    }
}

TEST_CASE("rollout json rejects schema violations") {
    CHECK_THROWS_AS(io::rollout_from_json(json::parse(R"({"num_steps": 3})")), DataError);
    CHECK_THROWS_AS(io::rollout_from_json(json::parse(
                        R"({"question_id":"q","num_steps":0,"length_tokens":0})")),
                    DataError);
    CHECK_THROWS_AS(io::rollout_from_json(json::parse(
                        R"({"question_id":"q","num_steps":3,"length_tokens":0,
                            "gold_label":"negative","gold_first_error":1})")),
                    DataError);
    CHECK_THROWS_AS(io::rollout_from_json(json::parse(
                        R"({"question_id":"q","num_steps":3,"length_tokens":0,
                            "gold_label":"sideways"})")),
                    DataError);
}

TEST_CASE("jsonl reader reports line numbers") {
    std::istringstream in(R"({"question_id":"a","num_steps":2,"length_tokens":0}
{"question_id":"b","num_steps":2,"length_tokens":0}
{"question_id":"c","num_steps":0,"length_tokens":0}
)");
    try {
        io::read_jsonl<Rollout>(in, io::rollout_from_json);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 3") == 0);
    }
}

TEST_CASE("jsonl reader skips blank lines and preserves order") {
    std::istringstream in(
        "{\"question_id\":\"a\",\"num_steps\":2,\"length_tokens\":0}\n\n"
        "{\"question_id\":\"b\",\"num_steps\":2,\"length_tokens\":0}\n");
    const auto rollouts = io::read_jsonl<Rollout>(in, io::rollout_from_json);
    REQUIRE(rollouts.size() == 2);
    CHECK(rollouts[0].question_id == "a");
    CHECK(rollouts[1].question_id == "b");
}

TEST_CASE("benchmark record json round trip") {
    BenchmarkRecord r;
    r.question = Question{"id1", "problem body", "42"};
    r.solution_steps = {"first", "second", "third"};
    r.gold_is_fp = true;
    r.gold_first_error = 1;
    const BenchmarkRecord back = io::benchmark_record_from_json(io::benchmark_record_to_json(r));
    CHECK(back.question.id == r.question.id);
    CHECK(back.solution_steps == r.solution_steps);
    CHECK(back.gold_is_fp);
    CHECK(*back.gold_first_error == 1);
    CHECK_THROWS_AS(io::benchmark_record_from_json(json::parse(
                        R"({"id":"x","gold_answer":"1","steps":["a"],"gold_is_fp":true,
                            "gold_first_error":null})")),
                    DataError);
}

TEST_CASE("verdict json round trip") {
    const Verdict fp{true, 4};
    CHECK(io::verdict_from_json(io::verdict_to_json(fp)) == fp);
    const Verdict clean{false, std::nullopt};
    CHECK(io::verdict_from_json(io::verdict_to_json(clean)) == clean);
    CHECK_THROWS_AS(
        io::verdict_from_json(json::parse(R"({"is_flawed_positive":false,"first_error_index":2})")),
        DataError);
}

TEST_CASE("trajectory csv layout") {
    TrajectoryLog log;
    IterationRecord rec;
    rec.iteration = 0;
    rec.accuracy = 0.5;
    rec.flawed_ratio = 0.25;
    rec.mean_reward = 0.125;
    rec.mean_length = 6.5;
    rec.stage = Stage::WarmUp;
    log.records.push_back(rec);
    rec.iteration = 1;
    rec.stage.reset();
    log.records.push_back(rec);

    std::ostringstream out;
    io::write_trajectory_csv(out, log);
    const std::string text = out.str();
    CHECK(text.find("iteration,accuracy,flawed_ratio,mean_reward,mean_length,stage\n") == 0);
    CHECK(text.find("0,0.5,0.25,0.125,6.5,warmup\n") != std::string::npos);
    CHECK(text.find("1,0.5,0.25,0.125,6.5,undefined\n") != std::string::npos);
}

TEST_CASE("sim config json round trip keeps every knob") {
    io::SimConfig cfg;
    cfg.env.num_categories = 5;
    cfg.env.p_shortcut = 0.61;
    cfg.env.seed = 99;
    cfg.train.iterations = 123;
    cfg.train.penalty.lambda = 0.5;
    cfg.train.surrogate.eps_high = 0.3;
    cfg.train.judge.seed = 777;
    const io::SimConfig back = io::sim_config_from_json(io::sim_config_to_json(cfg));
    CHECK(back.env.num_categories == 5);
    CHECK(back.env.p_shortcut == doctest::Approx(0.61));
    CHECK(back.env.seed == 99);
    CHECK(back.train.iterations == 123);
    CHECK(back.train.penalty.lambda == doctest::Approx(0.5));
    CHECK(back.train.surrogate.eps_high == doctest::Approx(0.3));
    CHECK(back.train.judge.seed == 777);
}

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("The quick brown fox jumps over the lazy dog") ==
          "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
    // exercise the multi-block path
    std::string long_input(1000, 'a');
    CHECK(sha256_hex(long_input) ==
          "41edece42d63e8d9bf515a9ba6932e1c20cbc9f5a5d134645adb5db1b9737ea3");
}

TEST_CASE("manifest json includes hashed outputs") {
    RunManifest m;
    m.command = "test";
    m.resolved_config = {{"k", 1}};
    m.seed = 7;
    m.started_at = "2000-01-01T00:00:00Z";
    m.finished_at = "2000-01-01T00:00:01Z";
    m.outputs.emplace_back("a.csv", sha256_hex("payload"));
    const nlohmann::json j = manifest_to_json(m);
    CHECK(j["v"] == 1);
    CHECK(j["command"] == "test");
    CHECK(j["outputs"][0]["sha256"] == sha256_hex("payload"));
}
