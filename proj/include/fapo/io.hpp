#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fapo/core.hpp"
#include "fapo/judge.hpp"
#include "fapo/simulator.hpp"

namespace fapo {

// Malformed input files (schema violations, bad JSON). Carries a
// line-numbered message when raised by the JSONL readers.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using json = nlohmann::json;

namespace io {

inline std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) return "0";
    return std::string(buf, ptr);
}

// ---- Rollout JSONL record --------------------------------------------------

inline json rollout_to_json(const Rollout& r) {
    json j;
    j["question_id"] = r.question_id;
    j["predicted_answer"] = r.predicted_answer ? json(*r.predicted_answer) : json(nullptr);
    j["num_steps"] = r.num_steps;
    j["length_tokens"] = r.length_tokens;
    j["gold_label"] = r.gold_label ? json(std::string(label_name(*r.gold_label))) : json(nullptr);
    j["gold_first_error"] = r.gold_first_error ? json(*r.gold_first_error) : json(nullptr);
    return j;
}

inline Rollout rollout_from_json(const json& j) {
    if (!j.is_object()) throw DataError("rollout record must be a JSON object");
    Rollout r;
    try {
        r.question_id = j.at("question_id").get<std::string>();
        if (j.contains("predicted_answer") && !j["predicted_answer"].is_null())
            r.predicted_answer = j["predicted_answer"].get<std::string>();
        r.num_steps = j.at("num_steps").get<int>();
        r.length_tokens = j.at("length_tokens").get<long long>();
        if (j.contains("gold_label") && !j["gold_label"].is_null()) {
            const auto label = label_from_name(j["gold_label"].get<std::string>());
            if (!label) throw DataError("unknown gold_label value");
            r.gold_label = *label;
        }
        if (j.contains("gold_first_error") && !j["gold_first_error"].is_null())
            r.gold_first_error = j["gold_first_error"].get<int>();
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid rollout record: ") + e.what());
    }
    try {
        validate_rollout(r);
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("invalid rollout record: ") + e.what());
    }
    return r;
}

// ---- Question --------------------------------------------------------------

inline json question_to_json(const Question& q) {
    return json{{"id", q.id}, {"statement", q.statement}, {"gold_answer", q.gold_answer}};
}

inline Question question_from_json(const json& j) {
    try {
        Question q;
        q.id = j.at("id").get<std::string>();
        q.statement = j.value("statement", std::string{});
        q.gold_answer = j.at("gold_answer").get<std::string>();
        if (q.id.empty()) throw DataError("question id must be non-empty");
        if (q.gold_answer.empty()) throw DataError("gold_answer must be non-empty");
        return q;
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid question record: ") + e.what());
    }
}

// ---- Benchmark record ------------------------------------------------------

inline json benchmark_record_to_json(const BenchmarkRecord& r) {
    json j;
    j["id"] = r.question.id;
    j["problem"] = r.question.statement;
    j["gold_answer"] = r.question.gold_answer;
    j["steps"] = r.solution_steps;
    j["gold_is_fp"] = r.gold_is_fp;
    j["gold_first_error"] = r.gold_first_error ? json(*r.gold_first_error) : json(nullptr);
    return j;
}

inline BenchmarkRecord benchmark_record_from_json(const json& j) {
    BenchmarkRecord r;
    try {
        r.question.id = j.at("id").get<std::string>();
        r.question.statement = j.value("problem", std::string{});
        r.question.gold_answer = j.at("gold_answer").get<std::string>();
        r.solution_steps = j.value("steps", std::vector<std::string>{});
        r.gold_is_fp = j.at("gold_is_fp").get<bool>();
        if (j.contains("gold_first_error") && !j["gold_first_error"].is_null())
            r.gold_first_error = j["gold_first_error"].get<int>();
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid benchmark record: ") + e.what());
    }
    try {
        validate_benchmark_record(r);
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("invalid benchmark record: ") + e.what());
    }
    return r;
}

// ---- Verdict / prediction record -------------------------------------------

inline json verdict_to_json(const Verdict& v) {
    json j;
    j["is_flawed_positive"] = v.is_flawed_positive;
    j["first_error_index"] = v.first_error_index ? json(*v.first_error_index) : json(nullptr);
    return j;
}

inline Verdict verdict_from_json(const json& j) {
    Verdict v;
    try {
        v.is_flawed_positive = j.at("is_flawed_positive").get<bool>();
        if (j.contains("first_error_index") && !j["first_error_index"].is_null())
            v.first_error_index = j["first_error_index"].get<int>();
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid verdict record: ") + e.what());
    }
    try {
        validate_verdict(v);
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("invalid verdict record: ") + e.what());
    }
    return v;
}

// ---- Generic JSONL reading with line diagnostics ----------------------------

template <typename T>
std::vector<T> read_jsonl(std::istream& in, const std::function<T(const json&)>& parse) {
    std::vector<T> out;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim_copy(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            out.push_back(parse(j));
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

template <typename T>
std::vector<T> read_jsonl_file(const std::string& path,
                               const std::function<T(const json&)>& parse) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw DataError("cannot open " + path);
    return read_jsonl<T>(in, parse);
}

// ---- Trajectory log --------------------------------------------------------

inline void write_trajectory_csv(std::ostream& out, const TrajectoryLog& log) {
    out << "iteration,accuracy,flawed_ratio,mean_reward,mean_length,stage\n";
    for (const IterationRecord& rec : log.records) {
        out << rec.iteration << ',' << format_double(rec.accuracy) << ','
            << format_double(rec.flawed_ratio) << ',' << format_double(rec.mean_reward) << ','
            << format_double(rec.mean_length) << ','
            << (rec.stage ? stage_name(*rec.stage) : "undefined") << '\n';
    }
}

inline json iteration_record_to_json(const IterationRecord& rec) {
    json j;
    j["iteration"] = rec.iteration;
    j["accuracy"] = rec.accuracy;
    j["flawed_ratio"] = rec.flawed_ratio;
    j["mean_reward"] = rec.mean_reward;
    j["mean_length"] = rec.mean_length;
    j["stage"] = rec.stage ? json(std::string(stage_name(*rec.stage))) : json(nullptr);
    j["alpha"] = rec.composition.alpha;
    j["beta"] = rec.composition.beta;
    j["gamma"] = rec.composition.gamma;
    return j;
}

inline void write_trajectory_jsonl(std::ostream& out, const TrajectoryLog& log) {
    for (const IterationRecord& rec : log.records) out << iteration_record_to_json(rec).dump() << '\n';
}

// ---- Simulation config -----------------------------------------------------

struct SimConfig {
    EnvConfig env;
    TrainConfig train;
};

inline json sim_config_to_json(const SimConfig& cfg) {
    json j;
    j["v"] = 1;
    j["env"] = {
        {"num_categories", cfg.env.num_categories},
        {"p_guess", cfg.env.p_guess},
        {"p_shortcut", cfg.env.p_shortcut},
        {"p_full_base", cfg.env.p_full_base},
        {"p_full_growth", cfg.env.p_full_growth},
        {"p_full_cap", cfg.env.p_full_cap},
        {"steps_guess", cfg.env.steps_guess},
        {"steps_shortcut", cfg.env.steps_shortcut},
        {"steps_full", cfg.env.steps_full},
        {"tokens_per_step", cfg.env.tokens_per_step},
        {"seed", cfg.env.seed},
    };
    j["train"] = {
        {"iterations", cfg.train.iterations},
        {"learning_rate", cfg.train.learning_rate},
        {"group_size", cfg.train.surrogate.group_size},
        {"eps_low", cfg.train.surrogate.eps_low},
        {"eps_high", cfg.train.surrogate.eps_high},
        {"lambda", cfg.train.penalty.lambda},
        {"reward_correct", cfg.train.penalty.reward_correct},
        {"reward_incorrect", cfg.train.penalty.reward_incorrect},
        {"max_length", cfg.train.shaping.max_length},
        {"buffer_length", cfg.train.shaping.buffer_length},
        {"penalty_factor", cfg.train.shaping.penalty_factor},
        {"judge_flip_prob", cfg.train.judge.label_flip_prob},
        {"judge_jitter", cfg.train.judge.index_jitter_stddev},
        {"judge_seed", cfg.train.judge.seed},
        {"window", cfg.train.window},
    };
    return j;
}

inline SimConfig sim_config_from_json(const json& j) {
    SimConfig cfg;
    try {
        if (j.contains("env")) {
            const json& e = j["env"];
            cfg.env.num_categories = e.value("num_categories", cfg.env.num_categories);
            cfg.env.p_guess = e.value("p_guess", cfg.env.p_guess);
            cfg.env.p_shortcut = e.value("p_shortcut", cfg.env.p_shortcut);
            cfg.env.p_full_base = e.value("p_full_base", cfg.env.p_full_base);
            cfg.env.p_full_growth = e.value("p_full_growth", cfg.env.p_full_growth);
            cfg.env.p_full_cap = e.value("p_full_cap", cfg.env.p_full_cap);
            cfg.env.steps_guess = e.value("steps_guess", cfg.env.steps_guess);
            cfg.env.steps_shortcut = e.value("steps_shortcut", cfg.env.steps_shortcut);
            cfg.env.steps_full = e.value("steps_full", cfg.env.steps_full);
            cfg.env.tokens_per_step = e.value("tokens_per_step", cfg.env.tokens_per_step);
            cfg.env.seed = e.value("seed", cfg.env.seed);
        }
        if (j.contains("train")) {
            const json& t = j["train"];
            cfg.train.iterations = t.value("iterations", cfg.train.iterations);
            cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
            cfg.train.surrogate.group_size = t.value("group_size", cfg.train.surrogate.group_size);
            cfg.train.surrogate.eps_low = t.value("eps_low", cfg.train.surrogate.eps_low);
            cfg.train.surrogate.eps_high = t.value("eps_high", cfg.train.surrogate.eps_high);
            cfg.train.penalty.lambda = t.value("lambda", cfg.train.penalty.lambda);
            cfg.train.penalty.reward_correct =
                t.value("reward_correct", cfg.train.penalty.reward_correct);
            cfg.train.penalty.reward_incorrect =
                t.value("reward_incorrect", cfg.train.penalty.reward_incorrect);
            cfg.train.shaping.max_length = t.value("max_length", cfg.train.shaping.max_length);
            cfg.train.shaping.buffer_length =
                t.value("buffer_length", cfg.train.shaping.buffer_length);
            cfg.train.shaping.penalty_factor =
                t.value("penalty_factor", cfg.train.shaping.penalty_factor);
            cfg.train.judge.label_flip_prob =
                t.value("judge_flip_prob", cfg.train.judge.label_flip_prob);
            cfg.train.judge.index_jitter_stddev =
                t.value("judge_jitter", cfg.train.judge.index_jitter_stddev);
            cfg.train.judge.seed = t.value("judge_seed", cfg.train.judge.seed);
            cfg.train.window = t.value("window", cfg.train.window);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid simulation config: ") + e.what());
    }
    return cfg;
}

inline SimConfig load_sim_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw DataError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return sim_config_from_json(j);
}

}  // namespace io
}  // namespace fapo
