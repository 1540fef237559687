#pragma once

#include <algorithm>
#include <optional>

#include "fapo/core.hpp"

namespace fapo {

// Detector-training task: a predicted verdict against gold annotations for
// one judged solution with `num_steps` steps.
struct GenRMTask {
    bool predicted_is_fp = false;
    std::optional<int> predicted_first_error;
    bool gold_is_fp = false;
    std::optional<int> gold_first_error;
    int num_steps = 1;
};

inline void validate_genrm_task(const GenRMTask& t) {
    if (t.num_steps < 1) throw InvalidArgument("genrm task: num_steps must be >= 1");
    if (t.predicted_first_error && !t.predicted_is_fp)
        throw InvalidArgument("genrm task: predicted index without FP prediction");
    if (t.gold_is_fp != t.gold_first_error.has_value())
        throw InvalidArgument("genrm task: gold index present iff gold is FP");
}

// Overlong shaping window. Defaults: 8192 max generation length, 4096 buffer,
// penalty factor 1.
struct LengthShapingConfig {
    long long max_length = 8192;
    long long buffer_length = 4096;
    double penalty_factor = 1.0;
};

inline void validate_length_shaping(const LengthShapingConfig& cfg) {
    if (cfg.max_length < 1 || cfg.buffer_length < 1)
        throw InvalidArgument("length shaping: lengths must be positive");
    if (cfg.buffer_length > cfg.max_length)
        throw InvalidArgument("length shaping: buffer_length exceeds max_length");
    if (cfg.penalty_factor < 0.0)
        throw InvalidArgument("length shaping: negative penalty_factor");
}

// Rule-based outcome reward: +1 on answer match, -1 otherwise.
inline double rule_reward(const Rollout& rollout, const Question& gold) {
    if (rollout.question_id != gold.id) throw InvalidArgument("mismatched pair");
    return answers_match(rollout.predicted_answer, gold.gold_answer) ? 1.0 : -1.0;
}

// Outcome reward plus the flawed-positive penalty: a correct answer flagged
// as flawed loses lambda, everything else is untouched. With lambda = 1 the
// three cases score {1, 0, -1}.
inline double fapo_reward(const Rollout& rollout, const Question& gold, bool verdict_is_fp,
                          const PenaltyConfig& cfg) {
    if (rollout.question_id != gold.id) throw InvalidArgument("mismatched pair");
    validate_penalty(cfg);
    const bool correct = answers_match(rollout.predicted_answer, gold.gold_answer);
    double r = correct ? cfg.reward_correct : cfg.reward_incorrect;
    if (correct && verdict_is_fp) r -= cfg.lambda;
    return r;
}

inline double genrm_outcome_reward(const GenRMTask& task) {
    validate_genrm_task(task);
    return task.predicted_is_fp == task.gold_is_fp ? 1.0 : -1.0;
}

// Distance-sensitive localization penalty, only on agreed FP verdicts.
// The predicted index is clamped into [0, n-1] first, so the result always
// lies in [-1, 0].
inline double genrm_process_reward(const GenRMTask& task) {
    validate_genrm_task(task);
    if (!(task.predicted_is_fp && task.gold_is_fp)) return 0.0;
    if (!task.predicted_first_error) throw InvalidArgument("missing error index");
    const int n = task.num_steps;
    const int predicted = std::clamp(*task.predicted_first_error, 0, n - 1);
    const int gold = *task.gold_first_error;
    return -static_cast<double>(std::abs(predicted - gold)) / static_cast<double>(n);
}

inline double genrm_total_reward(const GenRMTask& task) {
    return genrm_outcome_reward(task) + genrm_process_reward(task);
}

// Fraction of steps before the first detected error; 1 when no error was
// found. Maximal for a verdict that reports nothing, which is what makes this
// reward hackable.
inline double step_ratio_reward(std::optional<int> verdict_first_error, int num_steps) {
    if (num_steps < 1) throw InvalidArgument("step ratio: num_steps must be >= 1");
    if (!verdict_first_error) return 1.0;
    if (*verdict_first_error < 0 || *verdict_first_error > num_steps)
        throw InvalidArgument("invalid index");
    return static_cast<double>(*verdict_first_error) / static_cast<double>(num_steps);
}

// Linear penalty ramp over the final buffer window: zero through
// max_length - buffer_length, saturating at penalty_factor from max_length on.
inline double apply_length_shaping(double reward, long long length_tokens,
                                   const LengthShapingConfig& cfg) {
    validate_length_shaping(cfg);
    if (length_tokens < 0) throw InvalidArgument("length shaping: negative length");
    const long long soft_limit = cfg.max_length - cfg.buffer_length;
    if (length_tokens <= soft_limit) return reward;
    const double overrun = static_cast<double>(length_tokens - soft_limit) /
                           static_cast<double>(cfg.buffer_length);
    return reward - cfg.penalty_factor * std::min(1.0, overrun);
}

}  // namespace fapo
