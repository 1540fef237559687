#pragma once

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fapo/core.hpp"
#include "fapo/rng.hpp"

namespace fapo {

// A judge's output: the flawed-positive call plus, when available, the
// 0-based index of the first invalid step. ORM-style verdicts carry no index.
struct Verdict {
    bool is_flawed_positive = false;
    std::optional<int> first_error_index;

    friend bool operator==(const Verdict&, const Verdict&) = default;
};

inline void validate_verdict(const Verdict& v) {
    if (v.first_error_index && !v.is_flawed_positive)
        throw InvalidArgument("verdict: error index without flawed-positive call");
    if (v.first_error_index && *v.first_error_index < 0)
        throw InvalidArgument("verdict: negative error index");
}

struct BenchmarkRecord {
    Question question;
    std::vector<std::string> solution_steps;
    bool gold_is_fp = false;
    std::optional<int> gold_first_error;
};

inline void validate_benchmark_record(const BenchmarkRecord& r) {
    if (r.gold_is_fp != r.gold_first_error.has_value())
        throw InvalidArgument("benchmark record: gold index present iff flawed positive");
    if (r.gold_first_error &&
        (*r.gold_first_error < 0 ||
         *r.gold_first_error >= static_cast<int>(r.solution_steps.size())))
        throw InvalidArgument("benchmark record: gold_first_error out of range");
}

struct DetectionScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool no_predicted_fp = false;  // precision was undefined and reported as 0
};

// Bernoulli label flip plus rounded Gaussian jitter on the error index.
// Deterministic per (seed, record identity); flip/jitter at zero reproduce
// the gold verdict exactly.
struct JudgeNoiseConfig {
    double label_flip_prob = 0.0;
    double index_jitter_stddev = 0.0;
    std::uint64_t seed = 0;
};

inline void validate_noise(const JudgeNoiseConfig& cfg) {
    if (cfg.label_flip_prob < 0.0 || cfg.label_flip_prob > 1.0)
        throw InvalidArgument("noise: label_flip_prob outside [0, 1]");
    if (cfg.index_jitter_stddev < 0.0) throw InvalidArgument("noise: negative jitter");
}

namespace detail {

inline Verdict scripted_verdict(std::string_view identity, bool gold_is_fp,
                                std::optional<int> gold_first_error, int num_steps,
                                const JudgeNoiseConfig& noise) {
    validate_noise(noise);
    std::uint64_t key = mix_u64(noise.seed, hash_bytes(identity));
    key = mix_u64(key, static_cast<std::uint64_t>(num_steps));
    key = mix_u64(key, gold_is_fp ? 2 : 1);
    if (gold_first_error) key = mix_u64(key, static_cast<std::uint64_t>(*gold_first_error) + 3);
    Rng rng(key);

    const bool flip = rng.bernoulli(noise.label_flip_prob);
    const bool emit_fp = flip ? !gold_is_fp : gold_is_fp;
    if (!emit_fp) return Verdict{false, std::nullopt};

    const int max_index = std::max(num_steps, 1) - 1;
    int index;
    if (gold_first_error) {
        const long long jitter = std::llround(rng.gaussian(0.0, noise.index_jitter_stddev));
        index = static_cast<int>(std::clamp<long long>(*gold_first_error + jitter, 0, max_index));
    } else {
        // false positive out of thin air: no gold index to perturb
        index = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_index) + 1));
    }
    return Verdict{true, index};
}

}  // namespace detail

inline Verdict scripted_judge(const BenchmarkRecord& record, const JudgeNoiseConfig& noise) {
    validate_benchmark_record(record);
    return detail::scripted_verdict(record.question.id, record.gold_is_fp, record.gold_first_error,
                                    static_cast<int>(record.solution_steps.size()), noise);
}

inline Verdict scripted_judge(const Rollout& rollout, const JudgeNoiseConfig& noise) {
    if (!rollout.gold_label) throw InvalidArgument("unjudgeable record");
    const bool is_fp = *rollout.gold_label == RolloutLabel::FlawedPositive;
    return detail::scripted_verdict(rollout.question_id, is_fp, rollout.gold_first_error,
                                    rollout.num_steps, noise);
}

// ---------------------------------------------------------------------------
// Prompt rendering / reply parsing
// ---------------------------------------------------------------------------

// Keep these byte-identical to assets/orm_prompt.txt and assets/prm_prompt.txt.
inline constexpr std::string_view kOrmPromptTemplate =
    "The following is a math problem with its ground truth answer, along with an AI solution:\n"
    "\n"
    "[Math Problem]\n"
    "{problem statement}\n"
    "\n"
    "[Ground Truth]\n"
    "{ground truth answer}\n"
    "\n"
    "[AI Solution]\n"
    "{AI Solution}\n"
    "\n"
    "Your task is to review and critique the solution step by step, and output whether the AI "
    "solution is correct.\n"
    "Please reason step by step, put your final answer (i.e., 'True' or 'False') in \\boxed{}\n";

inline constexpr std::string_view kPrmPromptTemplate =
    "The following is a math problem with its ground truth answer, along with an AI solution "
    "(split into paragraphs, enclosed with tags and indexed from 0):\n"
    "\n"
    "[Math Problem]\n"
    "{problem statement}\n"
    "\n"
    "[Ground Truth]\n"
    "{ground truth answer}\n"
    "\n"
    "[AI Solution]\n"
    "{AI Solution}\n"
    "\n"
    "Your task is to review and critique the solution paragraph by paragraph. Once you identify "
    "an error in a paragraph, return the index of the paragraph where the earliest error occurs. "
    "Otherwise, return the index of -1 (which typically denotes 'not found').\n"
    "Please reason step by step, put your final answer (i.e., the index) in \\boxed{}\n";

namespace detail {

inline std::string replace_once(std::string text, std::string_view placeholder,
                                std::string_view value) {
    const std::size_t pos = text.find(placeholder);
    if (pos == std::string::npos) throw InvalidArgument("template placeholder missing");
    text.replace(pos, placeholder.size(), value);
    return text;
}

}  // namespace detail

// Splits solution text into paragraphs on blank lines. Records that already
// carry pre-split steps take precedence over this rule.
inline std::vector<std::string> split_paragraphs(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    std::size_t i = 0;
    while (i <= text.size()) {
        const std::size_t nl = text.find('\n', i);
        const std::string_view line =
            nl == std::string_view::npos ? text.substr(i) : text.substr(i, nl - i);
        if (detail::trim_copy(line).empty()) {
            if (!current.empty()) out.push_back(std::exchange(current, std::string{}));
        } else {
            if (!current.empty()) current += '\n';
            current += line;
        }
        if (nl == std::string_view::npos) break;
        i = nl + 1;
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

inline std::string render_orm_prompt(const BenchmarkRecord& record) {
    std::string body;
    for (std::size_t i = 0; i < record.solution_steps.size(); ++i) {
        if (i > 0) body += "\n\n";
        body += record.solution_steps[i];
    }
    std::string text(kOrmPromptTemplate);
    text = detail::replace_once(std::move(text), "{problem statement}", record.question.statement);
    text = detail::replace_once(std::move(text), "{ground truth answer}", record.question.gold_answer);
    text = detail::replace_once(std::move(text), "{AI Solution}", body);
    return text;
}

inline std::string render_prm_prompt(const BenchmarkRecord& record) {
    if (record.solution_steps.empty())
        throw InvalidArgument("prm prompt needs at least one paragraph");
    std::string body;
    for (std::size_t i = 0; i < record.solution_steps.size(); ++i) {
        if (i > 0) body += '\n';
        body += "<paragraph_" + std::to_string(i) + ">" + record.solution_steps[i] +
                "</paragraph_" + std::to_string(i) + ">";
    }
    std::string text(kPrmPromptTemplate);
    text = detail::replace_once(std::move(text), "{problem statement}", record.question.statement);
    text = detail::replace_once(std::move(text), "{ground truth answer}", record.question.gold_answer);
    text = detail::replace_once(std::move(text), "{AI Solution}", body);
    return text;
}

enum class JudgeMode { ORM, PRM };

// ORM replies box 'True'/'False' (response judged correct / flawed); PRM
// replies box the earliest error index, with -1 meaning no error found.
inline Verdict parse_judge_reply(std::string_view reply, JudgeMode mode, int num_steps) {
    if (num_steps < 1) throw InvalidArgument("num_steps must be >= 1");
    const std::optional<std::string> boxed = extract_boxed_answer(reply);
    if (!boxed) throw InvalidArgument("unparseable reply");

    if (mode == JudgeMode::ORM) {
        if (*boxed == "True") return Verdict{false, std::nullopt};
        if (*boxed == "False") return Verdict{true, std::nullopt};
        throw InvalidArgument("unparseable reply");
    }

    const std::string& s = *boxed;
    std::size_t p = 0;
    bool negative = false;
    if (p < s.size() && (s[p] == '-' || s[p] == '+')) negative = s[p++] == '-';
    if (p >= s.size()) throw InvalidArgument("unparseable reply");
    long long value = 0;
    for (; p < s.size(); ++p) {
        if (s[p] < '0' || s[p] > '9') throw InvalidArgument("unparseable reply");
        value = value * 10 + (s[p] - '0');
        if (value > 1'000'000'000) throw InvalidArgument("index out of range");
    }
    if (negative) value = -value;
    if (value == -1) return Verdict{false, std::nullopt};
    if (value < 0 || value >= num_steps) throw InvalidArgument("index out of range");
    return Verdict{true, static_cast<int>(value)};
}

// ---------------------------------------------------------------------------
// Detection metrics
// ---------------------------------------------------------------------------

// precision = #{pred = gold = FP} / #{pred = FP}, recall over gold FPs, F1 as
// their harmonic mean. Indices are ignored here; labels only.
inline DetectionScores eval_detection(std::span<const Verdict> predictions,
                                      std::span<const BenchmarkRecord> gold) {
    if (predictions.size() != gold.size())
        throw InvalidArgument("predictions and gold differ in length");
    long long true_fp = 0, predicted_fp = 0, gold_fp = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].gold_is_fp) ++gold_fp;
        if (predictions[i].is_flawed_positive) {
            ++predicted_fp;
            if (gold[i].gold_is_fp) ++true_fp;
        }
    }
    if (gold_fp == 0) throw InvalidArgument("no positive class");

    DetectionScores scores;
    scores.no_predicted_fp = predicted_fp == 0;
    scores.precision =
        predicted_fp == 0 ? 0.0 : static_cast<double>(true_fp) / static_cast<double>(predicted_fp);
    scores.recall = static_cast<double>(true_fp) / static_cast<double>(gold_fp);
    scores.f1 = (scores.precision > 0.0 && scores.recall > 0.0)
                    ? 2.0 / (1.0 / scores.precision + 1.0 / scores.recall)
                    : 0.0;
    return scores;
}

// Harmonic mean of accuracy on gold-correct records (judged correct) and on
// gold-erroneous records (exact first-error localization).
inline double eval_processbench_style(std::span<const Verdict> predictions,
                                      std::span<const BenchmarkRecord> gold) {
    if (predictions.size() != gold.size())
        throw InvalidArgument("predictions and gold differ in length");
    long long n_correct = 0, correct_hits = 0;
    long long n_error = 0, error_hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].gold_is_fp) {
            ++n_error;
            if (predictions[i].is_flawed_positive && predictions[i].first_error_index &&
                *predictions[i].first_error_index == *gold[i].gold_first_error)
                ++error_hits;
        } else {
            ++n_correct;
            if (!predictions[i].is_flawed_positive) ++correct_hits;
        }
    }
    if (n_correct == 0 || n_error == 0) throw InvalidArgument("class missing");
    const double acc_correct = static_cast<double>(correct_hits) / static_cast<double>(n_correct);
    const double acc_error = static_cast<double>(error_hits) / static_cast<double>(n_error);
    if (acc_correct == 0.0 || acc_error == 0.0) return 0.0;
    return 2.0 * acc_correct * acc_error / (acc_correct + acc_error);
}

inline double harmonic_mean_accuracy(double acc_correct, double acc_error) {
    if (acc_correct < 0.0 || acc_error < 0.0) throw InvalidArgument("negative accuracy");
    if (acc_correct == 0.0 || acc_error == 0.0) return 0.0;
    return 2.0 * acc_correct * acc_error / (acc_correct + acc_error);
}

}  // namespace fapo
