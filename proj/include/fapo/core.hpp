#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fapo {

// Thrown when an operation's preconditions are violated (empty groups,
// mismatched question/rollout pairs, out-of-range indices, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Question {
    std::string id;
    std::string statement;
    std::string gold_answer;
};

enum class RolloutLabel { FullyCorrect, FlawedPositive, Negative };

// One sampled solution attempt. `step_logprobs` holds one log-probability per
// emitted decision; `gold_first_error`, when present, is 0-based and implies
// the rollout is a flawed positive (correct answer, invalid step).
struct Rollout {
    std::string question_id;
    std::optional<std::string> predicted_answer;
    int num_steps = 1;
    long long length_tokens = 0;
    std::vector<double> step_logprobs;
    std::optional<RolloutLabel> gold_label;
    std::optional<int> gold_first_error;
};

inline void validate_rollout(const Rollout& r) {
    if (r.num_steps < 1) throw InvalidArgument("rollout: num_steps must be >= 1");
    if (r.length_tokens < 0) throw InvalidArgument("rollout: negative length_tokens");
    if (r.gold_first_error) {
        if (*r.gold_first_error < 0 || *r.gold_first_error >= r.num_steps)
            throw InvalidArgument("rollout: gold_first_error out of [0, num_steps)");
        if (r.gold_label != RolloutLabel::FlawedPositive)
            throw InvalidArgument("rollout: gold_first_error requires flawed-positive label");
    }
}

// Mixture of fully-correct (alpha), negative (beta) and flawed-positive
// (gamma) rollouts in one group of `group_size`.
struct GroupComposition {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    long long group_size = 1;
};

inline void validate_composition(const GroupComposition& c) {
    if (c.group_size < 1) throw InvalidArgument("composition: group_size must be >= 1");
    auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in_unit(c.alpha) || !in_unit(c.beta) || !in_unit(c.gamma))
        throw InvalidArgument("composition: fractions must lie in [0, 1]");
    if (std::abs(c.alpha + c.beta + c.gamma - 1.0) > 1e-12)
        throw InvalidArgument("composition: fractions must sum to 1");
    // Realizability: each fraction times G must be (numerically) a count.
    const double g = static_cast<double>(c.group_size);
    for (double f : {c.alpha, c.beta, c.gamma}) {
        const double n = f * g;
        if (std::abs(n - std::llround(n)) > 1e-6)
            throw InvalidArgument("composition: fraction * group_size is not an integer");
    }
}

// Penalization strength and the two outcome-reward constants. lambda = 2
// makes a flawed positive score like a plain negative, which is the strongest
// penalty this model admits.
struct PenaltyConfig {
    double lambda = 1.0;
    double reward_correct = 1.0;
    double reward_incorrect = -1.0;
};

inline void validate_penalty(const PenaltyConfig& cfg) {
    if (cfg.lambda < 0.0 || cfg.lambda > 2.0)
        throw InvalidArgument("penalty: lambda must lie in [0, 2]");
}

inline GroupComposition composition_of(std::span<const RolloutLabel> labels) {
    if (labels.empty()) throw InvalidArgument("empty group");
    long long fc = 0, neg = 0, fp = 0;
    for (RolloutLabel l : labels) {
        switch (l) {
            case RolloutLabel::FullyCorrect: ++fc; break;
            case RolloutLabel::Negative: ++neg; break;
            case RolloutLabel::FlawedPositive: ++fp; break;
        }
    }
    const double g = static_cast<double>(labels.size());
    return GroupComposition{static_cast<double>(fc) / g, static_cast<double>(neg) / g,
                            static_cast<double>(fp) / g, static_cast<long long>(labels.size())};
}

// rho = alpha / beta; absent when the group has no negatives. Callers that
// need the beta = 0 regime must use the division-free predicates in dynamics.
inline std::optional<double> progress_ratio(const GroupComposition& comp) {
    if (comp.beta <= 0.0) return std::nullopt;
    return comp.alpha / comp.beta;
}

namespace detail {
inline std::string trim_copy(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}
}  // namespace detail

// Content of the last `\boxed{...}` occurrence, brace-balanced, trimmed.
// Unbalanced braces after the last opener mean "no answer".
inline std::optional<std::string> extract_boxed_answer(std::string_view text) {
    constexpr std::string_view kMarker = "\\boxed{";
    const std::size_t pos = text.rfind(kMarker);
    if (pos == std::string_view::npos) return std::nullopt;
    const std::size_t start = pos + kMarker.size();
    int depth = 1;
    for (std::size_t i = start; i < text.size(); ++i) {
        if (text[i] == '{') {
            ++depth;
        } else if (text[i] == '}') {
            if (--depth == 0) return detail::trim_copy(text.substr(start, i - start));
        }
    }
    return std::nullopt;
}

// Answer equality is exact string match after whitespace trimming; no
// symbolic equivalence is attempted.
inline bool answers_match(const std::optional<std::string>& predicted, std::string_view gold) {
    if (!predicted) return false;
    return detail::trim_copy(*predicted) == detail::trim_copy(gold);
}

inline std::string_view label_name(RolloutLabel l) {
    switch (l) {
        case RolloutLabel::FullyCorrect: return "fully_correct";
        case RolloutLabel::FlawedPositive: return "flawed_positive";
        case RolloutLabel::Negative: return "negative";
    }
    return "unknown";
}

inline std::optional<RolloutLabel> label_from_name(std::string_view name) {
    if (name == "fully_correct") return RolloutLabel::FullyCorrect;
    if (name == "flawed_positive") return RolloutLabel::FlawedPositive;
    if (name == "negative") return RolloutLabel::Negative;
    return std::nullopt;
}

}  // namespace fapo
