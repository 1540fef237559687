#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fapo/advantage.hpp"
#include "fapo/core.hpp"
#include "fapo/dynamics.hpp"
#include "fapo/judge.hpp"
#include "fapo/rewards.hpp"
#include "fapo/rng.hpp"

namespace fapo {

// Guess and Shortcut reach correct answers through flawed routes (their
// correct rollouts are flawed positives by construction); FullReasoning is the
// only arm whose successes are fully correct.
enum class ArmKind { Guess = 0, Shortcut = 1, FullReasoning = 2 };

inline constexpr int kNumArms = 3;

// Synthetic task distribution. Flawed-route success rates are fixed; the
// full-reasoning rate starts at p_full_base and grows by p_full_growth per
// full-reasoning success (per category), saturating at p_full_cap.
struct EnvConfig {
    int num_categories = 8;
    double p_guess = 0.25;
    double p_shortcut = 0.45;
    double p_full_base = 0.20;
    double p_full_growth = 0.015;
    double p_full_cap = 0.90;
    int steps_guess = 2;
    int steps_shortcut = 4;
    int steps_full = 12;
    long long tokens_per_step = 40;
    std::uint64_t seed = 0;
};

inline void validate_env(const EnvConfig& cfg) {
    if (cfg.num_categories < 1) throw InvalidArgument("env: num_categories must be >= 1");
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(cfg.p_guess) || !in_unit(cfg.p_shortcut) || !in_unit(cfg.p_full_base) ||
        !in_unit(cfg.p_full_cap))
        throw InvalidArgument("env: probabilities must lie in [0, 1]");
    if (cfg.p_full_growth < 0.0) throw InvalidArgument("env: negative growth");
    if (cfg.steps_guess < 1 || cfg.steps_shortcut < 1 || cfg.steps_full < 1)
        throw InvalidArgument("env: step counts must be >= 1");
    if (cfg.tokens_per_step < 0) throw InvalidArgument("env: negative tokens_per_step");
}

struct SampledRollout {
    Rollout rollout;
    int arm = 0;
    double behavior_prob = 1.0;
    bool correct = false;
    // First invalid step visible among the emitted ones. A shortcut's flaw is
    // the omission itself, so a successful shortcut shows no emitted error.
    std::optional<int> emitted_first_error;
};

class Environment {
public:
    explicit Environment(const EnvConfig& cfg) : cfg_(cfg) {
        validate_env(cfg);
        practice_.assign(static_cast<std::size_t>(cfg.num_categories), 0);
        questions_.reserve(static_cast<std::size_t>(cfg.num_categories));
        for (int c = 0; c < cfg.num_categories; ++c) {
            Question q;
            q.id = "cat-" + std::to_string(c);
            q.statement = "synthetic task " + std::to_string(c);
            q.gold_answer = "ans-" + std::to_string(c);
            questions_.push_back(std::move(q));
        }
    }

    const EnvConfig& config() const { return cfg_; }
    const std::vector<Question>& questions() const { return questions_; }
    const Question& question(int category) const {
        return questions_.at(static_cast<std::size_t>(category));
    }

    double p_full(int category) const {
        const double p = cfg_.p_full_base +
                         cfg_.p_full_growth *
                             static_cast<double>(practice_.at(static_cast<std::size_t>(category)));
        return std::min(p, cfg_.p_full_cap);
    }

    double success_prob(int category, int arm) const {
        switch (static_cast<ArmKind>(arm)) {
            case ArmKind::Guess: return cfg_.p_guess;
            case ArmKind::Shortcut: return cfg_.p_shortcut;
            case ArmKind::FullReasoning: return p_full(category);
        }
        throw InvalidArgument("env: unknown arm");
    }

    int arm_steps(int arm) const {
        switch (static_cast<ArmKind>(arm)) {
            case ArmKind::Guess: return cfg_.steps_guess;
            case ArmKind::Shortcut: return cfg_.steps_shortcut;
            case ArmKind::FullReasoning: return cfg_.steps_full;
        }
        throw InvalidArgument("env: unknown arm");
    }

    SampledRollout sample_rollout(int category, const SoftmaxPolicy& policy, Rng& rng) {
        if (category < 0 || category >= cfg_.num_categories)
            throw InvalidArgument("env: category out of range");
        const int arm = policy.sample(category, rng);
        const double p_success = success_prob(category, arm);
        const bool success = rng.bernoulli(p_success);
        const int steps = arm_steps(arm);
        const Question& q = question(category);

        SampledRollout out;
        out.arm = arm;
        out.behavior_prob = policy.prob(category, arm);
        out.correct = success;

        Rollout& r = out.rollout;
        r.question_id = q.id;
        r.num_steps = steps;
        r.length_tokens = static_cast<long long>(steps) * cfg_.tokens_per_step;
        r.step_logprobs = {std::log(out.behavior_prob)};
        r.predicted_answer = success ? q.gold_answer : "(wrong)";

        const ArmKind kind = static_cast<ArmKind>(arm);
        if (success) {
            if (kind == ArmKind::FullReasoning) {
                r.gold_label = RolloutLabel::FullyCorrect;
                practice_[static_cast<std::size_t>(category)] += 1;
            } else {
                r.gold_label = RolloutLabel::FlawedPositive;
                r.gold_first_error = kind == ArmKind::Guess ? 0 : cfg_.steps_shortcut / 2;
            }
        } else {
            r.gold_label = RolloutLabel::Negative;
        }

        // What a per-step judge sees. A guess is an unjustified assertion, so
        // its first emitted step is always flagged. A shortcut skips the
        // uncertain steps entirely: nothing visibly wrong is emitted, even
        // when the skipped reasoning loses the answer. Full reasoning shows
        // its mistake when it fails.
        switch (kind) {
            case ArmKind::Guess:
                out.emitted_first_error = 0;
                break;
            case ArmKind::Shortcut:
                out.emitted_first_error = std::nullopt;
                break;
            case ArmKind::FullReasoning:
                out.emitted_first_error = success ? std::nullopt : std::optional<int>(steps / 2);
                break;
        }
        return out;
    }

private:
    EnvConfig cfg_;
    std::vector<Question> questions_;
    std::vector<long long> practice_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class Algo { GrpoBaseline, Fapo, StepRatio };

inline std::string_view algo_name(Algo a) {
    switch (a) {
        case Algo::GrpoBaseline: return "grpo";
        case Algo::Fapo: return "fapo";
        case Algo::StepRatio: return "stepratio";
    }
    return "unknown";
}

inline std::optional<Algo> algo_from_name(std::string_view name) {
    if (name == "grpo") return Algo::GrpoBaseline;
    if (name == "fapo") return Algo::Fapo;
    if (name == "stepratio") return Algo::StepRatio;
    return std::nullopt;
}

struct TrainConfig {
    int iterations = 400;
    double learning_rate = 0.25;
    SurrogateConfig surrogate;
    PenaltyConfig penalty;
    LengthShapingConfig shaping;
    JudgeNoiseConfig judge;
    int window = 50;  // trailing window used by summaries
};

inline void validate_train(const TrainConfig& cfg) {
    if (cfg.iterations < 0) throw InvalidArgument("train: negative iterations");
    if (cfg.learning_rate < 0.0) throw InvalidArgument("train: negative learning rate");
    if (cfg.surrogate.group_size < 2) throw InvalidArgument("train: group_size must be >= 2");
    if (cfg.window < 1) throw InvalidArgument("train: window must be >= 1");
    validate_surrogate(cfg.surrogate);
    validate_penalty(cfg.penalty);
    validate_length_shaping(cfg.shaping);
    validate_noise(cfg.judge);
}

struct IterationRecord {
    int iteration = 0;
    double accuracy = 0.0;
    double flawed_ratio = 0.0;  // flawed positives / all positives (0 if none)
    double mean_reward = 0.0;
    double mean_length = 0.0;  // mean emitted step count
    std::optional<Stage> stage;
    GroupComposition composition;  // aggregate over the iteration's rollouts
    // stepping-stone accounting: groups with >= 1 flawed positive and a strict
    // negative majority, and how many of those gave the flawed positives a
    // strictly positive advantage
    long long majority_neg_fp_groups = 0;
    long long majority_neg_fp_groups_pos_adv = 0;
};

struct TrajectoryLog {
    Algo algo = Algo::GrpoBaseline;
    double effective_lambda = 0.0;  // 0 whenever stage tracking is off
    std::uint64_t seed = 0;
    std::vector<IterationRecord> records;
};

// Verdicts for a batch of correct rollouts, in input order. The default
// provider calls the scripted judge in-process; a service-backed provider can
// be swapped in without changing the resulting log.
using VerdictProvider = std::function<std::vector<Verdict>(const std::vector<Rollout>&)>;

inline VerdictProvider scripted_verdict_provider(const JudgeNoiseConfig& noise) {
    return [noise](const std::vector<Rollout>& rollouts) {
        std::vector<Verdict> verdicts;
        verdicts.reserve(rollouts.size());
        for (const Rollout& r : rollouts) verdicts.push_back(scripted_judge(r, noise));
        return verdicts;
    };
}

inline TrajectoryLog run_training(const EnvConfig& env_cfg, Algo algo, const TrainConfig& train,
                                  const VerdictProvider& verdicts_for = nullptr) {
    validate_env(env_cfg);
    validate_train(train);
    const VerdictProvider provider =
        verdicts_for ? verdicts_for : scripted_verdict_provider(train.judge);

    Environment env(env_cfg);
    SoftmaxPolicy policy(env_cfg.num_categories, kNumArms);
    Rng rng(env_cfg.seed);

    TrajectoryLog log;
    log.algo = algo;
    log.effective_lambda = algo == Algo::Fapo ? train.penalty.lambda : 0.0;
    log.seed = env_cfg.seed;
    log.records.reserve(static_cast<std::size_t>(train.iterations));

    const int group_size = train.surrogate.group_size;
    for (int iter = 0; iter < train.iterations; ++iter) {
        std::vector<std::vector<SampledRollout>> groups;
        groups.reserve(static_cast<std::size_t>(env_cfg.num_categories));
        for (int c = 0; c < env_cfg.num_categories; ++c) {
            std::vector<SampledRollout> group;
            group.reserve(static_cast<std::size_t>(group_size));
            for (int i = 0; i < group_size; ++i) group.push_back(env.sample_rollout(c, policy, rng));
            groups.push_back(std::move(group));
        }

        // Judge only the correct rollouts; negatives never take the penalty.
        std::vector<Verdict> verdicts;
        std::vector<std::pair<std::size_t, std::size_t>> verdict_slots;
        if (algo == Algo::Fapo) {
            std::vector<Rollout> to_judge;
            for (std::size_t g = 0; g < groups.size(); ++g)
                for (std::size_t i = 0; i < groups[g].size(); ++i)
                    if (groups[g][i].correct) {
                        verdict_slots.emplace_back(g, i);
                        to_judge.push_back(groups[g][i].rollout);
                    }
            verdicts = provider(to_judge);
            if (verdicts.size() != to_judge.size())
                throw InvalidArgument("verdict provider returned wrong count");
        }
        std::vector<std::vector<std::optional<Verdict>>> verdict_by_slot(
            groups.size(), std::vector<std::optional<Verdict>>(static_cast<std::size_t>(group_size)));
        for (std::size_t k = 0; k < verdict_slots.size(); ++k)
            verdict_by_slot[verdict_slots[k].first][verdict_slots[k].second] = verdicts[k];

        IterationRecord rec;
        rec.iteration = iter;
        long long n_correct = 0, n_fc = 0, n_fp = 0, n_neg = 0;
        double reward_sum = 0.0, length_sum = 0.0;

        std::vector<std::vector<ScoredDecision>> batch;
        batch.reserve(groups.size());
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const Question& q = env.question(static_cast<int>(g));
            std::vector<ScoredDecision> scored;
            std::vector<double> rewards;
            scored.reserve(groups[g].size());
            rewards.reserve(groups[g].size());
            long long group_fp = 0, group_neg = 0;
            for (std::size_t i = 0; i < groups[g].size(); ++i) {
                const SampledRollout& s = groups[g][i];
                double reward = 0.0;
                switch (algo) {
                    case Algo::GrpoBaseline:
                        reward = rule_reward(s.rollout, q);
                        break;
                    case Algo::Fapo: {
                        const auto& v = verdict_by_slot[g][i];
                        const bool flagged = v && v->is_flawed_positive;
                        reward = fapo_reward(s.rollout, q, flagged, train.penalty);
                        break;
                    }
                    case Algo::StepRatio:
                        reward = step_ratio_reward(s.emitted_first_error, s.rollout.num_steps);
                        break;
                }
                reward = apply_length_shaping(reward, s.rollout.length_tokens, train.shaping);
                rewards.push_back(reward);
                reward_sum += reward;
                length_sum += static_cast<double>(s.rollout.num_steps);
                if (s.correct) ++n_correct;
                switch (*s.rollout.gold_label) {
                    case RolloutLabel::FullyCorrect: ++n_fc; break;
                    case RolloutLabel::FlawedPositive: ++n_fp; ++group_fp; break;
                    case RolloutLabel::Negative: ++n_neg; ++group_neg; break;
                }
                scored.push_back(ScoredDecision{static_cast<int>(g), s.arm, s.behavior_prob,
                                                s.rollout.num_steps, reward});
            }
            if (group_fp > 0 && 2 * group_neg > static_cast<long long>(groups[g].size())) {
                rec.majority_neg_fp_groups += 1;
                const std::vector<double> adv = group_advantages(rewards);
                bool all_positive = true;
                for (std::size_t i = 0; i < groups[g].size(); ++i)
                    if (groups[g][i].rollout.gold_label == RolloutLabel::FlawedPositive &&
                        !(adv[i] > 0.0))
                        all_positive = false;
                if (all_positive) rec.majority_neg_fp_groups_pos_adv += 1;
            }
            batch.push_back(std::move(scored));
        }

        policy = policy_gradient_update(std::move(policy), batch, train.surrogate,
                                        train.learning_rate);

        const long long total = static_cast<long long>(groups.size()) * group_size;
        rec.accuracy = static_cast<double>(n_correct) / static_cast<double>(total);
        rec.flawed_ratio = (n_fc + n_fp) > 0
                               ? static_cast<double>(n_fp) / static_cast<double>(n_fc + n_fp)
                               : 0.0;
        rec.mean_reward = reward_sum / static_cast<double>(total);
        rec.mean_length = length_sum / static_cast<double>(total);
        const double t = static_cast<double>(total);
        rec.composition = GroupComposition{static_cast<double>(n_fc) / t,
                                           static_cast<double>(n_neg) / t,
                                           static_cast<double>(n_fp) / t, total};
        if (log.effective_lambda > 0.0 && rec.composition.gamma > 0.0)
            rec.stage = flawed_stage(rec.composition, log.effective_lambda);
        log.records.push_back(std::move(rec));
    }
    return log;
}

inline double flawed_ratio_window(const TrajectoryLog& log, int window) {
    if (window < 1) throw InvalidArgument("window must be >= 1");
    if (static_cast<std::size_t>(window) > log.records.size())
        throw InvalidArgument("window exceeds log length");
    double sum = 0.0;
    for (std::size_t i = log.records.size() - static_cast<std::size_t>(window);
         i < log.records.size(); ++i)
        sum += log.records[i].flawed_ratio;
    return sum / static_cast<double>(window);
}

// Flawed ratio grouped by rollout accuracy instead of iteration time: the
// learning-stage proxy view. Buckets with no iterations report absent.
inline std::vector<std::optional<double>> flawed_ratio_by_accuracy(const TrajectoryLog& log,
                                                                   int buckets = 10) {
    if (buckets < 1) throw InvalidArgument("buckets must be >= 1");
    std::vector<double> sums(static_cast<std::size_t>(buckets), 0.0);
    std::vector<long long> counts(static_cast<std::size_t>(buckets), 0);
    for (const IterationRecord& rec : log.records) {
        int b = static_cast<int>(rec.accuracy * buckets);
        if (b >= buckets) b = buckets - 1;
        sums[static_cast<std::size_t>(b)] += rec.flawed_ratio;
        counts[static_cast<std::size_t>(b)] += 1;
    }
    std::vector<std::optional<double>> out(static_cast<std::size_t>(buckets));
    for (int b = 0; b < buckets; ++b)
        if (counts[static_cast<std::size_t>(b)] > 0)
            out[static_cast<std::size_t>(b)] =
                sums[static_cast<std::size_t>(b)] /
                static_cast<double>(counts[static_cast<std::size_t>(b)]);
    return out;
}

struct StageProfile {
    std::vector<std::pair<int, Stage>> stages;  // iterations where a stage is defined
    std::optional<int> shift_iteration;         // first Refinement iteration, if any
};

inline StageProfile stage_profile(const TrajectoryLog& log) {
    StageProfile profile;
    for (const IterationRecord& rec : log.records) {
        if (!rec.stage) continue;
        profile.stages.emplace_back(rec.iteration, *rec.stage);
        if (!profile.shift_iteration && *rec.stage == Stage::Refinement)
            profile.shift_iteration = rec.iteration;
    }
    return profile;
}

}  // namespace fapo
