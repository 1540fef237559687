#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fapo/core.hpp"
#include "fapo/rng.hpp"

namespace fapo {

// Clipping ranges and rollout count per group. Defaults follow the clip-higher
// setup: eps_low 0.2, eps_high 0.28, eight rollouts per prompt.
struct SurrogateConfig {
    double eps_low = 0.2;
    double eps_high = 0.28;
    int group_size = 8;
};

inline void validate_surrogate(const SurrogateConfig& cfg) {
    if (cfg.eps_low <= 0.0 || cfg.eps_low >= 1.0)
        throw InvalidArgument("surrogate: eps_low must lie in (0, 1)");
    if (cfg.eps_high <= 0.0) throw InvalidArgument("surrogate: eps_high must be positive");
    if (cfg.group_size < 1) throw InvalidArgument("surrogate: group_size must be >= 1");
}

// Rewards of one group together with their population moments.
struct GroupRewards {
    std::vector<double> rewards;
    double mean = 0.0;
    double stddev = 0.0;  // population (divide by G)
};

inline GroupRewards group_stats(std::span<const double> rewards) {
    if (rewards.empty()) throw InvalidArgument("empty group");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(rewards.size());
    return GroupRewards{std::vector<double>(rewards.begin(), rewards.end()), mean, std::sqrt(var)};
}

// (r_i - mean) / std with population std. A zero-spread group yields all-zero
// advantages: such a group carries no gradient rather than failing.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) throw InvalidArgument("group too small");
    const GroupRewards stats = group_stats(rewards);
    std::vector<double> adv(rewards.size(), 0.0);
    if (stats.stddev == 0.0) return adv;
    for (std::size_t i = 0; i < rewards.size(); ++i)
        adv[i] = (rewards[i] - stats.mean) / stats.stddev;
    return adv;
}

inline double clip_ratio(double ratio, const SurrogateConfig& cfg) {
    const double lo = 1.0 - cfg.eps_low;
    const double hi = 1.0 + cfg.eps_high;
    return ratio < lo ? lo : (ratio > hi ? hi : ratio);
}

// min(ratio * A, clip(ratio) * A); never exceeds the unclipped term.
inline double clipped_surrogate_term(double ratio, double advantage, const SurrogateConfig& cfg) {
    validate_surrogate(cfg);
    if (!(ratio > 0.0)) throw InvalidArgument("invalid importance ratio");
    const double unclipped = ratio * advantage;
    const double clipped = clip_ratio(ratio, cfg) * advantage;
    return unclipped < clipped ? unclipped : clipped;
}

// d(term)/d(ratio). Positive advantages stop contributing gradient above
// 1 + eps_high, negative ones below 1 - eps_low; boundary points count as
// active.
inline double clipped_surrogate_slope(double ratio, double advantage, const SurrogateConfig& cfg) {
    if (advantage >= 0.0) return ratio <= 1.0 + cfg.eps_high ? advantage : 0.0;
    return ratio >= 1.0 - cfg.eps_low ? advantage : 0.0;
}

struct TokenTerm {
    double ratio = 1.0;
    double advantage = 0.0;
};

enum class LossNormalization {
    TokenLevel,  // divide the group's token sum by the total token count
    PerRollout,  // average per-rollout means (the plain GRPO form)
};

// Clipped surrogate over explicit per-rollout token lists. TokenLevel weights
// every token equally across the group; PerRollout gives each non-empty
// rollout equal weight regardless of its length.
inline double token_level_objective(const std::vector<std::vector<TokenTerm>>& rollouts,
                                    const SurrogateConfig& cfg,
                                    LossNormalization norm = LossNormalization::TokenLevel) {
    validate_surrogate(cfg);
    std::size_t total_tokens = 0;
    for (const auto& r : rollouts) total_tokens += r.size();
    if (total_tokens == 0) throw InvalidArgument("empty group");

    if (norm == LossNormalization::TokenLevel) {
        double sum = 0.0;
        for (const auto& rollout : rollouts)
            for (const TokenTerm& t : rollout) sum += clipped_surrogate_term(t.ratio, t.advantage, cfg);
        return sum / static_cast<double>(total_tokens);
    }
    double sum = 0.0;
    std::size_t populated = 0;
    for (const auto& rollout : rollouts) {
        if (rollout.empty()) continue;
        double inner = 0.0;
        for (const TokenTerm& t : rollout) inner += clipped_surrogate_term(t.ratio, t.advantage, cfg);
        sum += inner / static_cast<double>(rollout.size());
        ++populated;
    }
    return sum / static_cast<double>(populated);
}

// ---------------------------------------------------------------------------
// Toy policy: independent softmax over arms per question category.
// ---------------------------------------------------------------------------

class SoftmaxPolicy {
public:
    SoftmaxPolicy(int num_categories, int num_arms)
        : logits_(static_cast<std::size_t>(num_categories),
                  std::vector<double>(static_cast<std::size_t>(num_arms), 0.0)) {
        if (num_categories < 1 || num_arms < 1)
            throw InvalidArgument("policy: needs at least one category and one arm");
    }

    int num_categories() const { return static_cast<int>(logits_.size()); }
    int num_arms() const { return static_cast<int>(logits_.front().size()); }

    double logit(int category, int arm) const { return logits_.at(category).at(arm); }
    void set_logit(int category, int arm, double v) { logits_.at(category).at(arm) = v; }

    std::vector<double> probs(int category) const {
        const auto& row = logits_.at(static_cast<std::size_t>(category));
        double max_logit = row.front();
        for (double l : row) max_logit = std::max(max_logit, l);
        std::vector<double> p(row.size());
        double z = 0.0;
        for (std::size_t a = 0; a < row.size(); ++a) {
            p[a] = std::exp(row[a] - max_logit);
            z += p[a];
        }
        for (double& v : p) v /= z;
        return p;
    }

    double prob(int category, int arm) const { return probs(category).at(static_cast<std::size_t>(arm)); }

    int sample(int category, Rng& rng) const {
        const std::vector<double> p = probs(category);
        double u = rng.u01();
        for (std::size_t a = 0; a + 1 < p.size(); ++a) {
            if (u < p[a]) return static_cast<int>(a);
            u -= p[a];
        }
        return static_cast<int>(p.size()) - 1;
    }

    void add_scaled(const std::vector<std::vector<double>>& grad, double scale) {
        for (std::size_t c = 0; c < logits_.size(); ++c)
            for (std::size_t a = 0; a < logits_[c].size(); ++a) logits_[c][a] += scale * grad[c][a];
    }

private:
    std::vector<std::vector<double>> logits_;
};

// One rollout's contribution to the surrogate: the arm choice is its single
// stochastic decision; the remaining token_weight - 1 tokens are deterministic
// continuation and only enter the normalization.
struct ArmDecision {
    int category = 0;
    int arm = 0;
    double behavior_prob = 1.0;  // pi_old(arm | category) at sampling time
    double advantage = 0.0;
    int token_weight = 1;
};

namespace detail {
inline void check_decisions(const SoftmaxPolicy& policy,
                            const std::vector<std::vector<ArmDecision>>& groups) {
    std::size_t tokens = 0;
    for (const auto& group : groups)
        for (const ArmDecision& d : group) {
            if (d.category < 0 || d.category >= policy.num_categories() || d.arm < 0 ||
                d.arm >= policy.num_arms())
                throw InvalidArgument("surrogate: decision outside policy shape");
            if (!(d.behavior_prob > 0.0)) throw InvalidArgument("invalid importance ratio");
            if (d.token_weight < 1) throw InvalidArgument("surrogate: token_weight must be >= 1");
            tokens += static_cast<std::size_t>(d.token_weight);
        }
    if (tokens == 0) throw InvalidArgument("empty group");
}
}  // namespace detail

// Surrogate value of the toy policy over groups of arm decisions, averaged
// across groups. Ratios are recomputed from the current policy, so this is a
// genuine function of the logits (finite differences apply).
inline double surrogate_objective(const SoftmaxPolicy& policy,
                                  const std::vector<std::vector<ArmDecision>>& groups,
                                  const SurrogateConfig& cfg,
                                  LossNormalization norm = LossNormalization::TokenLevel) {
    validate_surrogate(cfg);
    detail::check_decisions(policy, groups);
    double batch = 0.0;
    std::size_t populated_groups = 0;
    for (const auto& group : groups) {
        if (group.empty()) continue;
        ++populated_groups;
        long long group_tokens = 0;
        double group_sum = 0.0;
        for (const ArmDecision& d : group) {
            const double ratio = policy.prob(d.category, d.arm) / d.behavior_prob;
            const double term = clipped_surrogate_term(ratio, d.advantage, cfg);
            // deterministic continuation tokens contribute advantage * 1 each
            const double rollout_sum = term + static_cast<double>(d.token_weight - 1) * d.advantage;
            if (norm == LossNormalization::TokenLevel) {
                group_sum += rollout_sum;
                group_tokens += d.token_weight;
            } else {
                group_sum += rollout_sum / static_cast<double>(d.token_weight);
            }
        }
        if (norm == LossNormalization::TokenLevel)
            batch += group_sum / static_cast<double>(group_tokens);
        else
            batch += group_sum / static_cast<double>(group.size());
    }
    if (populated_groups == 0) throw InvalidArgument("empty group");
    return batch / static_cast<double>(populated_groups);
}

// Analytic gradient of surrogate_objective with respect to the policy logits.
inline std::vector<std::vector<double>> surrogate_gradient(
    const SoftmaxPolicy& policy, const std::vector<std::vector<ArmDecision>>& groups,
    const SurrogateConfig& cfg, LossNormalization norm = LossNormalization::TokenLevel) {
    validate_surrogate(cfg);
    detail::check_decisions(policy, groups);
    std::vector<std::vector<double>> grad(
        static_cast<std::size_t>(policy.num_categories()),
        std::vector<double>(static_cast<std::size_t>(policy.num_arms()), 0.0));

    std::size_t populated_groups = 0;
    for (const auto& group : groups)
        if (!group.empty()) ++populated_groups;
    if (populated_groups == 0) throw InvalidArgument("empty group");

    for (const auto& group : groups) {
        if (group.empty()) continue;
        long long group_tokens = 0;
        for (const ArmDecision& d : group) group_tokens += d.token_weight;
        for (const ArmDecision& d : group) {
            const std::vector<double> p = policy.probs(d.category);
            const double ratio = p[static_cast<std::size_t>(d.arm)] / d.behavior_prob;
            const double slope = clipped_surrogate_slope(ratio, d.advantage, cfg);
            if (slope == 0.0) continue;
            double weight = 1.0;
            if (norm == LossNormalization::TokenLevel)
                weight = 1.0 / static_cast<double>(group_tokens);
            else
                weight = 1.0 / (static_cast<double>(d.token_weight) * static_cast<double>(group.size()));
            weight /= static_cast<double>(populated_groups);
            // d ratio / d logit[c][k] = ratio * (delta(k, arm) - p_k)
            for (int k = 0; k < policy.num_arms(); ++k) {
                const double indicator = (k == d.arm) ? 1.0 : 0.0;
                grad[static_cast<std::size_t>(d.category)][static_cast<std::size_t>(k)] +=
                    weight * slope * ratio * (indicator - p[static_cast<std::size_t>(k)]);
            }
        }
    }
    return grad;
}

// An arm decision still carrying its raw reward; advantages are derived per
// group inside policy_gradient_update.
struct ScoredDecision {
    int category = 0;
    int arm = 0;
    double behavior_prob = 1.0;
    int token_weight = 1;
    double reward = 0.0;
};

// One ascent step on the token-level objective. Group advantages are computed
// per group; the returned policy is a modified copy.
inline SoftmaxPolicy policy_gradient_update(SoftmaxPolicy policy,
                                            const std::vector<std::vector<ScoredDecision>>& batch,
                                            const SurrogateConfig& cfg, double learning_rate) {
    validate_surrogate(cfg);
    if (learning_rate < 0.0) throw InvalidArgument("negative learning rate");
    std::vector<std::vector<ArmDecision>> groups;
    groups.reserve(batch.size());
    for (const auto& scored : batch) {
        std::vector<double> rewards;
        rewards.reserve(scored.size());
        for (const ScoredDecision& d : scored) rewards.push_back(d.reward);
        const std::vector<double> adv = group_advantages(rewards);
        std::vector<ArmDecision> group;
        group.reserve(scored.size());
        for (std::size_t i = 0; i < scored.size(); ++i)
            group.push_back(ArmDecision{scored[i].category, scored[i].arm, scored[i].behavior_prob,
                                        adv[i], scored[i].token_weight});
        groups.push_back(std::move(group));
    }
    const auto grad = surrogate_gradient(policy, groups, cfg, LossNormalization::TokenLevel);
    policy.add_scaled(grad, learning_rate);
    return policy;
}

}  // namespace fapo
