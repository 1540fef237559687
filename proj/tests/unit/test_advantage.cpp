#include <doctest.h>

#include <cmath>
#include <vector>

#include "fapo/advantage.hpp"
#include "fapo/rng.hpp"

using namespace fapo;

TEST_CASE("group_advantages hand-computed example") {
    const std::vector<double> rewards{1.0, 0.0, -1.0, 1.0};
    const GroupRewards stats = group_stats(rewards);
    CHECK(stats.mean == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(stats.stddev == doctest::Approx(std::sqrt(0.6875)).epsilon(1e-12));
    const std::vector<double> adv = group_advantages(rewards);
    CHECK(adv[0] == doctest::Approx(0.9045340337).epsilon(1e-9));
    CHECK(adv[1] == doctest::Approx(-0.3015113446).epsilon(1e-9));
    CHECK(adv[2] == doctest::Approx(-1.5075567229).epsilon(1e-9));
    CHECK(adv[3] == doctest::Approx(0.9045340337).epsilon(1e-9));
}

TEST_CASE("group_advantages degenerate and two-point groups") {
    const std::vector<double> flat{1.0, 1.0, 1.0, 1.0};
    for (double a : group_advantages(flat)) CHECK(a == 0.0);
    const std::vector<double> pair{1.0, -1.0};
    const std::vector<double> adv = group_advantages(pair);
    CHECK(adv[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(adv[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(group_advantages(std::vector<double>{1.0}), InvalidArgument);
}

TEST_CASE("group_advantages normalize to mean 0 std 1") {
    Rng rng(123);
    for (int trial = 0; trial < 300; ++trial) {
        const int g = 2 + static_cast<int>(rng.below(30));
        std::vector<double> rewards;
        for (int i = 0; i < g; ++i) rewards.push_back(rng.u01() * 4.0 - 2.0);
        const std::vector<double> adv = group_advantages(rewards);
        double mean = 0.0;
        for (double a : adv) mean += a;
        mean /= static_cast<double>(g);
        double var = 0.0;
        for (double a : adv) var += (a - mean) * (a - mean);
        var /= static_cast<double>(g);
        CHECK(std::abs(mean) <= 1e-10);
        CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-10);
    }
}

TEST_CASE("advantages are invariant under positive affine reward maps") {
    Rng rng(321);
    for (int trial = 0; trial < 200; ++trial) {
        const int g = 2 + static_cast<int>(rng.below(12));
        std::vector<double> rewards;
        for (int i = 0; i < g; ++i) rewards.push_back(rng.u01() * 6.0 - 3.0);
        const double scale = 0.1 + rng.u01() * 5.0;
        const double shift = rng.u01() * 10.0 - 5.0;
        std::vector<double> mapped;
        for (double r : rewards) mapped.push_back(scale * r + shift);
        const std::vector<double> a = group_advantages(rewards);
        const std::vector<double> b = group_advantages(mapped);
        for (int i = 0; i < g; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
    }
}

TEST_CASE("clipped_surrogate_term hand cases") {
    const SurrogateConfig cfg{0.2, 0.28, 8};
    CHECK(clipped_surrogate_term(1.5, 1.0, cfg) == doctest::Approx(1.28));
    CHECK(clipped_surrogate_term(1.0, -2.0, cfg) == doctest::Approx(-2.0));
    CHECK(clipped_surrogate_term(0.5, -1.0, cfg) == doctest::Approx(-0.8));
    CHECK_THROWS_AS(clipped_surrogate_term(0.0, 1.0, cfg), InvalidArgument);
    CHECK_THROWS_AS(clipped_surrogate_term(-0.5, 1.0, cfg), InvalidArgument);
}

TEST_CASE("clipped term never exceeds the unclipped product") {
    Rng rng(777);
    for (int i = 0; i < 100000; ++i) {
        const double ratio = 0.01 + rng.u01() * 3.0;
        const double advantage = rng.u01() * 8.0 - 4.0;
        const SurrogateConfig cfg{0.05 + rng.u01() * 0.9, 0.05 + rng.u01() * 0.9, 8};
        CHECK(clipped_surrogate_term(ratio, advantage, cfg) <= ratio * advantage + 1e-15);
    }
}

TEST_CASE("token_level_objective constant terms") {
    const SurrogateConfig cfg;
    const std::vector<std::vector<TokenTerm>> rollouts{
        {{1.0, 1.0}, {1.0, 1.0}},
        {{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}},
    };
    CHECK(token_level_objective(rollouts, cfg) == doctest::Approx(1.0));
}

TEST_CASE("token-level vs per-rollout normalization contrast") {
    const SurrogateConfig cfg;
    std::vector<std::vector<TokenTerm>> rollouts{
        {{1.0, 1.0}, {1.0, 1.0}},
        {{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}},
    };
    CHECK(token_level_objective(rollouts, cfg, LossNormalization::TokenLevel) ==
          doctest::Approx(0.25));
    CHECK(token_level_objective(rollouts, cfg, LossNormalization::PerRollout) ==
          doctest::Approx(0.5));
}

TEST_CASE("token_level_objective single token and empty input") {
    const SurrogateConfig cfg;
    const std::vector<std::vector<TokenTerm>> rollouts{{{1.0, 3.0}}, {}};
    CHECK(token_level_objective(rollouts, cfg) == doctest::Approx(3.0));
    CHECK_THROWS_AS(token_level_objective({}, cfg), InvalidArgument);
    CHECK_THROWS_AS(token_level_objective({{}, {}}, cfg), InvalidArgument);
}

TEST_CASE("softmax policy basics") {
    SoftmaxPolicy policy(2, 3);
    const std::vector<double> p = policy.probs(0);
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0));
    policy.set_logit(0, 1, 2.0);
    CHECK(policy.prob(0, 1) > policy.prob(0, 0));
    double total = 0.0;
    for (double v : policy.probs(0)) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("policy gradient step raises the advantaged arm") {
    SoftmaxPolicy policy(1, 3);
    const double before = policy.prob(0, 0);
    const std::vector<std::vector<ScoredDecision>> batch{{
        {0, 0, 1.0 / 3.0, 1, 1.0},
        {0, 1, 1.0 / 3.0, 1, 0.0},
        {0, 2, 1.0 / 3.0, 1, 0.0},
    }};
    const SoftmaxPolicy updated = policy_gradient_update(policy, batch, SurrogateConfig{}, 0.1);
    CHECK(updated.prob(0, 0) > before);
    CHECK(updated.prob(0, 1) < 1.0 / 3.0);
}

TEST_CASE("policy gradient no-ops") {
    SoftmaxPolicy policy(1, 3);
    policy.set_logit(0, 2, 0.7);
    const std::vector<std::vector<ScoredDecision>> flat{{
        {0, 0, 0.3, 1, 1.0},
        {0, 1, 0.3, 1, 1.0},
    }};
    // all advantages zero -> unchanged
    SoftmaxPolicy updated = policy_gradient_update(policy, flat, SurrogateConfig{}, 0.5);
    for (int a = 0; a < 3; ++a) CHECK(updated.logit(0, a) == policy.logit(0, a));
    // zero learning rate -> unchanged
    const std::vector<std::vector<ScoredDecision>> mixed{{
        {0, 0, 0.3, 1, 1.0},
        {0, 1, 0.3, 1, -1.0},
    }};
    updated = policy_gradient_update(policy, mixed, SurrogateConfig{}, 0.0);
    for (int a = 0; a < 3; ++a) CHECK(updated.logit(0, a) == policy.logit(0, a));
}

TEST_CASE("policy gradient propagates the small-group error") {
    SoftmaxPolicy policy(1, 3);
    const std::vector<std::vector<ScoredDecision>> batch{{{0, 0, 0.3, 1, 1.0}}};
    CHECK_THROWS_AS(policy_gradient_update(policy, batch, SurrogateConfig{}, 0.1),
                    InvalidArgument);
}

namespace {

// finite-difference probe of the surrogate objective
double fd_gradient(const SoftmaxPolicy& base, const std::vector<std::vector<ArmDecision>>& groups,
                   const SurrogateConfig& cfg, LossNormalization norm, int c, int a, double h) {
    SoftmaxPolicy plus = base;
    plus.set_logit(c, a, base.logit(c, a) + h);
    SoftmaxPolicy minus = base;
    minus.set_logit(c, a, base.logit(c, a) - h);
    return (surrogate_objective(plus, groups, cfg, norm) -
            surrogate_objective(minus, groups, cfg, norm)) /
           (2.0 * h);
}

}  // namespace

TEST_CASE("surrogate gradient matches central finite differences") {
    Rng rng(2024);
    const SurrogateConfig cfg{0.2, 0.28, 8};
    for (int trial = 0; trial < 25; ++trial) {
        const int categories = 1 + static_cast<int>(rng.below(3));
        SoftmaxPolicy policy(categories, 3);
        for (int c = 0; c < categories; ++c)
            for (int a = 0; a < 3; ++a) policy.set_logit(c, a, rng.u01() * 2.0 - 1.0);

        std::vector<std::vector<ArmDecision>> groups;
        const int n_groups = 1 + static_cast<int>(rng.below(3));
        for (int g = 0; g < n_groups; ++g) {
            std::vector<ArmDecision> group;
            const int size = 2 + static_cast<int>(rng.below(5));
            for (int i = 0; i < size; ++i) {
                ArmDecision d;
                d.category = static_cast<int>(rng.below(static_cast<std::uint64_t>(categories)));
                d.arm = static_cast<int>(rng.below(3));
                // keep ratios strictly inside the clip interval so the
                // objective is smooth at the probe point
                const double current = policy.prob(d.category, d.arm);
                const double target_ratio = 0.85 + rng.u01() * 0.4;
                d.behavior_prob = current / target_ratio;
                d.advantage = rng.u01() * 4.0 - 2.0;
                d.token_weight = 1 + static_cast<int>(rng.below(6));
                group.push_back(d);
            }
            groups.push_back(std::move(group));
        }

        for (LossNormalization norm :
             {LossNormalization::TokenLevel, LossNormalization::PerRollout}) {
            const auto grad = surrogate_gradient(policy, groups, cfg, norm);
            double grad_norm = 0.0, diff_norm = 0.0;
            for (int c = 0; c < categories; ++c)
                for (int a = 0; a < 3; ++a) {
                    const double fd = fd_gradient(policy, groups, cfg, norm, c, a, 1e-6);
                    const double an = grad[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)];
                    grad_norm += an * an;
                    diff_norm += (fd - an) * (fd - an);
                }
            if (grad_norm > 1e-16)
                CHECK(std::sqrt(diff_norm) <= 1e-4 * std::sqrt(grad_norm));
            else
                CHECK(std::sqrt(diff_norm) <= 1e-8);
        }
    }
}
