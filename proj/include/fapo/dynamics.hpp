#pragma once

#include <cmath>
#include <string_view>
#include <vector>

#include "fapo/core.hpp"

namespace fapo {

struct MomentPair {
    double mean = 0.0;
    double variance = 0.0;
};

// Sign of the flawed-positive advantage numerator: positive while flawed
// positives are still pushed up (warm-up), negative once they are suppressed
// (refinement).
enum class Stage { WarmUp, Boundary, Refinement };

enum class VarianceRegime { Conservative, Equal, Amplified };

inline constexpr double kBoundaryTolerance = 1e-12;

// mu = 1 - 2*beta, sigma^2 = 4*beta*(1-beta) for the two-point {+1, -1}
// reward distribution.
inline MomentPair grpo_moments(double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in [0, 1]");
    const double mu = 1.0 - 2.0 * beta;
    return MomentPair{mu, 4.0 * beta * (1.0 - beta)};
}

// Closed-form moments of the three-point FAPO reward distribution
// {1 : alpha, 1-lambda : gamma, -1 : beta}:
//   mu    = mu_GRPO - lambda*gamma
//   sigma^2 = sigma^2_GRPO + lambda*gamma*(lambda*(1-gamma) - 4*beta)
// The correction is kept in its division-free form so beta = 0 needs no
// special case.
inline MomentPair fapo_moments(const GroupComposition& comp, double lambda) {
    validate_composition(comp);
    const MomentPair base = grpo_moments(comp.beta);
    const double mu = base.mean - lambda * comp.gamma;
    const double correction =
        lambda * comp.gamma * (lambda * (1.0 - comp.gamma) - 4.0 * comp.beta);
    return MomentPair{mu, base.variance + correction};
}

// Flawed-positive advantage numerator (1 - lambda) - mu_FAPO, evaluated
// without dividing by beta.
inline double flawed_advantage_numerator(const GroupComposition& comp, double lambda) {
    return (1.0 - lambda) - fapo_moments(comp, lambda).mean;
}

inline Stage flawed_stage(const GroupComposition& comp, double lambda) {
    validate_composition(comp);
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
    if (comp.gamma <= 0.0) throw InvalidArgument("no flawed positives in group");
    const double s = flawed_advantage_numerator(comp, lambda);
    if (s > kBoundaryTolerance) return Stage::WarmUp;
    if (s < -kBoundaryTolerance) return Stage::Refinement;
    return Stage::Boundary;
}

// Sign of sigma^2_FAPO - sigma^2_GRPO. Below the rho = 4/lambda - 1 threshold
// the FAPO variance is smaller (Conservative); above it the variance is
// larger, downscaling advantage magnitudes (Amplified).
inline VarianceRegime variance_regime(const GroupComposition& comp, double lambda) {
    validate_composition(comp);
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
    if (!(comp.gamma > 0.0 && comp.gamma < 1.0))
        throw InvalidArgument("comparison undefined without flawed positives");
    const double diff = lambda * comp.gamma * (lambda * (1.0 - comp.gamma) - 4.0 * comp.beta);
    if (diff > kBoundaryTolerance) return VarianceRegime::Amplified;
    if (diff < -kBoundaryTolerance) return VarianceRegime::Conservative;
    return VarianceRegime::Equal;
}

// lambda = 2 / (rho_shift + 1); the majority-guided choice rho_shift = 1
// gives lambda = 1 exactly.
inline double lambda_for_shift(double rho_shift) {
    if (!(rho_shift > 0.0)) throw InvalidArgument("rho_shift must be positive");
    return 2.0 / (rho_shift + 1.0);
}

// rho threshold at which the optimization direction shifts.
inline double shift_threshold(double lambda) {
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
    return 2.0 / lambda - 1.0;
}

// Materializes the exact reward multiset of a realizable composition and
// takes direct population moments over it. This is the independent oracle for
// grpo_moments / fapo_moments; it shares no algebra with them.
inline MomentPair empirical_moments(const GroupComposition& comp, double lambda) {
    validate_composition(comp);
    const double g = static_cast<double>(comp.group_size);
    const long long n_fc = std::llround(comp.alpha * g);
    const long long n_neg = std::llround(comp.beta * g);
    const long long n_fp = std::llround(comp.gamma * g);
    if (n_fc + n_neg + n_fp != comp.group_size)
        throw InvalidArgument("composition not realizable at its group size");

    std::vector<double> rewards;
    rewards.reserve(static_cast<std::size_t>(comp.group_size));
    rewards.insert(rewards.end(), static_cast<std::size_t>(n_fc), 1.0);
    rewards.insert(rewards.end(), static_cast<std::size_t>(n_fp), 1.0 - lambda);
    rewards.insert(rewards.end(), static_cast<std::size_t>(n_neg), -1.0);

    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= g;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= g;
    return MomentPair{mean, var};
}

inline std::string_view stage_name(Stage s) {
    switch (s) {
        case Stage::WarmUp: return "warmup";
        case Stage::Boundary: return "boundary";
        case Stage::Refinement: return "refinement";
    }
    return "unknown";
}

inline std::string_view variance_regime_name(VarianceRegime r) {
    switch (r) {
        case VarianceRegime::Conservative: return "conservative";
        case VarianceRegime::Equal: return "equal";
        case VarianceRegime::Amplified: return "amplified";
    }
    return "unknown";
}

}  // namespace fapo
