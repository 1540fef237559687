#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fapo/advantage.hpp"
#include "fapo/core.hpp"
#include "fapo/rewards.hpp"
#include "fapo/rng.hpp"

namespace fapo {

// One error-detection training instance: the detector must call the
// flawed-positive label and, for flawed tasks, the error bin.
struct DetectorTask {
    std::string id;
    bool gold_is_fp = false;
    std::optional<int> gold_first_error;
    int num_steps = 8;
};

inline void validate_detector_task(const DetectorTask& t) {
    if (t.num_steps < 1) throw InvalidArgument("detector task: num_steps must be >= 1");
    if (t.gold_is_fp != t.gold_first_error.has_value())
        throw InvalidArgument("detector task: gold index present iff FP");
    if (t.gold_first_error && (*t.gold_first_error < 0 || *t.gold_first_error >= t.num_steps))
        throw InvalidArgument("detector task: gold index out of range");
}

enum class DetectorRewardMode { OutcomeOnly, OutcomePlusProcess };

struct DetectorConfig {
    int iterations = 300;
    double learning_rate = 0.6;
    SurrogateConfig surrogate;  // group_size predictions sampled per task
};

struct DetectorCurves {
    std::vector<double> label_accuracy;         // argmax label vs gold, per iteration
    std::vector<double> localization_accuracy;  // argmax bin vs gold over FP tasks
    long long process_reward_calls = 0;
};

// RL-trains a toy detector: one softmax over {NotFP, FP} per task plus one
// softmax over error bins per task, updated with group-relative advantages on
// the detection reward. A prediction is one or two tokens (label, and the bin
// when FP is called), normalized token-level within each task group.
inline DetectorCurves train_toy_detector(const std::vector<DetectorTask>& dataset,
                                         DetectorRewardMode mode, const DetectorConfig& cfg,
                                         std::uint64_t seed) {
    if (dataset.empty()) throw InvalidArgument("single-class dataset");
    bool has_fp = false, has_not_fp = false;
    for (const DetectorTask& t : dataset) {
        validate_detector_task(t);
        (t.gold_is_fp ? has_fp : has_not_fp) = true;
    }
    if (!has_fp || !has_not_fp) throw InvalidArgument("single-class dataset");
    validate_surrogate(cfg.surrogate);
    if (cfg.surrogate.group_size < 2) throw InvalidArgument("group too small");
    if (cfg.iterations < 0) throw InvalidArgument("negative iterations");
    if (cfg.learning_rate < 0.0) throw InvalidArgument("negative learning rate");

    const std::size_t n_tasks = dataset.size();
    std::vector<std::vector<double>> label_logits(n_tasks, std::vector<double>(2, 0.0));
    std::vector<std::vector<double>> bin_logits;
    bin_logits.reserve(n_tasks);
    for (const DetectorTask& t : dataset)
        bin_logits.emplace_back(static_cast<std::size_t>(t.num_steps), 0.0);

    auto softmax = [](const std::vector<double>& logits) {
        double max_logit = logits.front();
        for (double l : logits) max_logit = std::max(max_logit, l);
        std::vector<double> p(logits.size());
        double z = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            p[i] = std::exp(logits[i] - max_logit);
            z += p[i];
        }
        for (double& v : p) v /= z;
        return p;
    };
    auto sample_from = [](const std::vector<double>& p, Rng& rng) {
        double u = rng.u01();
        for (std::size_t i = 0; i + 1 < p.size(); ++i) {
            if (u < p[i]) return static_cast<int>(i);
            u -= p[i];
        }
        return static_cast<int>(p.size()) - 1;
    };

    Rng rng(seed);
    DetectorCurves curves;
    curves.label_accuracy.reserve(static_cast<std::size_t>(cfg.iterations));
    curves.localization_accuracy.reserve(static_cast<std::size_t>(cfg.iterations));

    const int group = cfg.surrogate.group_size;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<std::vector<double>> label_grad(n_tasks, std::vector<double>(2, 0.0));
        std::vector<std::vector<double>> bin_grad;
        bin_grad.reserve(n_tasks);
        for (const DetectorTask& t : dataset)
            bin_grad.emplace_back(static_cast<std::size_t>(t.num_steps), 0.0);

        for (std::size_t t = 0; t < n_tasks; ++t) {
            const DetectorTask& task = dataset[t];
            const std::vector<double> p_label = softmax(label_logits[t]);
            const std::vector<double> p_bin = softmax(bin_logits[t]);

            struct Sample {
                int label;  // 0 = NotFP, 1 = FP
                int bin;    // valid when label == 1
                double reward;
            };
            std::vector<Sample> samples;
            std::vector<double> rewards;
            samples.reserve(static_cast<std::size_t>(group));
            rewards.reserve(static_cast<std::size_t>(group));
            long long tokens = 0;
            for (int i = 0; i < group; ++i) {
                Sample s{};
                s.label = sample_from(p_label, rng);
                if (s.label == 1) s.bin = sample_from(p_bin, rng);
                tokens += s.label == 1 ? 2 : 1;

                GenRMTask judged;
                judged.predicted_is_fp = s.label == 1;
                if (s.label == 1) judged.predicted_first_error = s.bin;
                judged.gold_is_fp = task.gold_is_fp;
                judged.gold_first_error = task.gold_first_error;
                judged.num_steps = task.num_steps;
                double reward = genrm_outcome_reward(judged);
                if (mode == DetectorRewardMode::OutcomePlusProcess) {
                    reward += genrm_process_reward(judged);
                    curves.process_reward_calls += 1;
                }
                s.reward = reward;
                samples.push_back(s);
                rewards.push_back(reward);
            }

            const std::vector<double> adv = group_advantages(rewards);
            const double norm = 1.0 / (static_cast<double>(tokens) * static_cast<double>(n_tasks));
            for (int i = 0; i < group; ++i) {
                // sampled from the current policy, so the importance ratio is 1
                const double slope = clipped_surrogate_slope(1.0, adv[static_cast<std::size_t>(i)],
                                                             cfg.surrogate);
                if (slope == 0.0) continue;
                const Sample& s = samples[static_cast<std::size_t>(i)];
                for (int k = 0; k < 2; ++k)
                    label_grad[t][static_cast<std::size_t>(k)] +=
                        norm * slope * ((k == s.label ? 1.0 : 0.0) - p_label[static_cast<std::size_t>(k)]);
                if (s.label == 1)
                    for (int k = 0; k < task.num_steps; ++k)
                        bin_grad[t][static_cast<std::size_t>(k)] +=
                            norm * slope *
                            ((k == s.bin ? 1.0 : 0.0) - p_bin[static_cast<std::size_t>(k)]);
            }
        }

        for (std::size_t t = 0; t < n_tasks; ++t) {
            for (std::size_t k = 0; k < 2; ++k)
                label_logits[t][k] += cfg.learning_rate * label_grad[t][k];
            for (std::size_t k = 0; k < bin_logits[t].size(); ++k)
                bin_logits[t][k] += cfg.learning_rate * bin_grad[t][k];
        }

        long long label_hits = 0, fp_tasks = 0, loc_hits = 0;
        for (std::size_t t = 0; t < n_tasks; ++t) {
            const DetectorTask& task = dataset[t];
            const int argmax_label = label_logits[t][1] > label_logits[t][0] ? 1 : 0;
            if ((argmax_label == 1) == task.gold_is_fp) ++label_hits;
            if (task.gold_is_fp) {
                ++fp_tasks;
                int argmax_bin = 0;
                for (std::size_t k = 1; k < bin_logits[t].size(); ++k)
                    if (bin_logits[t][k] > bin_logits[t][static_cast<std::size_t>(argmax_bin)])
                        argmax_bin = static_cast<int>(k);
                if (argmax_bin == *task.gold_first_error) ++loc_hits;
            }
        }
        curves.label_accuracy.push_back(static_cast<double>(label_hits) /
                                        static_cast<double>(n_tasks));
        curves.localization_accuracy.push_back(
            fp_tasks > 0 ? static_cast<double>(loc_hits) / static_cast<double>(fp_tasks) : 0.0);
    }
    return curves;
}

// Deterministic synthetic detection dataset: half flawed with spread-out gold
// error bins, half clean.
inline std::vector<DetectorTask> synthetic_detector_dataset(int num_tasks, int num_steps,
                                                            std::uint64_t seed) {
    if (num_tasks < 2) throw InvalidArgument("need at least two tasks");
    if (num_steps < 1) throw InvalidArgument("num_steps must be >= 1");
    Rng rng(mix_u64(seed, 0x9d7f3c2b));
    std::vector<DetectorTask> out;
    out.reserve(static_cast<std::size_t>(num_tasks));
    for (int i = 0; i < num_tasks; ++i) {
        DetectorTask t;
        t.id = "task-" + std::to_string(i);
        t.num_steps = num_steps;
        t.gold_is_fp = i % 2 == 0;
        if (t.gold_is_fp)
            t.gold_first_error = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_steps)));
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace fapo
