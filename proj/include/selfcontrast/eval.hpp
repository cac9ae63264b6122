#pragma once

// Oracle-reward evaluation: the deterministic task transform plays the
// reward model's role. Exact answers score 1.0, other responses the
// positional-match fraction against the target (the refusal task is
// all-or-nothing). Win rate counts ties as 0.5 so a model that reproduces
// every target sits exactly at 0.5.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "selfcontrast/corpus.hpp"
#include "selfcontrast/rng.hpp"
#include "selfcontrast/toylm.hpp"

namespace selfcontrast {

inline double oracle_reward(const TaskSpec& task, const std::string& prompt,
                            const std::string& response) {
    const std::string target = apply_task(task, prompt);
    if (response == target) return 1.0;
    if (task.kind == TaskKind::constant_refusal) return 0.0;
    const size_t span = std::max(target.size(), response.size());
    if (span == 0) return 1.0;
    size_t matches = 0;
    const size_t overlap = std::min(target.size(), response.size());
    for (size_t i = 0; i < overlap; ++i)
        if (target[i] == response[i]) ++matches;
    return static_cast<double>(matches) / static_cast<double>(span);
}

struct EvalRow {
    std::string id;
    double reward_target = 0.0;
    double reward_response = 0.0;
    double win = 0.0;  // 1 beat the target, 0.5 tie, 0 lost
    std::string response;
};

struct EvalReport {
    double win_rate = 0.0;
    double avg_reward = 0.0;
    int n_eval = 0;  // number of prompts
    std::vector<EvalRow> rows;
};

/// Sample `samples_per_prompt` responses per eval prompt and score them
/// against the stored SFT target. Per-sample seeds derive from `seed` by
/// counter, so the report is reproducible and order-independent.
inline EvalReport win_rate(const ModelParams& model, const Vocab& vocab,
                           const std::vector<PromptRecord>& eval_set, const TaskSpec& task,
                           int samples_per_prompt, double temperature, double top_p,
                           uint64_t seed, int max_len = 0) {
    if (eval_set.empty()) throw std::invalid_argument("win_rate: eval set empty");
    if (samples_per_prompt < 1)
        throw std::invalid_argument("win_rate: samples_per_prompt must be >= 1");
    if (max_len <= 0) max_len = task.max_response_len();

    EvalReport report;
    report.n_eval = static_cast<int>(eval_set.size());
    double win_sum = 0.0, reward_sum = 0.0;
    for (size_t i = 0; i < eval_set.size(); ++i) {
        const auto& rec = eval_set[i];
        const auto prompt_ids = vocab.tokenize(rec.prompt);
        const double rt = oracle_reward(task, rec.prompt, rec.target);
        for (int s = 0; s < samples_per_prompt; ++s) {
            const uint64_t draw_seed =
                derive_seed(seed, i * static_cast<size_t>(samples_per_prompt) +
                                      static_cast<size_t>(s));
            const auto ids = sample(model, prompt_ids, temperature, top_p, max_len, draw_seed);
            const std::string response = vocab.detokenize(ids);
            const double rr = oracle_reward(task, rec.prompt, response);
            const double win = rr > rt ? 1.0 : (rr == rt ? 0.5 : 0.0);
            win_sum += win;
            reward_sum += rr;
            report.rows.push_back({rec.id, rt, rr, win, response});
        }
    }
    const auto total = static_cast<double>(report.rows.size());
    report.win_rate = win_sum / total;
    report.avg_reward = reward_sum / total;
    return report;
}

/// Fraction of (chosen, rejected) pairs whose rejected reward is strictly
/// below the chosen reward.
inline double data_accuracy(const std::vector<PreferenceRecord>& dataset, const TaskSpec& task) {
    if (dataset.empty()) throw std::invalid_argument("data_accuracy: dataset empty");
    long long true_neg = 0, pairs = 0;
    for (const auto& rec : dataset) {
        const double chosen_reward = oracle_reward(task, rec.prompt, rec.chosen);
        for (const auto& rej : rec.rejected) {
            ++pairs;
            if (oracle_reward(task, rec.prompt, rej) < chosen_reward) ++true_neg;
        }
    }
    if (pairs == 0) throw std::invalid_argument("data_accuracy: no (chosen, rejected) pairs");
    return static_cast<double>(true_neg) / static_cast<double>(pairs);
}

namespace detail {

inline std::vector<double> true_negative_rewards(const std::vector<PreferenceRecord>& dataset,
                                                 const TaskSpec& task) {
    std::vector<double> rewards;
    for (const auto& rec : dataset) {
        const double chosen_reward = oracle_reward(task, rec.prompt, rec.chosen);
        for (const auto& rej : rec.rejected) {
            const double r = oracle_reward(task, rec.prompt, rej);
            if (r < chosen_reward) rewards.push_back(r);
        }
    }
    return rewards;
}

inline std::vector<double> reward_histogram(const std::vector<double>& rewards, int bins) {
    std::vector<double> h(static_cast<size_t>(bins), 1e-9);  // additive smoothing
    for (double r : rewards) {
        auto b = static_cast<int>(r * bins);
        b = std::clamp(b, 0, bins - 1);
        h[static_cast<size_t>(b)] += 1.0;
    }
    double total = 0.0;
    for (double x : h) total += x;
    for (double& x : h) x /= total;
    return h;
}

}  // namespace detail

/// KL(selected || reference) between reward histograms of true negatives,
/// `bins` equal-width bins on [0,1], additive smoothing 1e-9.
inline double negative_reward_kl(const std::vector<PreferenceRecord>& selected,
                                 const std::vector<PreferenceRecord>& reference,
                                 const TaskSpec& task, int bins = 20) {
    if (selected.empty() || reference.empty())
        throw std::invalid_argument("negative_reward_kl: datasets must be nonempty");
    if (bins < 2) throw std::invalid_argument("negative_reward_kl: bins must be >= 2");
    const auto sel = detail::true_negative_rewards(selected, task);
    const auto ref = detail::true_negative_rewards(reference, task);
    if (sel.empty())
        throw std::runtime_error("negative_reward_kl: selected side has no true negatives");
    if (ref.empty())
        throw std::runtime_error("negative_reward_kl: reference side has no true negatives");
    const auto p = detail::reward_histogram(sel, bins);
    const auto q = detail::reward_histogram(ref, bins);
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
        if (p[i] != q[i]) kl += p[i] * std::log(p[i] / q[i]);
    return std::max(kl, 0.0);
}

/// Reward-model-as-filter reference (the data-accuracy upper bound): per
/// prompt, negatives are drawn uniformly from responses whose oracle reward
/// is strictly below the target's.
inline std::vector<PreferenceRecord> build_oracle_reference_dataset(
    const std::vector<PromptRecord>& prompts, const std::vector<ResponseSet>& response_sets,
    const TaskSpec& task, int m, uint64_t seed) {
    if (m < 1) throw std::invalid_argument("oracle reference: m must be >= 1");
    std::unordered_map<std::string, const ResponseSet*> by_id;
    for (const auto& rs : response_sets) by_id[rs.id] = &rs;

    std::vector<PreferenceRecord> out;
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        const auto& pr = prompts[pi];
        auto it = by_id.find(pr.id);
        if (it == by_id.end()) continue;
        const double target_reward = oracle_reward(task, pr.prompt, pr.target);
        std::vector<std::string> eligible;
        std::unordered_set<std::string> seen;
        for (const auto& resp : it->second->responses)
            if (oracle_reward(task, pr.prompt, resp) < target_reward && seen.insert(resp).second)
                eligible.push_back(resp);
        if (eligible.empty()) continue;
        Rng rng(derive_seed(seed, pi));
        const size_t take = std::min(static_cast<size_t>(m), eligible.size());
        for (size_t k = 0; k < take; ++k) {
            const size_t j = k + static_cast<size_t>(rng.below(eligible.size() - k));
            std::swap(eligible[k], eligible[j]);
        }
        eligible.resize(take);
        out.push_back({pr.id, pr.prompt, pr.target, std::move(eligible)});
    }
    return out;
}

}  // namespace selfcontrast
