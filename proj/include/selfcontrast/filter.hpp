#pragma once

// Embedding-based negative selection: rank self-generated responses by
// cosine similarity to the SFT target, exclude the top 1-a% most similar as
// potential positives, and draw m nonidentical negatives from the rest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "selfcontrast/corpus.hpp"
#include "selfcontrast/embed.hpp"
#include "selfcontrast/rng.hpp"

namespace selfcontrast {

struct FilterConfig {
    double a_percent = 25.0;
    int m = 8;
    int responses_per_prompt = 32;
    uint64_t seed = 0;

    void validate() const {
        if (!(a_percent > 0.0 && a_percent <= 100.0))
            throw std::invalid_argument("a_percent must be in (0, 100]");
        if (m < 1) throw std::invalid_argument("filter m must be >= 1");
        if (responses_per_prompt < m)
            throw std::invalid_argument("responses_per_prompt must be >= m");
        if (a_percent * responses_per_prompt / 100.0 < 1.0)
            throw std::invalid_argument("a_percent * R / 100 must be >= 1");
    }
};

namespace detail {

/// ceil((1 - a%) * R), with values within 1e-9 of an integer treated as that
/// integer so binary fractions like 25% of 32 stay exact.
inline int excluded_count(double a_percent, int responses) {
    const double x = (100.0 - a_percent) * responses / 100.0;
    const double nearest = std::nearbyint(x);
    if (std::abs(x - nearest) < 1e-9 * std::max(1.0, std::abs(x)))
        return static_cast<int>(nearest);
    return static_cast<int>(std::ceil(x));
}

}  // namespace detail

/// Core of the negative filter, on precomputed similarities: rank
/// descending (ties by original index), drop the top ceil((1-a%)*R) as
/// potential positives, return the rest in ascending similarity order.
/// Entries flagged in `equals_target` are also dropped whenever a% < 100.
inline std::vector<int> filter_negatives_by_similarity(
    const std::vector<double>& sims, double a_percent,
    const std::vector<char>* equals_target = nullptr) {
    if (sims.empty()) throw std::invalid_argument("filter_negatives: no responses");
    if (!(a_percent > 0.0 && a_percent <= 100.0))
        throw std::invalid_argument("a_percent must be in (0, 100]");
    if (equals_target && equals_target->size() != sims.size())
        throw std::invalid_argument("equals_target flag count mismatch");

    const int R = static_cast<int>(sims.size());
    std::vector<int> order(sims.size());
    for (int i = 0; i < R; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return sims[static_cast<size_t>(a)] > sims[static_cast<size_t>(b)];
    });

    const int drop = detail::excluded_count(a_percent, R);
    std::vector<int> eligible;
    for (size_t r = static_cast<size_t>(std::min(drop, R)); r < order.size(); ++r) {
        const int idx = order[r];
        if (a_percent < 100.0 && equals_target && (*equals_target)[static_cast<size_t>(idx)])
            continue;
        eligible.push_back(idx);
    }
    std::stable_sort(eligible.begin(), eligible.end(), [&](int a, int b) {
        return sims[static_cast<size_t>(a)] < sims[static_cast<size_t>(b)];
    });
    if (eligible.empty()) throw std::runtime_error("no eligible negatives");
    return eligible;
}

/// Embedding-level entry point: cosine against the target, then the
/// similarity-level filter above.
inline std::vector<int> filter_negatives(const EmbeddingVector& target_emb,
                                         const std::vector<EmbeddingVector>& response_embs,
                                         double a_percent,
                                         const std::vector<char>* equals_target = nullptr) {
    if (response_embs.empty()) throw std::invalid_argument("filter_negatives: no responses");
    std::vector<double> sims(response_embs.size());
    for (size_t i = 0; i < response_embs.size(); ++i)
        sims[i] = cosine(target_emb, response_embs[i]);
    return filter_negatives_by_similarity(sims, a_percent, equals_target);
}

struct SelectedNegatives {
    std::vector<std::string> picked;
    bool short_of_m = false;  // fewer than m distinct strings existed
};

/// Exact-string dedup, then uniform sampling without replacement.
inline SelectedNegatives select_negatives(const std::vector<std::string>& eligible, int m,
                                          uint64_t seed) {
    if (eligible.empty()) throw std::invalid_argument("select_negatives: no eligible responses");
    if (m < 1) throw std::invalid_argument("select_negatives: m must be >= 1");

    std::vector<std::string> unique;
    std::unordered_set<std::string> seen;
    for (const auto& s : eligible)
        if (seen.insert(s).second) unique.push_back(s);

    Rng rng(seed);
    const size_t take = std::min(static_cast<size_t>(m), unique.size());
    for (size_t k = 0; k < take; ++k) {
        const size_t j = k + static_cast<size_t>(rng.below(unique.size() - k));
        std::swap(unique[k], unique[j]);
    }
    unique.resize(take);
    return {std::move(unique), take < static_cast<size_t>(m)};
}

struct FilterDiagnosticRow {
    std::string id;
    int response_index = 0;
    int rank = 0;  // descending-similarity rank, 0 = most similar
    double similarity = 0.0;
    bool selected = false;
};

struct SkippedPrompt {
    std::string id;
    std::string reason;
};

struct PreferenceBuildResult {
    std::vector<PreferenceRecord> records;
    std::vector<FilterDiagnosticRow> diagnostics;
    std::vector<SkippedPrompt> skipped;
    std::vector<std::string> short_of_m_ids;
};

/// Full dataset-construction step: embed target and responses per prompt,
/// filter, select m negatives, and assemble PreferenceRecords with the SFT
/// target as chosen. Empty responses cannot be embedded and are ranked least
/// similar (they are never potential positives). Prompts with no eligible
/// negatives are skipped and logged.
inline PreferenceBuildResult build_preference_dataset(
    const std::vector<PromptRecord>& prompts, const std::vector<ResponseSet>& response_sets,
    Embedder& embedder, const FilterConfig& cfg) {
    cfg.validate();
    std::unordered_map<std::string, const ResponseSet*> by_id;
    for (const auto& rs : response_sets) by_id[rs.id] = &rs;

    PreferenceBuildResult out;
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        const auto& pr = prompts[pi];
        auto it = by_id.find(pr.id);
        if (it == by_id.end())
            throw std::runtime_error("build_preference_dataset: no responses for prompt id \"" +
                                     pr.id + "\"");
        const auto& responses = it->second->responses;
        if (static_cast<int>(responses.size()) != cfg.responses_per_prompt)
            throw std::runtime_error("prompt id \"" + pr.id + "\": expected " +
                                     std::to_string(cfg.responses_per_prompt) +
                                     " responses, found " + std::to_string(responses.size()));

        std::vector<std::string> texts;
        texts.push_back(pr.target);
        std::vector<size_t> text_index(responses.size(), 0);
        for (size_t i = 0; i < responses.size(); ++i)
            if (!responses[i].empty()) {
                text_index[i] = texts.size();
                texts.push_back(responses[i]);
            }
        std::vector<EmbeddingVector> embs;
        try {
            embs = embedder.embed(texts);
        } catch (const std::exception& e) {
            throw std::runtime_error("embedder failed for prompt id \"" + pr.id +
                                     "\": " + e.what());
        }

        std::vector<double> sims(responses.size());
        std::vector<char> equals(responses.size(), 0);
        for (size_t i = 0; i < responses.size(); ++i) {
            sims[i] = responses[i].empty() ? -2.0 : cosine(embs[0], embs[text_index[i]]);
            equals[i] = responses[i] == pr.target;
        }

        std::vector<int> eligible;
        SelectedNegatives sel;
        try {
            eligible = filter_negatives_by_similarity(sims, cfg.a_percent, &equals);
            std::vector<std::string> eligible_texts;
            eligible_texts.reserve(eligible.size());
            for (int idx : eligible) eligible_texts.push_back(responses[static_cast<size_t>(idx)]);
            sel = select_negatives(eligible_texts, cfg.m, derive_seed(cfg.seed, pi));
        } catch (const std::exception& e) {
            out.skipped.push_back({pr.id, e.what()});
            continue;
        }
        if (sel.short_of_m) out.short_of_m_ids.push_back(pr.id);

        std::unordered_set<std::string> picked(sel.picked.begin(), sel.picked.end());
        std::vector<int> rank_order(static_cast<int>(responses.size()));
        for (size_t i = 0; i < responses.size(); ++i) rank_order[i] = static_cast<int>(i);
        std::stable_sort(rank_order.begin(), rank_order.end(), [&](int a, int b) {
            return sims[static_cast<size_t>(a)] > sims[static_cast<size_t>(b)];
        });
        std::vector<int> rank_of(responses.size());
        for (size_t r = 0; r < rank_order.size(); ++r)
            rank_of[static_cast<size_t>(rank_order[r])] = static_cast<int>(r);
        for (size_t i = 0; i < responses.size(); ++i)
            out.diagnostics.push_back({pr.id, static_cast<int>(i), rank_of[i], sims[i],
                                       picked.contains(responses[i])});

        PreferenceRecord rec{pr.id, pr.prompt, pr.target, std::move(sel.picked)};
        rec.validate();
        if (cfg.a_percent < 100.0)
            for (const auto& n : rec.rejected)
                if (n == rec.chosen)
                    throw std::logic_error("chosen-exclusion violated for prompt id \"" + pr.id +
                                           "\"");
        out.records.push_back(std::move(rec));
    }
    return out;
}

}  // namespace selfcontrast
