#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "selfcontrast/rng.hpp"
#include "selfcontrast/vocab.hpp"

namespace selfcontrast {

enum class TaskKind { reverse, copy, sum_mod_10, constant_refusal };

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::reverse: return "reverse";
        case TaskKind::copy: return "copy";
        case TaskKind::sum_mod_10: return "sum-mod-10";
        case TaskKind::constant_refusal: return "constant-refusal";
    }
    throw std::logic_error("unreachable task kind");
}

inline TaskKind task_kind_from_name(std::string_view name) {
    if (name == "reverse") return TaskKind::reverse;
    if (name == "copy") return TaskKind::copy;
    if (name == "sum-mod-10") return TaskKind::sum_mod_10;
    if (name == "constant-refusal") return TaskKind::constant_refusal;
    throw std::invalid_argument("unknown task kind: " + std::string(name));
}

struct TaskSpec {
    TaskKind kind = TaskKind::reverse;
    int input_length = 3;
    std::string alphabet = "abcdefghijklmno";

    void validate(const Vocab& vocab) const {
        if (input_length < 1) throw std::invalid_argument("task input_length must be >= 1");
        if (alphabet.empty()) throw std::invalid_argument("task alphabet must be nonempty");
        std::unordered_set<char> seen;
        for (char c : alphabet) {
            if (!vocab.contains(c))
                throw std::invalid_argument(std::string("task alphabet char '") + c +
                                            "' not in vocabulary");
            if (!seen.insert(c).second)
                throw std::invalid_argument(std::string("task alphabet repeats '") + c + "'");
            if (kind == TaskKind::sum_mod_10 && (c < '0' || c > '9'))
                throw std::invalid_argument("sum-mod-10 alphabet must be digits");
        }
    }

    /// Response budget used when sampling: 2 * input_length + 2 tokens.
    int max_response_len() const { return 2 * input_length + 2; }
};

/// The deterministic target transform; the ground truth every oracle uses.
inline std::string apply_task(const TaskSpec& task, const std::string& prompt) {
    switch (task.kind) {
        case TaskKind::reverse:
            return std::string(prompt.rbegin(), prompt.rend());
        case TaskKind::copy:
            return prompt;
        case TaskKind::sum_mod_10: {
            int sum = 0;
            for (char c : prompt) {
                if (c < '0' || c > '9')
                    throw std::invalid_argument("sum-mod-10 prompt must be digits");
                sum += c - '0';
            }
            return std::string(1, static_cast<char>('0' + sum % 10));
        }
        case TaskKind::constant_refusal:
            return "no";
    }
    throw std::logic_error("unreachable task kind");
}

struct PromptRecord {
    std::string id;
    std::string prompt;
    std::string target;
    std::string task;  // task kind tag

    bool operator==(const PromptRecord&) const = default;
};

struct ResponseSet {
    std::string id;
    std::vector<std::string> responses;
    double temperature = 1.0;
    double top_p = 1.0;
    uint64_t seed = 0;

    bool operator==(const ResponseSet&) const = default;
};

struct PreferenceRecord {
    std::string id;
    std::string prompt;
    std::string chosen;
    std::vector<std::string> rejected;

    bool operator==(const PreferenceRecord&) const = default;

    void validate() const {
        if (rejected.empty()) throw std::invalid_argument("record " + id + ": rejected empty");
        std::unordered_set<std::string> seen;
        for (const auto& r : rejected)
            if (!seen.insert(r).second)
                throw std::invalid_argument("record " + id + ": duplicate rejected response");
    }
};

namespace detail {

inline std::string prompt_from_index(uint64_t index, const std::string& alphabet, int length) {
    std::string out(static_cast<size_t>(length), alphabet[0]);
    const auto base = static_cast<uint64_t>(alphabet.size());
    for (int pos = length - 1; pos >= 0; --pos) {
        out[static_cast<size_t>(pos)] = alphabet[index % base];
        index /= base;
    }
    return out;
}

/// |alphabet|^length, saturating at 2^63 to keep comparisons safe.
inline uint64_t prompt_space_size(const TaskSpec& task) {
    uint64_t space = 1;
    const auto base = static_cast<uint64_t>(task.alphabet.size());
    for (int i = 0; i < task.input_length; ++i) {
        if (space > (1ull << 63) / base) return 1ull << 63;
        space *= base;
    }
    return space;
}

}  // namespace detail

/// Deterministic toy corpus: n distinct prompts sampled without replacement
/// from alphabet^input_length, each with its oracle target.
inline std::vector<PromptRecord> gen_toy_corpus(const TaskSpec& task, int n, uint64_t seed,
                                                const Vocab& vocab = Vocab::toy()) {
    task.validate(vocab);
    if (n < 1) throw std::invalid_argument("gen_toy_corpus: n must be >= 1");
    const uint64_t space = detail::prompt_space_size(task);
    if (static_cast<uint64_t>(n) > space)
        throw std::invalid_argument("gen_toy_corpus: n = " + std::to_string(n) +
                                    " exceeds the " + std::to_string(space) +
                                    " distinct prompts the task admits");

    Rng rng(seed);
    std::vector<std::string> prompts;
    prompts.reserve(static_cast<size_t>(n));
    constexpr uint64_t kEnumerateCap = 1ull << 20;
    if (space <= kEnumerateCap) {
        std::vector<uint64_t> all(space);
        for (uint64_t i = 0; i < space; ++i) all[i] = i;
        rng.shuffle(all);
        for (int i = 0; i < n; ++i)
            prompts.push_back(detail::prompt_from_index(all[static_cast<size_t>(i)],
                                                        task.alphabet, task.input_length));
    } else {
        std::unordered_set<uint64_t> taken;
        while (prompts.size() < static_cast<size_t>(n)) {
            const uint64_t idx = rng.below(space);
            if (taken.insert(idx).second)
                prompts.push_back(detail::prompt_from_index(idx, task.alphabet, task.input_length));
        }
    }

    std::vector<PromptRecord> records;
    records.reserve(prompts.size());
    const std::string tag = task_kind_name(task.kind);
    for (size_t i = 0; i < prompts.size(); ++i) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%06zu", i);
        records.push_back(PromptRecord{tag + "-" + idbuf, prompts[i],
                                       apply_task(task, prompts[i]), tag});
    }
    return records;
}

}  // namespace selfcontrast
