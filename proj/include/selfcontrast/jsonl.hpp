#pragma once

// JSONL persistence for the record types. Keys are emitted in a fixed
// documented order and numbers use shortest round-trip decimals, so
// serialization is byte-deterministic:
//   PromptRecord     {"id","prompt","target","task"}
//   ResponseSet      {"id","responses","temperature","top_p","seed"}
//   PreferenceRecord {"id","prompt","chosen","rejected"}

#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "selfcontrast/corpus.hpp"

namespace selfcontrast {

using ojson = nlohmann::ordered_json;

inline ojson to_ojson(const PromptRecord& r) {
    return ojson{{"id", r.id}, {"prompt", r.prompt}, {"target", r.target}, {"task", r.task}};
}

inline ojson to_ojson(const ResponseSet& r) {
    return ojson{{"id", r.id},
                 {"responses", r.responses},
                 {"temperature", r.temperature},
                 {"top_p", r.top_p},
                 {"seed", r.seed}};
}

inline ojson to_ojson(const PreferenceRecord& r) {
    return ojson{{"id", r.id}, {"prompt", r.prompt}, {"chosen", r.chosen}, {"rejected", r.rejected}};
}

namespace detail {

inline const ojson& require_key(const ojson& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw std::runtime_error(std::string("missing key \"") + key + "\"");
    return *it;
}

inline void reject_unknown_keys(const ojson& obj, std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known) throw std::runtime_error("unknown key \"" + item.key() + "\"");
    }
}

}  // namespace detail

inline void from_ojson(const ojson& j, PromptRecord& r) {
    detail::reject_unknown_keys(j, {"id", "prompt", "target", "task"});
    r.id = detail::require_key(j, "id").get<std::string>();
    r.prompt = detail::require_key(j, "prompt").get<std::string>();
    r.target = detail::require_key(j, "target").get<std::string>();
    r.task = detail::require_key(j, "task").get<std::string>();
}

inline void from_ojson(const ojson& j, ResponseSet& r) {
    detail::reject_unknown_keys(j, {"id", "responses", "temperature", "top_p", "seed"});
    r.id = detail::require_key(j, "id").get<std::string>();
    r.responses = detail::require_key(j, "responses").get<std::vector<std::string>>();
    r.temperature = detail::require_key(j, "temperature").get<double>();
    r.top_p = detail::require_key(j, "top_p").get<double>();
    r.seed = detail::require_key(j, "seed").get<uint64_t>();
}

inline void from_ojson(const ojson& j, PreferenceRecord& r) {
    detail::reject_unknown_keys(j, {"id", "prompt", "chosen", "rejected"});
    r.id = detail::require_key(j, "id").get<std::string>();
    r.prompt = detail::require_key(j, "prompt").get<std::string>();
    r.chosen = detail::require_key(j, "chosen").get<std::string>();
    r.rejected = detail::require_key(j, "rejected").get<std::vector<std::string>>();
}

template <class Record>
std::string to_jsonl_string(const std::vector<Record>& records) {
    std::string out;
    for (const auto& r : records) {
        out += to_ojson(r).dump();
        out += '\n';
    }
    return out;
}

template <class Record>
void write_jsonl(const std::vector<Record>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << to_jsonl_string(records);
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <class Record>
std::vector<Record> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    std::vector<Record> records;
    std::unordered_set<std::string> ids;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                     ": malformed JSON: " + e.what());
        }
        Record r;
        try {
            from_ojson(j, r);
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " +
                                     e.what());
        }
        if (!ids.insert(r.id).second)
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                     ": duplicate id \"" + r.id + "\"");
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace selfcontrast
