#pragma once

// Model checkpoint container. JSON with the canonical-order flat parameter
// array; doubles round-trip exactly through shortest-decimal serialization,
// so save/load is value-identical.
//
// Layout (version 1):
//   {"format":"selfcontrast-model","version":1,
//    "dims":{"vocab":V,"context":K,"embed":d,"hidden":h},
//    "seed_lineage":[...], "params":[...P doubles...]}

#include <filesystem>

#include <json.hpp>

#include "selfcontrast/common.hpp"
#include "selfcontrast/jsonl.hpp"
#include "selfcontrast/toylm.hpp"

namespace selfcontrast {

inline constexpr const char* kCheckpointFormat = "selfcontrast-model";
inline constexpr int kCheckpointVersion = 1;

inline std::string checkpoint_to_string(const ModelParams& mp,
                                        const std::vector<uint64_t>& seed_lineage) {
    const auto& d = mp.dims();
    ojson j{{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"dims", ojson{{"vocab", d.vocab},
                           {"context", d.context},
                           {"embed", d.embed},
                           {"hidden", d.hidden}}},
            {"seed_lineage", seed_lineage},
            {"params", mp.flat()}};
    return j.dump() + "\n";
}

inline void save_checkpoint(const ModelParams& mp, const std::filesystem::path& path,
                            const std::vector<uint64_t>& seed_lineage = {}) {
    write_text_file(path, checkpoint_to_string(mp, seed_lineage));
}

struct Checkpoint {
    ModelParams params;
    std::vector<uint64_t> seed_lineage;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    ojson j;
    try {
        j = ojson::parse(read_text_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint " + path.string() + ": malformed JSON: " + e.what());
    }
    if (detail::require_key(j, "format").get<std::string>() != kCheckpointFormat)
        throw std::runtime_error("checkpoint " + path.string() + ": unexpected format tag");
    if (detail::require_key(j, "version").get<int>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint " + path.string() + ": unsupported version");
    const auto& jd = detail::require_key(j, "dims");
    Dims dims{detail::require_key(jd, "vocab").get<int>(),
              detail::require_key(jd, "context").get<int>(),
              detail::require_key(jd, "embed").get<int>(),
              detail::require_key(jd, "hidden").get<int>()};
    dims.validate();
    Checkpoint ck{ModelParams(dims),
                  detail::require_key(j, "seed_lineage").get<std::vector<uint64_t>>()};
    auto params = detail::require_key(j, "params").get<std::vector<double>>();
    if (params.size() != dims.param_count())
        throw std::runtime_error("checkpoint " + path.string() + ": expected " +
                                 std::to_string(dims.param_count()) + " params, found " +
                                 std::to_string(params.size()));
    for (double p : params)
        if (!std::isfinite(p))
            throw std::runtime_error("checkpoint " + path.string() + ": non-finite parameter");
    ck.params.flat() = std::move(params);
    return ck;
}

}  // namespace selfcontrast
