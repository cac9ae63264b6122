#pragma once

// Pipeline orchestration: a single strict JSON config, per-stage artifacts
// in a run directory, a manifest with content hashes, and deterministic
// seed derivation (stage seeds come from root_seed through derive_seed with
// fixed stage indices; see README).
//
// Stage order: gen-corpus -> sft -> sample -> filter -> train-dpo -> eval.
// simulate-theorem and compare-negatives are standalone.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfcontrast/checkpoint.hpp"
#include "selfcontrast/common.hpp"
#include "selfcontrast/corpus.hpp"
#include "selfcontrast/dpo.hpp"
#include "selfcontrast/embed_http.hpp"
#include "selfcontrast/eval.hpp"
#include "selfcontrast/filter.hpp"
#include "selfcontrast/jsonl.hpp"
#include "selfcontrast/theorem.hpp"
#include "selfcontrast/toylm.hpp"

namespace selfcontrast {

inline constexpr const char* kToolVersion = "0.1.0";

// Stage indices for seed derivation from root_seed.
enum class Stage : uint64_t {
    gen_corpus = 0,
    sft = 1,
    sample = 2,
    filter = 3,
    train_dpo = 4,
    eval = 5,
    theorem = 6,
    compare = 7,
};

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::gen_corpus: return "gen-corpus";
        case Stage::sft: return "sft";
        case Stage::sample: return "sample";
        case Stage::filter: return "filter";
        case Stage::train_dpo: return "train-dpo";
        case Stage::eval: return "eval";
        case Stage::theorem: return "simulate-theorem";
        case Stage::compare: return "compare-negatives";
    }
    throw std::logic_error("unreachable stage");
}

/// Shortest round-trip decimal, shared with the JSON serializers.
inline std::string num_str(double v) { return nlohmann::ordered_json(v).dump(); }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct CorpusSection {
    TaskSpec task{TaskKind::reverse, 4, "abcdefghijklmno"};
    int n = 1000;
    double train_fraction = 0.8;
    uint64_t seed = 0;
};

struct ModelSection {
    int context = 8;
    int embed_dim = 8;
    int hidden_dim = 32;
};

// SFT is deliberately stopped short of convergence (win rate ~ 0.24 of the
// 0.5 ceiling) so alignment has headroom; DPO's beta/lr are rescaled for toy
// logprob magnitudes, where margins move by whole nats rather than the
// fractions a 7B model sees.
struct SftSection {
    int epochs = 25;
    int batch_size = 32;
    double learning_rate = 0.1;
    std::string optimizer = "sgd";
    uint64_t seed = 0;
};

struct SampleSection {
    int responses_per_prompt = 32;
    double temperature = 1.0;
    double top_p = 1.0;
    int max_len = 0;  // 0: derive 2 * input_length + 2 from the task
    uint64_t seed = 0;
};

struct FilterSection {
    double a_percent = 25.0;
    std::vector<int> m_list = {1, 8};
    EmbedderSpec embedder;
    uint64_t seed = 0;
};

struct DpoSection {
    double beta = 2.0;
    double learning_rate = 0.05;
    int epochs = 10;
    int batch_prompts = 32;
    std::string optimizer = "sgd";
    uint64_t seed = 0;
};

struct EvalSection {
    int samples_per_prompt = 4;
    double temperature = 1.0;
    double top_p = 1.0;
    int bins = 20;
    uint64_t seed = 0;
};

struct TheoremSection {
    std::vector<double> sigma1 = {1.0};
    std::vector<double> sigma2 = {3.0};
    std::vector<double> rho = {0.0};
    std::vector<long long> l = {5};
    std::vector<long long> m;  // empty: derive via min_negatives
    long long trials = 200000;
    uint64_t seed = 0;
};

struct RunConfig {
    uint64_t root_seed = 42;
    CorpusSection corpus;
    ModelSection model;
    SftSection sft;
    SampleSection sample;
    FilterSection filter;
    DpoSection dpo;
    EvalSection eval;
    TheoremSection theorem;
    bool seeds_resolved = false;

    Dims dims() const {
        return Dims{Vocab::toy().size(), model.context, model.embed_dim, model.hidden_dim};
    }

    int sample_max_len() const {
        return sample.max_len > 0 ? sample.max_len : corpus.task.max_response_len();
    }

    /// Fill every unset stage seed from root_seed. Explicit seeds in the
    /// config win; the resolved config written to the run directory always
    /// carries them all.
    void resolve_seeds() {
        if (seeds_resolved) return;
        auto derive = [&](Stage s) { return derive_seed(root_seed, static_cast<uint64_t>(s)); };
        if (corpus.seed == 0) corpus.seed = derive(Stage::gen_corpus);
        if (sft.seed == 0) sft.seed = derive(Stage::sft);
        if (sample.seed == 0) sample.seed = derive(Stage::sample);
        if (filter.seed == 0) filter.seed = derive(Stage::filter);
        if (dpo.seed == 0) dpo.seed = derive(Stage::train_dpo);
        if (eval.seed == 0) eval.seed = derive(Stage::eval);
        if (theorem.seed == 0) theorem.seed = derive(Stage::theorem);
        seeds_resolved = true;
    }

    void validate() const {
        const Vocab& vocab = Vocab::toy();
        try {
            corpus.task.validate(vocab);
            if (corpus.n < 1) throw ConfigError("corpus.n must be >= 1");
            if (!(corpus.train_fraction > 0.0 && corpus.train_fraction < 1.0))
                throw ConfigError("corpus.train_fraction must be in (0, 1)");
            dims().validate();
            SftConfig sc{sft.epochs, sft.batch_size, sft.learning_rate, sft.seed,
                         optimizer_from_name(sft.optimizer)};
            sc.validate();
            if (sample.responses_per_prompt < 1)
                throw ConfigError("sample.responses_per_prompt must be >= 1");
            if (!(sample.temperature >= 0.0)) throw ConfigError("sample.temperature must be >= 0");
            if (!(sample.top_p > 0.0 && sample.top_p <= 1.0))
                throw ConfigError("sample.top_p must be in (0, 1]");
            if (sample.max_len < 0) throw ConfigError("sample.max_len must be >= 0");
            if (filter.m_list.empty()) throw ConfigError("filter.m must be nonempty");
            for (int m : filter.m_list) {
                FilterConfig fc{filter.a_percent, m, sample.responses_per_prompt, filter.seed};
                fc.validate();
            }
            filter.embedder.validate();
            DpoConfig dc{dpo.beta,         dpo.learning_rate, dpo.epochs,
                         dpo.batch_prompts, dpo.seed,          optimizer_from_name(dpo.optimizer)};
            dc.validate();
            if (eval.samples_per_prompt < 1)
                throw ConfigError("eval.samples_per_prompt must be >= 1");
            if (eval.bins < 2) throw ConfigError("eval.bins must be >= 2");
            if (theorem.trials < 1) throw ConfigError("theorem.trials must be >= 1");
            if (theorem.sigma1.empty() || theorem.sigma2.empty() || theorem.rho.empty() ||
                theorem.l.empty())
                throw ConfigError("theorem grid lists must be nonempty");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

inline void reject_unknown_config_keys(const ojson& obj, std::initializer_list<const char*> allowed,
                                       const std::string& where) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("unknown config key \"" + where + item.key() + "\"");
    }
}

template <class T>
void maybe_get(const ojson& obj, const char* key, T& out, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + where + key + "\" has the wrong type");
    }
}

inline void maybe_get_m_list(const ojson& obj, const char* key, std::vector<int>& out,
                             const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (it->is_number_integer()) {
        out = {it->get<int>()};
        return;
    }
    try {
        out = it->get<std::vector<int>>();
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + where + key +
                          "\" must be an integer or an integer list");
    }
}

}  // namespace detail

inline EmbedderSpec parse_embedder_spec(const ojson& j, const std::string& where) {
    detail::reject_unknown_config_keys(
        j, {"kind", "dim", "ngram", "seed", "path", "endpoint", "batch_size", "retries",
            "backoff_ms"},
        where);
    EmbedderSpec spec;
    std::string kind = "hashed-ngram";
    detail::maybe_get(j, "kind", kind, where);
    if (kind == "hashed-ngram")
        spec.kind = EmbedderSpec::Kind::hashed_ngram;
    else if (kind == "file")
        spec.kind = EmbedderSpec::Kind::file;
    else if (kind == "http")
        spec.kind = EmbedderSpec::Kind::http;
    else
        throw ConfigError("config key \"" + where + "kind\" must be hashed-ngram, file, or http");
    detail::maybe_get(j, "dim", spec.dim, where);
    detail::maybe_get(j, "ngram", spec.ngram, where);
    detail::maybe_get(j, "seed", spec.seed, where);
    detail::maybe_get(j, "path", spec.path, where);
    detail::maybe_get(j, "endpoint", spec.endpoint, where);
    detail::maybe_get(j, "batch_size", spec.batch_size, where);
    detail::maybe_get(j, "retries", spec.retries, where);
    detail::maybe_get(j, "backoff_ms", spec.backoff_ms, where);
    return spec;
}

inline RunConfig parse_run_config(const ojson& j) {
    detail::reject_unknown_config_keys(j,
                                       {"root_seed", "corpus", "model", "sft", "sample", "filter",
                                        "dpo", "eval", "theorem"},
                                       "");
    RunConfig cfg;
    detail::maybe_get(j, "root_seed", cfg.root_seed, "");

    if (auto it = j.find("corpus"); it != j.end()) {
        detail::reject_unknown_config_keys(
            *it, {"task", "input_length", "alphabet", "n", "train_fraction", "seed"}, "corpus.");
        std::string task = task_kind_name(cfg.corpus.task.kind);
        detail::maybe_get(*it, "task", task, "corpus.");
        cfg.corpus.task.kind = task_kind_from_name(task);
        if (cfg.corpus.task.kind == TaskKind::sum_mod_10 && !it->contains("alphabet"))
            cfg.corpus.task.alphabet = "0123456789";
        detail::maybe_get(*it, "input_length", cfg.corpus.task.input_length, "corpus.");
        detail::maybe_get(*it, "alphabet", cfg.corpus.task.alphabet, "corpus.");
        detail::maybe_get(*it, "n", cfg.corpus.n, "corpus.");
        detail::maybe_get(*it, "train_fraction", cfg.corpus.train_fraction, "corpus.");
        detail::maybe_get(*it, "seed", cfg.corpus.seed, "corpus.");
    }
    if (auto it = j.find("model"); it != j.end()) {
        detail::reject_unknown_config_keys(*it, {"context", "embed_dim", "hidden_dim"}, "model.");
        detail::maybe_get(*it, "context", cfg.model.context, "model.");
        detail::maybe_get(*it, "embed_dim", cfg.model.embed_dim, "model.");
        detail::maybe_get(*it, "hidden_dim", cfg.model.hidden_dim, "model.");
    }
    if (auto it = j.find("sft"); it != j.end()) {
        detail::reject_unknown_config_keys(
            *it, {"epochs", "batch_size", "learning_rate", "optimizer", "seed"}, "sft.");
        detail::maybe_get(*it, "epochs", cfg.sft.epochs, "sft.");
        detail::maybe_get(*it, "batch_size", cfg.sft.batch_size, "sft.");
        detail::maybe_get(*it, "learning_rate", cfg.sft.learning_rate, "sft.");
        detail::maybe_get(*it, "optimizer", cfg.sft.optimizer, "sft.");
        detail::maybe_get(*it, "seed", cfg.sft.seed, "sft.");
    }
    if (auto it = j.find("sample"); it != j.end()) {
        detail::reject_unknown_config_keys(
            *it, {"responses_per_prompt", "temperature", "top_p", "max_len", "seed"}, "sample.");
        detail::maybe_get(*it, "responses_per_prompt", cfg.sample.responses_per_prompt, "sample.");
        detail::maybe_get(*it, "temperature", cfg.sample.temperature, "sample.");
        detail::maybe_get(*it, "top_p", cfg.sample.top_p, "sample.");
        detail::maybe_get(*it, "max_len", cfg.sample.max_len, "sample.");
        detail::maybe_get(*it, "seed", cfg.sample.seed, "sample.");
    }
    if (auto it = j.find("filter"); it != j.end()) {
        detail::reject_unknown_config_keys(*it, {"a_percent", "m", "embedder", "seed"}, "filter.");
        detail::maybe_get(*it, "a_percent", cfg.filter.a_percent, "filter.");
        detail::maybe_get_m_list(*it, "m", cfg.filter.m_list, "filter.");
        if (auto e = it->find("embedder"); e != it->end())
            cfg.filter.embedder = parse_embedder_spec(*e, "filter.embedder.");
        detail::maybe_get(*it, "seed", cfg.filter.seed, "filter.");
    }
    if (auto it = j.find("dpo"); it != j.end()) {
        detail::reject_unknown_config_keys(
            *it, {"beta", "learning_rate", "epochs", "batch_prompts", "optimizer", "seed"},
            "dpo.");
        detail::maybe_get(*it, "beta", cfg.dpo.beta, "dpo.");
        detail::maybe_get(*it, "learning_rate", cfg.dpo.learning_rate, "dpo.");
        detail::maybe_get(*it, "epochs", cfg.dpo.epochs, "dpo.");
        detail::maybe_get(*it, "batch_prompts", cfg.dpo.batch_prompts, "dpo.");
        detail::maybe_get(*it, "optimizer", cfg.dpo.optimizer, "dpo.");
        detail::maybe_get(*it, "seed", cfg.dpo.seed, "dpo.");
    }
    if (auto it = j.find("eval"); it != j.end()) {
        detail::reject_unknown_config_keys(
            *it, {"samples_per_prompt", "temperature", "top_p", "bins", "seed"}, "eval.");
        detail::maybe_get(*it, "samples_per_prompt", cfg.eval.samples_per_prompt, "eval.");
        detail::maybe_get(*it, "temperature", cfg.eval.temperature, "eval.");
        detail::maybe_get(*it, "top_p", cfg.eval.top_p, "eval.");
        detail::maybe_get(*it, "bins", cfg.eval.bins, "eval.");
        detail::maybe_get(*it, "seed", cfg.eval.seed, "eval.");
    }
    if (auto it = j.find("theorem"); it != j.end()) {
        detail::reject_unknown_config_keys(
            *it, {"sigma1", "sigma2", "rho", "l", "m", "trials", "seed"}, "theorem.");
        detail::maybe_get(*it, "sigma1", cfg.theorem.sigma1, "theorem.");
        detail::maybe_get(*it, "sigma2", cfg.theorem.sigma2, "theorem.");
        detail::maybe_get(*it, "rho", cfg.theorem.rho, "theorem.");
        detail::maybe_get(*it, "l", cfg.theorem.l, "theorem.");
        detail::maybe_get(*it, "m", cfg.theorem.m, "theorem.");
        detail::maybe_get(*it, "trials", cfg.theorem.trials, "theorem.");
        detail::maybe_get(*it, "seed", cfg.theorem.seed, "theorem.");
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    ojson j;
    try {
        j = ojson::parse(read_text_file(path));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

inline ojson embedder_spec_to_ojson(const EmbedderSpec& spec) {
    const char* kind = spec.kind == EmbedderSpec::Kind::hashed_ngram ? "hashed-ngram"
                       : spec.kind == EmbedderSpec::Kind::file       ? "file"
                                                                     : "http";
    ojson j{{"kind", kind}, {"dim", spec.dim}};
    switch (spec.kind) {
        case EmbedderSpec::Kind::hashed_ngram:
            j["ngram"] = spec.ngram;
            j["seed"] = spec.seed;
            break;
        case EmbedderSpec::Kind::file:
            j["path"] = spec.path;
            break;
        case EmbedderSpec::Kind::http:
            j["endpoint"] = spec.endpoint;
            j["batch_size"] = spec.batch_size;
            j["retries"] = spec.retries;
            j["backoff_ms"] = spec.backoff_ms;
            break;
    }
    return j;
}

inline ojson run_config_to_ojson(const RunConfig& cfg) {
    return ojson{
        {"root_seed", cfg.root_seed},
        {"corpus", ojson{{"task", task_kind_name(cfg.corpus.task.kind)},
                         {"input_length", cfg.corpus.task.input_length},
                         {"alphabet", cfg.corpus.task.alphabet},
                         {"n", cfg.corpus.n},
                         {"train_fraction", cfg.corpus.train_fraction},
                         {"seed", cfg.corpus.seed}}},
        {"model", ojson{{"context", cfg.model.context},
                        {"embed_dim", cfg.model.embed_dim},
                        {"hidden_dim", cfg.model.hidden_dim}}},
        {"sft", ojson{{"epochs", cfg.sft.epochs},
                      {"batch_size", cfg.sft.batch_size},
                      {"learning_rate", cfg.sft.learning_rate},
                      {"optimizer", cfg.sft.optimizer},
                      {"seed", cfg.sft.seed}}},
        {"sample", ojson{{"responses_per_prompt", cfg.sample.responses_per_prompt},
                         {"temperature", cfg.sample.temperature},
                         {"top_p", cfg.sample.top_p},
                         {"max_len", cfg.sample.max_len},
                         {"seed", cfg.sample.seed}}},
        {"filter", ojson{{"a_percent", cfg.filter.a_percent},
                         {"m", cfg.filter.m_list},
                         {"embedder", embedder_spec_to_ojson(cfg.filter.embedder)},
                         {"seed", cfg.filter.seed}}},
        {"dpo", ojson{{"beta", cfg.dpo.beta},
                      {"learning_rate", cfg.dpo.learning_rate},
                      {"epochs", cfg.dpo.epochs},
                      {"batch_prompts", cfg.dpo.batch_prompts},
                      {"optimizer", cfg.dpo.optimizer},
                      {"seed", cfg.dpo.seed}}},
        {"eval", ojson{{"samples_per_prompt", cfg.eval.samples_per_prompt},
                       {"temperature", cfg.eval.temperature},
                       {"top_p", cfg.eval.top_p},
                       {"bins", cfg.eval.bins},
                       {"seed", cfg.eval.seed}}},
        {"theorem", ojson{{"sigma1", cfg.theorem.sigma1},
                          {"sigma2", cfg.theorem.sigma2},
                          {"rho", cfg.theorem.rho},
                          {"l", cfg.theorem.l},
                          {"m", cfg.theorem.m},
                          {"trials", cfg.theorem.trials},
                          {"seed", cfg.theorem.seed}}}};
}

inline std::string config_hash_hex(const RunConfig& cfg) {
    return to_hex(fnv1a64(run_config_to_ojson(cfg).dump()));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace detail {

inline std::string utc_now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

class Manifest {
public:
    Manifest(std::filesystem::path run_dir, std::string config_hash)
        : path_(run_dir / "manifest.json"), config_hash_(std::move(config_hash)) {
        if (std::filesystem::exists(path_)) {
            try {
                doc_ = ojson::parse(read_text_file(path_));
            } catch (const std::exception&) {
                doc_ = ojson::object();  // corrupt manifest: rebuild
            }
        }
        if (!doc_.contains("stages") || !doc_["stages"].is_array())
            doc_["stages"] = ojson::array();
        doc_["tool_version"] = kToolVersion;
        doc_["config_hash"] = config_hash_;
    }

    /// Replace-or-append the entry for `stage`, hashing each output file.
    void record_stage(const std::string& stage, uint64_t seed,
                      const std::vector<std::filesystem::path>& inputs,
                      const std::vector<std::filesystem::path>& outputs,
                      const std::string& started, const std::filesystem::path& run_dir) {
        ojson entry{{"stage", stage},
                    {"seed", seed},
                    {"started_utc", started},
                    {"finished_utc", detail::utc_now_iso8601()}};
        auto rel = [&](const std::filesystem::path& p) {
            return std::filesystem::relative(p, run_dir).generic_string();
        };
        ojson jin = ojson::array();
        for (const auto& p : inputs) jin.push_back(rel(p));
        entry["inputs"] = jin;
        ojson jout = ojson::array();
        for (const auto& p : outputs)
            jout.push_back(ojson{{"path", rel(p)}, {"fnv1a64", to_hex(hash_file(p))}});
        entry["outputs"] = jout;

        auto& stages = doc_["stages"];
        for (auto& existing : stages)
            if (existing["stage"] == stage) {
                existing = entry;
                save_();
                return;
            }
        stages.push_back(entry);
        save_();
    }

    const ojson& doc() const { return doc_; }

private:
    void save_() { write_text_file(path_, doc_.dump(2) + "\n"); }

    std::filesystem::path path_;
    std::string config_hash_;
    ojson doc_ = ojson::object();
};

// ---------------------------------------------------------------------------
// Stage plumbing
// ---------------------------------------------------------------------------

struct StageContext {
    RunConfig config;
    std::filesystem::path run_dir;
    std::string config_hash;

    std::filesystem::path path(const std::string& name) const { return run_dir / name; }
};

inline StageContext make_stage_context(RunConfig cfg, const std::filesystem::path& run_dir) {
    cfg.resolve_seeds();
    cfg.validate();
    std::filesystem::create_directories(run_dir);
    StageContext ctx{std::move(cfg), run_dir, ""};
    ctx.config_hash = config_hash_hex(ctx.config);
    const auto cfg_path = ctx.path("config.json");
    write_text_file(cfg_path, run_config_to_ojson(ctx.config).dump(2) + "\n");
    Manifest(run_dir, ctx.config_hash)
        .record_stage("config", ctx.config.root_seed, {}, {cfg_path},
                      detail::utc_now_iso8601(), run_dir);
    return ctx;
}

namespace detail {

template <class Fn>
void run_stage(const StageContext& ctx, Stage stage, uint64_t seed,
               const std::vector<std::filesystem::path>& inputs, Fn&& body) {
    for (const auto& in : inputs)
        if (!std::filesystem::exists(in))
            throw StageError(std::string(stage_name(stage)) + ": missing input " +
                             in.string() + " (run the predecessor stage first)");
    const std::string started = utc_now_iso8601();
    std::vector<std::filesystem::path> outputs;
    try {
        body(outputs);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(std::string(stage_name(stage)) + ": " + e.what());
    }
    Manifest(ctx.run_dir, ctx.config_hash)
        .record_stage(stage_name(stage), seed, inputs, outputs, started, ctx.run_dir);
}

inline std::string csv_join(const std::vector<std::string>& cells) {
    std::string line;
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    return line + "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void stage_gen_corpus(const StageContext& ctx) {
    const auto& cfg = ctx.config;
    detail::run_stage(ctx, Stage::gen_corpus, cfg.corpus.seed, {},
                      [&](std::vector<std::filesystem::path>& outputs) {
        auto records =
            gen_toy_corpus(cfg.corpus.task, cfg.corpus.n, derive_seed(cfg.corpus.seed, 0));
        std::vector<size_t> order(records.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(cfg.corpus.seed, 1));
        rng.shuffle(order);
        const auto n_train = static_cast<size_t>(
            std::max(1.0, std::floor(cfg.corpus.train_fraction *
                                     static_cast<double>(records.size()))));
        std::vector<PromptRecord> train, eval;
        for (size_t i = 0; i < order.size(); ++i)
            (i < n_train ? train : eval).push_back(records[order[i]]);
        if (eval.empty())
            throw std::runtime_error("train_fraction leaves no held-out eval prompts");
        write_jsonl(train, ctx.path("corpus_train.jsonl"));
        write_jsonl(eval, ctx.path("corpus_eval.jsonl"));
        outputs = {ctx.path("corpus_train.jsonl"), ctx.path("corpus_eval.jsonl")};
    });
}

inline void stage_sft(const StageContext& ctx) {
    const auto& cfg = ctx.config;
    detail::run_stage(ctx, Stage::sft, cfg.sft.seed, {ctx.path("corpus_train.jsonl")},
                      [&](std::vector<std::filesystem::path>& outputs) {
        const auto train = read_jsonl<PromptRecord>(ctx.path("corpus_train.jsonl"));
        const auto& vocab = Vocab::toy();
        auto params = init_params(cfg.dims(), derive_seed(cfg.sft.seed, 0));
        SftConfig sc{cfg.sft.epochs, cfg.sft.batch_size, cfg.sft.learning_rate,
                     derive_seed(cfg.sft.seed, 1), optimizer_from_name(cfg.sft.optimizer)};
        auto result = sft_train(params, tokenize_pairs(train, vocab), sc);
        save_checkpoint(result.params, ctx.path("sft_model.json"),
                        {cfg.root_seed, cfg.sft.seed});

        std::string csv = "epoch,mean_loss\n";
        for (size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
            csv += detail::csv_join({std::to_string(e + 1), num_str(result.epoch_mean_loss[e])});
        write_text_file(ctx.path("sft_loss.csv"), csv);
        outputs = {ctx.path("sft_model.json"), ctx.path("sft_loss.csv")};
    });
}

inline void stage_sample(const StageContext& ctx) {
    const auto& cfg = ctx.config;
    detail::run_stage(ctx, Stage::sample, cfg.sample.seed,
                      {ctx.path("corpus_train.jsonl"), ctx.path("sft_model.json")},
                      [&](std::vector<std::filesystem::path>& outputs) {
        const auto train = read_jsonl<PromptRecord>(ctx.path("corpus_train.jsonl"));
        const auto model = load_checkpoint(ctx.path("sft_model.json")).params;
        const auto& vocab = Vocab::toy();
        const int max_len = ctx.config.sample_max_len();

        std::vector<ResponseSet> sets;
        sets.reserve(train.size());
        for (size_t i = 0; i < train.size(); ++i) {
            const auto prompt_ids = vocab.tokenize(train[i].prompt);
            const uint64_t prompt_seed = derive_seed(cfg.sample.seed, i);
            ResponseSet rs{train[i].id, {}, cfg.sample.temperature, cfg.sample.top_p,
                           prompt_seed};
            rs.responses.reserve(static_cast<size_t>(cfg.sample.responses_per_prompt));
            for (int r = 0; r < cfg.sample.responses_per_prompt; ++r) {
                const auto ids =
                    sample(model, prompt_ids, cfg.sample.temperature, cfg.sample.top_p, max_len,
                           derive_seed(prompt_seed, static_cast<uint64_t>(r)));
                rs.responses.push_back(vocab.detokenize(ids));
            }
            sets.push_back(std::move(rs));
        }
        write_jsonl(sets, ctx.path("responses.jsonl"));
        outputs = {ctx.path("responses.jsonl")};
    });
}

inline std::string preferences_file(int m) { return "preferences_m" + std::to_string(m) + ".jsonl"; }
inline std::string dpo_model_file(int m) { return "dpo_model_m" + std::to_string(m) + ".json"; }

inline void stage_filter(const StageContext& ctx) {
    const auto& cfg = ctx.config;
    detail::run_stage(ctx, Stage::filter, cfg.filter.seed,
                      {ctx.path("corpus_train.jsonl"), ctx.path("responses.jsonl")},
                      [&](std::vector<std::filesystem::path>& outputs) {
        const auto train = read_jsonl<PromptRecord>(ctx.path("corpus_train.jsonl"));
        const auto sets = read_jsonl<ResponseSet>(ctx.path("responses.jsonl"));

        EmbedderSpec espec = cfg.filter.embedder;
        if (espec.kind == EmbedderSpec::Kind::http)
            if (const char* env = std::getenv("SELFCONTRAST_EMBED_URL"); env && *env)
                espec.endpoint = env;
        auto embedder = make_embedder(espec);

        for (size_t mi = 0; mi < cfg.filter.m_list.size(); ++mi) {
            const int m = cfg.filter.m_list[mi];
            FilterConfig fc{cfg.filter.a_percent, m, cfg.sample.responses_per_prompt,
                            derive_seed(cfg.filter.seed, mi)};
            auto built = build_preference_dataset(train, sets, *embedder, fc);
            for (const auto& skip : built.skipped)
                std::cerr << "[filter m=" << m << "] skipped prompt " << skip.id << ": "
                          << skip.reason << "\n";
            if (!built.short_of_m_ids.empty())
                std::cerr << "[filter m=" << m << "] " << built.short_of_m_ids.size()
                          << " prompts had fewer than m distinct negatives\n";

            write_jsonl(built.records, ctx.path(preferences_file(m)));
            std::string diag = "id,rank,similarity,selected\n";
            for (const auto& row : built.diagnostics)
                diag += detail::csv_join({row.id, std::to_string(row.rank),
                                          num_str(row.similarity),
                                          row.selected ? "1" : "0"});
            write_text_file(ctx.path("filter_diag_m" + std::to_string(m) + ".csv"), diag);
            std::string skipped = "id,reason\n";
            for (const auto& skip : built.skipped)
                skipped += detail::csv_join({skip.id, "\"" + skip.reason + "\""});
            write_text_file(ctx.path("filter_skipped_m" + std::to_string(m) + ".csv"), skipped);
            outputs.push_back(ctx.path(preferences_file(m)));
            outputs.push_back(ctx.path("filter_diag_m" + std::to_string(m) + ".csv"));
            outputs.push_back(ctx.path("filter_skipped_m" + std::to_string(m) + ".csv"));
        }
    });
}

inline void stage_train_dpo(const StageContext& ctx) {
    const auto& cfg = ctx.config;
    std::vector<std::filesystem::path> inputs = {ctx.path("sft_model.json")};
    for (int m : cfg.filter.m_list) inputs.push_back(ctx.path(preferences_file(m)));
    detail::run_stage(ctx, Stage::train_dpo, cfg.dpo.seed, inputs,
                      [&](std::vector<std::filesystem::path>& outputs) {
        const auto sft = load_checkpoint(ctx.path("sft_model.json")).params;
        const auto& vocab = Vocab::toy();
        for (size_t mi = 0; mi < cfg.filter.m_list.size(); ++mi) {
            const int m = cfg.filter.m_list[mi];
            const auto prefs = read_jsonl<PreferenceRecord>(ctx.path(preferences_file(m)));
            DpoConfig dc{cfg.dpo.beta,          cfg.dpo.learning_rate,
                         cfg.dpo.epochs,        cfg.dpo.batch_prompts,
                         derive_seed(cfg.dpo.seed, mi), optimizer_from_name(cfg.dpo.optimizer)};
            auto result = dpo_train(sft, prefs, vocab, dc);
            save_checkpoint(result.params, ctx.path(dpo_model_file(m)),
                            {cfg.root_seed, cfg.dpo.seed, static_cast<uint64_t>(m)});
            std::string csv = "epoch,step,mean_loss,mean_margin\n";
            for (const auto& row : result.trace)
                csv += detail::csv_join({std::to_string(row.epoch), std::to_string(row.step),
                                         num_str(row.mean_loss), num_str(row.mean_margin)});
            write_text_file(ctx.path("dpo_loss_m" + std::to_string(m) + ".csv"), csv);
            outputs.push_back(ctx.path(dpo_model_file(m)));
            outputs.push_back(ctx.path("dpo_loss_m" + std::to_string(m) + ".csv"));
        }
    });
}

namespace detail {

inline void write_eval_report(const EvalReport& report, const std::filesystem::path& json_path,
                              const std::filesystem::path& csv_path) {
    ojson j{{"win_rate", report.win_rate},
            {"avg_reward", report.avg_reward},
            {"n_eval", report.n_eval}};
    write_text_file(json_path, j.dump(2) + "\n");
    std::string csv = "id,reward_target,reward_response,win\n";
    for (const auto& row : report.rows)
        csv += csv_join({row.id, num_str(row.reward_target), num_str(row.reward_response),
                         num_str(row.win)});
    write_text_file(csv_path, csv);
}

}  // namespace detail

inline void stage_eval(const StageContext& ctx) {
    const auto& cfg = ctx.config;
    std::vector<std::filesystem::path> inputs = {ctx.path("corpus_train.jsonl"),
                                                 ctx.path("corpus_eval.jsonl"),
                                                 ctx.path("sft_model.json"),
                                                 ctx.path("responses.jsonl")};
    for (int m : cfg.filter.m_list) {
        inputs.push_back(ctx.path(preferences_file(m)));
        inputs.push_back(ctx.path(dpo_model_file(m)));
    }
    detail::run_stage(ctx, Stage::eval, cfg.eval.seed, inputs,
                      [&](std::vector<std::filesystem::path>& outputs) {
        const auto eval_set = read_jsonl<PromptRecord>(ctx.path("corpus_eval.jsonl"));
        const auto train = read_jsonl<PromptRecord>(ctx.path("corpus_train.jsonl"));
        const auto sets = read_jsonl<ResponseSet>(ctx.path("responses.jsonl"));
        const auto sft = load_checkpoint(ctx.path("sft_model.json")).params;
        const auto& vocab = Vocab::toy();
        const auto& task = cfg.corpus.task;
        const int max_len = cfg.sample_max_len();

        const auto sft_report =
            win_rate(sft, vocab, eval_set, task, cfg.eval.samples_per_prompt,
                     cfg.eval.temperature, cfg.eval.top_p, derive_seed(cfg.eval.seed, 0),
                     max_len);
        detail::write_eval_report(sft_report, ctx.path("eval_sft.json"),
                                  ctx.path("eval_sft.csv"));
        outputs.push_back(ctx.path("eval_sft.json"));
        outputs.push_back(ctx.path("eval_sft.csv"));

        ojson summary{{"tool_version", kToolVersion},
                      {"config_hash", ctx.config_hash},
                      {"task", task_kind_name(task.kind)},
                      {"n_train", train.size()},
                      {"n_eval", eval_set.size()},
                      {"sft", ojson{{"win_rate", sft_report.win_rate},
                                    {"avg_reward", sft_report.avg_reward}}}};
        ojson variants = ojson::array();

        for (size_t mi = 0; mi < cfg.filter.m_list.size(); ++mi) {
            const int m = cfg.filter.m_list[mi];
            const auto prefs = read_jsonl<PreferenceRecord>(ctx.path(preferences_file(m)));
            const auto aligned = load_checkpoint(ctx.path(dpo_model_file(m))).params;
            const auto report =
                win_rate(aligned, vocab, eval_set, task, cfg.eval.samples_per_prompt,
                         cfg.eval.temperature, cfg.eval.top_p,
                         derive_seed(cfg.eval.seed, 1 + mi), max_len);
            const std::string tag = std::to_string(m);
            detail::write_eval_report(report, ctx.path("eval_dpo_m" + tag + ".json"),
                                      ctx.path("eval_dpo_m" + tag + ".csv"));
            outputs.push_back(ctx.path("eval_dpo_m" + tag + ".json"));
            outputs.push_back(ctx.path("eval_dpo_m" + tag + ".csv"));

            const double accuracy = data_accuracy(prefs, task);
            const auto reference = build_oracle_reference_dataset(
                train, sets, task, m, derive_seed(cfg.eval.seed, 100 + mi));
            double kl = std::numeric_limits<double>::quiet_NaN();
            if (!reference.empty()) {
                try {
                    kl = negative_reward_kl(prefs, reference, task, cfg.eval.bins);
                } catch (const std::exception& e) {
                    std::cerr << "[eval m=" << m << "] negative_reward_kl unavailable: "
                              << e.what() << "\n";
                }
            }
            ojson row{{"m", m},
                      {"win_rate", report.win_rate},
                      {"avg_reward", report.avg_reward},
                      {"data_accuracy", accuracy},
                      {"n_records", prefs.size()}};
            if (std::isfinite(kl)) row["negative_reward_kl"] = kl;
            variants.push_back(row);
        }
        summary["self_contrast"] = variants;
        write_text_file(ctx.path("summary.json"), summary.dump(2) + "\n");
        outputs.push_back(ctx.path("summary.json"));
    });
}

inline void stage_simulate_theorem(const StageContext& ctx) {
    const auto& cfg = ctx.config;
    detail::run_stage(ctx, Stage::theorem, cfg.theorem.seed, {},
                      [&](std::vector<std::filesystem::path>& outputs) {
        std::string csv =
            "sigma1,sigma2,rho,lambda,l,m,var_pair_closed,var_neg_closed,mse_pair_mc,"
            "mse_neg_mc,validity\n";
        size_t row = 0;
        for (double s1 : cfg.theorem.sigma1)
            for (double s2 : cfg.theorem.sigma2)
                for (double rho : cfg.theorem.rho)
                    for (size_t li = 0; li < cfg.theorem.l.size(); ++li) {
                        const long long l = cfg.theorem.l[li];
                        GradientModel model{0.0, 0.0, s1, s2, rho};
                        double lambda;
                        try {
                            lambda = lambda_of(model);
                        } catch (const std::exception&) {
                            csv += detail::csv_join({num_str(s1), num_str(s2), num_str(rho), "",
                                                     std::to_string(l), "", "", "", "", "",
                                                     "degenerate-model"});
                            continue;
                        }
                        long long m = 0;
                        if (li < cfg.theorem.m.size()) {
                            m = cfg.theorem.m[li];
                        } else {
                            try {
                                m = min_negatives(lambda, l);
                            } catch (const std::exception&) {
                                csv += detail::csv_join(
                                    {num_str(s1), num_str(s2), num_str(rho), num_str(lambda),
                                     std::to_string(l), "", num_str(var_multipair(model, l)), "",
                                     "", "", "no-solution"});
                                continue;
                            }
                        }
                        SimConfig sim{l, m, cfg.theorem.trials,
                                      derive_seed(cfg.theorem.seed, row++)};
                        const auto res = simulate_mse(model, sim);
                        csv += detail::csv_join(
                            {num_str(s1), num_str(s2), num_str(rho), num_str(lambda),
                             std::to_string(l), std::to_string(m),
                             num_str(var_multipair(model, l)), num_str(var_multineg(model, m)),
                             num_str(res.mse_multipair),
                             res.sampling_valid ? num_str(res.mse_multineg) : "",
                             res.sampling_valid ? "valid" : "invalid"});
                    }
        write_text_file(ctx.path("theorem.csv"), csv);
        outputs = {ctx.path("theorem.csv")};
    });
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

inline std::vector<std::string> pipeline_plan(const RunConfig& cfg) {
    std::vector<std::string> plan = {"gen-corpus", "sft", "sample", "filter"};
    std::string ms;
    for (size_t i = 0; i < cfg.filter.m_list.size(); ++i)
        ms += (i ? "," : "") + std::to_string(cfg.filter.m_list[i]);
    plan.back() += " (a%=" + num_str(cfg.filter.a_percent) + ", m={" + ms + "})";
    plan.push_back("train-dpo (m={" + ms + "})");
    plan.push_back("eval");
    return plan;
}

/// gen-corpus -> sft -> sample -> filter -> train-dpo -> eval; writes
/// summary.json and the manifest. Returns the parsed summary.
inline ojson run_pipeline(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    const auto ctx = make_stage_context(cfg, run_dir);
    stage_gen_corpus(ctx);
    stage_sft(ctx);
    stage_sample(ctx);
    stage_filter(ctx);
    stage_train_dpo(ctx);
    stage_eval(ctx);
    return ojson::parse(read_text_file(ctx.path("summary.json")));
}

inline void run_stage_by_name(const StageContext& ctx, const std::string& name) {
    if (name == "gen-corpus") return stage_gen_corpus(ctx);
    if (name == "sft") return stage_sft(ctx);
    if (name == "sample") return stage_sample(ctx);
    if (name == "filter") return stage_filter(ctx);
    if (name == "train-dpo") return stage_train_dpo(ctx);
    if (name == "eval") return stage_eval(ctx);
    if (name == "simulate-theorem") return stage_simulate_theorem(ctx);
    throw ConfigError("unknown stage: " + name);
}

/// Toy analogue of the negatives-vs-more-pairs comparison: Self-Contrast
/// rows train on m filtered negatives per prompt (fixed positives); dpo-std
/// rows train on l oracle-labeled 1:1 pairs per prompt, each pair built from
/// two fresh samples with the higher-reward one chosen (reward ties are
/// resampled, then skipped).
inline void run_compare_negatives(const RunConfig& base, const std::filesystem::path& run_dir,
                                  const std::vector<int>& m_list,
                                  const std::vector<int>& pair_list) {
    if (m_list.empty() && pair_list.empty())
        throw ConfigError("compare-negatives: need at least one of m_list / pair_list");

    RunConfig cfg = base;
    cfg.filter.m_list = m_list.empty() ? std::vector<int>{1} : m_list;
    const auto ctx = make_stage_context(cfg, run_dir);
    stage_gen_corpus(ctx);
    stage_sft(ctx);
    stage_sample(ctx);
    if (!m_list.empty()) {
        stage_filter(ctx);
        stage_train_dpo(ctx);
    }

    const auto train = read_jsonl<PromptRecord>(ctx.path("corpus_train.jsonl"));
    const auto eval_set = read_jsonl<PromptRecord>(ctx.path("corpus_eval.jsonl"));
    const auto sft = load_checkpoint(ctx.path("sft_model.json")).params;
    const auto& vocab = Vocab::toy();
    const auto& task = cfg.corpus.task;
    const int max_len = cfg.sample_max_len();
    const uint64_t cmp_seed = derive_seed(cfg.root_seed, static_cast<uint64_t>(Stage::compare));

    const std::string started = detail::utc_now_iso8601();
    std::string csv = "kind,count,win_rate,avg_reward\n";
    std::vector<std::filesystem::path> outputs;

    for (size_t mi = 0; mi < (m_list.empty() ? size_t{0} : cfg.filter.m_list.size()); ++mi) {
        const int m = cfg.filter.m_list[mi];
        const auto aligned = load_checkpoint(ctx.path(dpo_model_file(m))).params;
        const auto report = win_rate(aligned, vocab, eval_set, task, cfg.eval.samples_per_prompt,
                                     cfg.eval.temperature, cfg.eval.top_p,
                                     derive_seed(cfg.eval.seed, 1 + mi), max_len);
        csv += detail::csv_join({"self-contrast", std::to_string(m), num_str(report.win_rate),
                                 num_str(report.avg_reward)});
    }

    for (size_t pi = 0; pi < pair_list.size(); ++pi) {
        const int l = pair_list[pi];
        if (l < 1) throw ConfigError("compare-negatives: pair counts must be >= 1");
        std::vector<PreferenceRecord> pairs;
        for (size_t ti = 0; ti < train.size(); ++ti) {
            const auto prompt_ids = vocab.tokenize(train[ti].prompt);
            for (int k = 0; k < l; ++k) {
                const uint64_t pair_seed =
                    derive_seed(cmp_seed, (pi * train.size() + ti) * 64 +
                                              static_cast<uint64_t>(k));
                for (int attempt = 0; attempt < 8; ++attempt) {
                    const auto a = vocab.detokenize(
                        sample(sft, prompt_ids, cfg.sample.temperature, cfg.sample.top_p,
                               max_len, derive_seed(pair_seed, 2 * attempt)));
                    const auto b = vocab.detokenize(
                        sample(sft, prompt_ids, cfg.sample.temperature, cfg.sample.top_p,
                               max_len, derive_seed(pair_seed, 2 * attempt + 1)));
                    const double ra = oracle_reward(task, train[ti].prompt, a);
                    const double rb = oracle_reward(task, train[ti].prompt, b);
                    if (ra == rb) continue;
                    pairs.push_back({train[ti].id + "-pair" + std::to_string(k),
                                     train[ti].prompt, ra > rb ? a : b,
                                     {ra > rb ? b : a}});
                    break;
                }
            }
        }
        if (pairs.empty())
            throw StageError("compare-negatives: no oracle-labeled pairs could be built");
        DpoConfig dc{cfg.dpo.beta,          cfg.dpo.learning_rate,
                     cfg.dpo.epochs,        cfg.dpo.batch_prompts,
                     derive_seed(cmp_seed, 1000 + pi), optimizer_from_name(cfg.dpo.optimizer)};
        auto result = dpo_train(sft, pairs, vocab, dc);
        const auto report = win_rate(result.params, vocab, eval_set, task,
                                     cfg.eval.samples_per_prompt, cfg.eval.temperature,
                                     cfg.eval.top_p, derive_seed(cmp_seed, 2000 + pi), max_len);
        csv += detail::csv_join({"dpo-std", std::to_string(l), num_str(report.win_rate),
                                 num_str(report.avg_reward)});
    }

    write_text_file(ctx.path("compare_negatives.csv"), csv);
    Manifest(ctx.run_dir, ctx.config_hash)
        .record_stage(stage_name(Stage::compare), cmp_seed, {}, {ctx.path("compare_negatives.csv")},
                      started, ctx.run_dir);
}

}  // namespace selfcontrast
