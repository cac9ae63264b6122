#pragma once

// Text embeddings for negative filtering. The default is a deterministic
// hashed character-n-gram embedder; a file-backed lookup and an HTTP client
// (embed_http.hpp) let a real pre-trained model be plugged in behind the
// same interface.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "selfcontrast/common.hpp"
#include "selfcontrast/rng.hpp"

namespace selfcontrast {

using EmbeddingVector = std::vector<double>;

struct EmbedderSpec {
    enum class Kind { hashed_ngram, file, http };

    Kind kind = Kind::hashed_ngram;
    int dim = 256;
    int ngram = 3;           // hashed-ngram only
    uint64_t seed = 0;       // hashed-ngram only
    std::string path;        // file only
    std::string endpoint;    // http only, e.g. http://127.0.0.1:8089
    int batch_size = 64;     // http only
    int retries = 3;         // http only
    int backoff_ms = 100;    // http only, doubles per retry

    // exactly one kind's parameters may be populated
    void validate() const {
        if (dim < 1) throw std::invalid_argument("embedder dim must be >= 1");
        switch (kind) {
            case Kind::hashed_ngram:
                if (ngram < 1) throw std::invalid_argument("embedder ngram must be >= 1");
                if (!path.empty() || !endpoint.empty())
                    throw std::invalid_argument(
                        "hashed-ngram embedder takes neither path nor endpoint");
                break;
            case Kind::file:
                if (path.empty()) throw std::invalid_argument("file embedder needs a path");
                if (!endpoint.empty())
                    throw std::invalid_argument("file embedder takes no endpoint");
                break;
            case Kind::http:
                if (endpoint.empty()) throw std::invalid_argument("http embedder needs an endpoint");
                if (!path.empty()) throw std::invalid_argument("http embedder takes no path");
                if (batch_size < 1) throw std::invalid_argument("embedder batch_size must be >= 1");
                break;
        }
    }
};

/// Seeded hashed n-grams: the text is wrapped in boundary markers, each
/// character n-gram is hashed into one of `dim` signed buckets, and the
/// result is L2-normalized. Deterministic and dependency-free.
inline EmbeddingVector embed_hashed_ngram(std::string_view text, const EmbedderSpec& spec) {
    if (text.empty())
        throw std::invalid_argument("cannot embed empty text (zero vector has no cosine)");
    const auto dim = static_cast<size_t>(spec.dim);
    const auto n = static_cast<size_t>(spec.ngram);

    std::string padded;
    padded.reserve(text.size() + 2);
    padded.push_back('^');
    padded.append(text);
    padded.push_back('$');

    EmbeddingVector v(dim, 0.0);
    const size_t grams = padded.size() > n ? padded.size() - n + 1 : 1;
    const size_t width = std::min(n, padded.size());
    for (size_t i = 0; i < grams; ++i) {
        const uint64_t h =
            splitmix64_finalize(fnv1a64(std::string_view(padded).substr(i, width)) ^ spec.seed);
        const size_t bucket = h % dim;
        v[bucket] += (h >> 63) ? -1.0 : 1.0;
    }

    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 == 0.0)
        throw std::runtime_error("degenerate hashed-ngram embedding (all buckets cancelled)");
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

/// dot(u,v) / (|u||v|), clamped to [-1, 1]. Bitwise-identical (or negated)
/// inputs short-circuit to exactly +/-1.
inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine: dimension mismatch " + std::to_string(u.size()) +
                                    " vs " + std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    bool same = true, negated = true;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
        same = same && u[i] == v[i];
        negated = negated && u[i] == -v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine: zero vector");
    if (same) return 1.0;
    if (negated) return -1.0;
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
    virtual int dim() const = 0;
};

class HashedNgramEmbedder final : public Embedder {
public:
    explicit HashedNgramEmbedder(EmbedderSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_hashed_ngram(t, spec_));
        return out;
    }

    int dim() const override { return spec_.dim; }

private:
    EmbedderSpec spec_;
};

/// Lookup table loaded from JSONL lines {"text":..., "embedding":[...]}.
class FileEmbedder final : public Embedder {
public:
    explicit FileEmbedder(const EmbedderSpec& spec) : dim_(spec.dim) {
        std::ifstream in(spec.path, std::ios::binary);
        if (!in) throw std::runtime_error("file embedder: cannot open " + spec.path);
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const std::exception& e) {
                throw std::runtime_error(spec.path + ":" + std::to_string(lineno) +
                                         ": malformed JSON: " + e.what());
            }
            if (!j.contains("text") || !j.contains("embedding"))
                throw std::runtime_error(spec.path + ":" + std::to_string(lineno) +
                                         ": expected keys \"text\" and \"embedding\"");
            auto vec = j["embedding"].get<EmbeddingVector>();
            if (static_cast<int>(vec.size()) != dim_)
                throw std::runtime_error(spec.path + ":" + std::to_string(lineno) +
                                         ": embedding dimension " + std::to_string(vec.size()) +
                                         " != configured " + std::to_string(dim_));
            table_[j["text"].get<std::string>()] = std::move(vec);
        }
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            auto it = table_.find(t);
            if (it == table_.end())
                throw std::runtime_error("file embedder: no embedding for text \"" + t + "\"");
            out.push_back(it->second);
        }
        return out;
    }

    int dim() const override { return dim_; }

private:
    std::unordered_map<std::string, EmbeddingVector> table_;
    int dim_ = 0;
};

/// Local kinds only; embed_http.hpp layers the http kind on top.
inline std::unique_ptr<Embedder> make_local_embedder(const EmbedderSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case EmbedderSpec::Kind::hashed_ngram:
            return std::make_unique<HashedNgramEmbedder>(spec);
        case EmbedderSpec::Kind::file:
            return std::make_unique<FileEmbedder>(spec);
        case EmbedderSpec::Kind::http:
            throw std::invalid_argument("http embedder requires make_embedder (embed_http.hpp)");
    }
    throw std::logic_error("unreachable embedder kind");
}

}  // namespace selfcontrast
