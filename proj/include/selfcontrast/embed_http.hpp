#pragma once

// HTTP embedding client: POST {"texts":[...]} to <endpoint>/embed and read
// back {"embeddings":[[...],...]}, order-preserving. Lets a real pre-trained
// embedding model stand behind the Embedder interface.

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "selfcontrast/embed.hpp"

namespace selfcontrast {

namespace detail {

struct ParsedUrl {
    std::string scheme_host_port;  // what httplib::Client wants
};

inline ParsedUrl parse_endpoint(const std::string& endpoint) {
    if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0)
        throw std::invalid_argument("embedder endpoint must start with http:// or https://: " +
                                    endpoint);
    // Strip any trailing path; the protocol uses the fixed path /embed.
    const size_t scheme_end = endpoint.find("://") + 3;
    const size_t path = endpoint.find('/', scheme_end);
    return {path == std::string::npos ? endpoint : endpoint.substr(0, path)};
}

}  // namespace detail

/// One batched request with bounded retries. Throws on transport errors,
/// non-200 statuses, malformed bodies, and count/dimension mismatches; all
/// errors name the failing batch.
inline std::vector<EmbeddingVector> embed_remote(const std::vector<std::string>& texts,
                                                 const EmbedderSpec& spec) {
    spec.validate();
    if (spec.kind != EmbedderSpec::Kind::http)
        throw std::invalid_argument("embed_remote requires an http embedder spec");
    if (texts.empty()) return {};

    const auto url = detail::parse_endpoint(spec.endpoint);
    httplib::Client client(url.scheme_host_port);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(30, 0);

    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    const auto batch_size = static_cast<size_t>(spec.batch_size);
    size_t batch_index = 0;
    for (size_t begin = 0; begin < texts.size(); begin += batch_size, ++batch_index) {
        const size_t end = std::min(texts.size(), begin + batch_size);
        const nlohmann::json body{
            {"texts", std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                               texts.begin() + static_cast<std::ptrdiff_t>(end))}};
        const std::string payload = body.dump();

        httplib::Result res;
        std::string transport_error;
        int backoff = spec.backoff_ms;
        for (int attempt = 0; attempt <= spec.retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
            res = client.Post("/embed", payload, "application/json");
            if (res && res->status == 200) break;
            transport_error = res ? "HTTP status " + std::to_string(res->status)
                                  : "transport error: " + httplib::to_string(res.error());
        }
        if (!res || res->status != 200)
            throw std::runtime_error("embed_remote: batch " + std::to_string(batch_index) +
                                     " failed after " + std::to_string(spec.retries + 1) +
                                     " attempts: " + transport_error);

        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const std::exception& e) {
            throw std::runtime_error("embed_remote: batch " + std::to_string(batch_index) +
                                     ": malformed response JSON: " + e.what());
        }
        if (!reply.contains("embeddings") || !reply["embeddings"].is_array())
            throw std::runtime_error("embed_remote: batch " + std::to_string(batch_index) +
                                     ": response missing \"embeddings\" array");
        const auto& arr = reply["embeddings"];
        if (arr.size() != end - begin)
            throw std::runtime_error("embed_remote: batch " + std::to_string(batch_index) +
                                     ": sent " + std::to_string(end - begin) +
                                     " texts but received " + std::to_string(arr.size()) +
                                     " embeddings");
        for (const auto& item : arr) {
            auto vec = item.get<EmbeddingVector>();
            if (static_cast<int>(vec.size()) != spec.dim)
                throw std::runtime_error("embed_remote: batch " + std::to_string(batch_index) +
                                         ": embedding dimension " + std::to_string(vec.size()) +
                                         " != configured " + std::to_string(spec.dim));
            out.push_back(std::move(vec));
        }
    }
    return out;
}

class HttpEmbedder final : public Embedder {
public:
    explicit HttpEmbedder(EmbedderSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        return embed_remote(texts, spec_);
    }

    int dim() const override { return spec_.dim; }

private:
    EmbedderSpec spec_;
};

/// All kinds, http included.
inline std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
    if (spec.kind == EmbedderSpec::Kind::http) return std::make_unique<HttpEmbedder>(spec);
    return make_local_embedder(spec);
}

}  // namespace selfcontrast
