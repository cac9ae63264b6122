// Loopback embedding stub: serves the hashed-ngram embedder over the HTTP
// protocol the remote client speaks (POST /embed {"texts":[...]} ->
// {"embeddings":[[...],...]}). Point SELFCONTRAST_EMBED_URL or
// filter.embedder.endpoint at it to exercise the http path end to end.

#include <csignal>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "selfcontrast/embed.hpp"

int main(int argc, char** argv) {
    CLI::App app{"hashed-ngram embedding stub server"};
    int port = 8089;
    selfcontrast::EmbedderSpec spec;
    app.add_option("--port", port, "listen port (0 picks a free one)");
    app.add_option("--dim", spec.dim, "embedding dimension");
    app.add_option("--ngram", spec.ngram, "character n-gram order");
    app.add_option("--seed", spec.seed, "hash seed");
    CLI11_PARSE(app, argc, argv);

    httplib::Server server;
    server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto body = nlohmann::json::parse(req.body);
            const auto texts = body.at("texts").get<std::vector<std::string>>();
            nlohmann::json reply;
            reply["embeddings"] = nlohmann::json::array();
            for (const auto& t : texts)
                reply["embeddings"].push_back(selfcontrast::embed_hashed_ngram(t, spec));
            res.set_content(reply.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        }
    });

    if (port == 0) {
        port = server.bind_to_any_port("127.0.0.1");
        std::cout << "listening on http://127.0.0.1:" << port << "\n" << std::flush;
        return server.listen_after_bind() ? 0 : 1;
    }
    std::cout << "listening on http://127.0.0.1:" << port << "\n" << std::flush;
    return server.listen("127.0.0.1", port) ? 0 : 1;
}
