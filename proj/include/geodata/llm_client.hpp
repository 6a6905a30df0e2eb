#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "geodata/digest.hpp"
#include "geodata/errors.hpp"
#include "geodata/http_transport.hpp"
#include "geodata/prompting.hpp"

// Chat-completion client with three transports: live POSTs to a configurable
// endpoint, record does the same while writing every exchange to a cassette
// file, replay serves recorded replies keyed by prompt digest and performs no
// network activity at all. Cassettes make entire agent sessions replayable.

namespace geodata {

enum class Transport { live, record, replay };

struct ModelConfig {
    std::string endpoint;      // e.g. https://host/v1/chat/completions
    std::string model_name;
    double temperature = 0.0;
    int max_reply_tokens = 4096;
    int timeout_s = 120;
    Transport transport = Transport::live;
    std::filesystem::path cassette_path; // required for record/replay
    std::string api_key;                 // optional bearer token, never logged
};

struct ChatExchange {
    std::string prompt_digest;
    std::string prompt_text;
    std::string reply_text;
    double latency_s = 0.0;
    size_t sequence_index = 0;
};

// ---------------------------------------------------------------------------
// Cassette file

class Cassette {
  public:
    const std::vector<ChatExchange>& exchanges() const { return exchanges_; }
    const std::string& algorithm() const { return algorithm_; }

    void append(ChatExchange exchange) {
        exchange.sequence_index = exchanges_.size();
        exchanges_.push_back(std::move(exchange));
    }

    // Format (byte counts frame the payloads, so any content is safe):
    //   # geodata cassette v1
    //   algorithm: sha256
    //
    //   @exchange <seq>
    //   digest: <hex>
    //   latency_s: <seconds>
    //   prompt_bytes: <n>
    //   <exactly n bytes>
    //   reply_bytes: <m>
    //   <exactly m bytes>
    //   @end
    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write cassette " + path.string());
        out << "# geodata cassette v1\n";
        out << "algorithm: " << algorithm_ << "\n\n";
        for (const auto& e : exchanges_) {
            out << "@exchange " << e.sequence_index << "\n";
            out << "digest: " << e.prompt_digest << "\n";
            out << "latency_s: " << e.latency_s << "\n";
            out << "prompt_bytes: " << e.prompt_text.size() << "\n";
            out.write(e.prompt_text.data(), static_cast<std::streamsize>(e.prompt_text.size()));
            out << "\nreply_bytes: " << e.reply_text.size() << "\n";
            out.write(e.reply_text.data(), static_cast<std::streamsize>(e.reply_text.size()));
            out << "\n@end\n\n";
        }
    }

    static Cassette load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read cassette " + path.string());
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return parse(buffer.str(), path.string());
    }

    static Cassette parse(const std::string& text, const std::string& origin = "<memory>") {
        Cassette cassette;
        size_t pos = 0;
        auto fail = [&](const std::string& why) {
            throw MalformedCassette(origin + ": " + why);
        };
        auto next_line = [&]() -> std::string {
            size_t end = text.find('\n', pos);
            if (end == std::string::npos) end = text.size();
            std::string line = text.substr(pos, end - pos);
            pos = end < text.size() ? end + 1 : text.size();
            return line;
        };
        if (next_line() != "# geodata cassette v1") fail("missing cassette header");
        std::string algo_line = next_line();
        if (algo_line.rfind("algorithm: ", 0) != 0) fail("missing algorithm line");
        cassette.algorithm_ = algo_line.substr(11);
        while (pos < text.size()) {
            std::string line = next_line();
            if (line.empty()) continue;
            if (line.rfind("@exchange", 0) != 0) fail("expected @exchange, got '" + line + "'");
            ChatExchange e;
            e.sequence_index = cassette.exchanges_.size();
            std::string digest_line = next_line();
            if (digest_line.rfind("digest: ", 0) != 0) fail("missing digest");
            e.prompt_digest = digest_line.substr(8);
            std::string latency_line = next_line();
            if (latency_line.rfind("latency_s: ", 0) != 0) fail("missing latency");
            e.latency_s = std::stod(latency_line.substr(11));
            auto read_block = [&](const char* field) -> std::string {
                std::string header = next_line();
                std::string prefix = std::string(field) + ": ";
                if (header.rfind(prefix, 0) != 0) fail("missing " + std::string(field));
                size_t n = std::stoull(header.substr(prefix.size()));
                if (pos + n > text.size()) fail("truncated payload");
                std::string payload = text.substr(pos, n);
                pos += n;
                if (pos < text.size() && text[pos] == '\n') ++pos; // frame newline
                return payload;
            };
            e.prompt_text = read_block("prompt_bytes");
            e.reply_text = read_block("reply_bytes");
            if (next_line() != "@end") fail("missing @end");
            cassette.exchanges_.push_back(std::move(e));
        }
        return cassette;
    }

  private:
    std::string algorithm_ = kDigestAlgorithm;
    std::vector<ChatExchange> exchanges_;
};

// ---------------------------------------------------------------------------
// Client

class CompletionClient {
  public:
    virtual ~CompletionClient() = default;
    virtual std::string complete(const RenderedPrompt& prompt) = 0;
};

// Status/body handling for the chat-completion wire format, separated out so
// the error taxonomy is testable without a server.
inline std::string parse_completion_response(int status, const std::string& body,
                                             const std::string& retry_after = "") {
    if (status == 429) {
        throw RateLimited(retry_after.empty() ? "rate limited"
                                              : "rate limited, retry after " + retry_after);
    }
    if (status != 200) {
        throw TransportError("completion endpoint returned HTTP " + std::to_string(status));
    }
    nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty()) {
        throw TransportError("malformed completion response body");
    }
    const auto& first = doc["choices"][0];
    std::string content;
    if (first.contains("message") && first["message"].contains("content") &&
        first["message"]["content"].is_string()) {
        content = first["message"]["content"].get<std::string>();
    }
    if (content.empty()) throw EmptyReply("completion reply has no content");
    return content;
}

class LlmClient : public CompletionClient {
  public:
    explicit LlmClient(ModelConfig config) : config_(std::move(config)) {
        if (config_.transport != Transport::live && config_.cassette_path.empty()) {
            throw Error("record/replay transport requires a cassette path");
        }
        if (config_.transport == Transport::replay) {
            cassette_ = Cassette::load(config_.cassette_path);
            consumed_.assign(cassette_.exchanges().size(), false);
        }
    }

    std::string complete(const RenderedPrompt& prompt) override {
        if (prompt.full_text.empty()) throw Error("refusing to send an empty prompt");
        switch (config_.transport) {
        case Transport::replay:
            return replay(prompt.full_text);
        case Transport::record: {
            auto start = std::chrono::steady_clock::now();
            std::string reply = perform_live(prompt.full_text);
            std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
            std::lock_guard<std::mutex> lock(mutex_);
            ChatExchange e;
            e.prompt_digest = canonical_digest(prompt.full_text);
            e.prompt_text = prompt.full_text;
            e.reply_text = reply;
            e.latency_s = elapsed.count();
            cassette_.append(std::move(e));
            cassette_.save(config_.cassette_path);
            return reply;
        }
        default:
            return perform_live(prompt.full_text);
        }
    }

    const Cassette& cassette() const { return cassette_; }

  protected:
    // Overridable wire call; tests substitute a scripted backend.
    virtual std::string perform_live(const std::string& prompt_text) {
        nlohmann::json payload = {
            {"model", config_.model_name},
            {"messages", nlohmann::json::array(
                             {{{"role", "user"}, {"content", prompt_text}}})},
            {"temperature", config_.temperature},
            {"max_tokens", config_.max_reply_tokens},
        };
        auto parts = detail::split_url(config_.endpoint);
        httplib::Client client(parts.scheme_host_port);
        client.set_connection_timeout(config_.timeout_s, 0);
        client.set_read_timeout(config_.timeout_s, 0);
        httplib::Headers headers;
        if (!config_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.api_key);
        }
        auto result = client.Post(parts.path_and_query, headers, payload.dump(),
                                  "application/json");
        if (!result) {
            throw TransportError("completion request failed: " +
                                 httplib::to_string(result.error()));
        }
        std::string retry_after;
        if (result->has_header("Retry-After")) {
            retry_after = result->get_header_value("Retry-After");
        }
        return parse_completion_response(result->status, result->body, retry_after);
    }

  private:
    // Digest lookup; duplicate digests are served in recorded order.
    std::string replay(const std::string& prompt_text) {
        std::string digest = canonical_digest(prompt_text);
        std::lock_guard<std::mutex> lock(mutex_);
        for (const auto& e : cassette_.exchanges()) {
            if (e.prompt_digest == digest && !consumed_[e.sequence_index]) {
                consumed_[e.sequence_index] = true;
                return e.reply_text;
            }
        }
        throw CassetteMiss("no unconsumed cassette entry for digest " + digest);
    }

    ModelConfig config_;
    Cassette cassette_;
    std::vector<bool> consumed_;
    std::mutex mutex_;
};

} // namespace geodata
