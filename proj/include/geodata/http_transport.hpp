#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "geodata/digest.hpp"
#include "geodata/errors.hpp"

// HTTP seam for every network-facing operation. Live traffic goes through
// cpp-httplib; tests use a fixture store keyed by the request digest, so
// replay runs touch no sockets at all.

namespace geodata {

struct HttpResponse {
    int status = 0;
    std::string body;
    std::map<std::string, std::string> headers;
};

class HttpTransport {
  public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse get(const std::string& url) = 0;
    virtual HttpResponse post_form(const std::string& url, const std::string& body) = 0;
};

// Key for one request in a fixture store: sha256 of "METHOD\nURL\nBODY".
inline std::string http_fixture_key(const std::string& method, const std::string& url,
                                    const std::string& body) {
    return sha256_hex(method + "\n" + url + "\n" + body);
}

namespace detail {

struct SplitUrl {
    std::string scheme_host_port; // e.g. "https://example.org:8443"
    std::string path_and_query;   // e.g. "/api?x=1", defaults to "/"
};

inline SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw TransportError("URL lacks a scheme: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.scheme_host_port = url;
        out.path_and_query = "/";
    } else {
        out.scheme_host_port = url.substr(0, path_start);
        out.path_and_query = url.substr(path_start);
    }
    return out;
}

} // namespace detail

class LiveHttpTransport : public HttpTransport {
  public:
    explicit LiveHttpTransport(int timeout_seconds = 60) : timeout_s_(timeout_seconds) {}

    HttpResponse get(const std::string& url) override {
        auto parts = detail::split_url(url);
        httplib::Client client(parts.scheme_host_port);
        configure(client);
        return convert(client.Get(parts.path_and_query), url);
    }

    HttpResponse post_form(const std::string& url, const std::string& body) override {
        auto parts = detail::split_url(url);
        httplib::Client client(parts.scheme_host_port);
        configure(client);
        return convert(
            client.Post(parts.path_and_query, body, "application/x-www-form-urlencoded"),
            url);
    }

  private:
    void configure(httplib::Client& client) const {
        client.set_connection_timeout(timeout_s_, 0);
        client.set_read_timeout(timeout_s_, 0);
        client.set_follow_location(true);
    }

    static HttpResponse convert(httplib::Result result, const std::string& url) {
        if (!result) {
            throw TransportError("request to " + url + " failed: " +
                                 httplib::to_string(result.error()));
        }
        HttpResponse out;
        out.status = result->status;
        out.body = result->body;
        for (const auto& [k, v] : result->headers) out.headers[k] = v;
        return out;
    }

    int timeout_s_;
};

// Replays responses from a directory of <key>.meta / <key>.body pairs.
// Performs zero network activity by construction.
class FixtureHttpTransport : public HttpTransport {
  public:
    explicit FixtureHttpTransport(std::filesystem::path dir) : dir_(std::move(dir)) {}

    HttpResponse get(const std::string& url) override { return lookup("GET", url, ""); }

    HttpResponse post_form(const std::string& url, const std::string& body) override {
        return lookup("POST", url, body);
    }

    const std::filesystem::path& dir() const { return dir_; }

  private:
    HttpResponse lookup(const std::string& method, const std::string& url,
                        const std::string& body) const {
        std::string key = http_fixture_key(method, url, body);
        auto meta_path = dir_ / (key + ".meta");
        auto body_path = dir_ / (key + ".body");
        std::ifstream meta(meta_path);
        if (!meta) {
            throw FixtureMiss("no fixture for " + method + " " + url + " (key " + key + ")");
        }
        HttpResponse out;
        std::string line;
        while (std::getline(meta, line)) {
            auto colon = line.find(':');
            if (colon == std::string::npos) continue;
            std::string field = line.substr(0, colon);
            std::string value = line.substr(colon + 1);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            if (field == "status") {
                out.status = std::stoi(value);
            } else if (field != "method" && field != "url") {
                out.headers[field] = value;
            }
        }
        std::ifstream body_in(body_path, std::ios::binary);
        if (body_in) {
            std::ostringstream ss;
            ss << body_in.rdbuf();
            out.body = ss.str();
        }
        if (out.status == 0) {
            throw FixtureMiss("fixture " + key + " has no status line");
        }
        return out;
    }

    std::filesystem::path dir_;
};

// Wraps a live transport and writes every exchange into a fixture store in
// the exact format FixtureHttpTransport reads back.
class RecordingHttpTransport : public HttpTransport {
  public:
    RecordingHttpTransport(HttpTransport& inner, std::filesystem::path dir)
        : inner_(inner), dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    HttpResponse get(const std::string& url) override {
        auto response = inner_.get(url);
        save("GET", url, "", response);
        return response;
    }

    HttpResponse post_form(const std::string& url, const std::string& body) override {
        auto response = inner_.post_form(url, body);
        save("POST", url, body, response);
        return response;
    }

  private:
    void save(const std::string& method, const std::string& url, const std::string& body,
              const HttpResponse& response) {
        std::lock_guard<std::mutex> lock(mutex_);
        std::string key = http_fixture_key(method, url, body);
        std::ofstream meta(dir_ / (key + ".meta"), std::ios::binary);
        meta << "status: " << response.status << "\n";
        meta << "method: " << method << "\n";
        meta << "url: " << url << "\n";
        auto ct = response.headers.find("Content-Type");
        if (ct != response.headers.end()) meta << "content-type: " << ct->second << "\n";
        std::ofstream out(dir_ / (key + ".body"), std::ios::binary);
        out << response.body;
    }

    HttpTransport& inner_;
    std::filesystem::path dir_;
    std::mutex mutex_;
};

// Writes one fixture pair; used to seed stores from captured payloads.
inline void write_http_fixture(const std::filesystem::path& dir, const std::string& method,
                               const std::string& url, const std::string& request_body,
                               int status, const std::string& response_body,
                               const std::string& content_type = "") {
    std::filesystem::create_directories(dir);
    std::string key = http_fixture_key(method, url, request_body);
    std::ofstream meta(dir / (key + ".meta"), std::ios::binary);
    meta << "status: " << status << "\n";
    meta << "method: " << method << "\n";
    meta << "url: " << url << "\n";
    if (!content_type.empty()) meta << "content-type: " << content_type << "\n";
    std::ofstream body(dir / (key + ".body"), std::ios::binary);
    body << response_body;
}

} // namespace geodata
