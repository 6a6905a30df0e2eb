#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <openssl/evp.h>

namespace geodata {

inline constexpr const char* kDigestAlgorithm = "sha256";

inline std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

// Line-ending and trailing-whitespace normalization applied before hashing,
// so prompts recorded on different platforms replay against one cassette.
inline std::string normalize_for_digest(std::string_view text) {
    std::string line;
    std::string out;
    out.reserve(text.size());
    auto flush_line = [&](bool add_newline) {
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        out += line;
        if (add_newline) out.push_back('\n');
        line.clear();
    };
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '\r') {
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
            flush_line(true);
        } else if (c == '\n') {
            flush_line(true);
        } else {
            line.push_back(c);
        }
    }
    flush_line(false);
    return out;
}

inline std::string canonical_digest(std::string_view prompt_text) {
    return sha256_hex(normalize_for_digest(prompt_text));
}

} // namespace geodata
