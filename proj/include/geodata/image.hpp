#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "geodata/errors.hpp"

// Minimal raster support: magic-byte sniffing for downloaded payloads and a
// deterministic PNG encoder (stored-deflate, RGBA8) for mosaic output. The
// encoder never compresses, so identical pixels always yield identical bytes
// regardless of any zlib version.

namespace geodata {

struct Raster {
    long width = 0;
    long height = 0;
    std::vector<std::uint8_t> rgba; // row-major, 4 bytes per pixel

    static Raster solid(long w, long h, std::uint8_t r, std::uint8_t g, std::uint8_t b,
                        std::uint8_t a = 255) {
        Raster img;
        img.width = w;
        img.height = h;
        img.rgba.resize(static_cast<size_t>(w) * h * 4);
        for (size_t i = 0; i < img.rgba.size(); i += 4) {
            img.rgba[i] = r;
            img.rgba[i + 1] = g;
            img.rgba[i + 2] = b;
            img.rgba[i + 3] = a;
        }
        return img;
    }
};

inline std::optional<std::string> sniff_image_format(const std::string& bytes) {
    auto starts_with = [&](std::initializer_list<int> magic, size_t offset = 0) {
        if (bytes.size() < offset + magic.size()) return false;
        size_t i = offset;
        for (int b : magic) {
            if (static_cast<unsigned char>(bytes[i++]) != b) return false;
        }
        return true;
    };
    if (starts_with({0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a})) return "png";
    if (starts_with({0xff, 0xd8, 0xff})) return "jpeg";
    if (starts_with({'G', 'I', 'F', '8'})) return "gif";
    if (starts_with({'I', 'I', 0x2a, 0x00}) || starts_with({'M', 'M', 0x00, 0x2a}))
        return "tiff";
    if (starts_with({'B', 'M'})) return "bmp";
    if (starts_with({'R', 'I', 'F', 'F'}) && bytes.size() >= 12 &&
        bytes.compare(8, 4, "WEBP") == 0)
        return "webp";
    return std::nullopt;
}

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    crc ^= 0xffffffffu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

inline std::uint32_t adler32(const std::uint8_t* data, size_t len) {
    std::uint32_t a = 1, b = 0;
    for (size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

inline void push_u32_be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v >> 24));
    out.push_back(static_cast<char>(v >> 16));
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v));
}

inline void push_chunk(std::string& out, const char type[4], const std::string& payload) {
    push_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    push_u32_be(out, crc32(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
}

} // namespace detail

inline std::string encode_png(const Raster& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.rgba.size() != static_cast<size_t>(img.width) * img.height * 4) {
        throw DimensionMismatch("raster dimensions do not match pixel buffer");
    }
    std::string out("\x89PNG\r\n\x1a\n", 8);

    std::string ihdr;
    detail::push_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
    detail::push_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr += '\x08'; // bit depth
    ihdr += '\x06'; // color type RGBA
    ihdr += '\x00'; // compression
    ihdr += '\x00'; // filter
    ihdr += '\x00'; // no interlace
    detail::push_chunk(out, "IHDR", ihdr);

    // Scanlines, each prefixed with filter byte 0 (None).
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (1 + img.width * 4));
    for (long y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const auto* row = img.rgba.data() + static_cast<size_t>(y) * img.width * 4;
        raw.insert(raw.end(), row, row + static_cast<size_t>(img.width) * 4);
    }

    // zlib stream of stored deflate blocks.
    std::string idat;
    idat += '\x78';
    idat += '\x01';
    size_t offset = 0;
    while (offset < raw.size() || raw.empty()) {
        size_t n = std::min<size_t>(65535, raw.size() - offset);
        bool final_block = offset + n == raw.size();
        idat += final_block ? '\x01' : '\x00';
        idat += static_cast<char>(n & 0xff);
        idat += static_cast<char>((n >> 8) & 0xff);
        idat += static_cast<char>(~n & 0xff);
        idat += static_cast<char>((~n >> 8) & 0xff);
        idat.append(reinterpret_cast<const char*>(raw.data()) + offset, n);
        offset += n;
        if (final_block) break;
    }
    detail::push_u32_be(idat, detail::adler32(raw.data(), raw.size()));
    detail::push_chunk(out, "IDAT", idat);
    detail::push_chunk(out, "IEND", "");
    return out;
}

inline void write_png(const Raster& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << encode_png(img);
    out.flush();
    if (!out) throw IoError("failed writing " + path);
}

} // namespace geodata
