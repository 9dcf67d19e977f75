#pragma once
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mind/image.hpp"

// File formats:
//   PGM "P5"  binary, maxval 255 (1 byte) or 65535 (2 bytes, big-endian).
//   PFM "Pf"  single channel, 32-bit float, rows stored bottom-up; the scale
//             header's sign selects endianness (negative = little-endian).
// Loaded values are scaled/clamped into [0,1].

namespace mind {

enum class ImageFormat { pgm8, pgm16, pfm };

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Netpbm-style token scan: whitespace-separated, '#' comments to end of line.
inline std::string next_token(const std::string& s, size_t& pos) {
    while (pos < s.size()) {
        char c = s[pos];
        if (c == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return s.substr(start, pos - start);
}

inline long parse_long(const std::string& tok, const char* field) {
    if (tok.empty()) throw FormatError(std::string("header: missing ") + field);
    char* end = nullptr;
    long v = std::strtol(tok.c_str(), &end, 10);
    if (*end != '\0') throw FormatError(std::string("header: malformed ") + field + " '" + tok + "'");
    return v;
}

inline float byteswap_f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) |
        ((u & 0x0000ff00u) << 8) | ((u & 0x000000ffu) << 24);
    std::memcpy(&v, &u, 4);
    return v;
}

constexpr bool host_little_endian() { return std::endian::native == std::endian::little; }

}  // namespace detail

/// Reads PGM (P5) or PFM (Pf). PFM values outside [0,1] (or non-finite) are
/// clamped and counted into *out_of_range when provided.
inline Image read_image(const std::string& path, int* out_of_range = nullptr) {
    const std::string bytes = detail::read_file_bytes(path);
    if (out_of_range) *out_of_range = 0;
    size_t pos = 0;
    const std::string magic = detail::next_token(bytes, pos);
    if (magic == "P5") {
        const long w = detail::parse_long(detail::next_token(bytes, pos), "width");
        const long h = detail::parse_long(detail::next_token(bytes, pos), "height");
        const long maxval = detail::parse_long(detail::next_token(bytes, pos), "maxval");
        if (w < 1 || h < 1) throw FormatError("pgm: non-positive dimensions");
        if (maxval < 1 || maxval > 65535) throw FormatError("pgm: maxval out of range");
        ++pos;  // single whitespace after maxval
        const int bpp = maxval > 255 ? 2 : 1;
        const size_t need = size_t(w) * h * bpp;
        if (bytes.size() - pos < need)
            throw FormatError("pgm: truncated payload (expected " + std::to_string(need) +
                              " bytes, got " + std::to_string(bytes.size() - pos) + ")");
        Image img(static_cast<int>(h), static_cast<int>(w));
        const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        for (size_t i = 0; i < size_t(w) * h; ++i) {
            unsigned v = bpp == 1 ? p[i] : (unsigned(p[2 * i]) << 8) | p[2 * i + 1];
            img.pix[i] = double(v) / double(maxval);
        }
        return img;
    }
    if (magic == "Pf" || magic == "PF") {
        if (magic == "PF") throw FormatError("pfm: color images unsupported (magic PF)");
        const long w = detail::parse_long(detail::next_token(bytes, pos), "width");
        const long h = detail::parse_long(detail::next_token(bytes, pos), "height");
        const std::string scale_tok = detail::next_token(bytes, pos);
        if (scale_tok.empty()) throw FormatError("pfm: missing scale");
        char* end = nullptr;
        const double scale = std::strtod(scale_tok.c_str(), &end);
        if (*end != '\0' || scale == 0.0) throw FormatError("pfm: malformed scale '" + scale_tok + "'");
        if (w < 1 || h < 1) throw FormatError("pfm: non-positive dimensions");
        ++pos;
        const size_t need = size_t(w) * h * 4;
        if (bytes.size() - pos < need)
            throw FormatError("pfm: truncated payload (expected " + std::to_string(need) +
                              " bytes, got " + std::to_string(bytes.size() - pos) + ")");
        const bool file_le = scale < 0.0;
        Image img(static_cast<int>(h), static_cast<int>(w));
        int oor = 0;
        for (long r = 0; r < h; ++r) {
            const long src_row = h - 1 - r;  // bottom-up storage
            const char* rp = bytes.data() + pos + size_t(src_row) * w * 4;
            for (long c = 0; c < w; ++c) {
                float v;
                std::memcpy(&v, rp + c * 4, 4);
                if (file_le != detail::host_little_endian()) v = detail::byteswap_f32(v);
                double d = double(v);
                if (!std::isfinite(d)) { d = 0.0; ++oor; }
                else if (d < 0.0) { d = 0.0; ++oor; }
                else if (d > 1.0) { d = 1.0; ++oor; }
                img.at(int(r), int(c)) = d;
            }
        }
        if (out_of_range) *out_of_range = oor;
        return img;
    }
    throw FormatError("header: unknown magic '" + magic + "'");
}

/// PGM quantizes round-half-up; PFM stores 32-bit floats, little-endian.
inline void write_image(const Image& img, const std::string& path, ImageFormat format) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write file: " + path);
    if (format == ImageFormat::pgm8 || format == ImageFormat::pgm16) {
        const int maxval = format == ImageFormat::pgm8 ? 255 : 65535;
        f << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
        std::vector<unsigned char> buf;
        buf.reserve(img.size() * (format == ImageFormat::pgm8 ? 1 : 2));
        for (double p : img.pix) {
            const double cl = std::min(1.0, std::max(0.0, p));
            const unsigned v = unsigned(std::floor(cl * maxval + 0.5));
            if (format == ImageFormat::pgm8) {
                buf.push_back(static_cast<unsigned char>(v));
            } else {
                buf.push_back(static_cast<unsigned char>(v >> 8));
                buf.push_back(static_cast<unsigned char>(v & 0xff));
            }
        }
        f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    } else {
        f << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
        std::vector<float> row(size_t(img.width));
        for (int r = img.height - 1; r >= 0; --r) {
            for (int c = 0; c < img.width; ++c) {
                float v = float(img.at(r, c));
                if (!detail::host_little_endian()) v = detail::byteswap_f32(v);
                row[size_t(c)] = v;
            }
            f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * 4));
        }
    }
    if (!f) throw IoError("short write: " + path);
}

inline ImageFormat format_from_extension(const std::string& path, ImageFormat pgm_default = ImageFormat::pgm16) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "pfm") return ImageFormat::pfm;
    return pgm_default;
}

}  // namespace mind
