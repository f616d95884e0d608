#pragma once

// PNG decoding on top of zlib's inflate. Non-interlaced images of every
// standard color type and bit depth; alpha is dropped.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "xiqa/error.hpp"

namespace xiqa::png {

struct Decoded {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0; // 1 (gray) or 3 (color)
    std::vector<double> values;
};

inline constexpr std::array<std::uint8_t, 8> kSignature{137, 80, 78, 71, 13, 10, 26, 10};

inline bool has_signature(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kSignature.size()) return false;
    for (std::size_t i = 0; i < kSignature.size(); ++i)
        if (bytes[i] != kSignature[i]) return false;
    return true;
}

namespace detail {

inline std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

inline std::vector<std::uint8_t> inflate_all(const std::vector<std::uint8_t>& in, std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw Error(Errc::CorruptHeader, "zlib init failed");
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const std::size_t produced = zs.total_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected) throw Error(Errc::CorruptHeader, "PNG image data does not inflate to the expected size");
    return out;
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
}

} // namespace detail

inline Decoded decode(const std::vector<std::uint8_t>& bytes) {
    if (!has_signature(bytes)) throw Error(Errc::UnsupportedFormat, "missing PNG signature");

    std::size_t pos = kSignature.size();
    std::uint32_t width = 0, height = 0;
    int depth = 0, color = -1;
    bool seen_header = false, seen_end = false;
    std::vector<std::uint8_t> idat, palette;

    while (pos + 12 <= bytes.size() && !seen_end) {
        const std::uint32_t len = detail::be32(&bytes[pos]);
        if (len > bytes.size() || pos + 12 + len > bytes.size()) throw Error(Errc::CorruptHeader, "PNG chunk overruns file");
        const std::uint8_t* type = &bytes[pos + 4];
        const std::uint8_t* body = &bytes[pos + 8];
        const std::uint32_t crc = detail::be32(body + len);
        if (crc32(0L, type, len + 4) != crc) throw Error(Errc::CorruptHeader, "PNG chunk CRC mismatch");
        const std::string tag(reinterpret_cast<const char*>(type), 4);
        if (tag == "IHDR") {
            if (len != 13) throw Error(Errc::CorruptHeader, "bad IHDR length");
            width = detail::be32(body);
            height = detail::be32(body + 4);
            depth = body[8];
            color = body[9];
            if (body[10] != 0 || body[11] != 0) throw Error(Errc::CorruptHeader, "unknown compression or filter method");
            if (body[12] != 0) throw Error(Errc::UnsupportedFormat, "interlaced PNG");
            seen_header = true;
        } else if (tag == "PLTE") {
            palette.assign(body, body + len);
        } else if (tag == "IDAT") {
            idat.insert(idat.end(), body, body + len);
        } else if (tag == "IEND") {
            seen_end = true;
        }
        pos += 12 + len;
    }
    if (!seen_header || width == 0 || height == 0 || width > (1u << 24) || height > (1u << 24)) {
        throw Error(Errc::CorruptHeader, "missing or invalid IHDR");
    }
    if (!seen_end) throw Error(Errc::CorruptHeader, "PNG truncated before IEND");

    int samples = 0;
    switch (color) {
    case 0: samples = 1; break; // gray
    case 2: samples = 3; break; // rgb
    case 3: samples = 1; break; // palette
    case 4: samples = 2; break; // gray + alpha
    case 6: samples = 4; break; // rgba
    default: throw Error(Errc::UnsupportedFormat, "PNG color type " + std::to_string(color));
    }
    const bool depth_ok = (color == 0 && (depth == 1 || depth == 2 || depth == 4 || depth == 8 || depth == 16)) ||
                          (color == 3 && (depth == 1 || depth == 2 || depth == 4 || depth == 8)) ||
                          ((color == 2 || color == 4 || color == 6) && (depth == 8 || depth == 16));
    if (!depth_ok) throw Error(Errc::CorruptHeader, "invalid bit depth for color type");
    if (color == 3 && (palette.empty() || palette.size() % 3 != 0)) throw Error(Errc::CorruptHeader, "missing palette");

    const std::size_t bits_per_pixel = static_cast<std::size_t>(samples) * depth;
    const std::size_t stride = (width * bits_per_pixel + 7) / 8;
    const std::size_t bpp = std::max<std::size_t>(1, bits_per_pixel / 8);
    auto raw = detail::inflate_all(idat, height * (stride + 1));

    std::vector<std::uint8_t> pixels(height * stride);
    std::vector<std::uint8_t> prev(stride, 0);
    for (std::size_t r = 0; r < height; ++r) {
        const std::uint8_t filter = raw[r * (stride + 1)];
        const std::uint8_t* src = &raw[r * (stride + 1) + 1];
        std::uint8_t* dst = &pixels[r * stride];
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= bpp ? dst[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= bpp ? prev[i - bpp] : 0;
            int pred = 0;
            switch (filter) {
            case 0: pred = 0; break;
            case 1: pred = a; break;
            case 2: pred = b; break;
            case 3: pred = (a + b) / 2; break;
            case 4: pred = detail::paeth(a, b, c); break;
            default: throw Error(Errc::CorruptHeader, "unknown PNG filter type");
            }
            dst[i] = static_cast<std::uint8_t>(src[i] + pred);
        }
        std::copy(dst, dst + stride, prev.begin());
    }

    auto sample_at = [&](std::size_t row, std::size_t index) -> unsigned {
        const std::uint8_t* line = &pixels[row * stride];
        if (depth == 16) return (unsigned{line[2 * index]} << 8) | line[2 * index + 1];
        if (depth == 8) return line[index];
        const std::size_t bit = index * depth;
        const unsigned shift = 8 - depth - (bit % 8);
        return (line[bit / 8] >> shift) & ((1u << depth) - 1);
    };

    Decoded out;
    out.height = height;
    out.width = width;
    out.channels = (color == 0 || color == 4) ? 1 : 3;
    out.values.resize(out.height * out.width * out.channels);
    const double maxv = static_cast<double>((1u << depth) - 1);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            double* px = &out.values[(r * width + c) * out.channels];
            if (color == 3) {
                const unsigned idx = sample_at(r, c);
                if (3 * idx + 2 >= palette.size()) throw Error(Errc::CorruptHeader, "palette index out of range");
                for (int k = 0; k < 3; ++k) px[k] = palette[3 * idx + k] / 255.0;
            } else {
                for (std::size_t k = 0; k < out.channels; ++k) px[k] = sample_at(r, c * samples + k) / maxv;
            }
        }
    }
    return out;
}

} // namespace xiqa::png
