#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "xiqa/error.hpp"
#include "xiqa/png.hpp"

namespace xiqa {

/// H x W x C grid of values in [0,1], row-major (row, column, channel).
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> data;
    std::string reference_id;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, std::string ref = {})
        : height(h), width(w), channels(c), data(h * w * c, 0.0), reference_id(std::move(ref)) {}

    std::size_t size() const { return data.size(); }
    std::size_t index(std::size_t r, std::size_t c, std::size_t ch) const { return (r * width + c) * channels + ch; }
    double& at(std::size_t r, std::size_t c, std::size_t ch) { return data[index(r, c, ch)]; }
    double at(std::size_t r, std::size_t c, std::size_t ch) const { return data[index(r, c, ch)]; }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    bool valid() const {
        if (channels != 1 && channels != 3) return false;
        if (data.size() != height * width * channels) return false;
        return std::all_of(data.begin(), data.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
    }
};

inline double image_mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw Error(Errc::ShapeMismatch, "image_mse on differently shaped images");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) acc += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return acc / static_cast<double>(a.data.size());
}

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::UnreadableFile, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(Errc::UnreadableFile, "read failed for " + path.string());
    return bytes;
}

// Netpbm header token reader: skips whitespace and '#' comments.
class PnmHeader {
public:
    explicit PnmHeader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

    unsigned long next_number() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw Error(Errc::CorruptHeader, "expected a number");
        unsigned long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > (1ul << 31)) throw Error(Errc::CorruptHeader, "header value too large");
        }
        return v;
    }

    // Exactly one whitespace byte separates the header from the raster.
    std::size_t raster_offset() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw Error(Errc::CorruptHeader, "missing raster separator");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 2;
};

inline Image decode_pnm(const std::vector<std::uint8_t>& bytes, std::size_t channels) {
    PnmHeader hdr(bytes);
    const auto w = hdr.next_number();
    const auto h = hdr.next_number();
    const auto maxval = hdr.next_number();
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw Error(Errc::CorruptHeader, "invalid dimensions or maxval");
    const std::size_t off = hdr.raster_offset();
    const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
    const std::size_t need = w * h * channels * sample_bytes;
    if (bytes.size() < off + need) throw Error(Errc::CorruptHeader, "raster shorter than header promises");
    Image img(h, w, channels);
    const double denom = static_cast<double>(maxval);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        unsigned v = sample_bytes == 1 ? bytes[off + i] : (bytes[off + 2 * i] << 8) | bytes[off + 2 * i + 1];
        if (v > maxval) throw Error(Errc::CorruptHeader, "sample exceeds maxval");
        img.data[i] = v / denom;
    }
    return img;
}

} // namespace detail

/// Reads binary PPM (P6), PGM (P5) or PNG. Values are divided by the
/// format's maximum sample value; the reference id is the file stem.
inline Image load_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    Image img;
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        img = detail::decode_pnm(bytes, 3);
    } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
        img = detail::decode_pnm(bytes, 1);
    } else if (png::has_signature(bytes)) {
        auto decoded = png::decode(bytes);
        img = Image(decoded.height, decoded.width, decoded.channels);
        img.data = std::move(decoded.values);
    } else {
        throw Error(Errc::UnsupportedFormat, path.string() + " is not PPM/PGM/PNG");
    }
    img.reference_id = path.stem().string();
    return img;
}

inline std::uint8_t quantize_8bit(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Writes 8-bit binary PPM (3 channels) or PGM (1 channel).
inline void save_image(const Image& img, const std::filesystem::path& path) {
    if (img.channels != 1 && img.channels != 3) throw Error(Errc::ShapeMismatch, "save_image needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::UnwritableDestination, "cannot write " + path.string());
    out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::vector<char> raster(img.data.size());
    for (std::size_t i = 0; i < raster.size(); ++i) raster[i] = static_cast<char>(quantize_8bit(img.data[i]));
    out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
    if (!out) throw Error(Errc::UnwritableDestination, "write failed for " + path.string());
}

inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t size) {
    if (size > img.height || size > img.width || top + size > img.height || left + size > img.width) {
        throw Error(Errc::CropLargerThanImage, "crop " + std::to_string(size) + " at (" + std::to_string(top) + "," +
                                                   std::to_string(left) + ") exceeds " + std::to_string(img.height) +
                                                   "x" + std::to_string(img.width));
    }
    Image out(size, size, img.channels, img.reference_id);
    const std::size_t row_len = size * img.channels;
    for (std::size_t r = 0; r < size; ++r) {
        const auto src = img.data.begin() + static_cast<std::ptrdiff_t>(img.index(top + r, left, 0));
        std::copy(src, src + static_cast<std::ptrdiff_t>(row_len), out.data.begin() + static_cast<std::ptrdiff_t>(r * row_len));
    }
    return out;
}

inline Image center_crop(const Image& img, std::size_t size) {
    if (size > img.height || size > img.width) throw Error(Errc::CropLargerThanImage, "center crop larger than image");
    return crop(img, (img.height - size) / 2, (img.width - size) / 2, size);
}

inline Image hflip(const Image& img) {
    Image out = img;
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c)
            for (std::size_t ch = 0; ch < img.channels; ++ch) out.at(r, img.width - 1 - c, ch) = img.at(r, c, ch);
    return out;
}

/// Crop offsets and flip decision drawn once and applied to several aligned images.
struct CropFlip {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t size = 0;
    bool flip = false;

    Image apply(const Image& img) const {
        Image out = crop(img, top, left, size);
        return flip ? hflip(out) : out;
    }
};

template <class Rng>
std::pair<std::size_t, std::size_t> draw_crop_offset(std::size_t height, std::size_t width, std::size_t size, Rng& rng) {
    if (size > height || size > width) throw Error(Errc::CropLargerThanImage, "crop larger than image");
    std::uniform_int_distribution<std::size_t> rows(0, height - size);
    std::uniform_int_distribution<std::size_t> cols(0, width - size);
    const std::size_t top = rows(rng);
    const std::size_t left = cols(rng);
    return {top, left};
}

template <class Rng>
bool draw_flip(double p, Rng& rng) {
    return std::bernoulli_distribution(std::clamp(p, 0.0, 1.0))(rng);
}

template <class Rng>
CropFlip sample_crop_flip(std::size_t height, std::size_t width, std::size_t size, double flip_p, Rng& rng) {
    auto [top, left] = draw_crop_offset(height, width, size, rng);
    return CropFlip{top, left, size, draw_flip(flip_p, rng)};
}

template <class Rng>
Image random_crop(const Image& img, std::size_t size, Rng& rng) {
    auto [top, left] = draw_crop_offset(img.height, img.width, size, rng);
    return crop(img, top, left, size);
}

template <class Rng>
Image random_hflip(const Image& img, double p, Rng& rng) {
    return draw_flip(p, rng) ? hflip(img) : img;
}

} // namespace xiqa
