#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "xiqa/error.hpp"
#include "xiqa/image.hpp"

namespace xiqa {

enum class DegradationKind {
    GaussianBlur,
    GaussianNoise,
    ColorSaturation,
    ContrastChange,
    MeanShift,
    BlockQuantization,
};

inline constexpr std::array<DegradationKind, 6> kAllKinds{
    DegradationKind::GaussianBlur,    DegradationKind::GaussianNoise, DegradationKind::ColorSaturation,
    DegradationKind::ContrastChange,  DegradationKind::MeanShift,     DegradationKind::BlockQuantization,
};

inline constexpr int kMaxLevel = 5;

inline std::string_view kind_name(DegradationKind k) {
    switch (k) {
    case DegradationKind::GaussianBlur: return "GaussianBlur";
    case DegradationKind::GaussianNoise: return "GaussianNoise";
    case DegradationKind::ColorSaturation: return "ColorSaturation";
    case DegradationKind::ContrastChange: return "ContrastChange";
    case DegradationKind::MeanShift: return "MeanShift";
    case DegradationKind::BlockQuantization: return "BlockQuantization";
    }
    throw Error(Errc::UnknownKind, "unknown degradation kind value");
}

// Short tags follow the TID2013 abbreviations where one exists.
inline std::string_view kind_tag(DegradationKind k) {
    switch (k) {
    case DegradationKind::GaussianBlur: return "GB";
    case DegradationKind::GaussianNoise: return "AGN";
    case DegradationKind::ColorSaturation: return "CCS";
    case DegradationKind::ContrastChange: return "CTC";
    case DegradationKind::MeanShift: return "MS";
    case DegradationKind::BlockQuantization: return "BQ";
    }
    throw Error(Errc::UnknownKind, "unknown degradation kind value");
}

/// Accepts either the full name or the short tag.
inline DegradationKind parse_kind(std::string_view s) {
    for (auto k : kAllKinds)
        if (s == kind_name(k) || s == kind_tag(k)) return k;
    throw Error(Errc::UnknownKind, "unknown degradation kind '" + std::string(s) + "'");
}

/// Physical parameter of each severity level, index 0 being the identity.
inline double level_parameter(DegradationKind kind, int level) {
    if (level < 0 || level > kMaxLevel) throw Error(Errc::LevelOutOfRange, "level " + std::to_string(level));
    static constexpr double blur[] = {0.0, 0.75, 1.5, 2.5, 3.5, 5.0};
    static constexpr double noise[] = {0.0, 5.0 / 255, 10.0 / 255, 20.0 / 255, 35.0 / 255, 50.0 / 255};
    static constexpr double saturation[] = {1.0, 0.8, 0.6, 0.4, 0.2, 0.0};
    static constexpr double contrast[] = {1.0, 0.85, 0.7, 0.55, 0.4, 0.25};
    static constexpr double shift[] = {0.0, 0.04, 0.08, 0.12, 0.16, 0.20};
    static constexpr double quant[] = {std::numeric_limits<double>::infinity(), 64, 32, 16, 8, 4};
    switch (kind) {
    case DegradationKind::GaussianBlur: return blur[level];
    case DegradationKind::GaussianNoise: return noise[level];
    case DegradationKind::ColorSaturation: return saturation[level];
    case DegradationKind::ContrastChange: return contrast[level];
    case DegradationKind::MeanShift: return shift[level];
    case DegradationKind::BlockQuantization: return quant[level];
    }
    throw Error(Errc::UnknownKind, "unknown degradation kind value");
}

struct DegradationSpec {
    DegradationKind kind = DegradationKind::GaussianBlur;
    int level = 0;
    // Seeds the noise field; the same seed gives the same field at every level.
    std::uint64_t noise_seed = 0;

    double parameter() const { return level_parameter(kind, level); }
};

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i > static_cast<std::ptrdiff_t>(n - 1)) i = period - i;
    return static_cast<std::size_t>(i);
}

/// Normalized 1D Gaussian taps over [-ceil(3 sigma), ceil(3 sigma)]. The 2D
/// kernel is the outer product of this vector with itself.
inline std::vector<double> gaussian_kernel_1d(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-(i * static_cast<double>(i)) / (2.0 * sigma * sigma));
        total += taps[i + radius];
    }
    for (auto& t : taps) t /= total;
    return taps;
}

namespace detail {

inline Image gaussian_blur(const Image& img, double sigma) {
    const auto taps = gaussian_kernel_1d(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    Image tmp = img;
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c)
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
                double acc = 0.0;
                for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                    const auto cc = reflect_index(static_cast<std::ptrdiff_t>(c) + k, img.width);
                    acc += taps[k + radius] * img.at(r, cc, ch);
                }
                tmp.at(r, c, ch) = acc;
            }
    Image out = img;
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c)
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
                double acc = 0.0;
                for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                    const auto rr = reflect_index(static_cast<std::ptrdiff_t>(r) + k, img.height);
                    acc += taps[k + radius] * tmp.at(rr, c, ch);
                }
                out.at(r, c, ch) = acc;
            }
    return out;
}

inline Image gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Image out = img;
    for (auto& v : out.data) v += sigma * normal(rng);
    return out;
}

inline Image color_saturation(const Image& img, double s) {
    if (img.channels != 3) return img;
    Image out = img;
    for (std::size_t p = 0; p < img.height * img.width; ++p) {
        double* px = &out.data[3 * p];
        const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        for (int k = 0; k < 3; ++k) px[k] = gray + s * (px[k] - gray);
    }
    return out;
}

inline Image contrast_change(const Image& img, double c) {
    double mu = 0.0;
    for (double v : img.data) mu += v;
    mu /= static_cast<double>(img.data.size());
    Image out = img;
    for (auto& v : out.data) v = mu + c * (v - mu);
    return out;
}

inline Image mean_shift(const Image& img, double delta) {
    Image out = img;
    for (auto& v : out.data) v += delta;
    return out;
}

// Deviations from each 8x8 block mean are rounded to a grid of 1/levels, then
// re-centered so the block mean is unchanged.
inline Image block_quantization(const Image& img, double levels) {
    constexpr std::size_t B = 8;
    const double step = 1.0 / levels;
    Image out = img;
    std::vector<double> q;
    for (std::size_t br = 0; br < img.height; br += B)
        for (std::size_t bc = 0; bc < img.width; bc += B)
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
                const std::size_t r1 = std::min(br + B, img.height), c1 = std::min(bc + B, img.width);
                double mu = 0.0;
                for (std::size_t r = br; r < r1; ++r)
                    for (std::size_t c = bc; c < c1; ++c) mu += img.at(r, c, ch);
                const double count = static_cast<double>((r1 - br) * (c1 - bc));
                mu /= count;
                q.clear();
                double qmu = 0.0;
                for (std::size_t r = br; r < r1; ++r)
                    for (std::size_t c = bc; c < c1; ++c) {
                        q.push_back(std::round((img.at(r, c, ch) - mu) / step) * step);
                        qmu += q.back();
                    }
                qmu /= count;
                std::size_t i = 0;
                for (std::size_t r = br; r < r1; ++r)
                    for (std::size_t c = bc; c < c1; ++c) out.at(r, c, ch) = mu + q[i++] - qmu;
            }
    return out;
}

} // namespace detail

/// Applies one parametric distortion. Level 0 returns the input unchanged;
/// every other output is clamped to [0,1].
inline Image apply_degradation(const Image& img, const DegradationSpec& spec) {
    const double param = spec.parameter(); // validates kind and level
    if (spec.level == 0) return img;
    Image out;
    switch (spec.kind) {
    case DegradationKind::GaussianBlur: out = detail::gaussian_blur(img, param); break;
    case DegradationKind::GaussianNoise: out = detail::gaussian_noise(img, param, spec.noise_seed); break;
    case DegradationKind::ColorSaturation: out = detail::color_saturation(img, param); break;
    case DegradationKind::ContrastChange: out = detail::contrast_change(img, param); break;
    case DegradationKind::MeanShift: out = detail::mean_shift(img, param); break;
    case DegradationKind::BlockQuantization: out = detail::block_quantization(img, param); break;
    }
    for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
    out.reference_id = img.reference_id;
    return out;
}

} // namespace xiqa
