#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "xiqa/degrade.hpp"
#include "xiqa/image.hpp"
#include "xiqa/manifest.hpp"

namespace xiqa {

/// Writes every pristine image once at level 0 plus levels 1-5 of each kind
/// into `out_dir` and returns the manifest (paths relative to `out_dir`). The
/// level-0 row carries the first kind. The rng only supplies noise seeds, one
/// per (source, kind).
template <class Rng>
DatasetManifest build_synthetic_dataset(const std::vector<Image>& sources, const std::vector<DegradationKind>& kinds,
                                        const std::filesystem::path& out_dir, Rng& rng) {
    if (sources.empty()) throw Error(Errc::EmptySourceList, "no source images");
    if (kinds.empty()) throw Error(Errc::InvalidConfig, "no degradation kinds");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(Errc::UnwritableDestination, "cannot create " + out_dir.string());

    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    for (const auto& pristine : sources) {
        const std::string& stem = pristine.reference_id;
        const std::string orig_name = stem + "__orig.ppm";
        save_image(pristine, out_dir / orig_name);
        manifest.rows.push_back({orig_name, stem, kinds.front(), 0, std::nullopt});
        for (auto kind : kinds) {
            const std::uint64_t noise_seed = rng();
            for (int level = 1; level <= kMaxLevel; ++level) {
                const Image degraded = apply_degradation(pristine, {kind, level, noise_seed});
                const std::string name = stem + "__" + std::string(kind_tag(kind)) + "_" + std::to_string(level) + ".ppm";
                save_image(degraded, out_dir / name);
                manifest.rows.push_back({name, stem, kind, level, std::nullopt});
            }
        }
    }
    return manifest;
}

template <class Rng>
DatasetManifest build_synthetic_dataset(const std::vector<std::filesystem::path>& sources,
                                        const std::vector<DegradationKind>& kinds,
                                        const std::filesystem::path& out_dir, Rng& rng) {
    if (sources.empty()) throw Error(Errc::EmptySourceList, "no source images");
    std::vector<Image> images;
    for (const auto& src : sources) images.push_back(load_image(src));
    return build_synthetic_dataset(images, kinds, out_dir, rng);
}

/// Seeded synthetic "pristine" photograph stand-in: a smooth color gradient
/// with overlaid sharp-edged discs and rectangles and a low-amplitude texture,
/// so content exists at every scale.
inline Image procedural_image(std::size_t size, std::uint64_t seed, std::string reference_id = {}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(size, size, 3, std::move(reference_id));
    const double s = static_cast<double>(size);

    double base[3], gx[3], gy[3];
    for (int k = 0; k < 3; ++k) {
        base[k] = 0.25 + 0.5 * u(rng);
        gx[k] = 0.4 * (u(rng) - 0.5);
        gy[k] = 0.4 * (u(rng) - 0.5);
    }
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c)
            for (int k = 0; k < 3; ++k) img.at(r, c, k) = base[k] + gx[k] * (c / s - 0.5) + gy[k] * (r / s - 0.5);

    const int shapes = 6 + static_cast<int>(u(rng) * 6);
    for (int i = 0; i < shapes; ++i) {
        double color[3];
        for (double& v : color) v = u(rng);
        const double cx = u(rng) * s, cy = u(rng) * s;
        const double extent = (0.08 + 0.25 * u(rng)) * s;
        const bool disc = u(rng) < 0.5;
        const double aspect = 0.5 + u(rng);
        for (std::size_t r = 0; r < size; ++r)
            for (std::size_t c = 0; c < size; ++c) {
                const double dx = (c + 0.5 - cx), dy = (r + 0.5 - cy);
                const bool inside = disc ? dx * dx + dy * dy * aspect * aspect < extent * extent
                                         : std::abs(dx) < extent && std::abs(dy) < extent * aspect;
                if (inside)
                    for (int k = 0; k < 3; ++k) img.at(r, c, k) = color[k];
            }
    }

    const double freq = 2.0 * std::numbers::pi * (0.15 + 0.2 * u(rng));
    const double angle = std::numbers::pi * u(rng);
    const double amp = 0.04 + 0.06 * u(rng);
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
            const double t = std::sin(freq * (c * std::cos(angle) + r * std::sin(angle)));
            for (int k = 0; k < 3; ++k) img.at(r, c, k) = std::clamp(img.at(r, c, k) + amp * t, 0.0, 1.0);
        }
    return img;
}

} // namespace xiqa
