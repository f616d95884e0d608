#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xiqa/error.hpp"
#include "xiqa/manifest.hpp"

namespace xiqa {

namespace detail {

inline void check_pairs(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(Errc::ShapeMismatch, "score sequences differ in length");
    if (x.size() < 2) throw Error(Errc::ZeroVariance, "need at least two scores");
}

} // namespace detail

/// Pearson correlation, population convention.
inline double plcc(std::span<const double> predicted, std::span<const double> truth) {
    detail::check_pairs(predicted, truth);
    const double n = static_cast<double>(predicted.size());
    const double mx = std::accumulate(predicted.begin(), predicted.end(), 0.0) / n;
    const double my = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double dx = predicted[i] - mx, dy = truth[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(Errc::ZeroVariance, "a score sequence is constant");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
inline std::vector<double> midranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman correlation: Pearson on midranks.
inline double srocc(std::span<const double> predicted, std::span<const double> truth) {
    detail::check_pairs(predicted, truth);
    const auto rx = midranks(predicted);
    const auto ry = midranks(truth);
    return plcc(rx, ry);
}

struct SplitPlan {
    std::set<std::string> train_refs;
    std::set<std::string> test_refs;
    double fraction = 0.8;
    std::uint64_t seed = 0;
};

/// Shuffles the distinct reference ids with `seed` and sends the first
/// round(fraction * total) to training. Both sides keep at least one id.
inline SplitPlan split_by_reference(const std::vector<std::string>& reference_ids, double fraction, std::uint64_t seed) {
    std::vector<std::string> refs(reference_ids.begin(), reference_ids.end());
    std::sort(refs.begin(), refs.end());
    refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
    if (refs.size() < 2) throw Error(Errc::TooFewReferences, "need at least two reference images");
    if (!(fraction > 0.0 && fraction < 1.0)) throw Error(Errc::InvalidConfig, "split fraction must lie in (0,1)");
    std::mt19937_64 rng(seed);
    std::shuffle(refs.begin(), refs.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(refs.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, refs.size() - 1);
    SplitPlan plan;
    plan.fraction = fraction;
    plan.seed = seed;
    plan.train_refs.insert(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.test_refs.insert(refs.begin() + static_cast<std::ptrdiff_t>(n_train), refs.end());
    return plan;
}

inline SplitPlan split_by_reference(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& r : manifest.rows) ids.push_back(r.reference_id);
    return split_by_reference(ids, fraction, seed);
}

struct RunMetrics {
    double plcc = 0.0;
    double srocc = 0.0;
};

struct AggregateMetrics {
    double mean_plcc = 0.0;
    double mean_srocc = 0.0;
    double std_plcc = 0.0;
    double std_srocc = 0.0;
};

/// Means and sample standard deviations over repeated runs.
inline AggregateMetrics aggregate_runs(std::span<const RunMetrics> runs) {
    if (runs.empty()) throw Error(Errc::EmptyResults, "no runs to aggregate");
    const double n = static_cast<double>(runs.size());
    AggregateMetrics a;
    for (const auto& r : runs) {
        a.mean_plcc += r.plcc;
        a.mean_srocc += r.srocc;
    }
    a.mean_plcc /= n;
    a.mean_srocc /= n;
    if (runs.size() > 1) {
        for (const auto& r : runs) {
            a.std_plcc += (r.plcc - a.mean_plcc) * (r.plcc - a.mean_plcc);
            a.std_srocc += (r.srocc - a.mean_srocc) * (r.srocc - a.mean_srocc);
        }
        a.std_plcc = std::sqrt(a.std_plcc / (n - 1.0));
        a.std_srocc = std::sqrt(a.std_srocc / (n - 1.0));
    }
    return a;
}

} // namespace xiqa
