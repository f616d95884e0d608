#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "xiqa/ops.hpp"

namespace xiqa {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Gradients smaller than this are compared in absolute terms.
    double abs_floor = 1e-7;
    // Coordinates checked per parameter; 0 checks every coordinate.
    std::size_t max_coords = 0;
    // Also compare the derivative along a random +-1 direction spanning the whole tensor.
    bool directional = true;
    std::uint64_t seed = 7;
};

struct ParamGradCheck {
    std::string name;
    std::size_t numel = 0;
    std::size_t coords_checked = 0;
    double max_rel_error = 0.0;
    double directional_rel_error = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<ParamGradCheck> params;
    double tolerance = 0.0;

    bool passed() const {
        return std::all_of(params.begin(), params.end(), [](const auto& p) { return p.passed; });
    }
    double max_rel_error() const {
        double m = 0.0;
        for (const auto& p : params) m = std::max({m, p.max_rel_error, p.directional_rel_error});
        return m;
    }
};

inline double grad_rel_error(double analytic, double numeric, double abs_floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
    return std::abs(analytic - numeric) / denom;
}

/// Compares the gradients produced by backward() against central differences
/// (f(x+h) - f(x-h)) / 2h. `loss_fn` must rebuild the traced scalar loss from
/// the current parameter values on every call.
template <class LossFn>
GradCheckReport finite_diff_check(LossFn&& loss_fn, std::vector<NamedParam<double>>& params,
                                  const GradCheckOptions& opts = {}) {
    for (auto& p : params) p.tensor.zero_grad();
    {
        Tensor<double> loss = loss_fn();
        if (!std::isfinite(loss.item())) throw Error(Errc::NonFiniteValue, "loss is not finite");
        loss.backward();
    }

    auto eval = [&]() {
        NoGradGuard guard;
        const double v = loss_fn().item();
        if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, "loss is not finite under perturbation");
        return v;
    };

    std::mt19937_64 rng(opts.seed);
    GradCheckReport report;
    report.tolerance = opts.tolerance;
    const double h = opts.step;

    for (auto& p : params) {
        ParamGradCheck rec;
        rec.name = p.name;
        rec.numel = p.tensor.numel();
        std::vector<double> analytic(rec.numel, 0.0);
        if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());
        auto values = p.tensor.mutable_values();

        std::vector<std::size_t> coords(rec.numel);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opts.max_coords != 0 && coords.size() > opts.max_coords) {
            std::vector<std::size_t> picked;
            std::sample(coords.begin(), coords.end(), std::back_inserter(picked), opts.max_coords, rng);
            coords = std::move(picked);
        }

        for (std::size_t c : coords) {
            const double saved = values[c];
            values[c] = saved + h;
            const double up = eval();
            values[c] = saved - h;
            const double down = eval();
            values[c] = saved;
            const double numeric = (up - down) / (2.0 * h);
            rec.max_rel_error = std::max(rec.max_rel_error, grad_rel_error(analytic[c], numeric, opts.abs_floor));
        }
        rec.coords_checked = coords.size();

        if (opts.directional) {
            std::bernoulli_distribution coin(0.5);
            std::vector<double> dir(rec.numel);
            for (auto& d : dir) d = coin(rng) ? 1.0 : -1.0;
            const std::vector<double> saved(values.begin(), values.end());
            for (std::size_t i = 0; i < rec.numel; ++i) values[i] = saved[i] + h * dir[i];
            const double up = eval();
            for (std::size_t i = 0; i < rec.numel; ++i) values[i] = saved[i] - h * dir[i];
            const double down = eval();
            std::copy(saved.begin(), saved.end(), values.begin());
            double projected = 0.0;
            for (std::size_t i = 0; i < rec.numel; ++i) projected += analytic[i] * dir[i];
            rec.directional_rel_error = grad_rel_error(projected, (up - down) / (2.0 * h), opts.abs_floor);
        }

        rec.passed = rec.max_rel_error <= opts.tolerance && rec.directional_rel_error <= opts.tolerance;
        report.params.push_back(std::move(rec));
    }
    return report;
}

} // namespace xiqa
