#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xiqa/tensor.hpp"

namespace xiqa {

struct AdamWOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// Moments for the parameters an optimizer owns. Frozen parameters have no entry.
template <class T>
struct OptimState {
    AdamWOptions options;
    std::uint64_t step = 0;
    std::vector<std::string> names;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// Adam with decoupled weight decay. Decay is applied to the weights before
/// the bias-corrected adaptive step.
template <class T>
class AdamW {
public:
    AdamW(std::vector<NamedParam<T>> params, AdamWOptions options) : params_(std::move(params)) {
        state_.options = options;
        for (const auto& p : params_) {
            state_.names.push_back(p.name);
            state_.m.emplace_back(p.tensor.numel(), T(0));
            state_.v.emplace_back(p.tensor.numel(), T(0));
        }
    }

    void step() {
        for (const auto& p : params_) {
            if (!p.tensor.has_grad()) throw Error(Errc::MissingGradient, "no gradient for " + p.name);
        }
        const auto& o = state_.options;
        ++state_.step;
        const double t = static_cast<double>(state_.step);
        const double c1 = 1.0 - std::pow(o.beta1, t);
        const double c2 = 1.0 - std::pow(o.beta2, t);
        const double decay = 1.0 - o.learning_rate * o.weight_decay;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto theta = params_[i].tensor.mutable_values();
            const auto g = params_[i].tensor.grad();
            auto& m = state_.m[i];
            auto& v = state_.v[i];
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double gj = g[j];
                const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
                const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / c1;
                const double vhat = vj / c2;
                double th = static_cast<double>(theta[j]) * decay;
                th -= o.learning_rate * mhat / (std::sqrt(vhat) + o.eps);
                theta[j] = static_cast<T>(th);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void set_learning_rate(double lr) { state_.options.learning_rate = lr; }
    double learning_rate() const { return state_.options.learning_rate; }

    const OptimState<T>& state() const { return state_; }

    void load_state(const OptimState<T>& s) {
        if (s.names.size() != params_.size()) throw Error(Errc::ShapeTableMismatch, "optimizer state has a different parameter list");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (s.names[i] != params_[i].name || s.m[i].size() != params_[i].tensor.numel() ||
                s.v[i].size() != params_[i].tensor.numel()) {
                throw Error(Errc::ShapeTableMismatch, "optimizer state mismatch at " + params_[i].name);
            }
        }
        state_ = s;
    }

    const std::vector<NamedParam<T>>& params() const { return params_; }

private:
    std::vector<NamedParam<T>> params_;
    OptimState<T> state_;
};

} // namespace xiqa
