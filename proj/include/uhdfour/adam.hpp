#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "uhdfour/tensor.hpp"

namespace uhdfour {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers, one per parameter, in parameter order.
template <class T>
struct AdamState {
    AdamOptions options;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;

    void reset(std::span<const Tensor<T>> params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.size(), T(0));
            v.emplace_back(p.size(), T(0));
        }
        step = 0;
    }
};

/// Bias-corrected Adam update using each parameter's accumulated gradient.
/// Parameters without a gradient buffer are treated as having zero gradient.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
    if (state.m.size() != params.size()) {
        state.reset(std::span<const Tensor<T>>(params.data(), params.size()));
    }
    const auto& opt = state.options;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != p.size() || v.size() != p.size()) {
            throw DimensionError("adam_step: moment buffer does not match parameter " +
                                 p.shape().str());
        }
        auto data = p.mutable_data();
        const bool has_grad = p.has_grad();
        const auto grad = p.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
            const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
            const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps);
            data[i] = static_cast<T>(data[i] - update);
        }
    }
}

template <class T>
void zero_grads(std::span<Tensor<T>> params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace uhdfour
