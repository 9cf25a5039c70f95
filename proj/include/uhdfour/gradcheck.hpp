#pragma once

// Central finite-difference verification of analytic gradients.
//
// The analytic side runs at the precision under test; the numeric side always
// runs a float64 copy of the same computation, so a float32 check is limited
// by the float32 backward pass and not by float32 cancellation in the
// difference quotient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "uhdfour/tensor.hpp"

namespace uhdfour {

struct GradCheckOptions {
    double step = 1e-6;             // base perturbation
    bool scale_step = true;         // perturbation = step * max(1, |p|)
    std::size_t max_coords = 100;   // sampled coordinates across all leaves
    double tolerance = 1e-3;        // on the floored relative error below
    double floor_fraction = 1e-2;   // denominator floor as a fraction of RMS(numeric)
    std::uint64_t seed = 1234;
};

struct GradCheckResult {
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_leaf = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    double norm_rel_error = 0.0;  // ||analytic - numeric|| / ||numeric|| over the sample
    bool passed = false;
};

namespace detail {

inline std::vector<std::pair<std::size_t, std::size_t>> sample_coordinates(
    const std::vector<std::size_t>& sizes, std::size_t budget, std::uint64_t seed) {
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t leaf = 0; leaf < sizes.size(); ++leaf) {
        const std::size_t n = sizes[leaf];
        if (n == 0) continue;
        std::size_t k = total <= budget
                            ? n
                            : std::max<std::size_t>(1, (budget * n + total - 1) / total);
        k = std::min(k, n);
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(idx[i], idx[pick(rng)]);
            coords.emplace_back(leaf, idx[i]);
        }
    }
    return coords;
}

}  // namespace detail

/// `loss_lo` / `loss_hi` evaluate the same scalar function of `leaves_lo` /
/// `leaves_hi` (float64). Both leaf sets must hold identical values.
template <class TLo, class LossLo, class LossHi>
GradCheckResult check_gradients(LossLo&& loss_lo, LossHi&& loss_hi,
                                std::vector<Tensor<TLo>> leaves_lo,
                                std::vector<Tensor<double>> leaves_hi,
                                const GradCheckOptions& options = {}) {
    require(leaves_lo.size() == leaves_hi.size(), "check_gradients: leaf count mismatch");
    for (auto& leaf : leaves_lo) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    const Tensor<TLo> loss = loss_lo();
    loss.backward();

    std::vector<std::size_t> sizes;
    for (const auto& leaf : leaves_lo) sizes.push_back(leaf.size());
    const auto coords = detail::sample_coordinates(sizes, options.max_coords, options.seed);

    std::vector<double> analytic, numeric;
    {
        NoGradGuard no_grad;
        for (const auto& [leaf, i] : coords) {
            const auto& lo = leaves_lo[leaf];
            analytic.push_back(lo.has_grad() ? static_cast<double>(lo.grad()[i]) : 0.0);
            auto data = leaves_hi[leaf].mutable_data();
            const double original = data[i];
            const double h =
                options.step * (options.scale_step ? std::max(1.0, std::abs(original)) : 1.0);
            data[i] = original + h;
            const double up = loss_hi().item();
            data[i] = original - h;
            const double down = loss_hi().item();
            data[i] = original;
            numeric.push_back((up - down) / (2.0 * h));
        }
    }

    double rms = 0.0;
    for (double n : numeric) rms += n * n;
    rms = std::sqrt(rms / std::max<std::size_t>(1, numeric.size()));
    const double floor = std::max(options.floor_fraction * rms, 1e-12);

    GradCheckResult result;
    result.checked = coords.size();
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t k = 0; k < coords.size(); ++k) {
        diff2 += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
        ref2 += numeric[k] * numeric[k];
    }
    result.norm_rel_error = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
    for (std::size_t k = 0; k < coords.size(); ++k) {
        const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), floor});
        const double err = std::abs(analytic[k] - numeric[k]) / denom;
        if (err >= result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_leaf = coords[k].first;
            result.worst_index = coords[k].second;
            result.worst_analytic = analytic[k];
            result.worst_numeric = numeric[k];
        }
    }
    result.passed = result.max_rel_error < options.tolerance;
    return result;
}

/// Convenience form: `fn` is a generic callable taking a leaf vector of either
/// precision and returning the scalar loss.
template <class TLo, class Fn>
GradCheckResult check_gradients(Fn&& fn, const std::vector<Tensor<TLo>>& leaves,
                                const GradCheckOptions& options = {}) {
    std::vector<Tensor<double>> hi;
    for (const auto& leaf : leaves) hi.push_back(leaf.template cast<double>());
    auto lo = leaves;
    return check_gradients<TLo>([&] { return fn(lo); }, [&] { return fn(hi); }, lo, hi, options);
}

}  // namespace uhdfour
