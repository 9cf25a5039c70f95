#pragma once

// Training objective (pixel L1, SSIM, low-resolution L1, multi-scale feature
// distance) and the PSNR/SSIM evaluation metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "uhdfour/model.hpp"
#include "uhdfour/ops.hpp"
#include "uhdfour/tensor.hpp"

namespace uhdfour {

struct LossWeights {
    double l1 = 1.0;
    double ssim = 0.0004;
    double lr_l1 = 0.1;
    double perceptual = 0.0002;
};

inline void validate(const LossWeights& w) {
    if (!(w.l1 >= 0 && w.ssim >= 0 && w.lr_l1 >= 0 && w.perceptual >= 0)) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
    return mean(abs(sub(a, b)));
}

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> k(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += k[i];
    }
    for (double& v : k) v /= total;
    return k;
}

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

/// Window actually used for an H x W input: the configured size, shrunk to
/// the largest odd size that fits.
inline std::size_t ssim_window_for(std::size_t h, std::size_t w, const SsimOptions& o = {}) {
    std::size_t k = std::min({o.window, h, w});
    if (k % 2 == 0) --k;
    return std::max<std::size_t>(k, 1);
}

/// Mean of the SSIM map over every channel and batch item (valid windows).
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& o = {}) {
    detail::require_same_shape(a, b, "ssim");
    const auto window = gaussian_window(ssim_window_for(a.shape().h, a.shape().w, o), o.sigma);
    auto blur = [&](const Tensor<T>& t) { return separable_filter_valid(t, window); };
    const auto mu_a = blur(a);
    const auto mu_b = blur(b);
    const auto mu_aa = mul(mu_a, mu_a);
    const auto mu_bb = mul(mu_b, mu_b);
    const auto mu_ab = mul(mu_a, mu_b);
    const auto var_a = sub(blur(mul(a, a)), mu_aa);
    const auto var_b = sub(blur(mul(b, b)), mu_bb);
    const auto cov = sub(blur(mul(a, b)), mu_ab);
    const T c1 = static_cast<T>(o.c1), c2 = static_cast<T>(o.c2);
    const auto num = mul(add_scalar(mul_scalar(mu_ab, T(2)), c1), add_scalar(mul_scalar(cov, T(2)), c2));
    const auto den = mul(add_scalar(add(mu_aa, mu_bb), c1), add_scalar(add(var_a, var_b), c2));
    return mean(div(num, den));
}

template <class T>
Tensor<T> ssim_loss(const Tensor<T>& a, const Tensor<T>& b) {
    return add_scalar(mul_scalar(ssim(a, b), T(-1)), T(1));
}

/// Frozen, seeded four-stage conv pyramid standing in for pretrained VGG
/// features: a stride-1 stage followed by three stride-2 stages (1, 1/2, 1/4,
/// 1/8 resolution), each 3x3 conv + leaky ReLU.
template <class T>
class FeaturePyramid {
   public:
    explicit FeaturePyramid(std::uint64_t seed = 0x5eedULL, std::size_t in_channels = 3,
                            std::size_t width = 16) {
        std::mt19937_64 rng(seed);
        std::size_t in = in_channels;
        for (std::size_t s = 0; s < 4; ++s) {
            const double bound = std::sqrt(2.0 / (1.0 + 0.04)) * std::sqrt(3.0 / double(in * 9));
            std::uniform_real_distribution<double> dist(-bound, bound);
            std::vector<T> w(width * in * 9);
            for (auto& v : w) v = static_cast<T>(dist(rng));
            weights_.emplace_back(Shape{width, in, 3, 3}, std::move(w));
            in = width;
        }
    }

    std::vector<Tensor<T>> features(const Tensor<T>& x) const {
        std::vector<Tensor<T>> out;
        Tensor<T> h = x;
        for (std::size_t s = 0; s < weights_.size(); ++s) {
            h = leaky_relu(conv2d(h, weights_[s], Tensor<T>{}, s == 0 ? 1 : 2, 1));
            out.push_back(h);
        }
        return out;
    }

    const std::vector<Tensor<T>>& weights() const { return weights_; }

   private:
    std::vector<Tensor<T>> weights_;  // never require gradients
};

/// Sum over pyramid stages of the mean squared feature difference.
template <class T>
Tensor<T> perceptual_loss(const Tensor<T>& a, const Tensor<T>& b, const FeaturePyramid<T>& pyramid) {
    detail::require_same_shape(a, b, "perceptual_loss");
    const auto fa = pyramid.features(a);
    const auto fb = pyramid.features(b);
    Tensor<T> total;
    for (std::size_t s = 0; s < fa.size(); ++s) {
        const auto term = mean(square(sub(fa[s], fb[s])));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <class T>
struct LossTerms {
    Tensor<T> l1;
    Tensor<T> ssim;  // 1 - SSIM
    Tensor<T> lr_l1;
    Tensor<T> perceptual;
    Tensor<T> total;
};

/// w_l1*L1(y_hat, y) + w_ssim*(1 - SSIM(y_hat, y)) + w_lr*L1(y_hat_lr, y_lr)
/// + w_perc*perceptual(y_hat_lr, y_lr), with y_lr the bilinear downsample of y
/// to the y_hat_lr grid.
template <class T>
LossTerms<T> total_loss(const ForwardOutputs<T>& out, const Tensor<T>& y, const LossWeights& w,
                        const FeaturePyramid<T>& pyramid) {
    validate(w);
    detail::require_same_shape(out.y_hat, y, "total_loss");
    const Shape ls = out.y_hat_lr.shape();
    const auto y_lr = bilinear_resize(y.detach(), ls.h, ls.w);
    LossTerms<T> t;
    t.l1 = l1_loss(out.y_hat, y);
    t.ssim = ssim_loss(out.y_hat, y);
    t.lr_l1 = l1_loss(out.y_hat_lr, y_lr);
    t.perceptual = perceptual_loss(out.y_hat_lr, y_lr, pyramid);
    t.total = add(add(mul_scalar(t.l1, static_cast<T>(w.l1)), mul_scalar(t.ssim, static_cast<T>(w.ssim))),
                  add(mul_scalar(t.lr_l1, static_cast<T>(w.lr_l1)),
                      mul_scalar(t.perceptual, static_cast<T>(w.perceptual))));
    return t;
}

/// 10*log10(1/MSE) on unit range; +infinity for identical inputs.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

inline constexpr double kPsnrCap = 100.0;

inline double capped(double psnr_db) { return std::min(psnr_db, kPsnrCap); }

/// SSIM evaluated in double without recording.
template <class T>
double ssim_metric(const Tensor<T>& a, const Tensor<T>& b) {
    NoGradGuard no_grad;
    return ssim(a.template cast<double>(), b.template cast<double>()).item();
}

}  // namespace uhdfour
