#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "uhdfour/losses.hpp"

using namespace uhdfour;
using namespace uhdfour::testing;

namespace {

// Direct windowed SSIM: explicit 2-D Gaussian weights at every valid window.
double ssim_oracle(const Tensor<double>& a, const Tensor<double>& b, std::size_t win = 11,
                   double sigma = 1.5) {
    const Shape s = a.shape();
    win = std::min({win, s.h, s.w});
    if (win % 2 == 0) --win;
    std::vector<double> g(win * win);
    double total = 0;
    const double c = (double(win) - 1) / 2;
    for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
            g[i * win + j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
            total += g[i * win + j];
        }
    for (double& v : g) v /= total;
    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t ch = 0; ch < s.c; ++ch)
            for (std::size_t y = 0; y + win <= s.h; ++y)
                for (std::size_t x = 0; x + win <= s.w; ++x) {
                    double ma = 0, mb = 0;
                    for (std::size_t i = 0; i < win; ++i)
                        for (std::size_t j = 0; j < win; ++j) {
                            ma += g[i * win + j] * a.at(n, ch, y + i, x + j);
                            mb += g[i * win + j] * b.at(n, ch, y + i, x + j);
                        }
                    double va = 0, vb = 0, cv = 0;
                    for (std::size_t i = 0; i < win; ++i)
                        for (std::size_t j = 0; j < win; ++j) {
                            const double da = a.at(n, ch, y + i, x + j) - ma;
                            const double db = b.at(n, ch, y + i, x + j) - mb;
                            va += g[i * win + j] * da * da;
                            vb += g[i * win + j] * db * db;
                            cv += g[i * win + j] * da * db;
                        }
                    acc += ((2 * ma * mb + c1) * (2 * cv + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    ++count;
                }
    return acc / double(count);
}

double mean_abs(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    return s / double(a.size());
}

Tensor<double> noisy(const Tensor<double>& x, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    std::vector<double> v(x.data().begin(), x.data().end());
    for (double& e : v) e += n(rng);
    return Tensor<double>(x.shape(), std::move(v));
}

}  // namespace

TEST(Losses, IdenticalInputsGiveZero) {
    const auto a = random_tensor<double>({1, 3, 24, 24}, 1, 0, 1);
    FeaturePyramid<double> pyr;
    EXPECT_EQ(l1_loss(a, a).item(), 0.0);
    EXPECT_NEAR(ssim_loss(a, a).item(), 0.0, 1e-12);
    EXPECT_EQ(perceptual_loss(a, a, pyr).item(), 0.0);
}

TEST(Losses, ConstantZeroVersusOne) {
    EXPECT_EQ(l1_loss(Tensor<float>::zeros({1, 3, 8, 8}), Tensor<float>::ones({1, 3, 8, 8})).item(), 1.0f);
}

TEST(Losses, SsimMatchesWindowedOracle) {
    const auto a = random_tensor<double>({2, 3, 20, 17}, 2, 0, 1);
    auto b = noisy(a, 0.1, 3);
    EXPECT_NEAR(ssim(a, b).item(), ssim_oracle(a, b), 1e-4);
    const auto af = a.cast<float>(), bf = b.cast<float>();
    EXPECT_NEAR(ssim(af, bf).item(), ssim_oracle(a, b), 1e-4);
    EXPECT_NEAR(ssim_metric(af, bf), ssim_oracle(a, b), 1e-4);
}

TEST(Losses, SsimWindowShrinksForSmallImages) {
    EXPECT_EQ(ssim_window_for(6, 9), 5u);
    EXPECT_EQ(ssim_window_for(64, 64), 11u);
    const auto a = random_tensor<double>({1, 3, 6, 8}, 4, 0, 1);
    const auto b = random_tensor<double>({1, 3, 6, 8}, 5, 0, 1);
    EXPECT_NEAR(ssim(a, b).item(), ssim_oracle(a, b), 1e-6);
}

TEST(Losses, ShapeMismatchRejected) {
    EXPECT_THROW(l1_loss(Tensor<float>({1, 3, 4, 4}), Tensor<float>({1, 3, 4, 5})), DimensionError);
    EXPECT_THROW(ssim(Tensor<float>({1, 3, 4, 4}), Tensor<float>({1, 1, 4, 4})), DimensionError);
}

TEST(Losses, PyramidIsFrozenAndSeeded) {
    FeaturePyramid<float> p1(7), p2(7), p3(8);
    EXPECT_EQ(p1.weights().size(), 4u);
    for (std::size_t s = 0; s < 4; ++s) {
        EXPECT_FALSE(p1.weights()[s].requires_grad());
        for (std::size_t i = 0; i < p1.weights()[s].size(); ++i)
            ASSERT_EQ(p1.weights()[s].data()[i], p2.weights()[s].data()[i]);
    }
    EXPECT_GT(max_abs_diff(p1.weights()[0], p3.weights()[0]), 0.0);
    const auto f = p1.features(random_tensor<float>({1, 3, 32, 32}, 1));
    ASSERT_EQ(f.size(), 4u);
    EXPECT_EQ(f[0].shape().h, 32u);
    EXPECT_EQ(f[1].shape().h, 16u);
    EXPECT_EQ(f[2].shape().h, 8u);
    EXPECT_EQ(f[3].shape().h, 4u);

    auto a = random_tensor<float>({1, 3, 16, 16}, 2).set_requires_grad(true);
    perceptual_loss(a, random_tensor<float>({1, 3, 16, 16}, 3), p1).backward();
    EXPECT_TRUE(a.has_grad());
    for (const auto& w : p1.weights()) EXPECT_FALSE(w.has_grad());
}

namespace {

ForwardOutputs<double> outputs_from(const Tensor<double>& y_hat, const Tensor<double>& y_lr) {
    ForwardOutputs<double> o;
    o.y_hat = y_hat;
    o.y_hat_lr = y_lr;
    return o;
}

}  // namespace

TEST(TotalLoss, PerfectPredictionIsZero) {
    const auto y = random_tensor<double>({1, 3, 32, 32}, 1, 0, 1);
    FeaturePyramid<double> pyr;
    const auto t = total_loss(outputs_from(y, bilinear_resize(y, 4, 4)), y, LossWeights{}, pyr);
    EXPECT_NEAR(t.total.item(), 0.0, 1e-12);
}

TEST(TotalLoss, OnlyPixelWeightGivesL1) {
    const auto y = random_tensor<double>({1, 3, 32, 32}, 1, 0, 1);
    const auto yh = random_tensor<double>({1, 3, 32, 32}, 2, 0, 1);
    FeaturePyramid<double> pyr;
    LossWeights w{1.0, 0.0, 0.0, 0.0};
    const auto t = total_loss(outputs_from(yh, random_tensor<double>({1, 3, 8, 8}, 3)), y, w, pyr);
    EXPECT_DOUBLE_EQ(t.total.item(), mean_abs(yh, y));
}

TEST(TotalLoss, DefaultWeightsRecomposeIndependentTerms) {
    const auto y = random_tensor<double>({2, 3, 32, 32}, 4, 0, 1);
    const auto yh = random_tensor<double>({2, 3, 32, 32}, 5, 0, 1);
    const auto yl = random_tensor<double>({2, 3, 16, 16}, 6, 0, 1);
    FeaturePyramid<double> pyr(11);
    const auto t = total_loss(outputs_from(yh, yl), y, LossWeights{}, pyr);

    const auto y_lr = bilinear_resize(y, 16, 16);
    const double l1 = mean_abs(yh, y);
    const double s = 1.0 - ssim_oracle(yh, y);
    const double lr = mean_abs(yl, y_lr);
    double perc = 0;
    const auto fa = pyr.features(yl), fb = pyr.features(y_lr);
    for (std::size_t k = 0; k < 4; ++k) {
        double acc = 0;
        for (std::size_t i = 0; i < fa[k].size(); ++i) acc += std::pow(fa[k].data()[i] - fb[k].data()[i], 2);
        perc += acc / double(fa[k].size());
    }
    const double expected = 1.0 * l1 + 0.0004 * s + 0.1 * lr + 0.0002 * perc;
    EXPECT_NEAR(t.l1.item(), l1, 1e-12);
    EXPECT_NEAR(t.ssim.item(), s, 1e-9);
    EXPECT_NEAR(t.lr_l1.item(), lr, 1e-12);
    EXPECT_NEAR(t.perceptual.item(), perc, 1e-12);
    EXPECT_NEAR(t.total.item(), expected, 1e-6);
}

TEST(TotalLoss, NegativeWeightRejected) {
    const auto y = random_tensor<double>({1, 3, 16, 16}, 4, 0, 1);
    FeaturePyramid<double> pyr;
    LossWeights w;
    w.ssim = -1;
    EXPECT_THROW(total_loss(outputs_from(y, bilinear_resize(y, 8, 8)), y, w, pyr), std::invalid_argument);
}

template <class T>
class LossGradients : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(LossGradients, Precisions);

TYPED_TEST(LossGradients, TotalLossWrtBothOutputs) {
    using T = TypeParam;
    const auto y = random_tensor<double>({1, 3, 16, 16}, 7, 0.2, 0.8);
    // Predictions sit 0.1-0.4 away from the targets so no L1 kink is crossed.
    auto offset = [](const Tensor<double>& base, std::uint64_t seed) {
        const auto u = random_tensor<double>(base.shape(), seed);
        std::vector<double> v(base.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = base.data()[i] + (u.data()[i] >= 0 ? 0.1 + 0.3 * u.data()[i] : -0.1 + 0.3 * u.data()[i]);
        return Tensor<double>(base.shape(), std::move(v));
    };
    const auto y_lr = bilinear_resize(y, 8, 8);
    const auto yh = offset(y, 8).template cast<T>();
    const auto yl = offset(y_lr, 9).template cast<T>();
    const auto y_lo = y.template cast<T>();
    FeaturePyramid<T> pyr_lo(3);
    FeaturePyramid<double> pyr_hi(3);
    auto fn = [&](auto& leaves) {
        using U = typename std::decay_t<decltype(leaves[0])>::value_type;
        ForwardOutputs<U> o;
        o.y_hat = leaves[0];
        o.y_hat_lr = leaves[1];
        if constexpr (std::is_same_v<U, double>) return total_loss(o, y, LossWeights{}, pyr_hi).total;
        else return total_loss(o, y_lo, LossWeights{}, pyr_lo).total;
    };
    auto r = check_gradients<T>(fn, std::vector<Tensor<T>>{yh, yl}, grad_options<T>(200));
    EXPECT_TRUE(r.passed) << r.max_rel_error << " leaf " << r.worst_leaf;

    // The lightly weighted terms on their own. Their per-pixel gradients are
    // ~1e-5 against a loss of order one, so the step sits near the
    // cube-root-of-epsilon optimum instead of the default 1e-6.
    auto fine = grad_options<T>(200);
    fine.step = 1e-5;
    auto terms = [&](auto& leaves) {
        using U = typename std::decay_t<decltype(leaves[0])>::value_type;
        if constexpr (std::is_same_v<U, double>) {
            return add(ssim_loss(leaves[0], y), perceptual_loss(leaves[1], y_lr, pyr_hi));
        } else {
            return add(ssim_loss(leaves[0], y_lo), perceptual_loss(leaves[1], y_lr.template cast<T>(), pyr_lo));
        }
    };
    auto r2 = check_gradients<T>(terms, std::vector<Tensor<T>>{yh, yl}, fine);
    EXPECT_TRUE(r2.passed) << r2.max_rel_error << " leaf " << r2.worst_leaf << "[" << r2.worst_index << "] analytic " << r2.worst_analytic << " numeric " << r2.worst_numeric;
}

TEST(Metrics, PsnrClosedFormAndIdentity) {
    const auto a = Tensor<double>::zeros({1, 3, 8, 8});
    const auto b = Tensor<double>::full({1, 3, 8, 8}, 0.1);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_EQ(capped(psnr(a, a)), 100.0);
    const auto x = random_tensor<double>({1, 3, 16, 16}, 1, 0, 1);
    EXPECT_NEAR(ssim_metric(x, x), 1.0, 1e-12);
}

TEST(Metrics, PsnrMatchesScalarOracle) {
    const auto a = random_tensor<float>({1, 3, 13, 11}, 1, 0, 1);
    const auto b = random_tensor<float>({1, 3, 13, 11}, 2, 0, 1);
    double mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += std::pow(double(a.data()[i]) - double(b.data()[i]), 2);
    mse /= double(a.size());
    EXPECT_NEAR(psnr(a, b), 10 * std::log10(1 / mse), 1e-4);
}

TEST(Metrics, SymmetryAndBounds) {
    const auto a = random_tensor<double>({1, 3, 24, 24}, 1, 0, 1);
    const auto b = noisy(a, 0.2, 2);
    EXPECT_NEAR(ssim_metric(a, b), ssim_metric(b, a), 1e-6);
    EXPECT_NEAR(psnr(a, b), psnr(b, a), 1e-9);
    std::vector<double> inv(a.size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - a.data()[i];
    const double anti = ssim_metric(a, Tensor<double>(a.shape(), inv));
    EXPECT_GE(anti, -1.0);
    EXPECT_LT(anti, 0.0);
    EXPECT_LE(ssim_metric(a, b), 1.0);
    EXPECT_LT(ssim_metric(a, b), 1.0 - 1e-6);
}

TEST(Metrics, PsnrDecreasesWithNoise) {
    const auto a = random_tensor<double>({1, 3, 32, 32}, 1, 0, 1);
    double last = INFINITY;
    for (double sigma : {0.01, 0.02, 0.05, 0.1, 0.2}) {
        const double p = psnr(a, noisy(a, sigma, 5));
        EXPECT_LT(p, last);
        last = p;
    }
}
