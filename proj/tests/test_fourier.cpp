#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "test_util.hpp"
#include "uhdfour/fourier.hpp"
#include "uhdfour/gradcheck.hpp"

using namespace uhdfour;
using uhdfour::testing::random_tensor;

namespace {

using cplx = std::complex<double>;

// O(N^2) double-sum DFT of one plane; sign -1 forward, +1 inverse (unnormalized).
std::vector<cplx> naive_dft(const std::vector<cplx>& x, std::size_t h, std::size_t w, int sign) {
    std::vector<cplx> out(h * w);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            cplx acc{};
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    const double a = sign * 2.0 * std::numbers::pi *
                                     (double(u * y) / double(h) + double(v * xx) / double(w));
                    acc += x[y * w + xx] * cplx(std::cos(a), std::sin(a));
                }
            out[u * w + v] = acc;
        }
    return out;
}

}  // namespace

TEST(Fft, ConstantImageIsDcOnly) {
    Tensor<float> x({1, 1, 6, 10}, 0.3f);
    auto s = fft2(x);
    EXPECT_NEAR(s.amplitude.at(0, 0, 0, 0), 0.3 * 60, 1e-4);
    EXPECT_EQ(s.phase.at(0, 0, 0, 0), 0.0f);
    for (std::size_t i = 1; i < 60; ++i) EXPECT_NEAR(s.amplitude.data()[i], 0.0, 1e-4);
}

TEST(Fft, ImpulseHasFlatSpectrum) {
    Tensor<float> x({1, 1, 8, 12}, 0.0f);
    x.at(0, 0, 0, 0) = 1.0f;
    auto s = fft2(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(s.amplitude.data()[i], 1.0, 1e-6);
        EXPECT_NEAR(s.phase.data()[i], 0.0, 1e-6);
    }
}

TEST(Fft, MatchesNaiveDft) {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {6, 10}, {12, 7}, {5, 3}}) {
        auto x = random_tensor<float>({1, 2, h, w}, 100 + h * w);
        auto [re, im] = fft2_parts(x);
        for (std::size_t c = 0; c < 2; ++c) {
            std::vector<cplx> plane(h * w);
            for (std::size_t i = 0; i < h * w; ++i) plane[i] = x.data()[c * h * w + i];
            const auto ref = naive_dft(plane, h, w, -1);
            for (std::size_t i = 0; i < h * w; ++i) {
                EXPECT_NEAR(re.data()[c * h * w + i], ref[i].real(), 1e-4);
                EXPECT_NEAR(im.data()[c * h * w + i], ref[i].imag(), 1e-4);
            }
        }
    }
}

TEST(Fft, InverseOfHandBuiltSpectrum) {
    // 2x2 spectrum {4, 1+i; -2, 0.5i}.
    Tensor<double> re({1, 1, 2, 2}, {4.0, 1.0, -2.0, 0.0});
    Tensor<double> im({1, 1, 2, 2}, {0.0, 1.0, 0.0, 0.5});
    auto y = ifft2_parts(re, im);
    std::vector<cplx> s{{4, 0}, {1, 1}, {-2, 0}, {0, 0.5}};
    auto ref = naive_dft(s, 2, 2, +1);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], ref[i].real() / 4.0, 1e-12);
}

TEST(Fft, RoundtripParsevalHermitian) {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {12, 20}, {9, 7}, {96, 96}}) {
        auto x = random_tensor<float>({2, 3, h, w}, 7 * h + w, 0.0, 1.0);
        auto s = fft2(x);
        auto back = ifft2(s);
        EXPECT_LT(uhdfour::testing::max_abs_diff(back, x), 1e-4);

        double energy = 0.0, spec_energy = 0.0, max_amp = 0.0;
        for (float v : x.data()) energy += double(v) * v;
        for (float a : s.amplitude.data()) {
            spec_energy += double(a) * a;
            max_amp = std::max<double>(max_amp, a);
        }
        EXPECT_NEAR(spec_energy / double(h * w), energy, 1e-4 * energy);

        for (std::size_t p = 0; p < 6; ++p)
            for (std::size_t u = 0; u < h; ++u)
                for (std::size_t v = 0; v < w; ++v) {
                    const std::size_t a = (p * h + u) * w + v;
                    const std::size_t b = (p * h + (h - u) % h) * w + (w - v) % w;
                    EXPECT_NEAR(s.amplitude.data()[a], s.amplitude.data()[b], 1e-4);
                    EXPECT_GE(s.amplitude.data()[a], 0.0f);
                    if (s.amplitude.data()[a] > 1e-3 && std::abs(s.phase.data()[a]) < 3.14) {
                        EXPECT_NEAR(s.phase.data()[a], -s.phase.data()[b], 1e-4);
                    }
                }

        // Imaginary residue of the complex inverse transform.
        std::vector<fft::cplx> buf(x.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = std::polar<double>(s.amplitude.data()[i], s.phase.data()[i]);
        fft::transform2d(buf.data(), 6, h, w, true);
        double max_imag = 0.0;
        for (const auto& z : buf) max_imag = std::max(max_imag, std::abs(z.imag()) / double(h * w));
        EXPECT_LT(max_imag, 1e-4 * max_amp);
    }
}

TEST(Fft, PhaseInHalfOpenInterval) {
    auto x = random_tensor<float>({1, 1, 8, 8}, 3, -1.0, 1.0);
    // Force a negative DC coefficient: its phase must be +pi, not -pi.
    for (auto& v : x.mutable_data()) v -= 1.0f;
    auto s = fft2(x);
    EXPECT_FLOAT_EQ(s.phase.at(0, 0, 0, 0), static_cast<float>(std::numbers::pi));
    for (float p : s.phase.data()) {
        EXPECT_GT(p, -static_cast<float>(std::numbers::pi));
        EXPECT_LE(p, static_cast<float>(std::numbers::pi));
    }
}

TEST(SwapAmplitude, SelfSwapAndDcTransfer) {
    auto x = random_tensor<float>({1, 3, 16, 12}, 5, 0.0, 1.0);
    auto [a, b] = swap_amplitude(x, x);
    EXPECT_LT(uhdfour::testing::max_abs_diff(a, x), 1e-4);
    EXPECT_LT(uhdfour::testing::max_abs_diff(b, x), 1e-4);

    auto x1 = random_tensor<float>({1, 1, 16, 16}, 6, 0.0, 1.0);
    auto x2 = random_tensor<float>({1, 1, 16, 16}, 7, 0.0, 0.2);
    auto [s1, s2] = swap_amplitude(x1, x2);
    auto avg = [](const Tensor<float>& t) {
        double m = 0;
        for (float v : t.data()) m += v;
        return m / double(t.size());
    };
    EXPECT_NEAR(avg(s1), avg(x1), 1e-4 * avg(x1) + 1e-6);
    EXPECT_NEAR(avg(s2), avg(x2), 1e-4 * avg(x2) + 1e-6);
    EXPECT_THROW(swap_amplitude(x1, x), DimensionError);
}

TEST(SpectrumImage, ViewsAreNormalized) {
    Tensor<float> c({1, 1, 8, 8}, 0.5f);
    auto v = spectrum_image(fft2(c));
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            EXPECT_FLOAT_EQ(v.amplitude.at(0, 0, y, x), (y == 4 && x == 4) ? 1.0f : 0.0f);

    Tensor<float> impulse({1, 1, 8, 8}, 0.0f);
    impulse.at(0, 0, 0, 0) = 1.0f;
    auto vi = spectrum_image(fft2(impulse));
    for (float a : vi.amplitude.data()) EXPECT_EQ(a, vi.amplitude.data()[0]);

    auto zero = spectrum_image(fft2(Tensor<float>({1, 2, 4, 4}, 0.0f)));
    for (float a : zero.amplitude.data()) EXPECT_EQ(a, 0.0f);

    auto r = spectrum_image(fft2(random_tensor<float>({1, 3, 10, 14}, 8)));
    for (float a : r.amplitude.data()) EXPECT_TRUE(a >= 0.0f && a <= 1.0f);
    for (float p : r.phase.data()) EXPECT_TRUE(p >= 0.0f && p <= 1.0f);
}

TEST(AmplitudeSimilarity, PanelsPerFactor) {
    auto x = random_tensor<float>({1, 3, 32, 32}, 9, 0.0, 1.0);
    auto same = amplitude_similarity(x, {1});
    ASSERT_EQ(same.size(), 2u);
    for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_EQ(same[0].views.amplitude.data()[i], same[1].views.amplitude.data()[i]);

    Tensor<float> c({1, 1, 32, 32}, 0.25f);
    auto panels = amplitude_similarity(c, {2, 4, 8});
    ASSERT_EQ(panels.size(), 4u);
    for (const auto& p : panels) {
        const Shape s = p.views.amplitude.shape();
        for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t xx = 0; xx < s.w; ++xx)
                EXPECT_FLOAT_EQ(p.views.amplitude.at(0, 0, y, xx),
                                (y == s.h / 2 && xx == s.w / 2) ? 1.0f : 0.0f);
    }
    EXPECT_THROW(amplitude_similarity(c, {3}), DimensionError);
}

template <class T>
class FourierGradients : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(FourierGradients, Precisions);

TYPED_TEST(FourierGradients, Fft2AndIfft2) {
    using T = TypeParam;
    auto x = random_tensor<T>({1, 2, 6, 8}, 17);
    auto fn = [](auto& l) {
        using U = typename std::decay_t<decltype(l[0])>::value_type;
        auto s = fft2(l[0]);
        // Mix amplitude and phase non-trivially before going back.
        auto a = mul_scalar(s.amplitude, U(0.9));
        auto p = add_scalar(mul_scalar(s.phase, U(0.5)), U(0.2));
        auto y = ifft2(Spectrum<U>{a, p});
        return add(mean(square(y)), mean(s.amplitude));
    };
    GradCheckOptions opts;
    opts.tolerance = std::is_same_v<T, float> ? 1e-3 : 1e-6;
    opts.max_coords = 100;
    auto r = check_gradients<T>(fn, std::vector<Tensor<T>>{x}, opts);
    EXPECT_TRUE(r.passed) << r.max_rel_error << " a=" << r.worst_analytic
                          << " n=" << r.worst_numeric;
}
