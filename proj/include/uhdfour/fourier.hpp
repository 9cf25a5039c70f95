#pragma once

// Amplitude/phase view of the 2-D DFT, differentiable in both directions, and
// the spectrum experiments built on it (amplitude swapping, cross-scale views).

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include "uhdfour/fft.hpp"
#include "uhdfour/ops.hpp"
#include "uhdfour/tensor.hpp"

namespace uhdfour {

/// Per-channel spectrum of a real tensor. Amplitude is non-negative, phase
/// lies in (-pi, pi].
template <class T>
struct Spectrum {
    Tensor<T> amplitude;
    Tensor<T> phase;

    const Shape& shape() const { return amplitude.shape(); }
};

namespace detail {

template <class T>
std::vector<fft::cplx> forward_of(const std::vector<T>& values, const Shape& s) {
    std::vector<double> real(values.begin(), values.end());
    return fft::real_forward2d(real.data(), s.n * s.c, s.h, s.w);
}

}  // namespace detail

/// Real and imaginary parts of the unnormalized forward DFT of each plane.
template <class T>
std::pair<Tensor<T>, Tensor<T>> fft2_parts(const Tensor<T>& x) {
    const Shape s = x.shape();
    require(s.h >= 1 && s.w >= 1, "fft2: empty spatial extent");
    const auto spec = detail::forward_of(x.node()->data, s);
    std::vector<T> re(spec.size()), im(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) {
        re[i] = static_cast<T>(spec[i].real());
        im[i] = static_cast<T>(spec[i].imag());
    }
    // Adjoint: dL/dx = Re(F^H (g_re + i g_im)).
    auto adjoint = [s](const detail::Node<T>& self, bool imaginary) {
        T* g = detail::grad_of(self.inputs[0]);
        if (!g) return;
        std::vector<fft::cplx> buf(self.grad.size());
        for (std::size_t i = 0; i < buf.size(); ++i) {
            const double v = self.grad[i];
            buf[i] = imaginary ? fft::cplx{0.0, v} : fft::cplx{v, 0.0};
        }
        fft::transform2d(buf.data(), s.n * s.c, s.h, s.w, true);
        for (std::size_t i = 0; i < buf.size(); ++i) g[i] += static_cast<T>(buf[i].real());
    };
    auto re_t = detail::make_result<T>(s, std::move(re), {x.node()},
                                       [adjoint](const detail::Node<T>& self) {
                                           adjoint(self, false);
                                       });
    auto im_t = detail::make_result<T>(s, std::move(im), {x.node()},
                                       [adjoint](const detail::Node<T>& self) {
                                           adjoint(self, true);
                                       });
    return {std::move(re_t), std::move(im_t)};
}

/// Real part of the inverse DFT (1/(H*W) normalization) of re + i*im.
template <class T>
Tensor<T> ifft2_parts(const Tensor<T>& re, const Tensor<T>& im) {
    require(re.shape() == im.shape(), "ifft2: real/imaginary shape mismatch " +
                                          re.shape().str() + " vs " + im.shape().str());
    const Shape s = re.shape();
    std::vector<fft::cplx> buf(s.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {re.data()[i], im.data()[i]};
    fft::transform2d(buf.data(), s.n * s.c, s.h, s.w, true);
    const double norm = 1.0 / static_cast<double>(s.plane());
    std::vector<T> out(s.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(buf[i].real() * norm);
    return detail::make_result<T>(
        s, std::move(out), {re.node(), im.node()}, [s](const detail::Node<T>& self) {
            T* gre = detail::grad_of(self.inputs[0]);
            T* gim = detail::grad_of(self.inputs[1]);
            if (!gre && !gim) return;
            // Adjoint: (dre, dim) = (Re, Im) of F(g) / (H*W).
            const auto fg = detail::forward_of(self.grad, s);
            const double norm = 1.0 / static_cast<double>(s.plane());
            for (std::size_t i = 0; i < fg.size(); ++i) {
                if (gre) gre[i] += static_cast<T>(fg[i].real() * norm);
                if (gim) gim[i] += static_cast<T>(fg[i].imag() * norm);
            }
        });
}

/// Amplitude and phase of the forward DFT. Each output's adjoint runs through
/// the polar Jacobian and the transform in double before a single rounding,
/// which keeps float32 gradients accurate next to large DC amplitudes.
template <class T>
Spectrum<T> fft2(const Tensor<T>& x) {
    const Shape s = x.shape();
    require(s.h >= 1 && s.w >= 1, "fft2: empty spatial extent");
    auto spec = std::make_shared<const std::vector<fft::cplx>>(detail::forward_of(x.node()->data, s));
    std::vector<T> amp(spec->size()), pha(spec->size());
    for (std::size_t i = 0; i < spec->size(); ++i) {
        amp[i] = static_cast<T>(std::abs((*spec)[i]));
        pha[i] = static_cast<T>(std::arg((*spec)[i]));
    }
    // which = 0: d|z| = (re, im)/r; which = 1: d arg z = (-im, re)/r^2.
    auto adjoint = [s, spec](const detail::Node<T>& self, int which) {
        T* g = detail::grad_of(self.inputs[0]);
        if (!g) return;
        std::vector<fft::cplx> buf(self.grad.size());
        for (std::size_t i = 0; i < buf.size(); ++i) {
            const fft::cplx z = (*spec)[i];
            const double r = std::abs(z);
            if (r < kPolarGradFloor) continue;
            const double gi = self.grad[i];
            buf[i] = which == 0 ? fft::cplx{gi * z.real() / r, gi * z.imag() / r}
                                : fft::cplx{-gi * z.imag() / (r * r), gi * z.real() / (r * r)};
        }
        fft::transform2d(buf.data(), s.n * s.c, s.h, s.w, true);
        for (std::size_t i = 0; i < buf.size(); ++i) g[i] += static_cast<T>(buf[i].real());
    };
    auto a = detail::make_result<T>(s, std::move(amp), {x.node()},
                                    [adjoint](const detail::Node<T>& self) { adjoint(self, 0); });
    auto p = detail::make_result<T>(s, std::move(pha), {x.node()},
                                    [adjoint](const detail::Node<T>& self) { adjoint(self, 1); });
    return {std::move(a), std::move(p)};
}

/// Inverse transform of amplitude/phase planes: Re(IDFT(A * e^{iP})).
template <class T>
Tensor<T> ifft2(const Spectrum<T>& sp) {
    require(sp.amplitude.shape() == sp.phase.shape(), "ifft2: amplitude/phase shape mismatch " +
                                                          sp.amplitude.shape().str() + " vs " +
                                                          sp.phase.shape().str());
    const Shape s = sp.amplitude.shape();
    std::vector<fft::cplx> buf(s.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = std::polar<double>(sp.amplitude.data()[i], sp.phase.data()[i]);
    fft::transform2d(buf.data(), s.n * s.c, s.h, s.w, true);
    const double norm = 1.0 / static_cast<double>(s.plane());
    std::vector<T> out(s.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(buf[i].real() * norm);
    return detail::make_result<T>(
        s, std::move(out), {sp.amplitude.node(), sp.phase.node()},
        [s](const detail::Node<T>& self) {
            T* ga = detail::grad_of(self.inputs[0]);
            T* gp = detail::grad_of(self.inputs[1]);
            if (!ga && !gp) return;
            const auto fg = detail::forward_of(self.grad, s);
            const double norm = 1.0 / static_cast<double>(s.plane());
            const auto& amp = self.inputs[0]->data;
            const auto& pha = self.inputs[1]->data;
            for (std::size_t i = 0; i < fg.size(); ++i) {
                const double gre = fg[i].real() * norm, gim = fg[i].imag() * norm;
                const double c = std::cos(static_cast<double>(pha[i]));
                const double sn = std::sin(static_cast<double>(pha[i]));
                if (ga) ga[i] += static_cast<T>(gre * c + gim * sn);
                if (gp) gp[i] += static_cast<T>(amp[i] * (gim * c - gre * sn));
            }
        });
}

/// (ifft2(A1, P2), ifft2(A2, P1)); unclamped.
template <class T>
std::pair<Tensor<T>, Tensor<T>> swap_amplitude(const Tensor<T>& x1, const Tensor<T>& x2) {
    if (!(x1.shape() == x2.shape())) {
        throw DimensionError("swap_amplitude: shape mismatch " + x1.shape().str() + " vs " +
                             x2.shape().str());
    }
    const auto s1 = fft2(x1);
    const auto s2 = fft2(x2);
    return {ifft2(Spectrum<T>{s1.amplitude, s2.phase}), ifft2(Spectrum<T>{s2.amplitude, s1.phase})};
}

template <class T>
struct SpectrumViews {
    Tensor<T> amplitude;  // log(1 + A), centered, min-max normalized per plane
    Tensor<T> phase;      // (P + pi) / (2 pi), centered
};

namespace detail {

// Moves the zero frequency of every plane to (H/2, W/2).
template <class T>
std::vector<T> center_dc(std::span<const T> values, const Shape& s) {
    std::vector<T> out(values.size());
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t u = 0; u < s.h; ++u)
            for (std::size_t v = 0; v < s.w; ++v) {
                const std::size_t du = (u + s.h / 2) % s.h;
                const std::size_t dv = (v + s.w / 2) % s.w;
                out[(p * s.h + du) * s.w + dv] = values[(p * s.h + u) * s.w + v];
            }
    return out;
}

}  // namespace detail

template <class T>
SpectrumViews<T> spectrum_image(const Spectrum<T>& s) {
    const Shape shape = s.shape();
    auto amp = detail::center_dc(s.amplitude.data(), shape);
    auto pha = detail::center_dc(s.phase.data(), shape);
    const std::size_t plane = shape.plane();
    for (std::size_t p = 0; p < shape.n * shape.c; ++p) {
        T* a = amp.data() + p * plane;
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < plane; ++i) {
            a[i] = static_cast<T>(std::log1p(std::max<double>(a[i], 0.0)));
            const double v = a[i];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < plane; ++i)
            a[i] = range > 0.0 ? static_cast<T>(std::clamp((a[i] - lo) / range, 0.0, 1.0)) : T(0);
    }
    for (T& v : pha) {
        v = static_cast<T>(std::clamp((v + std::numbers::pi) / (2.0 * std::numbers::pi), 0.0, 1.0));
    }
    return {Tensor<T>(shape, std::move(amp)), Tensor<T>(shape, std::move(pha))};
}

template <class T>
struct SpectrumPanel {
    std::size_t factor = 1;  // 1 for the full-resolution input
    SpectrumViews<T> views;
};

/// Spectrum views of the input and of each bilinear-downsampled version, in
/// order [input, factors...]. Deliberately qualitative: no similarity score.
template <class T>
std::vector<SpectrumPanel<T>> amplitude_similarity(const Tensor<T>& x,
                                                   const std::vector<std::size_t>& factors) {
    const Shape s = x.shape();
    std::vector<SpectrumPanel<T>> panels;
    panels.push_back({1, spectrum_image(fft2(x))});
    for (std::size_t f : factors) {
        if (f == 0 || s.h % f != 0 || s.w % f != 0) {
            throw DimensionError("amplitude_similarity: factor " + std::to_string(f) +
                                 " does not divide " + std::to_string(s.h) + "x" +
                                 std::to_string(s.w));
        }
        panels.push_back({f, spectrum_image(fft2(bilinear_resize(x, s.h / f, s.w / f)))});
    }
    return panels;
}

/// Horizontal montage (top-aligned, zero background, `gap` pixels apart).
template <class T>
Tensor<T> side_by_side(const std::vector<Tensor<T>>& images, std::size_t gap = 4) {
    require(!images.empty(), "side_by_side: no images");
    const std::size_t c = images.front().shape().c;
    std::size_t h = 0, w = 0;
    for (const auto& im : images) {
        require(im.shape().n == 1 && im.shape().c == c, "side_by_side: incompatible panels");
        h = std::max(h, im.shape().h);
        w += im.shape().w;
    }
    w += gap * (images.size() - 1);
    Tensor<T> out(Shape{1, c, h, w});
    std::size_t x0 = 0;
    for (const auto& im : images) {
        const Shape s = im.shape();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x) out.at(0, ch, y, x0 + x) = im.at(0, ch, y, x);
        x0 += s.w + gap;
    }
    return out;
}

}  // namespace uhdfour
