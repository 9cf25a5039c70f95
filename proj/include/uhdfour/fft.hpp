#pragma once

// Complex FFT of arbitrary length: iterative radix-2 for powers of two,
// Bluestein's chirp-z reduction otherwise. Plans are cached per length.

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

namespace uhdfour::fft {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

struct Radix2Plan {
    std::size_t n = 0;
    std::vector<std::size_t> bitrev;
    std::vector<cplx> twiddle;  // e^{-2 pi i k / n}, k < n/2

    explicit Radix2Plan(std::size_t size) : n(size), bitrev(size), twiddle(size / 2) {
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n) ++bits;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            bitrev[i] = r;
        }
        for (std::size_t k = 0; k < n / 2; ++k) {
            const double a = -2.0 * std::numbers::pi * static_cast<double>(k) /
                             static_cast<double>(n);
            twiddle[k] = {std::cos(a), std::sin(a)};
        }
    }

    void run(cplx* data, bool inverse) const {
        for (std::size_t i = 0; i < n; ++i)
            if (i < bitrev[i]) std::swap(data[i], data[bitrev[i]]);
        for (std::size_t len = 2; len <= n; len <<= 1) {
            const std::size_t half = len / 2;
            const std::size_t stride = n / len;
            for (std::size_t start = 0; start < n; start += len) {
                for (std::size_t k = 0; k < half; ++k) {
                    cplx w = twiddle[k * stride];
                    if (inverse) w = std::conj(w);
                    const cplx u = data[start + k];
                    const cplx v = data[start + k + half] * w;
                    data[start + k] = u + v;
                    data[start + k + half] = u - v;
                }
            }
        }
    }
};

struct Plan {
    std::size_t n = 0;
    std::unique_ptr<Radix2Plan> direct;
    // Bluestein: chirp[k] = e^{-i pi k^2 / n}; kernel_hat = FFT of conj chirp, zero padded.
    std::unique_ptr<Radix2Plan> padded;
    std::vector<cplx> chirp;
    std::vector<cplx> kernel_hat;

    explicit Plan(std::size_t size) : n(size) {
        if (is_pow2(n)) {
            direct = std::make_unique<Radix2Plan>(n);
            return;
        }
        std::size_t m = 1;
        while (m < 2 * n - 1) m <<= 1;
        padded = std::make_unique<Radix2Plan>(m);
        chirp.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            // k^2 mod 2n keeps the angle argument small and exact.
            const std::size_t k2 = (k * k) % (2 * n);
            const double a = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
            chirp[k] = {std::cos(a), std::sin(a)};
        }
        kernel_hat.assign(m, cplx{});
        kernel_hat[0] = std::conj(chirp[0]);
        for (std::size_t k = 1; k < n; ++k) {
            kernel_hat[k] = std::conj(chirp[k]);
            kernel_hat[m - k] = std::conj(chirp[k]);
        }
        padded->run(kernel_hat.data(), false);
    }

    // Unnormalized transform; inverse uses the conjugate kernel.
    void run(cplx* data, bool inverse) const {
        if (n <= 1) return;
        if (direct) {
            direct->run(data, inverse);
            return;
        }
        const std::size_t m = padded->n;
        std::vector<cplx> a(m, cplx{});
        for (std::size_t k = 0; k < n; ++k) {
            const cplx x = inverse ? std::conj(data[k]) : data[k];
            a[k] = x * chirp[k];
        }
        padded->run(a.data(), false);
        for (std::size_t k = 0; k < m; ++k) a[k] *= kernel_hat[k];
        padded->run(a.data(), true);
        const double scale = 1.0 / static_cast<double>(m);
        for (std::size_t k = 0; k < n; ++k) {
            const cplx y = a[k] * scale * chirp[k];
            data[k] = inverse ? std::conj(y) : y;
        }
    }
};

inline std::shared_ptr<const Plan> plan_for(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, std::shared_ptr<const Plan>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_shared<const Plan>(n);
    return slot;
}

}  // namespace detail

/// In-place unnormalized 1-D transform (sign -1 forward, +1 inverse).
inline void transform(std::vector<cplx>& data, bool inverse = false) {
    detail::plan_for(data.size())->run(data.data(), inverse);
}

/// In-place unnormalized 2-D transform of `planes` consecutive H x W planes.
inline void transform2d(cplx* data, std::size_t planes, std::size_t h, std::size_t w,
                        bool inverse) {
    const auto row_plan = detail::plan_for(w);
    const auto col_plan = detail::plan_for(h);
    std::vector<cplx> column(h);
    for (std::size_t p = 0; p < planes; ++p) {
        cplx* plane = data + p * h * w;
        for (std::size_t y = 0; y < h; ++y) row_plan->run(plane + y * w, inverse);
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t y = 0; y < h; ++y) column[y] = plane[y * w + x];
            col_plan->run(column.data(), inverse);
            for (std::size_t y = 0; y < h; ++y) plane[y * w + x] = column[y];
        }
    }
}

/// Forward 2-D transform of real planes. The result is symmetrized so that
/// X[u,v] == conj(X[-u,-v]) holds exactly; self-conjugate bins are real.
inline std::vector<cplx> real_forward2d(const double* real, std::size_t planes, std::size_t h,
                                        std::size_t w) {
    std::vector<cplx> buf(planes * h * w);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {real[i], 0.0};
    transform2d(buf.data(), planes, h, w, false);
    for (std::size_t p = 0; p < planes; ++p) {
        cplx* plane = buf.data() + p * h * w;
        for (std::size_t u = 0; u < h; ++u) {
            for (std::size_t v = 0; v < w; ++v) {
                const std::size_t mu = (h - u) % h;
                const std::size_t mv = (w - v) % w;
                const std::size_t a = u * w + v;
                const std::size_t b = mu * w + mv;
                if (b < a) continue;
                if (a == b) {
                    plane[a] = {plane[a].real(), 0.0};
                } else {
                    const cplx avg = 0.5 * (plane[a] + std::conj(plane[b]));
                    plane[a] = avg;
                    plane[b] = std::conj(avg);
                }
            }
        }
    }
    return buf;
}

}  // namespace uhdfour::fft
