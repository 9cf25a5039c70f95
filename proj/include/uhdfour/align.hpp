#pragma once

// Pair alignment: per-channel statistic matching (AdaIN), ECC affine
// estimation on a three-level luma pyramid, and inverse-mapped affine warps.

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "uhdfour/tensor.hpp"

namespace uhdfour {

/// Row-major 2x3 matrix mapping a source pixel (x, y, 1) to its destination.
struct AffineMatrix {
    std::array<double, 6> a{1, 0, 0, 0, 1, 0};

    static AffineMatrix identity() { return {}; }
    static AffineMatrix translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }
    /// Rotation by `degrees` about (cx, cy) followed by a translation.
    static AffineMatrix rotation(double degrees, double cx, double cy, double tx = 0, double ty = 0) {
        const double r = degrees * std::acos(-1.0) / 180.0;
        const double c = std::cos(r), s = std::sin(r);
        return {{c, -s, cx - c * cx + s * cy + tx, s, c, cy - s * cx - c * cy + ty}};
    }

    double det() const { return a[0] * a[4] - a[1] * a[3]; }
    bool valid() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return std::abs(det()) > 1e-8;
    }
    std::array<double, 2> apply(double x, double y) const {
        return {a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5]};
    }
    AffineMatrix inverse() const {
        if (!valid()) throw std::domain_error("affine matrix is not invertible");
        const double d = det();
        const double i0 = a[4] / d, i1 = -a[1] / d, i3 = -a[3] / d, i4 = a[0] / d;
        return {{i0, i1, -(i0 * a[2] + i1 * a[5]), i3, i4, -(i3 * a[2] + i4 * a[5])}};
    }
    /// Rotation angle of the linear part in degrees.
    double rotation_degrees() const { return std::atan2(a[3], a[0]) * 180.0 / std::acos(-1.0); }
};

/// Largest displacement between two matrices over the corners of an h x w image.
inline double endpoint_error(const AffineMatrix& m1, const AffineMatrix& m2, std::size_t h, std::size_t w) {
    double worst = 0.0;
    for (double y : {0.0, double(h) - 1.0})
        for (double x : {0.0, double(w) - 1.0}) {
            const auto p = m1.apply(x, y), q = m2.apply(x, y);
            worst = std::max(worst, std::hypot(p[0] - q[0], p[1] - q[1]));
        }
    return worst;
}

class AlignmentError : public std::runtime_error {
   public:
    AlignmentError(const std::string& what, AffineMatrix last) : std::runtime_error(what), last_valid(last) {}
    AffineMatrix last_valid;
};

/// Per channel: (src - mu_src) / sigma_src * sigma_ref + mu_ref over each plane.
template <class T>
Tensor<T> adain_match(const Tensor<T>& src, const Tensor<T>& ref) {
    const Shape s = src.shape(), r = ref.shape();
    if (s.c != r.c || s.n != r.n) {
        throw DimensionError("adain_match: channel mismatch " + s.str() + " vs " + r.str());
    }
    auto stats = [](std::span<const T> v) {
        double mu = 0.0;
        for (T x : v) mu += x;
        mu /= static_cast<double>(v.size());
        double var = 0.0;
        for (T x : v) var += (x - mu) * (x - mu);
        return std::array<double, 2>{mu, std::sqrt(var / static_cast<double>(v.size()))};
    };
    Tensor<T> out(s);
    auto o = out.mutable_data();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const auto sv = src.data().subspan(p * s.plane(), s.plane());
        const auto [mu_s, sd_s] = stats(sv);
        const auto [mu_r, sd_r] = stats(ref.data().subspan(p * r.plane(), r.plane()));
        const double k = sd_r / std::max(sd_s, 1e-6);
        for (std::size_t i = 0; i < sv.size(); ++i)
            o[p * s.plane() + i] = static_cast<T>((sv[i] - mu_s) * k + mu_r);
    }
    return out;
}

namespace detail {

struct Gray {
    std::size_t h = 0, w = 0;
    std::vector<double> v;
    double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

/// Bilinear sample; false outside the grid spanned by pixel centers.
inline bool sample(const Gray& g, double x, double y, double& out) {
    if (!(x >= 0.0 && y >= 0.0 && x <= double(g.w - 1) && y <= double(g.h - 1))) return false;
    const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(x), g.w - 1);
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(y), g.h - 1);
    const std::size_t x1 = std::min(x0 + 1, g.w - 1), y1 = std::min(y0 + 1, g.h - 1);
    const double fx = x - double(x0), fy = y - double(y0);
    out = (1 - fy) * ((1 - fx) * g.at(y0, x0) + fx * g.at(y0, x1)) +
          fy * ((1 - fx) * g.at(y1, x0) + fx * g.at(y1, x1));
    return true;
}

template <class T>
Gray luma(const Tensor<T>& t) {
    const Shape s = t.shape();
    Gray g{s.h, s.w, std::vector<double>(s.plane())};
    if (s.c == 1) {
        for (std::size_t i = 0; i < s.plane(); ++i) g.v[i] = t.data()[i];
        return g;
    }
    if (s.c != 3) throw DimensionError("luma: expected 1 or 3 channels, got " + s.str());
    const auto d = t.data();
    for (std::size_t i = 0; i < s.plane(); ++i)
        g.v[i] = 0.299 * d[i] + 0.587 * d[s.plane() + i] + 0.114 * d[2 * s.plane() + i];
    return g;
}

inline Gray blur(const Gray& g, double sigma) {
    const int r = static_cast<int>(std::ceil(2.5 * sigma));
    std::vector<double> k(2 * r + 1);
    double total = 0.0;
    for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& x : k) x /= total;
    auto clampi = [](long i, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(i, 0, long(n) - 1)); };
    Gray tmp = g, out = g;
    for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t x = 0; x < g.w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * g.at(y, clampi(long(x) + i, g.w));
            tmp.v[y * g.w + x] = acc;
        }
    for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t x = 0; x < g.w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(clampi(long(y) + i, g.h), x);
            out.v[y * g.w + x] = acc;
        }
    return out;
}

inline Gray half(const Gray& g) {
    Gray out{g.h / 2, g.w / 2, std::vector<double>((g.h / 2) * (g.w / 2))};
    for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x)
            out.v[y * out.w + x] = 0.25 * (g.at(2 * y, 2 * x) + g.at(2 * y, 2 * x + 1) +
                                           g.at(2 * y + 1, 2 * x) + g.at(2 * y + 1, 2 * x + 1));
    return out;
}

inline std::array<Gray, 2> gradients(const Gray& g) {
    Gray gx = g, gy = g;
    for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t x = 0; x < g.w; ++x) {
            const std::size_t xl = x ? x - 1 : x, xr = std::min(x + 1, g.w - 1);
            const std::size_t yu = y ? y - 1 : y, yd = std::min(y + 1, g.h - 1);
            gx.v[y * g.w + x] = (g.at(y, xr) - g.at(y, xl)) / double(xr - xl);
            gy.v[y * g.w + x] = (g.at(yd, x) - g.at(yu, x)) / double(yd - yu);
        }
    return {gx, gy};
}

/// Solves the 6x6 system A x = b in place (Gaussian elimination, partial pivoting).
inline bool solve6(std::array<std::array<double, 6>, 6> A, std::array<double, 6>& b) {
    for (int c = 0; c < 6; ++c) {
        int piv = c;
        for (int r = c + 1; r < 6; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        if (!(std::abs(A[piv][c]) > 1e-300)) return false;
        std::swap(A[c], A[piv]);
        std::swap(b[c], b[piv]);
        for (int r = c + 1; r < 6; ++r) {
            const double f = A[r][c] / A[c][c];
            for (int k = c; k < 6; ++k) A[r][k] -= f * A[c][k];
            b[r] -= f * b[c];
        }
    }
    for (int c = 5; c >= 0; --c) {
        for (int k = c + 1; k < 6; ++k) b[c] -= A[c][k] * b[k];
        b[c] /= A[c][c];
    }
    return true;
}

struct EccResult {
    AffineMatrix warp;  // fixed pixel -> moving pixel
    double correlation = -1.0;
};

// One pyramid level of forward-additive ECC: maximizes the correlation
// coefficient between fixed(x) and moving(W x) over the pixels whose warped
// position lies inside the moving image.
inline EccResult ecc_level(const Gray& moving, const Gray& fixed, AffineMatrix warp, int iters, double eps) {
    const auto [gx, gy] = gradients(moving);
    const std::size_t n = fixed.v.size();
    std::vector<double> img(n), tmpl(n), jac(6 * n);
    std::vector<char> mask(n);
    EccResult best{warp, -1.0};
    for (int it = 0; it < iters; ++it) {
        std::size_t count = 0;
        double mi = 0.0, mt = 0.0;
        for (std::size_t y = 0; y < fixed.h; ++y)
            for (std::size_t x = 0; x < fixed.w; ++x) {
                const std::size_t i = y * fixed.w + x;
                const auto p = warp.apply(double(x), double(y));
                double v = 0.0, dx = 0.0, dy = 0.0;
                mask[i] = sample(moving, p[0], p[1], v) && sample(gx, p[0], p[1], dx) &&
                          sample(gy, p[0], p[1], dy);
                if (!mask[i]) continue;
                img[i] = v;
                tmpl[i] = fixed.v[i];
                const double xs = double(x), ys = double(y);
                double* j = &jac[6 * i];
                j[0] = dx * xs, j[1] = dx * ys, j[2] = dx;
                j[3] = dy * xs, j[4] = dy * ys, j[5] = dy;
                mi += v;
                mt += fixed.v[i];
                ++count;
            }
        if (count < 64 || count * 10 < n) {
            throw AlignmentError("ECC: warped overlap too small", best.warp);
        }
        mi /= double(count);
        mt /= double(count);
        std::array<std::array<double, 6>, 6> H{};
        std::array<double, 6> pi{}, pt{};
        double ii = 0.0, tt = 0.0, it_corr = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            const double a = img[i] - mi, b = tmpl[i] - mt;
            ii += a * a;
            tt += b * b;
            it_corr += a * b;
            const double* j = &jac[6 * i];
            for (int r = 0; r < 6; ++r) {
                pi[r] += j[r] * a;
                pt[r] += j[r] * b;
                for (int c = r; c < 6; ++c) H[r][c] += j[r] * j[c];
            }
        }
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < r; ++c) H[r][c] = H[c][r];
        const double corr = it_corr / std::sqrt(std::max(ii * tt, 1e-300));
        if (corr > best.correlation) best = {warp, corr};

        auto hinv_pi = pi, hinv_pt = pt;
        if (!solve6(H, hinv_pi) || !solve6(H, hinv_pt)) {
            throw AlignmentError("ECC: singular Hessian (textureless input?)", best.warp);
        }
        double pi_h_pi = 0.0, pt_h_pi = 0.0;
        for (int r = 0; r < 6; ++r) {
            pi_h_pi += pi[r] * hinv_pi[r];
            pt_h_pi += pt[r] * hinv_pi[r];
        }
        const double num = ii - pi_h_pi, den = it_corr - pt_h_pi;
        if (!(den > 0.0)) throw AlignmentError("ECC: correlation cannot be increased", best.warp);
        const double lambda = num / den;
        // delta = H^-1 J^T (lambda * t - i)
        std::array<double, 6> delta{};
        for (int r = 0; r < 6; ++r) delta[r] = lambda * pt[r] - pi[r];
        if (!solve6(H, delta)) throw AlignmentError("ECC: singular Hessian", best.warp);
        double norm = 0.0;
        AffineMatrix next = warp;
        for (int r = 0; r < 6; ++r) {
            next.a[r] += delta[r];
            norm += delta[r] * delta[r];
        }
        if (!std::isfinite(norm) || !next.valid()) throw AlignmentError("ECC: diverged", best.warp);
        warp = next;
        if (std::sqrt(norm) < eps) break;
    }
    return {warp, best.correlation};
}

}  // namespace detail

struct EccOptions {
    int iters = 100;      // per pyramid level
    double eps = 1e-6;    // stop when the parameter update norm falls below this
    int levels = 3;
    double blur_sigma = 1.0;
};

/// Affine M with warp_affine(moving, M) ~= fixed. Inputs are reduced to luma
/// and must have the same size.
template <class T>
AffineMatrix estimate_affine(const Tensor<T>& moving, const Tensor<T>& fixed, const EccOptions& o = {}) {
    if (!(moving.shape() == fixed.shape())) {
        throw DimensionError("estimate_affine: size mismatch " + moving.shape().str() + " vs " +
                             fixed.shape().str());
    }
    std::vector<detail::Gray> mov{detail::blur(detail::luma(moving), o.blur_sigma)};
    std::vector<detail::Gray> fix{detail::blur(detail::luma(fixed), o.blur_sigma)};
    for (int l = 1; l < o.levels && mov.back().h >= 64 && mov.back().w >= 64; ++l) {
        mov.push_back(detail::half(mov.back()));
        fix.push_back(detail::half(fix.back()));
    }
    // Pixel centers at level l sit at 2^l * (x + 0.5) - 0.5 in full-resolution units.
    auto rescale = [](const AffineMatrix& m, double f) {
        const double o = 0.5 * (f - 1.0);
        AffineMatrix r = m;
        r.a[2] = (m.a[2] + o * (m.a[0] + m.a[1] - 1.0)) / f;
        r.a[5] = (m.a[5] + o * (m.a[3] + m.a[4] - 1.0)) / f;
        return r;
    };
    AffineMatrix warp = rescale(AffineMatrix::identity(), std::pow(2.0, double(mov.size() - 1)));
    AffineMatrix last_full = AffineMatrix::identity();
    try {
        for (std::size_t l = mov.size(); l-- > 0;) {
            warp = detail::ecc_level(mov[l], fix[l], warp, o.iters, o.eps).warp;
            last_full = rescale(warp, 1.0 / std::pow(2.0, double(l)));
            if (l > 0) warp = rescale(last_full, std::pow(2.0, double(l - 1)));
        }
    } catch (const AlignmentError& e) {
        throw AlignmentError(e.what(), last_full.valid() ? last_full.inverse() : AffineMatrix::identity());
    }
    return last_full.inverse();
}

/// out(p) = t(M^-1 p) with bilinear sampling and zero fill. Integer
/// translations copy pixels exactly.
template <class T>
Tensor<T> warp_affine(const Tensor<T>& t, const AffineMatrix& m) {
    const AffineMatrix inv = m.inverse();
    const Shape s = t.shape();
    Tensor<T> out(s);
    auto o = out.mutable_data();
    const auto d = t.data();
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
            const auto p = inv.apply(double(x), double(y));
            const double fx0 = std::floor(p[0]), fy0 = std::floor(p[1]);
            const double fx = p[0] - fx0, fy = p[1] - fy0;
            const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
            const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            const long xs[4] = {x0, x0 + 1, x0, x0 + 1}, ys[4] = {y0, y0, y0 + 1, y0 + 1};
            for (std::size_t pl = 0; pl < s.n * s.c; ++pl) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) {
                    if (w[k] == 0.0) continue;
                    if (xs[k] < 0 || ys[k] < 0 || xs[k] >= long(s.w) || ys[k] >= long(s.h)) continue;
                    acc += w[k] * d[pl * s.plane() + std::size_t(ys[k]) * s.w + std::size_t(xs[k])];
                }
                o[pl * s.plane() + y * s.w + x] = static_cast<T>(acc);
            }
        }
    return out;
}

}  // namespace uhdfour
