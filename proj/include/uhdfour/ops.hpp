#pragma once

// Differentiable operations over Tensor<T>. Every op validates shapes, computes
// its forward result eagerly and, when recording, attaches the adjoint.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "uhdfour/tensor.hpp"

namespace uhdfour {

namespace detail {

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

// Gradient buffer of an input, or nullptr when it does not participate.
template <class T>
T* grad_of(const NodePtr<T>& in) {
    return in->requires_grad ? in->grad_buffer().data() : nullptr;
}

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
    const auto& x = a.node()->data;
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result<T>(a.shape(), std::move(y), {a.node()}, [df](const Node<T>& self) {
        const auto& in = self.inputs[0];
        T* g = grad_of(in);
        if (!g) return;
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            g[i] += self.grad[i] * df(in->data[i], self.data[i]);
        }
    });
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
    }
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    const auto& x = a.node()->data;
    const auto& y = b.node()->data;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                  [](const detail::Node<T>& self) {
                                      for (const auto& in : self.inputs) {
                                          if (T* g = detail::grad_of(in)) {
                                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                                  g[i] += self.grad[i];
                                          }
                                      }
                                  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    const auto& x = a.node()->data;
    const auto& y = b.node()->data;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                  [](const detail::Node<T>& self) {
                                      if (T* g = detail::grad_of(self.inputs[0])) {
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              g[i] += self.grad[i];
                                      }
                                      if (T* g = detail::grad_of(self.inputs[1])) {
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              g[i] -= self.grad[i];
                                      }
                                  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    const auto& x = a.node()->data;
    const auto& y = b.node()->data;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                  [](const detail::Node<T>& self) {
                                      const auto& lhs = self.inputs[0];
                                      const auto& rhs = self.inputs[1];
                                      if (T* g = detail::grad_of(lhs)) {
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              g[i] += self.grad[i] * rhs->data[i];
                                      }
                                      if (T* g = detail::grad_of(rhs)) {
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              g[i] += self.grad[i] * lhs->data[i];
                                      }
                                  });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "div");
    const auto& x = a.node()->data;
    const auto& y = b.node()->data;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                  [](const detail::Node<T>& self) {
                                      const auto& num = self.inputs[0];
                                      const auto& den = self.inputs[1];
                                      if (T* g = detail::grad_of(num)) {
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              g[i] += self.grad[i] / den->data[i];
                                      }
                                      if (T* g = detail::grad_of(den)) {
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              g[i] -= self.grad[i] * self.data[i] / den->data[i];
                                      }
                                  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.2)) {
    return detail::unary(
        a, [slope](T x) { return x >= T(0) ? x : slope * x; },
        [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
    return detail::unary(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
    return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Tensor<T> cos(const Tensor<T>& a) {
    return detail::unary(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <class T>
Tensor<T> sin(const Tensor<T>& a) {
    return detail::unary(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

// Below this modulus the polar derivatives are treated as zero.
inline constexpr double kPolarGradFloor = 1e-12;

/// sqrt(re^2 + im^2); zero gradient at the origin.
template <class T>
Tensor<T> magnitude(const Tensor<T>& re, const Tensor<T>& im) {
    detail::require_same_shape(re, im, "magnitude");
    const auto& a = re.node()->data;
    const auto& b = im.node()->data;
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::hypot(a[i], b[i]);
    return detail::make_result<T>(
        re.shape(), std::move(out), {re.node(), im.node()}, [](const detail::Node<T>& self) {
            const auto& r = self.inputs[0];
            const auto& m = self.inputs[1];
            T* gr = detail::grad_of(r);
            T* gm = detail::grad_of(m);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T amp = self.data[i];
                if (amp < T(kPolarGradFloor)) continue;
                if (gr) gr[i] += self.grad[i] * r->data[i] / amp;
                if (gm) gm[i] += self.grad[i] * m->data[i] / amp;
            }
        });
}

/// atan2(im, re) in (-pi, pi]; atan2(0, 0) = 0 and zero gradient where the
/// modulus falls below kPolarGradFloor.
template <class T>
Tensor<T> phase(const Tensor<T>& re, const Tensor<T>& im) {
    detail::require_same_shape(re, im, "phase");
    const auto& a = re.node()->data;
    const auto& b = im.node()->data;
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::atan2(b[i], a[i]);
    return detail::make_result<T>(
        re.shape(), std::move(out), {re.node(), im.node()}, [](const detail::Node<T>& self) {
            const auto& r = self.inputs[0];
            const auto& m = self.inputs[1];
            T* gr = detail::grad_of(r);
            T* gm = detail::grad_of(m);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T x = r->data[i];
                const T y = m->data[i];
                const T amp2 = x * x + y * y;
                if (std::sqrt(amp2) < T(kPolarGradFloor)) continue;
                if (gr) gr[i] -= self.grad[i] * y / amp2;
                if (gm) gm[i] += self.grad[i] * x / amp2;
            }
        });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    const auto& x = a.node()->data;
    double acc = 0.0;
    for (T v : x) acc += static_cast<double>(v);
    return detail::make_result<T>(Shape{1, 1, 1, 1}, {static_cast<T>(acc)}, {a.node()},
                                  [](const detail::Node<T>& self) {
                                      if (T* g = detail::grad_of(self.inputs[0])) {
                                          const std::size_t n = self.inputs[0]->data.size();
                                          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
                                      }
                                  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return mul_scalar(sum(a), T(1) / static_cast<T>(a.size()));
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    Shape out_shape = parts.front().shape();
    out_shape.c = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != out_shape.n || s.h != out_shape.h || s.w != out_shape.w) {
            throw DimensionError("concat_channels: N/H/W mismatch " + parts.front().shape().str() +
                                 " vs " + s.str());
        }
        out_shape.c += s.c;
    }
    const std::size_t plane = out_shape.plane();
    std::vector<T> out(out_shape.size());
    std::vector<detail::NodePtr<T>> inputs;
    std::size_t c_off = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* src = p.node()->data.data() + n * s.c * plane;
            T* dst = out.data() + (n * out_shape.c + c_off) * plane;
            std::copy(src, src + s.c * plane, dst);
        }
        c_off += s.c;
        inputs.push_back(p.node());
    }
    return detail::make_result<T>(out_shape, std::move(out), std::move(inputs),
                                  [out_shape](const detail::Node<T>& self) {
                                      const std::size_t plane = out_shape.plane();
                                      std::size_t off = 0;
                                      for (const auto& in : self.inputs) {
                                          const std::size_t c = in->shape.c;
                                          if (T* g = detail::grad_of(in)) {
                                              for (std::size_t n = 0; n < out_shape.n; ++n) {
                                                  const T* src = self.grad.data() +
                                                                 (n * out_shape.c + off) * plane;
                                                  T* dst = g + n * c * plane;
                                                  for (std::size_t i = 0; i < c * plane; ++i)
                                                      dst[i] += src[i];
                                              }
                                          }
                                          off += c;
                                      }
                                  });
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count) {
    const Shape s = a.shape();
    if (begin + count > s.c || count == 0) {
        throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside C=" + std::to_string(s.c));
    }
    const Shape out_shape{s.n, count, s.h, s.w};
    const std::size_t plane = s.plane();
    std::vector<T> out(out_shape.size());
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = a.node()->data.data() + (n * s.c + begin) * plane;
        std::copy(src, src + count * plane, out.data() + n * count * plane);
    }
    return detail::make_result<T>(out_shape, std::move(out), {a.node()},
                                  [s, begin, count](const detail::Node<T>& self) {
                                      T* g = detail::grad_of(self.inputs[0]);
                                      if (!g) return;
                                      const std::size_t plane = s.plane();
                                      for (std::size_t n = 0; n < s.n; ++n) {
                                          T* dst = g + (n * s.c + begin) * plane;
                                          const T* src = self.grad.data() + n * count * plane;
                                          for (std::size_t i = 0; i < count * plane; ++i)
                                              dst[i] += src[i];
                                      }
                                  });
}

/// 2-D cross-correlation with zero padding. weight is (outC, inC, kH, kW),
/// bias is (1, outC, 1, 1) or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
    const Shape is = input.shape();
    const Shape ws = weight.shape();
    require(stride >= 1, "conv2d: stride must be positive");
    if (is.c != ws.c) {
        throw DimensionError("conv2d: input has " + std::to_string(is.c) +
                             " channels but weight expects " + std::to_string(ws.c));
    }
    if (bias.defined() && !(bias.shape() == Shape{1, ws.n, 1, 1})) {
        throw DimensionError("conv2d: bias shape " + bias.shape().str() + " does not match " +
                             std::to_string(ws.n) + " output channels");
    }
    if (is.h + 2 * padding < ws.h || is.w + 2 * padding < ws.w) {
        throw DimensionError("conv2d: padded input " + std::to_string(is.h + 2 * padding) + "x" +
                             std::to_string(is.w + 2 * padding) + " smaller than kernel " +
                             std::to_string(ws.h) + "x" + std::to_string(ws.w));
    }
    const std::size_t oh = (is.h + 2 * padding - ws.h) / stride + 1;
    const std::size_t ow = (is.w + 2 * padding - ws.w) / stride + 1;
    const Shape os{is.n, ws.n, oh, ow};
    require(os.size() > 0, "conv2d: zero-size output for input " + is.str());

    // Output columns [lo, hi) whose source column ox*stride - padding + k is in range.
    auto valid_range = [](std::size_t k, std::size_t pad, std::size_t st, std::size_t in_len,
                          std::size_t out_len) {
        const long kk = static_cast<long>(k) - static_cast<long>(pad);
        long lo = kk >= 0 ? 0 : (-kk + static_cast<long>(st) - 1) / static_cast<long>(st);
        long hi = (static_cast<long>(in_len) - 1 - kk) / static_cast<long>(st) + 1;
        if (static_cast<long>(in_len) - 1 - kk < 0) hi = 0;
        hi = std::min<long>(hi, static_cast<long>(out_len));
        lo = std::min(lo, hi);
        return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo),
                                                   static_cast<std::size_t>(hi));
    };

    const T* x = input.node()->data.data();
    const T* wt = weight.node()->data.data();
    std::vector<T> out(os.size());
    const long jobs = static_cast<long>(os.n * os.c);
#pragma omp parallel for schedule(static)
    for (long job = 0; job < jobs; ++job) {
        const std::size_t n = static_cast<std::size_t>(job) / os.c;
        const std::size_t oc = static_cast<std::size_t>(job) % os.c;
        T* dst = out.data() + (n * os.c + oc) * oh * ow;
        const T b = bias.defined() ? bias.node()->data[oc] : T(0);
        std::fill(dst, dst + oh * ow, b);
        for (std::size_t ic = 0; ic < is.c; ++ic) {
            const T* src = x + (n * is.c + ic) * is.h * is.w;
            for (std::size_t kh = 0; kh < ws.h; ++kh) {
                const auto [ylo, yhi] = valid_range(kh, padding, stride, is.h, oh);
                for (std::size_t kw = 0; kw < ws.w; ++kw) {
                    const auto [xlo, xhi] = valid_range(kw, padding, stride, is.w, ow);
                    const T wv = wt[((oc * ws.c + ic) * ws.h + kh) * ws.w + kw];
                    for (std::size_t y = ylo; y < yhi; ++y) {
                        const T* row = src + (y * stride + kh - padding) * is.w;
                        T* drow = dst + y * ow;
                        for (std::size_t xo = xlo; xo < xhi; ++xo)
                            drow[xo] += wv * row[xo * stride + kw - padding];
                    }
                }
            }
        }
    }

    std::vector<detail::NodePtr<T>> inputs{input.node(), weight.node()};
    if (bias.defined()) inputs.push_back(bias.node());
    return detail::make_result<T>(
        os, std::move(out), std::move(inputs),
        [is, ws, os, stride, padding, valid_range](const detail::Node<T>& self) {
            const auto& in_node = self.inputs[0];
            const auto& w_node = self.inputs[1];
            const T* gout = self.grad.data();
            const T* xin = in_node->data.data();
            const T* wt = w_node->data.data();
            const std::size_t oh = os.h, ow = os.w;
            if (T* gin = detail::grad_of(in_node)) {
                const long jobs = static_cast<long>(is.n * is.c);
#pragma omp parallel for schedule(static)
                for (long job = 0; job < jobs; ++job) {
                    const std::size_t n = static_cast<std::size_t>(job) / is.c;
                    const std::size_t ic = static_cast<std::size_t>(job) % is.c;
                    T* dst = gin + (n * is.c + ic) * is.h * is.w;
                    for (std::size_t oc = 0; oc < os.c; ++oc) {
                        const T* go = gout + (n * os.c + oc) * oh * ow;
                        for (std::size_t kh = 0; kh < ws.h; ++kh) {
                            const auto [ylo, yhi] = valid_range(kh, padding, stride, is.h, oh);
                            for (std::size_t kw = 0; kw < ws.w; ++kw) {
                                const auto [xlo, xhi] = valid_range(kw, padding, stride, is.w, ow);
                                const T wv = wt[((oc * ws.c + ic) * ws.h + kh) * ws.w + kw];
                                for (std::size_t y = ylo; y < yhi; ++y) {
                                    T* row = dst + (y * stride + kh - padding) * is.w;
                                    const T* grow = go + y * ow;
                                    for (std::size_t xo = xlo; xo < xhi; ++xo)
                                        row[xo * stride + kw - padding] += wv * grow[xo];
                                }
                            }
                        }
                    }
                }
            }
            if (T* gw = detail::grad_of(w_node)) {
                const long jobs = static_cast<long>(ws.n * ws.c);
#pragma omp parallel for schedule(static)
                for (long job = 0; job < jobs; ++job) {
                    const std::size_t oc = static_cast<std::size_t>(job) / ws.c;
                    const std::size_t ic = static_cast<std::size_t>(job) % ws.c;
                    for (std::size_t kh = 0; kh < ws.h; ++kh) {
                        const auto [ylo, yhi] = valid_range(kh, padding, stride, is.h, oh);
                        for (std::size_t kw = 0; kw < ws.w; ++kw) {
                            const auto [xlo, xhi] = valid_range(kw, padding, stride, is.w, ow);
                            T acc = T(0);
                            for (std::size_t n = 0; n < is.n; ++n) {
                                const T* src = xin + (n * is.c + ic) * is.h * is.w;
                                const T* go = gout + (n * os.c + oc) * oh * ow;
                                for (std::size_t y = ylo; y < yhi; ++y) {
                                    const T* row = src + (y * stride + kh - padding) * is.w;
                                    const T* grow = go + y * ow;
                                    for (std::size_t xo = xlo; xo < xhi; ++xo)
                                        acc += grow[xo] * row[xo * stride + kw - padding];
                                }
                            }
                            gw[((oc * ws.c + ic) * ws.h + kh) * ws.w + kw] += acc;
                        }
                    }
                }
            }
            if (self.inputs.size() > 2) {
                if (T* gb = detail::grad_of(self.inputs[2])) {
                    for (std::size_t n = 0; n < os.n; ++n) {
                        for (std::size_t oc = 0; oc < os.c; ++oc) {
                            const T* go = gout + (n * os.c + oc) * oh * ow;
                            T acc = T(0);
                            for (std::size_t i = 0; i < oh * ow; ++i) acc += go[i];
                            gb[oc] += acc;
                        }
                    }
                }
            }
        });
}

namespace detail {

// Half-pixel (align_corners=false) sampling taps along one axis.
struct LinearTaps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> w_hi;
};

inline LinearTaps linear_taps(std::size_t in_len, std::size_t out_len) {
    LinearTaps taps;
    taps.lo.resize(out_len);
    taps.hi.resize(out_len);
    taps.w_hi.resize(out_len);
    const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        std::size_t i0 = static_cast<std::size_t>(src);
        if (i0 > in_len - 1) i0 = in_len - 1;
        taps.lo[i] = i0;
        taps.hi[i] = i0 + 1 < in_len ? i0 + 1 : i0;
        taps.w_hi[i] = src - static_cast<double>(i0);
    }
    return taps;
}

}  // namespace detail

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    require(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be at least 1x1");
    const Shape is = input.shape();
    const Shape os{is.n, is.c, out_h, out_w};
    if (out_h == is.h && out_w == is.w) {
        return detail::make_result<T>(os, input.node()->data, {input.node()},
                                      [](const detail::Node<T>& self) {
                                          if (T* g = detail::grad_of(self.inputs[0])) {
                                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                                  g[i] += self.grad[i];
                                          }
                                      });
    }
    auto ty = detail::linear_taps(is.h, out_h);
    auto tx = detail::linear_taps(is.w, out_w);
    std::vector<T> out(os.size());
    for (std::size_t p = 0; p < is.n * is.c; ++p) {
        const T* src = input.node()->data.data() + p * is.plane();
        T* dst = out.data() + p * os.plane();
        for (std::size_t y = 0; y < out_h; ++y) {
            const T wy1 = static_cast<T>(ty.w_hi[y]);
            const T wy0 = T(1) - wy1;
            const T* r0 = src + ty.lo[y] * is.w;
            const T* r1 = src + ty.hi[y] * is.w;
            for (std::size_t x = 0; x < out_w; ++x) {
                const T wx1 = static_cast<T>(tx.w_hi[x]);
                const T wx0 = T(1) - wx1;
                dst[y * out_w + x] = wy0 * (wx0 * r0[tx.lo[x]] + wx1 * r0[tx.hi[x]]) +
                                     wy1 * (wx0 * r1[tx.lo[x]] + wx1 * r1[tx.hi[x]]);
            }
        }
    }
    return detail::make_result<T>(
        os, std::move(out), {input.node()},
        [is, os, ty = std::move(ty), tx = std::move(tx)](const detail::Node<T>& self) {
            T* g = detail::grad_of(self.inputs[0]);
            if (!g) return;
            for (std::size_t p = 0; p < is.n * is.c; ++p) {
                T* dst = g + p * is.plane();
                const T* go = self.grad.data() + p * os.plane();
                for (std::size_t y = 0; y < os.h; ++y) {
                    const T wy1 = static_cast<T>(ty.w_hi[y]);
                    const T wy0 = T(1) - wy1;
                    T* r0 = dst + ty.lo[y] * is.w;
                    T* r1 = dst + ty.hi[y] * is.w;
                    for (std::size_t x = 0; x < os.w; ++x) {
                        const T wx1 = static_cast<T>(tx.w_hi[x]);
                        const T wx0 = T(1) - wx1;
                        const T v = go[y * os.w + x];
                        r0[tx.lo[x]] += wy0 * wx0 * v;
                        r0[tx.hi[x]] += wy0 * wx1 * v;
                        r1[tx.lo[x]] += wy1 * wx0 * v;
                        r1[tx.hi[x]] += wy1 * wx1 * v;
                    }
                }
            }
        });
}

namespace detail {

// Flat index map for space-to-depth: out[n, c*r*r + i*r + j, y, x] = in[n, c, y*r+i, x*r+j].
inline std::vector<std::size_t> unshuffle_map(const Shape& in, std::size_t r) {
    const Shape out{in.n, in.c * r * r, in.h / r, in.w / r};
    std::vector<std::size_t> map(out.size());
    std::size_t k = 0;
    for (std::size_t n = 0; n < out.n; ++n)
        for (std::size_t c = 0; c < in.c; ++c)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < r; ++j)
                    for (std::size_t y = 0; y < out.h; ++y)
                        for (std::size_t x = 0; x < out.w; ++x)
                            map[k++] = ((n * in.c + c) * in.h + y * r + i) * in.w + x * r + j;
    return map;
}

// out[k] = in[map[k]]
template <class T>
Tensor<T> gather(const Tensor<T>& input, Shape out_shape, std::vector<std::size_t> map) {
    const auto& src = input.node()->data;
    std::vector<T> out(map.size());
    for (std::size_t k = 0; k < map.size(); ++k) out[k] = src[map[k]];
    return make_result<T>(out_shape, std::move(out), {input.node()},
                          [map = std::move(map)](const Node<T>& self) {
                              if (T* g = grad_of(self.inputs[0])) {
                                  for (std::size_t k = 0; k < map.size(); ++k)
                                      g[map[k]] += self.grad[k];
                              }
                          });
}

// out[map[k]] = in[k], map a permutation.
template <class T>
Tensor<T> scatter(const Tensor<T>& input, Shape out_shape, std::vector<std::size_t> map) {
    const auto& src = input.node()->data;
    std::vector<T> out(map.size());
    for (std::size_t k = 0; k < map.size(); ++k) out[map[k]] = src[k];
    return make_result<T>(out_shape, std::move(out), {input.node()},
                          [map = std::move(map)](const Node<T>& self) {
                              if (T* g = grad_of(self.inputs[0])) {
                                  for (std::size_t k = 0; k < map.size(); ++k)
                                      g[k] += self.grad[map[k]];
                              }
                          });
}

}  // namespace detail

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t r) {
    const Shape s = input.shape();
    require(r >= 1, "pixel_unshuffle: factor must be positive");
    if (s.h % r != 0) {
        throw DimensionError("pixel_unshuffle: height " + std::to_string(s.h) +
                             " not divisible by " + std::to_string(r));
    }
    if (s.w % r != 0) {
        throw DimensionError("pixel_unshuffle: width " + std::to_string(s.w) +
                             " not divisible by " + std::to_string(r));
    }
    const Shape out{s.n, s.c * r * r, s.h / r, s.w / r};
    return detail::gather(input, out, detail::unshuffle_map(s, r));
}

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t r) {
    const Shape s = input.shape();
    require(r >= 1, "pixel_shuffle: factor must be positive");
    if (s.c % (r * r) != 0) {
        throw DimensionError("pixel_shuffle: channels " + std::to_string(s.c) +
                             " not divisible by " + std::to_string(r * r));
    }
    const Shape out{s.n, s.c / (r * r), s.h * r, s.w * r};
    return detail::scatter(input, out, detail::unshuffle_map(out, r));
}

/// Reflect padding at the bottom and right edges (mirror without repeating the
/// edge sample; periodic extension when the pad exceeds the extent).
template <class T>
Tensor<T> pad_reflect(const Tensor<T>& input, std::size_t pad_bottom, std::size_t pad_right) {
    const Shape s = input.shape();
    const Shape out{s.n, s.c, s.h + pad_bottom, s.w + pad_right};
    auto reflect = [](std::size_t i, std::size_t len) -> std::size_t {
        if (len == 1) return 0;
        const std::size_t period = 2 * (len - 1);
        i %= period;
        return i < len ? i : period - i;
    };
    std::vector<std::size_t> map(out.size());
    std::size_t k = 0;
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < out.h; ++y)
            for (std::size_t x = 0; x < out.w; ++x)
                map[k++] = (p * s.h + reflect(y, s.h)) * s.w + reflect(x, s.w);
    return detail::gather(input, out, std::move(map));
}

template <class T>
Tensor<T> crop(const Tensor<T>& input, std::size_t top, std::size_t left, std::size_t h,
               std::size_t w) {
    const Shape s = input.shape();
    require(top + h <= s.h && left + w <= s.w && h > 0 && w > 0,
            "crop: window outside tensor " + s.str());
    const Shape out{s.n, s.c, h, w};
    std::vector<std::size_t> map(out.size());
    std::size_t k = 0;
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) map[k++] = (p * s.h + top + y) * s.w + left + x;
    return detail::gather(input, out, std::move(map));
}

/// Selects one batch item as an (1, C, H, W) tensor.
template <class T>
Tensor<T> batch_item(const Tensor<T>& input, std::size_t n) {
    const Shape s = input.shape();
    require(n < s.n, "batch_item: index out of range");
    const std::size_t len = s.c * s.plane();
    std::vector<std::size_t> map(len);
    std::iota(map.begin(), map.end(), n * len);
    return detail::gather(input, Shape{1, s.c, s.h, s.w}, std::move(map));
}

/// Per-sample, per-channel normalization over H x W with optional affine
/// parameters gamma, beta of shape (1, C, 1, 1).
template <class T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                        double eps = 1e-5) {
    const Shape s = input.shape();
    const bool affine = gamma.defined();
    if (affine) {
        require(gamma.shape() == Shape{1, s.c, 1, 1} && beta.defined() &&
                    beta.shape() == Shape{1, s.c, 1, 1},
                "instance_norm: affine parameters must have shape (1," + std::to_string(s.c) +
                    ",1,1)");
    }
    const std::size_t plane = s.plane();
    std::vector<T> out(s.size());
    std::vector<double> inv_std(s.n * s.c);
    std::vector<T> xhat(s.size());
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const T* x = input.node()->data.data() + p * plane;
        double mu = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mu += x[i];
        mu /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) var += (x[i] - mu) * (x[i] - mu);
        var /= static_cast<double>(plane);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[p] = is;
        const std::size_t c = p % s.c;
        const T g = affine ? gamma.node()->data[c] : T(1);
        const T b = affine ? beta.node()->data[c] : T(0);
        for (std::size_t i = 0; i < plane; ++i) {
            const T xh = static_cast<T>((x[i] - mu) * is);
            xhat[p * plane + i] = xh;
            out[p * plane + i] = g * xh + b;
        }
    }
    std::vector<detail::NodePtr<T>> inputs{input.node()};
    if (affine) {
        inputs.push_back(gamma.node());
        inputs.push_back(beta.node());
    }
    return detail::make_result<T>(
        s, std::move(out), std::move(inputs),
        [s, affine, inv_std = std::move(inv_std), xhat = std::move(xhat)](
            const detail::Node<T>& self) {
            const std::size_t plane = s.plane();
            T* gx = detail::grad_of(self.inputs[0]);
            T* gg = affine ? detail::grad_of(self.inputs[1]) : nullptr;
            T* gb = affine ? detail::grad_of(self.inputs[2]) : nullptr;
            for (std::size_t p = 0; p < s.n * s.c; ++p) {
                const std::size_t c = p % s.c;
                const T g = affine ? self.inputs[1]->data[c] : T(1);
                const T* dy = self.grad.data() + p * plane;
                const T* xh = xhat.data() + p * plane;
                double sum_dy = 0.0, sum_dy_xh = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_dy += dy[i];
                    sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
                }
                if (gg) gg[c] += static_cast<T>(sum_dy_xh);
                if (gb) gb[c] += static_cast<T>(sum_dy);
                if (gx) {
                    const double m_dxh = g * sum_dy / static_cast<double>(plane);
                    const double m_dxh_xh = g * sum_dy_xh / static_cast<double>(plane);
                    T* dst = gx + p * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        dst[i] += static_cast<T>(inv_std[p] *
                                                 (g * dy[i] - m_dxh - xh[i] * m_dxh_xh));
                    }
                }
            }
        });
}

/// Separable "valid" filtering with a fixed 1-D kernel applied along H and W.
template <class T>
Tensor<T> separable_filter_valid(const Tensor<T>& input, const std::vector<double>& kernel) {
    const Shape s = input.shape();
    const std::size_t k = kernel.size();
    require(k >= 1 && k <= s.h && k <= s.w,
            "separable_filter_valid: kernel larger than input " + s.str());
    const Shape os{s.n, s.c, s.h - k + 1, s.w - k + 1};
    std::vector<T> out(os.size());
    std::vector<double> tmp(s.h * os.w);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const T* src = input.node()->data.data() + p * s.plane();
        for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t x = 0; x < os.w; ++x) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) acc += kernel[j] * src[y * s.w + x + j];
                tmp[y * os.w + x] = acc;
            }
        T* dst = out.data() + p * os.plane();
        for (std::size_t y = 0; y < os.h; ++y)
            for (std::size_t x = 0; x < os.w; ++x) {
                double acc = 0.0;
                for (std::size_t i = 0; i < k; ++i) acc += kernel[i] * tmp[(y + i) * os.w + x];
                dst[y * os.w + x] = static_cast<T>(acc);
            }
    }
    return detail::make_result<T>(
        os, std::move(out), {input.node()}, [s, os, kernel](const detail::Node<T>& self) {
            T* g = detail::grad_of(self.inputs[0]);
            if (!g) return;
            const std::size_t k = kernel.size();
            std::vector<double> tmp(s.h * os.w);
            for (std::size_t p = 0; p < s.n * s.c; ++p) {
                const T* go = self.grad.data() + p * os.plane();
                std::fill(tmp.begin(), tmp.end(), 0.0);
                for (std::size_t y = 0; y < os.h; ++y)
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t x = 0; x < os.w; ++x)
                            tmp[(y + i) * os.w + x] += kernel[i] * go[y * os.w + x];
                T* dst = g + p * s.plane();
                for (std::size_t y = 0; y < s.h; ++y)
                    for (std::size_t x = 0; x < os.w; ++x) {
                        const double v = tmp[y * os.w + x];
                        for (std::size_t j = 0; j < k; ++j)
                            dst[y * s.w + x + j] += static_cast<T>(kernel[j] * v);
                    }
            }
        });
}

/// Values clamped into [lo, hi]; not differentiable (export path only).
template <class T>
Tensor<T> clamp_values(const Tensor<T>& input, T lo = T(0), T hi = T(1)) {
    std::vector<T> out(input.data().begin(), input.data().end());
    for (T& v : out) v = std::clamp(v, lo, hi);
    return Tensor<T>(input.shape(), std::move(out));
}

}  // namespace uhdfour
