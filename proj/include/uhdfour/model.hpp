#pragma once

// The LR/HR cascade. LRNet works at 1/s resolution (encoder-decoder of
// dual-domain blocks) and yields the refined spectrum (A_r, P_r) plus a
// low-resolution estimate; HRNet adjusts the pixel-unshuffled input with that
// spectrum and adds the upsampled low-resolution estimate.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "uhdfour/blocks.hpp"
#include "uhdfour/fourier.hpp"
#include "uhdfour/ops.hpp"
#include "uhdfour/params.hpp"
#include "uhdfour/tensor.hpp"

namespace uhdfour {

struct AblationFlags {
    bool fouspa_fourier = true;
    std::size_t fouspa_spatial = 1;
    bool fouspa_residual = false;  // LR blocks become plain residual blocks
    bool adjust_fourier = true;
    bool amplitude_modulation = true;
    bool phase_guidance = true;
    std::size_t adjust_spatial = 1;
    bool adjust_residual = false;  // adjustment block becomes a residual block
    bool add_lr_output = true;     // add upsampled y_hat_lr to the HR output

    bool operator==(const AblationFlags&) const = default;
};

inline constexpr int kAblationRows = 13;

/// Ablation table rows 1..13; row 13 is the full model.
inline AblationFlags ablation_preset(int row) {
    AblationFlags f;
    switch (row) {
        case 1: f.fouspa_fourier = false; break;
        case 2: f.fouspa_spatial = 0; break;
        case 3: f.fouspa_residual = true; break;
        case 4: f.fouspa_fourier = false; f.fouspa_spatial = 2; break;
        case 5: f.amplitude_modulation = false; break;
        case 6: f.phase_guidance = false; break;
        case 7: f.adjust_spatial = 0; break;
        case 8: f.amplitude_modulation = false; f.phase_guidance = false; break;
        case 9:
            f.adjust_fourier = f.amplitude_modulation = f.phase_guidance = false;
            f.adjust_spatial = 3;
            break;
        case 10: f.adjust_residual = true; break;
        case 11: f.add_lr_output = false; break;
        case 12:
            f.fouspa_fourier = false;
            f.fouspa_spatial = 2;
            f.adjust_fourier = f.amplitude_modulation = f.phase_guidance = false;
            f.adjust_spatial = 3;
            break;
        case 13: break;
        default: throw ConfigError("ablation row must be in 1..13, got " + std::to_string(row));
    }
    return f;
}

struct ModelConfig {
    std::size_t width = 16;
    std::size_t scale = 8;      // LR downsample factor s
    std::size_t channels = 3;   // image channels
    std::size_t hr_kernel = 1;  // kernel of every HRNet conv
    AblationFlags flags;

    std::size_t multiple() const { return 4 * scale; }
    bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
    if (c.width == 0 || c.width % 2 != 0) throw ConfigError("width must be positive and even");
    if (c.scale == 0) throw ConfigError("scale must be positive");
    if (c.channels == 0) throw ConfigError("channels must be positive");
    if (c.hr_kernel % 2 == 0) throw ConfigError("hr_kernel must be odd");
    const auto& f = c.flags;
    if (!f.fouspa_residual && !f.fouspa_fourier && f.fouspa_spatial == 0) {
        throw ConfigError("LR blocks: both branches disabled without residual replacement");
    }
    if (!f.adjust_residual) {
        if (!f.adjust_fourier && f.adjust_spatial == 0) {
            throw ConfigError("adjustment block: both branches disabled without residual replacement");
        }
        if (!f.adjust_fourier && (f.amplitude_modulation || f.phase_guidance)) {
            throw ConfigError("adjustment block: modulation/guidance need the Fourier branch");
        }
    }
}

template <class T>
struct LrBlock {
    std::optional<FouSpaParams<T>> fouspa;
    std::optional<ResidualParams<T>> residual;

    Tensor<T> operator()(const Tensor<T>& x) const {
        return fouspa ? fouspa_block(x, *fouspa) : residual_block(x, *residual);
    }
};

template <class T>
struct HrBlock {
    std::optional<AdjustParams<T>> adjust;
    std::optional<ResidualParams<T>> residual;

    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& a, const Tensor<T>& p) const {
        return adjust ? adjustment_block(x, a, p, *adjust) : residual_block(x, *residual);
    }
};

template <class T>
struct Model {
    ModelConfig config;
    ParamStore<T> store;

    Conv<T> lr_embed;
    LrBlock<T> enc1, enc2, dec1, dec2;
    Conv<T> down1, down2, up1, up2;
    Conv<T> lr_out;

    Conv<T> hr_embed;
    HrBlock<T> adjust;
    Conv<T> hr_expand;
    Conv<T> hr_out;

    std::vector<Tensor<T>>& parameters() { return store.tensors(); }
    const std::vector<Tensor<T>>& parameters() const { return store.tensors(); }
};

template <class T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed = 0) {
    validate(config);
    Model<T> m;
    m.config = config;
    std::mt19937_64 rng(seed);
    const std::size_t w = config.width;
    const auto& f = config.flags;
    auto& st = m.store;

    auto lr_block = [&](const std::string& name) {
        LrBlock<T> b;
        if (f.fouspa_residual) {
            b.residual = make_residual(st, name, w, 3, rng);
        } else {
            b.fouspa = make_fouspa(st, name, w, FouSpaConfig{f.fouspa_fourier, f.fouspa_spatial}, rng);
        }
        return b;
    };

    m.lr_embed = make_conv(st, "lr.embed", config.channels, w, 3, rng);
    m.enc1 = lr_block("lr.enc1");
    m.down1 = make_conv(st, "lr.down1", w, w, 4, rng, Init::kaiming, 2, 1);
    m.enc2 = lr_block("lr.enc2");
    m.down2 = make_conv(st, "lr.down2", w, w, 4, rng, Init::kaiming, 2, 1);
    m.dec1 = lr_block("lr.dec1");
    m.up1 = make_conv(st, "lr.up1", w, w, 3, rng);
    m.dec2 = lr_block("lr.dec2");
    m.up2 = make_conv(st, "lr.up2", w, w, 3, rng);
    m.lr_out = make_conv(st, "lr.out", w, config.channels, 3, rng);

    const std::size_t k = config.hr_kernel;
    const std::size_t packed = config.channels * config.scale * config.scale;
    m.hr_embed = make_conv(st, "hr.embed", packed, w, k, rng);
    if (f.adjust_residual) {
        m.adjust.residual = make_residual(st, "hr.adjust", w, k, rng);
    } else {
        AdjustConfig ac{f.adjust_fourier, f.amplitude_modulation, f.phase_guidance,
                        f.adjust_spatial, k};
        m.adjust.adjust = make_adjust(st, "hr.adjust", w, ac, rng);
    }
    m.hr_expand = make_conv(st, "hr.expand", w, packed, k, rng);
    m.hr_out = make_conv(st, "hr.out", config.channels, config.channels, k, rng);
    return m;
}

/// Copies parameter values by name; every name must be present in `values`
/// with a matching element count.
template <class T, class U>
void assign_parameters(Model<T>& m, const std::vector<std::string>& names,
                       const std::vector<Tensor<U>>& values) {
    require(names.size() == values.size(), "assign_parameters: name/value count mismatch");
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < names.size(); ++i) index.emplace(names[i], i);
    const auto& own = m.store.names();
    for (std::size_t i = 0; i < own.size(); ++i) {
        auto it = index.find(own[i]);
        if (it == index.end()) throw std::runtime_error("missing parameter: " + own[i]);
        const auto& src = values[it->second];
        auto dst = m.store.tensors()[i].mutable_data();
        if (src.size() != dst.size()) {
            throw DimensionError("parameter " + own[i] + ": expected " +
                                 std::to_string(dst.size()) + " values, got " +
                                 std::to_string(src.size()));
        }
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src.data()[j]);
    }
    if (index.size() != own.size()) throw std::runtime_error("unexpected extra parameters");
}

template <class U, class T>
Model<U> cast_model(const Model<T>& m) {
    Model<U> out = build_model<U>(m.config);
    assign_parameters(out, m.store.names(), m.store.tensors());
    return out;
}

template <class T>
struct ForwardOutputs {
    Tensor<T> y_hat;     // (N, C, H, W)
    Tensor<T> y_hat_lr;  // (N, C, H/s, W/s)
    Tensor<T> amp_r;     // (N, width, H/s, W/s)
    Tensor<T> phase_r;
};

template <class T>
ForwardOutputs<T> forward(const Model<T>& m, const Tensor<T>& x) {
    const auto& cfg = m.config;
    const Shape s = x.shape();
    if (s.c != cfg.channels) {
        throw DimensionError("forward: expected " + std::to_string(cfg.channels) +
                             " channels, got " + s.str());
    }
    const std::size_t mult = cfg.multiple();
    if (s.h == 0 || s.w == 0 || s.h % mult != 0 || s.w % mult != 0) {
        throw DimensionError("forward: height and width must be multiples of " +
                             std::to_string(mult) + ", got " + s.str() +
                             "; use pad_to_valid first");
    }
    const std::size_t lh = s.h / cfg.scale, lw = s.w / cfg.scale;

    const auto low = bilinear_resize(m.lr_embed(x), lh, lw);
    const auto e1 = m.enc1(low);
    const auto e2 = m.enc2(m.down1(e1));
    const auto b = m.dec1(m.down2(e2));
    const auto u1 = add(m.up1(bilinear_resize(b, e2.shape().h, e2.shape().w)), e2);
    const auto d2 = m.dec2(u1);
    const auto feat = add(m.up2(bilinear_resize(d2, lh, lw)), e1);

    ForwardOutputs<T> out;
    const auto spec = fft2(feat);
    out.amp_r = spec.amplitude;
    out.phase_r = spec.phase;
    out.y_hat_lr = m.lr_out(feat);

    const auto packed = m.hr_embed(pixel_unshuffle(x, cfg.scale));
    const auto adjusted = m.adjust(packed, out.amp_r, out.phase_r);
    auto y = m.hr_out(pixel_shuffle(m.hr_expand(adjusted), cfg.scale));
    if (cfg.flags.add_lr_output) y = add(y, bilinear_resize(out.y_hat_lr, s.h, s.w));
    out.y_hat = y;
    return out;
}

template <class T>
struct Padded {
    Tensor<T> tensor;
    std::size_t height = 0;  // original extent
    std::size_t width = 0;
};

/// Reflect-pads bottom/right up to the next multiple of 4*s.
template <class T>
Padded<T> pad_to_valid(const Tensor<T>& x, std::size_t scale) {
    require(scale > 0, "pad_to_valid: scale must be positive");
    const Shape s = x.shape();
    const std::size_t mult = 4 * scale;
    auto up = [mult](std::size_t v) { return v == 0 ? mult : (v + mult - 1) / mult * mult; };
    const std::size_t ph = up(s.h) - s.h, pw = up(s.w) - s.w;
    if (ph == 0 && pw == 0) return {x, s.h, s.w};
    return {pad_reflect(x, ph, pw), s.h, s.w};
}

template <class T>
Tensor<T> unpad(const Tensor<T>& y, const Padded<T>& record) {
    if (y.shape().h == record.height && y.shape().w == record.width) return y;
    return crop(y, 0, 0, record.height, record.width);
}

/// Pads, runs the network without recording, crops and clamps to [0, 1].
template <class T>
Tensor<T> enhance(const Model<T>& m, const Tensor<T>& x) {
    NoGradGuard no_grad;
    const auto padded = pad_to_valid(x, m.config.scale);
    return clamp_values(unpad(forward(m, padded.tensor).y_hat, padded));
}

template <class T>
std::string describe(const Model<T>& m) {
    std::ostringstream os;
    const auto& names = m.store.names();
    std::size_t name_w = 4;
    for (const auto& n : names) name_w = std::max(name_w, n.size());
    os << std::left << std::setw(static_cast<int>(name_w)) << "name" << "  " << std::setw(16)
       << "shape" << std::right << std::setw(10) << "params" << '\n';
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& t = m.store.tensors()[i];
        const Shape s = t.shape();
        std::string shape;
        if (names[i].ends_with(".bias") || names[i].ends_with(".gamma") ||
            names[i].ends_with(".beta")) {
            shape = std::to_string(s.c);
        } else {
            shape = std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) +
                    "x" + std::to_string(s.w);
        }
        os << std::left << std::setw(static_cast<int>(name_w)) << names[i] << "  "
           << std::setw(16) << shape << std::right << std::setw(10) << t.size() << '\n';
    }
    os << "total parameters: " << m.store.scalar_count() << '\n';
    return os.str();
}

/// Multiply-accumulate counts of one forward pass, split by sub-network.
/// Convolutions count outC*inC*k*k per output pixel, an H x W complex 2-D FFT
/// counts 2.5*HW*log2(HW) per plane, and resampling counts 4 per output value.
struct FlopCount {
    double lr = 0.0;
    double hr = 0.0;
};

inline FlopCount count_flops(const ModelConfig& cfg, std::size_t h, std::size_t w) {
    auto conv = [](double in, double out, double k, double area) { return in * out * k * k * area; };
    auto fft = [](double planes, double area) {
        return area > 1 ? planes * 2.5 * area * std::log2(area) : 0.0;
    };
    auto resample = [](double planes, double area) { return 4.0 * planes * area; };
    const auto& f = cfg.flags;
    const double c = static_cast<double>(cfg.width);
    const double img = static_cast<double>(cfg.channels);

    auto lr_block = [&](double area) {
        if (f.fouspa_residual) return 2 * conv(c, c, 3, area);
        double total = 0.0;
        double branches = 0.0;
        if (f.fouspa_fourier) {
            total += 2 * fft(c, area) + 2 * conv(c, c, 1, area);
            branches += 1;
        }
        total += static_cast<double>(f.fouspa_spatial) * 2 * conv(c, c, 3, area);
        branches += static_cast<double>(f.fouspa_spatial);
        return total + conv(branches * c, c, 3, area);
    };

    const double full = static_cast<double>(h * w);
    const double a1 = full / static_cast<double>(cfg.scale * cfg.scale);
    const double a2 = a1 / 4, a3 = a1 / 16;

    FlopCount out;
    out.lr = conv(img, c, 3, full) + resample(c, a1) + lr_block(a1) + conv(c, c, 4, a2) +
             lr_block(a2) + conv(c, c, 4, a3) + lr_block(a3) + resample(c, a2) +
             conv(c, c, 3, a2) + lr_block(a2) + resample(c, a1) + conv(c, c, 3, a1) +
             fft(c, a1) + conv(c, img, 3, a1);

    const double k = static_cast<double>(cfg.hr_kernel);
    const double packed = img * static_cast<double>(cfg.scale * cfg.scale);
    double adjust = 0.0;
    if (f.adjust_residual) {
        adjust = 2 * conv(c, c, k, a1);
    } else {
        double branches = 0.0;
        if (f.adjust_fourier) {
            adjust += 2 * fft(c, a1);
            if (f.amplitude_modulation) adjust += 2 * conv(c, c, 1, a1);
            if (f.phase_guidance) adjust += conv(2 * c, c, 1, a1);
            branches += 1;
        }
        adjust += static_cast<double>(f.adjust_spatial) * 2 * conv(c, c, k, a1);
        branches += static_cast<double>(f.adjust_spatial);
        adjust += conv(branches * c, c, k, a1);
    }
    out.hr = conv(packed, c, k, a1) + adjust + conv(c, packed, k, a1) + conv(img, img, k, full) +
             (f.add_lr_output ? resample(img, full) : 0.0);
    return out;
}

}  // namespace uhdfour
