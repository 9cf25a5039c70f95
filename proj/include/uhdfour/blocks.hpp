#pragma once

// Composite building blocks: half-instance-normalization unit, the dual
// Fourier/spatial block, SFT modulation, the HR adjustment block and a plain
// residual block.

#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "uhdfour/fourier.hpp"
#include "uhdfour/ops.hpp"
#include "uhdfour/params.hpp"
#include "uhdfour/tensor.hpp"

namespace uhdfour {

class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

template <class T>
struct HinParams {
    Conv<T> conv1;
    Tensor<T> gamma;  // (1, C/2, 1, 1)
    Tensor<T> beta;
    Conv<T> conv2;
    double eps = 1e-5;
};

template <class T>
HinParams<T> make_hin(ParamStore<T>& store, const std::string& name, std::size_t channels,
                      std::size_t kernel, std::mt19937_64& rng) {
    if (channels % 2 != 0) {
        throw DimensionError("hin_unit: channel count must be even, got " +
                             std::to_string(channels));
    }
    HinParams<T> p;
    p.conv1 = make_conv(store, name + ".conv1", channels, channels, kernel, rng);
    const std::size_t half = channels / 2;
    p.gamma = store.add(name + ".norm.gamma", Shape{1, half, 1, 1}, std::vector<T>(half, T(1)));
    p.beta = store.add(name + ".norm.beta", Shape{1, half, 1, 1}, std::vector<T>(half, T(0)));
    p.conv2 = make_conv(store, name + ".conv2", channels, channels, kernel, rng);
    return p;
}

/// Optional window into hin_unit: the normalized half before its affine.
template <class T>
struct HinTrace {
    Tensor<T> normalized;
};

template <class T>
Tensor<T> hin_unit(const Tensor<T>& x, const HinParams<T>& p, HinTrace<T>* trace = nullptr) {
    const std::size_t c = x.shape().c;
    if (c % 2 != 0) {
        throw DimensionError("hin_unit: channel count must be even, got " + std::to_string(c));
    }
    const auto h = p.conv1(x);
    const auto first = slice_channels(h, 0, c / 2);
    const auto second = slice_channels(h, c / 2, c - c / 2);
    if (trace) {
        NoGradGuard no_grad;
        trace->normalized = instance_norm(first, Tensor<T>{}, Tensor<T>{}, p.eps);
    }
    const auto normed = instance_norm(first, p.gamma, p.beta, p.eps);
    const auto mixed = leaky_relu(concat_channels<T>({normed, second}));
    return add(x, p.conv2(mixed));
}

struct FouSpaConfig {
    bool fourier = true;
    std::size_t spatial = 1;  // number of parallel HIN units
};

template <class T>
struct FouSpaParams {
    std::optional<Conv<T>> amplitude;  // 1x1
    std::optional<Conv<T>> phase;      // 1x1
    std::vector<HinParams<T>> spatial;
    Conv<T> fuse;  // 3x3 over the concatenated branch outputs
};

template <class T>
FouSpaParams<T> make_fouspa(ParamStore<T>& store, const std::string& name, std::size_t channels,
                            const FouSpaConfig& cfg, std::mt19937_64& rng) {
    const std::size_t branches = (cfg.fourier ? 1 : 0) + cfg.spatial;
    if (branches == 0) {
        throw ConfigError("fouspa_block: both branches disabled; use a residual block instead");
    }
    FouSpaParams<T> p;
    if (cfg.fourier) {
        p.amplitude = make_conv(store, name + ".amp", channels, channels, 1, rng);
        p.phase = make_conv(store, name + ".pha", channels, channels, 1, rng);
    }
    for (std::size_t i = 0; i < cfg.spatial; ++i) {
        p.spatial.push_back(make_hin(store, name + ".hin" + std::to_string(i), channels, 3, rng));
    }
    p.fuse = make_conv(store, name + ".fuse", branches * channels, channels, 3, rng);
    return p;
}

template <class T>
Tensor<T> fouspa_fourier_branch(const Tensor<T>& x, const FouSpaParams<T>& p) {
    require(p.amplitude && p.phase, "fouspa_block: Fourier branch is disabled");
    const auto s = fft2(x);
    return ifft2(Spectrum<T>{(*p.amplitude)(s.amplitude), (*p.phase)(s.phase)});
}

template <class T>
Tensor<T> fouspa_block(const Tensor<T>& x, const FouSpaParams<T>& p) {
    std::vector<Tensor<T>> parts;
    if (p.amplitude) parts.push_back(fouspa_fourier_branch(x, p));
    for (const auto& hin : p.spatial) parts.push_back(hin_unit(x, hin));
    if (parts.empty()) throw ConfigError("fouspa_block: no enabled branch");
    const auto joined = parts.size() == 1 ? parts.front() : concat_channels(parts);
    return add(x, leaky_relu(p.fuse(joined)));
}

template <class T>
struct SftParams {
    Conv<T> scale;  // gamma head
    Conv<T> shift;  // beta head
};

template <class T>
SftParams<T> make_sft(ParamStore<T>& store, const std::string& name, std::size_t guidance_channels,
                      std::size_t channels, std::mt19937_64& rng) {
    return {make_conv(store, name + ".scale", guidance_channels, channels, 1, rng, Init::zero),
            make_conv(store, name + ".shift", guidance_channels, channels, 1, rng, Init::zero)};
}

/// features * (1 + gamma(g)) + beta(g); guidance is bilinearly resized to the
/// feature grid when the extents differ.
template <class T>
Tensor<T> sft_modulate(const Tensor<T>& features, const Tensor<T>& guidance,
                       const SftParams<T>& p) {
    const Shape fs = features.shape();
    const Shape gs = guidance.shape();
    if (gs.n != fs.n) {
        throw DimensionError("sft_modulate: batch mismatch " + fs.str() + " vs " + gs.str());
    }
    const auto g = (gs.h == fs.h && gs.w == fs.w) ? guidance : bilinear_resize(guidance, fs.h, fs.w);
    const auto gamma = p.scale(g);
    const auto beta = p.shift(g);
    return add(mul(features, add_scalar(gamma, T(1))), beta);
}

struct AdjustConfig {
    bool fourier = true;
    bool amplitude_modulation = true;
    bool phase_guidance = true;
    std::size_t spatial = 1;
    std::size_t kernel = 1;  // spatial extent of HIN and fusion convs
};

template <class T>
struct AdjustParams {
    bool fourier = true;
    std::optional<SftParams<T>> modulation;
    std::optional<Conv<T>> phase_fuse;  // 1x1, 2C -> C
    std::vector<HinParams<T>> spatial;
    Conv<T> fuse;
};

template <class T>
AdjustParams<T> make_adjust(ParamStore<T>& store, const std::string& name, std::size_t channels,
                            const AdjustConfig& cfg, std::mt19937_64& rng) {
    const std::size_t branches = (cfg.fourier ? 1 : 0) + cfg.spatial;
    if (branches == 0) {
        throw ConfigError("adjustment_block: both branches disabled; use a residual block instead");
    }
    if (!cfg.fourier && (cfg.amplitude_modulation || cfg.phase_guidance)) {
        throw ConfigError("adjustment_block: modulation/guidance require the Fourier branch");
    }
    AdjustParams<T> p;
    p.fourier = cfg.fourier;
    if (cfg.amplitude_modulation) p.modulation = make_sft(store, name + ".sft", channels, channels, rng);
    if (cfg.phase_guidance) {
        p.phase_fuse = make_conv(store, name + ".phase_fuse", 2 * channels, channels, 1, rng);
    }
    for (std::size_t i = 0; i < cfg.spatial; ++i) {
        p.spatial.push_back(
            make_hin(store, name + ".hin" + std::to_string(i), channels, cfg.kernel, rng));
    }
    p.fuse = make_conv(store, name + ".fuse", branches * channels, channels, cfg.kernel, rng);
    return p;
}

template <class T>
Tensor<T> adjustment_fourier_branch(const Tensor<T>& x, const Tensor<T>& amp_r,
                                    const Tensor<T>& phase_r, const AdjustParams<T>& p) {
    require(p.fourier, "adjustment_block: Fourier branch is disabled");
    const Shape xs = x.shape();
    auto check = [&](const Tensor<T>& g, const char* what) {
        const Shape gs = g.shape();
        if (gs.n != xs.n || gs.h != xs.h || gs.w != xs.w) {
            throw DimensionError(std::string("adjustment_block: ") + what + " " + gs.str() +
                                 " does not match the feature spectrum " + xs.str());
        }
    };
    const auto s = fft2(x);
    auto amplitude = s.amplitude;
    auto phase_feat = s.phase;
    if (p.modulation) {
        check(amp_r, "refined amplitude");
        amplitude = sft_modulate(amplitude, amp_r, *p.modulation);
    }
    if (p.phase_fuse) {
        check(phase_r, "refined phase");
        phase_feat = (*p.phase_fuse)(concat_channels<T>({phase_feat, phase_r}));
    }
    return ifft2(Spectrum<T>{amplitude, phase_feat});
}

template <class T>
Tensor<T> adjustment_block(const Tensor<T>& x, const Tensor<T>& amp_r, const Tensor<T>& phase_r,
                           const AdjustParams<T>& p) {
    std::vector<Tensor<T>> parts;
    if (p.fourier) parts.push_back(adjustment_fourier_branch(x, amp_r, phase_r, p));
    for (const auto& hin : p.spatial) parts.push_back(hin_unit(x, hin));
    if (parts.empty()) throw ConfigError("adjustment_block: no enabled branch");
    const auto joined = parts.size() == 1 ? parts.front() : concat_channels(parts);
    return add(x, leaky_relu(p.fuse(joined)));
}

template <class T>
struct ResidualParams {
    Conv<T> conv1;
    Conv<T> conv2;
};

template <class T>
ResidualParams<T> make_residual(ParamStore<T>& store, const std::string& name,
                                std::size_t channels, std::size_t kernel, std::mt19937_64& rng) {
    return {make_conv(store, name + ".conv1", channels, channels, kernel, rng),
            make_conv(store, name + ".conv2", channels, channels, kernel, rng)};
}

template <class T>
Tensor<T> residual_block(const Tensor<T>& x, const ResidualParams<T>& p) {
    return add(x, p.conv2(leaky_relu(p.conv1(x))));
}

}  // namespace uhdfour
