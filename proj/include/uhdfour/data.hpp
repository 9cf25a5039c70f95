#pragma once

// Paired low-light / normal-light images: synthetic degradation, aligned crop
// sampling, procedural textures and the on-disk dataset layout
// (<root>/input/<id>.png, <root>/gt/<id>.png, optional <root>/manifest.txt).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "uhdfour/fft.hpp"
#include "uhdfour/image_io.hpp"
#include "uhdfour/ops.hpp"
#include "uhdfour/tensor.hpp"

namespace uhdfour {

struct SynthParams {
    double gamma = 2.0;
    double gain = 0.25;
    double sigma = 0.03;
    std::uint64_t seed = 0;
};

enum class PairSource { real, synthetic };

struct ImagePair {
    Tensor<float> low;
    Tensor<float> normal;
    std::string id;
    PairSource source = PairSource::real;
    std::optional<SynthParams> synth;
};

inline void validate(const ImagePair& p) {
    if (!(p.low.shape() == p.normal.shape())) {
        throw DimensionError("image pair " + p.id + ": shape mismatch " + p.low.shape().str() +
                             " vs " + p.normal.shape().str());
    }
    for (const auto* t : {&p.low, &p.normal})
        for (float v : t->data())
            if (!(v >= 0.0f && v <= 1.0f)) throw std::domain_error("image pair " + p.id + ": value outside [0,1]");
}

/// low = clamp(gain * clean^gamma + N(0, sigma^2)); normal = clean.
inline ImagePair synth_pair(const Tensor<float>& clean, double gamma, double gain, double sigma,
                            std::uint64_t seed, std::string id = "synthetic") {
    if (!(gamma > 0.0 && gain >= 0.0 && sigma >= 0.0)) {
        throw std::invalid_argument("synth_pair: need gamma > 0, gain >= 0, sigma >= 0");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<float> low(clean.size());
    const auto src = clean.data();
    for (std::size_t i = 0; i < low.size(); ++i) {
        const double v = gain * std::pow(static_cast<double>(src[i]), gamma) + sigma * noise(rng);
        low[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    ImagePair p;
    p.low = Tensor<float>(clean.shape(), std::move(low));
    p.normal = clean.detach();
    p.id = std::move(id);
    p.source = PairSource::synthetic;
    p.synth = SynthParams{gamma, gain, sigma, seed};
    return p;
}

inline ImagePair synth_pair(const Tensor<float>& clean, const SynthParams& sp, std::string id = "synthetic") {
    return synth_pair(clean, sp.gamma, sp.gain, sp.sigma, sp.seed, std::move(id));
}

/// Seeded RGB texture with a 1/f^beta amplitude spectrum, each channel
/// min-max mapped to [0.05, 0.95]. Channels share 70% of a common field.
inline Tensor<float> textured_image(std::size_t h, std::size_t w, std::uint64_t seed, double beta = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto field = [&] {
        std::vector<fft::cplx> spec(h * w);
        for (std::size_t u = 0; u < h; ++u)
            for (std::size_t v = 0; v < w; ++v) {
                const double fu = std::min(u, h - u), fv = std::min(v, w - v);
                const double f = std::hypot(fu, fv);
                const double a = f == 0.0 ? 0.0 : std::pow(f, -beta);
                spec[u * w + v] = {a * normal(rng), a * normal(rng)};
            }
        fft::transform2d(spec.data(), 1, h, w, true);
        std::vector<double> out(h * w);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = spec[i].real();
        return out;
    };
    const auto common = field();
    Tensor<float> img(Shape{1, 3, h, w});
    auto d = img.mutable_data();
    for (std::size_t c = 0; c < 3; ++c) {
        const auto own = field();
        std::vector<double> mix(h * w);
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.7 * common[i] + 0.3 * own[i];
        const auto [lo, hi] = std::minmax_element(mix.begin(), mix.end());
        const double range = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
        for (std::size_t i = 0; i < mix.size(); ++i)
            d[c * h * w + i] = static_cast<float>(0.05 + 0.9 * (mix[i] - *lo) / range);
    }
    return img;
}

struct CropWindow {
    std::size_t top = 0;
    std::size_t left = 0;
};

/// Seeded top-left corners for `n` crops of `size` within an h x w image.
inline std::vector<CropWindow> crop_windows(std::size_t h, std::size_t w, std::size_t size,
                                            std::size_t n, std::uint64_t seed, std::size_t multiple = 32) {
    if (size == 0 || size > std::min(h, w)) {
        throw DimensionError("crop size " + std::to_string(size) + " exceeds image " +
                             std::to_string(h) + "x" + std::to_string(w));
    }
    if (multiple == 0 || size % multiple != 0) {
        throw DimensionError("crop size " + std::to_string(size) + " is not a multiple of " +
                             std::to_string(multiple));
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> top(0, h - size), left(0, w - size);
    std::vector<CropWindow> out(n);
    for (auto& c : out) {
        c.top = top(rng);
        c.left = left(rng);
    }
    return out;
}

/// Identical windows on both images of the pair.
inline std::vector<ImagePair> sample_crops(const ImagePair& pair, std::size_t size, std::size_t n,
                                           std::uint64_t seed, std::size_t multiple = 32) {
    const Shape s = pair.low.shape();
    std::vector<ImagePair> out;
    for (const auto& c : crop_windows(s.h, s.w, size, n, seed, multiple)) {
        ImagePair p = pair;
        p.low = crop(pair.low, c.top, c.left, size, size);
        p.normal = crop(pair.normal, c.top, c.left, size, size);
        out.push_back(std::move(p));
    }
    return out;
}

class DatasetError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Ids from manifest.txt when present, otherwise every input/*.png stem (sorted).
inline std::vector<std::string> dataset_ids(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<std::string> ids;
    const auto manifest = root / "manifest.txt";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        std::string line;
        while (std::getline(in, line)) {
            line.erase(std::find_if(line.rbegin(), line.rend(), [](unsigned char ch) { return !std::isspace(ch); }).base(),
                       line.end());
            if (!line.empty() && line.front() != '#') ids.push_back(line);
        }
    } else {
        if (!fs::is_directory(root / "input")) throw DatasetError(root.string() + ": no input/ directory");
        for (const auto& e : fs::directory_iterator(root / "input"))
            if (e.is_regular_file() && e.path().extension() == ".png") ids.push_back(e.path().stem().string());
        std::sort(ids.begin(), ids.end());
    }
    if (ids.empty()) throw DatasetError(root.string() + ": dataset is empty");
    return ids;
}

inline std::vector<ImagePair> load_dataset(const std::filesystem::path& root) {
    std::vector<ImagePair> pairs;
    for (const auto& id : dataset_ids(root)) {
        const auto in = root / "input" / (id + ".png");
        const auto gt = root / "gt" / (id + ".png");
        if (!std::filesystem::exists(in) || !std::filesystem::exists(gt)) {
            throw DatasetError("pair " + id + ": missing " + (std::filesystem::exists(in) ? gt : in).string());
        }
        ImagePair p{load_png<float>(in), load_png<float>(gt), id, PairSource::real, std::nullopt};
        validate(p);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

/// Writes the standard layout plus a manifest listing the ids in order.
inline void save_dataset(const std::filesystem::path& root, const std::vector<ImagePair>& pairs) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "input");
    fs::create_directories(root / "gt");
    std::ofstream manifest(root / "manifest.txt");
    for (const auto& p : pairs) {
        save_png(p.low, root / "input" / (p.id + ".png"));
        save_png(p.normal, root / "gt" / (p.id + ".png"));
        manifest << p.id << '\n';
    }
    if (!manifest) throw DatasetError("cannot write " + (root / "manifest.txt").string());
}

}  // namespace uhdfour
