#pragma once

// Training loop (Adam on the composite loss over random aligned crops) and
// paired-dataset evaluation.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "uhdfour/adam.hpp"
#include "uhdfour/checkpoint.hpp"
#include "uhdfour/data.hpp"
#include "uhdfour/losses.hpp"
#include "uhdfour/model.hpp"

namespace uhdfour {

enum class Precision { fp32, fp64 };

/// Desk-scale defaults (batch 2, crop 96); the large-scale setting is batch 6, crop 512.
struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch = 2;
    std::size_t crop = 96;
    std::size_t steps = 1000;
    std::uint64_t seed = 0;
    LossWeights weights;
    int ablation = 13;  // preset row; individual flag keys override it
    AblationFlags flags = ablation_preset(13);
    std::size_t scale = 8;  // LR downsample factor
    std::size_t width = 16;
    std::size_t hr_kernel = 1;
    std::size_t eval_every = 0;        // 0 disables
    std::size_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
    Precision precision = Precision::fp32;
    double clip = 0.0;  // global gradient-norm clip; 0 disables

    ModelConfig model_config() const {
        ModelConfig c;
        c.width = width;
        c.scale = scale;
        c.hr_kernel = hr_kernel;
        c.flags = flags;
        return c;
    }
};

inline void validate(const TrainConfig& c) {
    if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
    if (c.batch == 0) throw ConfigError("batch must be at least 1");
    if (c.scale == 0 || c.crop == 0 || c.crop % (4 * c.scale) != 0) {
        throw ConfigError("crop " + std::to_string(c.crop) + " must be a positive multiple of 4*scale = " +
                          std::to_string(4 * c.scale));
    }
    if (!(c.clip >= 0.0)) throw ConfigError("clip must be non-negative");
    validate(c.weights);
    validate(c.model_config());
}

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
    N out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace detail

/// Applies one key=value setting. `ablation` resets every flag to the preset,
/// so it should come before individual flag keys.
inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_bool, detail::parse_number;
    auto& f = c.flags;
    if (key == "lr") c.lr = parse_number<double>(key, value);
    else if (key == "batch") c.batch = parse_number<std::size_t>(key, value);
    else if (key == "crop") c.crop = parse_number<std::size_t>(key, value);
    else if (key == "steps") c.steps = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "w_l1") c.weights.l1 = parse_number<double>(key, value);
    else if (key == "w_ssim") c.weights.ssim = parse_number<double>(key, value);
    else if (key == "w_lr_l1") c.weights.lr_l1 = parse_number<double>(key, value);
    else if (key == "w_perceptual") c.weights.perceptual = parse_number<double>(key, value);
    else if (key == "ablation") {
        c.ablation = parse_number<int>(key, value);
        c.flags = ablation_preset(c.ablation);
    } else if (key == "fouspa_fourier") f.fouspa_fourier = parse_bool(key, value);
    else if (key == "fouspa_spatial") f.fouspa_spatial = parse_number<std::size_t>(key, value);
    else if (key == "fouspa_residual") f.fouspa_residual = parse_bool(key, value);
    else if (key == "adjust_fourier") f.adjust_fourier = parse_bool(key, value);
    else if (key == "amplitude_modulation") f.amplitude_modulation = parse_bool(key, value);
    else if (key == "phase_guidance") f.phase_guidance = parse_bool(key, value);
    else if (key == "adjust_spatial") f.adjust_spatial = parse_number<std::size_t>(key, value);
    else if (key == "adjust_residual") f.adjust_residual = parse_bool(key, value);
    else if (key == "add_lr_output") f.add_lr_output = parse_bool(key, value);
    else if (key == "scale" || key == "lr_scale_factor") c.scale = parse_number<std::size_t>(key, value);
    else if (key == "width") c.width = parse_number<std::size_t>(key, value);
    else if (key == "hr_kernel") c.hr_kernel = parse_number<std::size_t>(key, value);
    else if (key == "eval_every") c.eval_every = parse_number<std::size_t>(key, value);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_number<std::size_t>(key, value);
    else if (key == "precision") {
        if (value == "fp32" || value == "32") c.precision = Precision::fp32;
        else if (value == "fp64" || value == "64") c.precision = Precision::fp64;
        else throw ConfigError("precision must be fp32 or fp64, got '" + value + "'");
    } else if (key == "clip") c.clip = parse_number<double>(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

/// Flat key=value lines; '#' starts a comment.
inline TrainConfig parse_train_config(const std::string& text, TrainConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return base;
}

inline TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str(), std::move(base));
}

class TrainingError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct LogRow {
    std::size_t step = 0;
    double l1 = 0, ssim_loss = 0, lr_l1 = 0, perc = 0, total = 0;
};

inline constexpr const char* kLogHeader = "step,l1,ssim_loss,lr_l1,perc,total";

inline std::ostream& operator<<(std::ostream& os, const LogRow& r) {
    const auto prec = os.precision(9);
    os << r.step << ',' << r.l1 << ',' << r.ssim_loss << ',' << r.lr_l1 << ',' << r.perc << ',' << r.total;
    os.precision(prec);
    return os;
}

/// Stacks per-item (1,C,H,W) tensors into one batch.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<float>>& items) {
    require(!items.empty(), "stack_batch: empty batch");
    const Shape s = items.front().shape();
    std::vector<T> v;
    v.reserve(items.size() * s.size());
    for (const auto& t : items) {
        require(t.shape() == s, "stack_batch: mixed shapes");
        v.insert(v.end(), t.data().begin(), t.data().end());
    }
    return Tensor<T>(Shape{items.size(), s.c, s.h, s.w}, std::move(v));
}

struct Batch {
    std::vector<std::string> ids;
    std::vector<Tensor<float>> low, normal;
};

/// The batch drawn at `step` depends only on (seed, step), so a resumed run
/// sees the same data as an uninterrupted one.
inline Batch sample_batch(const std::vector<ImagePair>& data, const TrainConfig& c, std::size_t step) {
    std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    Batch b;
    for (std::size_t i = 0; i < c.batch; ++i) {
        const auto& p = data[pick(rng)];
        const auto crops = sample_crops(p, c.crop, 1, rng(), 4 * c.scale);
        b.ids.push_back(p.id);
        b.low.push_back(crops[0].low);
        b.normal.push_back(crops[0].normal);
    }
    return b;
}

struct EvalRow {
    std::string id;
    double psnr = 0;  // capped
    double ssim = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0;
    double mean_ssim = 0;
};

/// Scores each prediction against its target (PSNR capped, SSIM in double).
template <class T>
EvalReport score(const std::vector<std::string>& ids, const std::vector<Tensor<T>>& predictions,
                 const std::vector<Tensor<T>>& targets) {
    require(ids.size() == predictions.size() && ids.size() == targets.size(), "score: size mismatch");
    if (ids.empty()) throw DatasetError("evaluation over an empty dataset");
    EvalReport r;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        r.rows.push_back({ids[i], capped(psnr(predictions[i], targets[i])), ssim_metric(predictions[i], targets[i])});
        r.mean_psnr += r.rows.back().psnr;
        r.mean_ssim += r.rows.back().ssim;
    }
    r.mean_psnr /= double(ids.size());
    r.mean_ssim /= double(ids.size());
    return r;
}

/// Enhances every low image of the dataset (padding as needed) and scores it.
template <class T>
EvalReport evaluate(const Model<T>& m, const std::vector<ImagePair>& data) {
    if (data.empty()) throw DatasetError("evaluation over an empty dataset");
    std::vector<std::string> ids;
    std::vector<Tensor<T>> preds, targets;
    for (const auto& p : data) {
        ids.push_back(p.id);
        preds.push_back(enhance(m, p.low.template cast<T>()));
        targets.push_back(p.normal.template cast<T>());
    }
    return score(ids, preds, targets);
}

/// Identity baseline: scores the low images themselves.
inline EvalReport evaluate_identity(const std::vector<ImagePair>& data) {
    std::vector<std::string> ids;
    std::vector<Tensor<float>> preds, targets;
    for (const auto& p : data) {
        ids.push_back(p.id);
        preds.push_back(p.low);
        targets.push_back(p.normal);
    }
    return score(ids, preds, targets);
}

inline void write_eval_csv(const EvalReport& r, std::ostream& os) {
    os << "id,psnr,ssim\n" << std::setprecision(9);
    for (const auto& row : r.rows) os << row.id << ',' << row.psnr << ',' << row.ssim << '\n';
    os << "mean," << r.mean_psnr << ',' << r.mean_ssim << '\n';
}

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir;  // log CSV and checkpoints
    std::optional<std::filesystem::path> resume;   // checkpoint with optimizer state
    std::ostream* progress = nullptr;               // one line per logged step
    std::size_t progress_every = 50;
};

template <class T>
struct TrainResult {
    Model<T> model;
    AdamState<T> optim;
    std::vector<LogRow> log;
};

namespace detail {

template <class T>
std::string parameter_report(const Model<T>& m) {
    std::ostringstream os;
    os << "parameter norms:";
    const auto& names = m.store.names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        double n2 = 0.0;
        for (T v : m.store.tensors()[i].data()) n2 += double(v) * double(v);
        os << ' ' << names[i] << '=' << std::sqrt(n2);
    }
    return os.str();
}

template <class T>
double clip_gradients(std::vector<Tensor<T>>& params, double max_norm) {
    double n2 = 0.0;
    for (const auto& p : params)
        if (p.has_grad())
            for (T g : p.grad()) n2 += double(g) * double(g);
    const double norm = std::sqrt(n2);
    if (max_norm > 0.0 && norm > max_norm) {
        const double k = max_norm / norm;
        for (auto& p : params)
            if (p.has_grad())
                for (T& g : p.mutable_grad()) g = static_cast<T>(g * k);
    }
    return norm;
}

}  // namespace detail

/// Runs steps (start, config.steps] of Adam on the composite loss. The model
/// is initialized from config.seed unless a resume checkpoint is given.
template <class T>
TrainResult<T> train(const TrainConfig& config, const std::vector<ImagePair>& data, const TrainOptions& opt = {}) {
    validate(config);
    if (data.empty()) throw DatasetError("training over an empty dataset");
    for (const auto& p : data) validate(p);
    TrainResult<T> r{build_model<T>(config.model_config(), config.seed), {}, {}};
    auto& params = r.model.store.tensors();
    r.optim.reset(std::span<const Tensor<T>>(params.data(), params.size()));
    if (opt.resume) {
        auto loaded = load_checkpoint<T>(*opt.resume);
        if (!(loaded.model.config == r.model.config)) {
            throw ConfigError("resume checkpoint architecture differs from the training config");
        }
        if (!loaded.optim) throw CheckpointError(opt.resume->string() + ": no optimizer state to resume from");
        r.model = std::move(loaded.model);
        r.optim = std::move(*loaded.optim);
    }
    const FeaturePyramid<T> pyramid;
    std::ofstream log_file;
    if (opt.out_dir) {
        std::filesystem::create_directories(*opt.out_dir);
        const auto log_path = *opt.out_dir / "train_log.csv";
        const bool append = opt.resume && std::filesystem::exists(log_path);
        log_file.open(log_path, append ? std::ios::app : std::ios::trunc);
        if (!log_file) throw std::runtime_error("cannot write " + log_path.string());
        if (!append) log_file << kLogHeader << '\n';
    }
    auto save = [&](const std::string& file) {
        if (opt.out_dir) save_checkpoint(r.model, *opt.out_dir / file, &r.optim);
    };
    auto& model_params = r.model.store.tensors();
    for (std::size_t step = static_cast<std::size_t>(r.optim.step) + 1; step <= config.steps; ++step) {
        const Batch batch = sample_batch(data, config, step);
        const auto x = stack_batch<T>(batch.low);
        const auto y = stack_batch<T>(batch.normal);
        const auto out = forward(r.model, x);
        const auto terms = total_loss(out, y, config.weights, pyramid);
        LogRow row{step, double(terms.l1.item()), double(terms.ssim.item()), double(terms.lr_l1.item()),
                   double(terms.perceptual.item()), double(terms.total.item())};
        if (!std::isfinite(row.total)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (batch:";
            for (const auto& id : batch.ids) os << ' ' << id;
            os << "); " << detail::parameter_report(r.model);
            throw TrainingError(os.str());
        }
        zero_grads(std::span<Tensor<T>>(model_params));
        terms.total.backward();
        detail::clip_gradients(model_params, config.clip);
        adam_step(std::span<Tensor<T>>(model_params), r.optim, config.lr);
        zero_grads(std::span<Tensor<T>>(model_params));
        r.log.push_back(row);
        if (log_file.is_open()) log_file << row << '\n';
        if (opt.progress && (step % opt.progress_every == 0 || step == config.steps)) *opt.progress << row << '\n';
        if (config.eval_every && step % config.eval_every == 0 && opt.out_dir) {
            const auto rep = evaluate(r.model, data);
            std::ofstream(*opt.out_dir / "eval_log.csv", std::ios::app)
                << step << ',' << rep.mean_psnr << ',' << rep.mean_ssim << '\n';
        }
        if (config.checkpoint_every && step % config.checkpoint_every == 0) {
            save("step_" + std::to_string(step) + ".uhdf");
        }
    }
    for (const auto& p : model_params)
        for (T v : p.data())
            if (!std::isfinite(double(v))) throw TrainingError("non-finite parameter after training; " + detail::parameter_report(r.model));
    save("final.uhdf");
    return r;
}

}  // namespace uhdfour
