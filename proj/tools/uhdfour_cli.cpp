#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uhdfour/align.hpp"
#include "uhdfour/checkpoint.hpp"
#include "uhdfour/data.hpp"
#include "uhdfour/fourier.hpp"
#include "uhdfour/image_io.hpp"
#include "uhdfour/model.hpp"
#include "uhdfour/trainer.hpp"

namespace fs = std::filesystem;
using namespace uhdfour;

namespace {

// Files written by a subcommand; removed again unless the command finishes.
class Outputs {
   public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)), created_dir_(!fs::exists(dir_)) {
        fs::create_directories(dir_);
    }
    Outputs(const Outputs&) = delete;
    Outputs& operator=(const Outputs&) = delete;
    ~Outputs() {
        if (done_) return;
        std::error_code ec;
        if (created_dir_) {
            fs::remove_all(dir_, ec);
            return;
        }
        for (const auto& f : files_) fs::remove(f, ec);
    }

    fs::path add(const std::string& name) {
        files_.push_back(dir_ / name);
        return files_.back();
    }
    void commit() { done_ = true; }

   private:
    fs::path dir_;
    bool created_dir_;
    bool done_ = false;
    std::vector<fs::path> files_;
};

std::vector<fs::path> png_files(const fs::path& input) {
    if (fs::is_regular_file(input)) return {input};
    if (!fs::is_directory(input)) throw std::runtime_error("no such file or directory: " + input.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(input))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw std::runtime_error("no .png files in " + input.string());
    return out;
}

std::string matrix_text(const AffineMatrix& m, const char* row_sep) {
    std::ostringstream os;
    os << std::setprecision(8);
    for (int r = 0; r < 2; ++r)
        os << (r ? row_sep : "") << m.a[3 * r] << ' ' << m.a[3 * r + 1] << ' ' << m.a[3 * r + 2];
    return os.str();
}

struct TrainArgs {
    std::string config, data, out, resume;
    std::vector<std::string> settings;
    std::map<std::string, std::string> shortcuts;
};

template <class T>
void run_train(const TrainConfig& cfg, const TrainArgs& a) {
    const auto data = load_dataset(a.data);
    TrainOptions opt;
    opt.out_dir = a.out;
    if (!a.resume.empty()) opt.resume = a.resume;
    opt.progress = &std::cout;
    try {
        const auto r = train<T>(cfg, data, opt);
        std::cout << "wrote " << (fs::path(a.out) / "final.uhdf").string() << " after step " << r.optim.step
                  << '\n';
    } catch (...) {
        std::cerr << "uhdfour: partial training outputs left in " << a.out << '\n';
        throw;
    }
}

void train_command(const TrainArgs& a) {
    TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
    for (const auto& [key, value] : a.shortcuts) apply_setting(cfg, key, value);
    for (const auto& s : a.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + s);
        apply_setting(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
    validate(cfg);
    if (cfg.precision == Precision::fp64) run_train<double>(cfg, a);
    else run_train<float>(cfg, a);
}

void infer_command(const std::string& checkpoint, const std::string& input, const std::string& out) {
    const auto files = png_files(input);
    const auto model = load_checkpoint<float>(checkpoint).model;
    Outputs outputs(out);
    for (const auto& f : files) {
        const auto y = enhance(model, load_png(f));
        save_png(y, outputs.add(f.filename().string()));
        std::cout << f.filename().string() << ' ' << y.shape().w << 'x' << y.shape().h << '\n';
    }
    outputs.commit();
}

void eval_command(const std::string& checkpoint, const std::string& data_dir, const std::string& out) {
    const auto model = load_checkpoint<float>(checkpoint).model;
    const auto data = load_dataset(data_dir);
    const auto report = evaluate(model, data);
    const auto baseline = evaluate_identity(data);
    const fs::path path(out);
    Outputs outputs(path.has_parent_path() ? path.parent_path() : fs::path("."));
    {
        std::ofstream os(outputs.add(path.filename().string()));
        write_eval_csv(report, os);
        if (!os) throw std::runtime_error("cannot write " + out);
    }
    std::cout << std::fixed << std::setprecision(3) << "mean psnr " << report.mean_psnr << " dB, ssim "
              << report.mean_ssim << " (identity " << baseline.mean_psnr << " dB, " << baseline.mean_ssim << ")\n";
    outputs.commit();
}

void swap_command(const std::string& a_path, const std::string& b_path, const std::string& out) {
    const auto a = load_png(a_path), b = load_png(b_path);
    const auto [amp_a, amp_b] = swap_amplitude(a, b);
    const auto va = spectrum_image(fft2(a)), vb = spectrum_image(fft2(b));
    Outputs outputs(out);
    save_png(amp_a, outputs.add("amp_a_phase_b.png"));
    save_png(amp_b, outputs.add("amp_b_phase_a.png"));
    save_png(va.amplitude, outputs.add("a_amplitude.png"));
    save_png(va.phase, outputs.add("a_phase.png"));
    save_png(vb.amplitude, outputs.add("b_amplitude.png"));
    save_png(vb.phase, outputs.add("b_phase.png"));
    outputs.commit();
}

void spectrum_command(const std::string& input, const std::vector<std::size_t>& factors, const std::string& out) {
    const auto panels = amplitude_similarity(load_png(input), factors);
    Outputs outputs(out);
    std::vector<Tensor<float>> row;
    for (const auto& p : panels) {
        const auto tag = "x" + std::to_string(p.factor);
        save_png(p.views.amplitude, outputs.add("amplitude_" + tag + ".png"));
        save_png(p.views.phase, outputs.add("phase_" + tag + ".png"));
        row.push_back(p.views.amplitude);
    }
    save_png(side_by_side(row), outputs.add("amplitude_panels.png"));
    outputs.commit();
}

void align_command(const std::string& moving_path, const std::string& fixed_path, const std::string& out) {
    const auto moving = load_png(moving_path), fixed = load_png(fixed_path);
    const auto matched = adain_match(moving, fixed);
    const auto m = estimate_affine(matched, fixed);
    const fs::path path(out);
    Outputs outputs(path.has_parent_path() ? path.parent_path() : fs::path("."));
    save_png(warp_affine(moving, m), outputs.add(path.filename().string()));
    std::cout << matrix_text(m, "\n") << '\n';
    outputs.commit();
}

struct SynthArgs {
    std::string clean, out;
    std::size_t textures = 0, size = 128;
    SynthParams params;
};

void synth_command(const SynthArgs& a) {
    if (a.clean.empty() == (a.textures == 0)) throw std::runtime_error("give exactly one of --clean or --textures");
    std::vector<std::pair<std::string, Tensor<float>>> clean;
    if (!a.clean.empty()) {
        for (const auto& f : png_files(a.clean)) clean.emplace_back(f.stem().string(), load_png(f));
    } else {
        for (std::size_t i = 0; i < a.textures; ++i) {
            char id[16];
            std::snprintf(id, sizeof id, "tex%03zu", i);
            clean.emplace_back(id, textured_image(a.size, a.size, a.params.seed * 1000003u + i));
        }
    }
    std::vector<ImagePair> pairs;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        auto sp = a.params;
        sp.seed = a.params.seed + i;
        pairs.push_back(synth_pair(clean[i].second, sp, clean[i].first));
    }
    Outputs outputs(a.out);
    save_dataset(a.out, pairs);
    std::cout << "wrote " << pairs.size() << " pairs to " << a.out << '\n';
    outputs.commit();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ultra-high-definition low-light enhancement in the Fourier domain"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Cap on OpenMP threads (1 is bit-deterministic)")->check(CLI::PositiveNumber);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a model on a paired dataset");
    train->add_option("--config", ta.config, "key=value config file")->check(CLI::ExistingFile);
    train->add_option("--data", ta.data, "Dataset root (input/, gt/)")->required();
    train->add_option("--out", ta.out, "Output directory for logs and checkpoints")->required();
    train->add_option("--resume", ta.resume, "Checkpoint with optimizer state")->check(CLI::ExistingFile);
    train->add_option("--set", ta.settings, "Config override key=value (repeatable)");
    for (const char* key : {"steps", "lr", "batch", "crop", "seed", "scale", "ablation", "precision"}) {
        train->add_option_function<std::string>(
            std::string("--") + key, [&ta, key](const std::string& v) { ta.shortcuts[key] = v; },
            std::string("Override config key ") + key);
    }

    std::string checkpoint, input, out, data_dir, a_path, b_path;
    auto* infer = app.add_subcommand("infer", "Enhance a PNG or a directory of PNGs");
    infer->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    infer->add_option("--input", input, "PNG file or directory")->required();
    infer->add_option("--out", out, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a paired dataset");
    eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", out, "CSV path")->required();

    auto* swap = app.add_subcommand("swap", "Exchange amplitude spectra of two images");
    swap->add_option("--a", a_path)->required()->check(CLI::ExistingFile);
    swap->add_option("--b", b_path)->required()->check(CLI::ExistingFile);
    swap->add_option("--out", out)->required();

    std::vector<std::size_t> factors{1, 2, 4, 8};
    auto* spectrum = app.add_subcommand("spectrum", "Amplitude and phase panels across downsampling factors");
    spectrum->add_option("--input", input)->required()->check(CLI::ExistingFile);
    spectrum->add_option("--factors", factors)->delimiter(',')->check(CLI::PositiveNumber);
    spectrum->add_option("--out", out)->required();

    auto* align = app.add_subcommand("align", "AdaIN + ECC affine alignment of moving onto fixed");
    align->add_option("--moving", a_path)->required()->check(CLI::ExistingFile);
    align->add_option("--fixed", b_path)->required()->check(CLI::ExistingFile);
    align->add_option("--out", out, "Aligned PNG path")->required();

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Build a synthetic low-light dataset");
    synth->add_option("--clean", sa.clean, "Directory of clean PNGs");
    synth->add_option("--textures", sa.textures, "Generate this many procedural clean images instead");
    synth->add_option("--size", sa.size, "Side of generated textures")->check(CLI::PositiveNumber);
    synth->add_option("--out", sa.out)->required();
    synth->add_option("--gamma", sa.params.gamma)->check(CLI::PositiveNumber);
    synth->add_option("--gain", sa.params.gain)->check(CLI::PositiveNumber);
    synth->add_option("--sigma", sa.params.sigma)->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", sa.params.seed);

    std::string config;
    auto* describe_cmd = app.add_subcommand("describe", "Print the parameter table of a configuration");
    describe_cmd->add_option("--config", config, "key=value config file")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    if (threads > 0) omp_set_num_threads(threads);

    try {
        if (*train) train_command(ta);
        else if (*infer) infer_command(checkpoint, input, out);
        else if (*eval) eval_command(checkpoint, data_dir, out);
        else if (*swap) swap_command(a_path, b_path, out);
        else if (*spectrum) spectrum_command(input, factors, out);
        else if (*align) align_command(a_path, b_path, out);
        else if (*synth) synth_command(sa);
        else if (*describe_cmd) {
            const TrainConfig cfg = config.empty() ? TrainConfig{} : load_train_config(config);
            std::cout << describe(build_model<float>(cfg.model_config(), cfg.seed));
        }
    } catch (const AlignmentError& e) {
        std::cerr << "uhdfour: " << e.what() << " (last valid matrix " << matrix_text(e.last_valid, "; ") << ")\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "uhdfour: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
