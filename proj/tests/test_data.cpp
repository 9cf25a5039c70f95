#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "uhdfour/align.hpp"
#include "uhdfour/data.hpp"
#include "uhdfour/image_io.hpp"
#include "uhdfour/losses.hpp"

using namespace uhdfour;
using namespace uhdfour::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "uhdfour_test_data";
    fs::create_directories(dir);
    return dir / name;
}

Tensor<float> byte_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> byte(0, 255);
    std::vector<float> v(3 * h * w);
    for (auto& x : v) x = static_cast<float>(byte(rng) / 255.0);
    return Tensor<float>(Shape{1, 3, h, w}, std::move(v));
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Tensor<double> interior(const Tensor<double>& t, std::size_t margin) {
    const Shape s = t.shape();
    return crop(t, margin, margin, s.h - 2 * margin, s.w - 2 * margin);
}

}  // namespace

TEST(ImageIo, ByteExactRoundtrip) {
    const auto img = byte_image(17, 23, 1);
    const auto a = scratch("roundtrip_a.png"), b = scratch("roundtrip_b.png");
    save_png(img, a);
    const auto back = load_png<float>(a);
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) ASSERT_EQ(back.data()[i], img.data()[i]);
    save_png(back, b);
    EXPECT_EQ(file_bytes(a), file_bytes(b));
}

TEST(ImageIo, BlackWhiteAndMidGray) {
    const auto p = scratch("levels.png");
    save_png(Tensor<float>::zeros({1, 3, 4, 4}), p);
    const auto black = load_png<float>(p);
    for (float v : black.data()) EXPECT_EQ(v, 0.0f);
    save_png(Tensor<float>::ones({1, 3, 4, 4}), p);
    const auto white = load_png<float>(p);
    for (float v : white.data()) EXPECT_EQ(v, 1.0f);
    save_png(Tensor<double>::full({1, 3, 4, 4}, 128.0 / 255.0), p);
    const auto gray = load_png<double>(p);
    for (double v : gray.data()) EXPECT_NEAR(v, 0.50196, 1e-5);
}

TEST(ImageIo, SaveClampsAndRoundsHalfToEven) {
    const auto p = scratch("clamp.png");
    Tensor<double> t(Shape{1, 3, 1, 4});
    const double vals[4] = {-0.5, 1.7, 0.5 / 255.0, 1.5 / 255.0};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t x = 0; x < 4; ++x) t.at(0, c, 0, x) = vals[x];
    save_png(t, p);
    const auto back = load_png<double>(p);
    EXPECT_EQ(back.at(0, 0, 0, 0), 0.0);
    EXPECT_EQ(back.at(0, 0, 0, 1), 1.0);
    EXPECT_EQ(back.at(0, 0, 0, 2), 0.0);            // 0.5 -> 0
    EXPECT_EQ(back.at(0, 0, 0, 3), 2.0 / 255.0);    // 1.5 -> 2
}

TEST(ImageIo, MalformedFileIsRejected) {
    const auto p = scratch("garbage.png");
    std::ofstream(p) << "definitely not a png";
    EXPECT_THROW(load_png<float>(p), ImageIoError);
    EXPECT_THROW(load_png<float>(scratch("missing.png")), ImageIoError);
}

TEST(SynthPair, IdentityDegradation) {
    const auto clean = textured_image(32, 32, 3);
    const auto p = synth_pair(clean, 1.0, 1.0, 0.0, 1);
    for (std::size_t i = 0; i < clean.size(); ++i) ASSERT_EQ(p.low.data()[i], clean.data()[i]);
    EXPECT_EQ(p.source, PairSource::synthetic);
}

TEST(SynthPair, GammaGainClosedForm) {
    const auto p = synth_pair(Tensor<float>::ones({1, 3, 8, 8}), 2.0, 0.25, 0.0, 1);
    for (float v : p.low.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(SynthPair, NoiseStandardDeviation) {
    // Base level 0.32 keeps 0.05-sigma noise more than 6 sigma from the clamp.
    const auto clean = Tensor<float>::full({1, 3, 256, 256}, 0.8f);
    const auto p = synth_pair(clean, 2.0, 0.5, 0.05, 11);
    double sum = 0, sum2 = 0;
    const double base = 0.5 * 0.8f * 0.8f;
    for (float v : p.low.data()) {
        sum += v - base;
        sum2 += (v - base) * (v - base);
    }
    const double n = static_cast<double>(p.low.size());
    const double sd = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    EXPECT_NEAR(sd, 0.05, 0.005);
}

TEST(SynthPair, DeterministicUnderSeed) {
    const auto clean = textured_image(32, 32, 3);
    const auto a = synth_pair(clean, 2.0, 0.3, 0.05, 9), b = synth_pair(clean, 2.0, 0.3, 0.05, 9);
    const auto c = synth_pair(clean, 2.0, 0.3, 0.05, 10);
    EXPECT_EQ(max_abs_diff(a.low, b.low), 0.0);
    EXPECT_GT(max_abs_diff(a.low, c.low), 0.0);
}

TEST(Texture, RangeAndDeterminism) {
    const auto a = textured_image(64, 48, 5), b = textured_image(64, 48, 5);
    EXPECT_EQ(max_abs_diff(a, b), 0.0);
    for (float v : a.data()) {
        ASSERT_GE(v, 0.05f - 1e-6f);
        ASSERT_LE(v, 0.95f + 1e-6f);
    }
}

TEST(SampleCrops, FullSizeGivesCopies) {
    const auto pair = synth_pair(textured_image(64, 64, 1), 2.0, 0.3, 0.02, 1);
    const auto crops = sample_crops(pair, 64, 3, 7);
    ASSERT_EQ(crops.size(), 3u);
    for (const auto& c : crops) {
        EXPECT_EQ(max_abs_diff(c.low, pair.low), 0.0);
        EXPECT_EQ(max_abs_diff(c.normal, pair.normal), 0.0);
    }
}

TEST(SampleCrops, BoundsAlignmentAndDeterminism) {
    const auto pair = synth_pair(textured_image(100, 130, 1), 2.0, 0.3, 0.02, 1);
    const auto wins = crop_windows(100, 130, 64, 20, 3);
    EXPECT_EQ(wins.size(), 20u);
    for (const auto& w : wins) {
        EXPECT_LE(w.top + 64, 100u);
        EXPECT_LE(w.left + 64, 130u);
    }
    const auto again = crop_windows(100, 130, 64, 20, 3);
    for (std::size_t i = 0; i < wins.size(); ++i) {
        EXPECT_EQ(wins[i].top, again[i].top);
        EXPECT_EQ(wins[i].left, again[i].left);
    }
    const auto crops = sample_crops(pair, 64, 20, 3);
    for (std::size_t i = 0; i < crops.size(); ++i) {
        EXPECT_EQ(crops[i].low.shape(), (Shape{1, 3, 64, 64}));
        EXPECT_EQ(crops[i].normal.at(0, 1, 5, 7), pair.normal.at(0, 1, wins[i].top + 5, wins[i].left + 7));
        EXPECT_EQ(crops[i].low.at(0, 2, 9, 3), pair.low.at(0, 2, wins[i].top + 9, wins[i].left + 3));
    }
}

TEST(SampleCrops, InvalidSizes) {
    const auto pair = synth_pair(textured_image(64, 64, 1), 2.0, 0.3, 0.02, 1);
    EXPECT_THROW(sample_crops(pair, 96, 1, 1), DimensionError);
    EXPECT_THROW(sample_crops(pair, 48, 1, 1), DimensionError);
    EXPECT_NO_THROW(sample_crops(pair, 48, 1, 1, 8));
}

TEST(Dataset, SaveAndLoadLayout) {
    const auto root = scratch("dataset");
    fs::remove_all(root);
    std::vector<ImagePair> pairs;
    for (int i = 0; i < 3; ++i)
        pairs.push_back(synth_pair(byte_image(16, 16, i), 1.0, 1.0, 0.0, i, "img" + std::to_string(i)));
    save_dataset(root, pairs);
    const auto loaded = load_dataset(root);
    ASSERT_EQ(loaded.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(loaded[i].id, pairs[i].id);
        EXPECT_EQ(max_abs_diff(loaded[i].normal, pairs[i].normal), 0.0);
    }
    fs::remove(root / "manifest.txt");
    EXPECT_EQ(load_dataset(root).size(), 3u);
    fs::remove(root / "gt" / "img1.png");
    EXPECT_THROW(load_dataset(root), DatasetError);
    EXPECT_THROW(load_dataset(scratch("no_such_dataset")), DatasetError);
}

TEST(Adain, StatisticsMatchReference) {
    const auto src = random_tensor<double>({1, 3, 32, 32}, 1, 0.0, 0.3);
    const auto ref = random_tensor<double>({1, 3, 32, 32}, 2, 0.2, 0.9);
    const auto out = adain_match(src, ref);
    for (std::size_t c = 0; c < 3; ++c) {
        auto stats = [c](const Tensor<double>& t) {
            double mu = 0, m2 = 0;
            for (std::size_t i = 0; i < 1024; ++i) mu += t.data()[c * 1024 + i];
            mu /= 1024;
            for (std::size_t i = 0; i < 1024; ++i) m2 += std::pow(t.data()[c * 1024 + i] - mu, 2);
            return std::pair{mu, std::sqrt(m2 / 1024)};
        };
        EXPECT_NEAR(stats(out).first, stats(ref).first, 1e-5);
        EXPECT_NEAR(stats(out).second, stats(ref).second, 1e-5);
    }
    EXPECT_LT(max_abs_diff(adain_match(ref, ref), ref), 1e-5);
}

TEST(Adain, ConstantSourceUsesFloor) {
    const auto ref = random_tensor<double>({1, 3, 8, 8}, 2, 0.2, 0.9);
    // Rounding in the source mean is scaled up by sigma_ref / 1e-6.
    const auto out = adain_match(Tensor<double>::full({1, 3, 8, 8}, 0.3), ref);
    for (std::size_t c = 0; c < 3; ++c) {
        double mu = 0;
        for (std::size_t i = 0; i < 64; ++i) mu += ref.data()[c * 64 + i] / 64;
        for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out.data()[c * 64 + i], mu, 1e-9);
    }
}

TEST(WarpAffine, IdentityAndIntegerShift) {
    const auto img = textured_image(40, 40, 1).cast<double>();
    EXPECT_EQ(max_abs_diff(warp_affine(img, AffineMatrix::identity()), img), 0.0);
    const auto shifted = warp_affine(img, AffineMatrix::translation(3, -2));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 40; ++y)
            for (std::size_t x = 0; x < 40; ++x) {
                const bool inside = x >= 3 && y + 2 < 40;
                ASSERT_EQ(shifted.at(0, c, y, x), inside ? img.at(0, c, y + 2, x - 3) : 0.0);
            }
    EXPECT_THROW(warp_affine(img, AffineMatrix{{1, 2, 0, 2, 4, 0}}), std::domain_error);
}

TEST(WarpAffine, InverseRoundtripOnInterior) {
    // Bilinear sampling reproduces affine intensity fields exactly.
    const auto m = AffineMatrix::rotation(3.0, 64, 64, 1.3, -0.7);
    Tensor<double> ramp(Shape{1, 3, 128, 128});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 128; ++y)
            for (std::size_t x = 0; x < 128; ++x) ramp.at(0, c, y, x) = 0.003 * x + 0.002 * y + 0.1 * c;
    const auto ramp_back = warp_affine(warp_affine(ramp, m), m.inverse());
    EXPECT_LT(max_abs_diff(interior(ramp_back, 12), interior(ramp, 12)), 1e-12);
    // Smooth texture: the residual is the smoothing of two interpolations.
    const auto img = textured_image(128, 128, 4, 2.5).cast<double>();
    const auto back = warp_affine(warp_affine(img, m), m.inverse());
    EXPECT_LT(max_abs_diff(interior(back, 12), interior(img, 12)), 1e-2);
}

TEST(EstimateAffine, IdentityForAlignedImages) {
    const auto img = textured_image(128, 128, 6);
    const auto m = estimate_affine(img, img);
    const auto id = AffineMatrix::identity();
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(m.a[i], id.a[i], 1e-4);
}

TEST(EstimateAffine, RecoversTranslation) {
    const auto img = textured_image(128, 128, 7).cast<double>();
    const auto fixed = warp_affine(img, AffineMatrix::translation(2.0, 0.0));
    const auto m = estimate_affine(img, fixed);
    EXPECT_NEAR(m.a[2], 2.0, 0.1);
    EXPECT_NEAR(m.a[5], 0.0, 0.1);
}

TEST(EstimateAffine, RecoversRotationAndTranslation) {
    const auto img = textured_image(256, 256, 8).cast<double>();
    const auto truth = AffineMatrix::rotation(1.0, 128, 128, 1.5, -1.0);
    const auto m = estimate_affine(img, warp_affine(img, truth));
    EXPECT_NEAR(m.rotation_degrees(), 1.0, 0.05);
    const auto c = m.apply(128, 128), ct = truth.apply(128, 128);
    EXPECT_NEAR(c[0], ct[0], 0.2);
    EXPECT_NEAR(c[1], ct[1], 0.2);
}

TEST(EstimateAffine, EndpointErrorAcrossPerturbations) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> shift(-4.0, 4.0), angle(-2.0, 2.0);
    for (int trial = 0; trial < 6; ++trial) {
        const auto img = textured_image(128, 128, 100 + trial).cast<double>();
        const auto truth = AffineMatrix::rotation(angle(rng), 64, 64, shift(rng), shift(rng));
        const auto m = estimate_affine(img, warp_affine(img, truth));
        EXPECT_LT(endpoint_error(m, truth, 128, 128), 0.3) << "trial " << trial;
    }
}

TEST(EstimateAffine, AlignmentImprovesInteriorPsnr) {
    const auto clean = textured_image(192, 192, 12);
    const auto truth = AffineMatrix::rotation(1.5, 96, 96, 3.0, 2.0);
    const auto fixed = warp_affine(clean.cast<double>(), truth);
    // A darker, noisy moving image: intensities are matched before estimation.
    const auto moving = synth_pair(clean, 1.5, 0.4, 0.01, 3).low.cast<double>();
    const auto matched = adain_match(moving, fixed);
    const auto m = estimate_affine(matched, fixed);
    const auto aligned = warp_affine(matched, m);
    const double before = psnr(interior(matched, 16), interior(fixed, 16));
    const double after = psnr(interior(aligned, 16), interior(fixed, 16));
    EXPECT_GE(after - before, 3.0) << before << " -> " << after;
}

TEST(EstimateAffine, DivergenceCarriesLastValidMatrix) {
    const auto flat = Tensor<double>::full({1, 3, 64, 64}, 0.5);
    try {
        estimate_affine(flat, flat);
        FAIL() << "expected an alignment error";
    } catch (const AlignmentError& e) {
        EXPECT_TRUE(e.last_valid.valid());
    }
    EXPECT_THROW(estimate_affine(flat, Tensor<double>::full({1, 3, 32, 64}, 0.5)), DimensionError);
}
