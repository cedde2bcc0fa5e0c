#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "subjectlab/cascade.hpp"
#include "subjectlab/error.hpp"

using namespace subjectlab;

namespace {

const ImageDims kHigh{32, 32, 3};

// Grey image whose three channels all carry `f(i, j)`.
template <class F>
Tensor grey(const ImageDims& d, F f) {
  Tensor t({d.size()});
  for (std::size_t i = 0; i < d.height; ++i)
    for (std::size_t j = 0; j < d.width; ++j)
      for (std::size_t c = 0; c < 3; ++c) t[(i * d.width + j) * 3 + c] = static_cast<float>(f(i, j));
  return t;
}

double wave(std::size_t j, int cycles, std::size_t w) {
  return std::cos(2.0 * std::numbers::pi * cycles * static_cast<double>(j) / static_cast<double>(w));
}

SrConfig tiny_sr() {
  SrConfig c;
  c.low = {4, 4, 3};
  c.factor = 2;
  c.denoiser.height = 8;
  c.denoiser.width = 8;
  c.denoiser.channels = 3;
  c.denoiser.image_cond_channels = 3;
  c.denoiser.hidden = 16;
  c.denoiser.blocks = 1;
  c.denoiser.time_dim = 8;
  c.denoiser.cond_dim = 4;
  c.denoiser.sigma_data = 0.2;
  return c;
}

}  // namespace

TEST(Augment, LevelZeroIsIdentity) {
  Rng rng(1);
  Tensor x({48});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  Rng a(5), b(5);
  EXPECT_EQ(augment_conditioning(x, 0.0, a), x);
  EXPECT_EQ(a.uniform(), b.uniform());
  EXPECT_THROW(augment_conditioning(x, 1.5, a), ValueError);
}

TEST(Augment, NoiseScaleMatchesSchedule) {
  Tensor x({200000}, 0.25f);
  Rng rng(2);
  const Tensor y = augment_conditioning(x, kTrainAugLevel, rng);
  const double alpha = std::cos(std::numbers::pi * kTrainAugLevel / 2);
  const double sigma = std::sin(std::numbers::pi * kTrainAugLevel / 2);
  double mean = 0, sq = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - alpha * 0.25;
    mean += d;
    sq += d * d;
  }
  mean /= double(y.size());
  const double sd = std::sqrt(sq / double(y.size()) - mean * mean);
  EXPECT_NEAR(sd / sigma, 1.0, 0.01);
  EXPECT_NEAR(sigma, 1.5708e-3, 1e-6);
}

TEST(HighFrequency, PureHighBandCarriesFullError) {
  const Tensor ref = grey(kHigh, [](auto, auto) { return 0.1; });
  const Tensor hi = grey(kHigh, [](auto, auto j) { return 0.1 + 0.3 * wave(j, 8, 32); });
  const Tensor lo = grey(kHigh, [](auto i, auto) { return 0.1 + 0.3 * wave(i, 1, 32); });
  // A cosine of amplitude A has mean square A^2 / 2.
  EXPECT_NEAR(high_frequency_error(hi, ref, kHigh), 0.045, 1e-7);
  EXPECT_NEAR(high_frequency_error(lo, ref, kHigh), 0.0, 1e-12);
  EXPECT_NEAR(high_frequency_error(ref, ref, kHigh), 0.0, 1e-15);
}

TEST(HighFrequency, ZeroCutoffEqualsLuminanceMse) {
  Rng rng(3);
  Tensor a({kHigh.size()}), b({kHigh.size()});
  for (auto& v : a.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b.data()) v = static_cast<float>(rng.uniform(-1, 1));
  double mse = 0;
  for (std::size_t p = 0; p < 32 * 32; ++p) {
    const double d = 0.299 * (a[3 * p] - b[3 * p]) + 0.587 * (a[3 * p + 1] - b[3 * p + 1]) +
                     0.114 * (a[3 * p + 2] - b[3 * p + 2]);
    mse += d * d;
  }
  mse /= 32 * 32;
  EXPECT_NEAR(high_frequency_error(a, b, kHigh, 0.0), mse, 1e-9);
  EXPECT_LE(high_frequency_error(a, b, kHigh), mse);
  EXPECT_THROW(high_frequency_error(a, Tensor({12}), kHigh), ShapeError);
}

TEST(HighFrequency, BandAmplitude) {
  const Tensor img = grey(kHigh, [](auto, auto j) { return 0.4 * wave(j, 5, 32); });
  EXPECT_NEAR(horizontal_band_amplitude(img, kHigh, 5), 0.4, 1e-5);
  EXPECT_NEAR(horizontal_band_amplitude(img, kHigh, 6), 0.0, 1e-5);
}

TEST(SuperResolution, ConfigValidation) {
  EXPECT_NO_THROW(default_sr_config().validate());
  EXPECT_EQ(default_sr_config().high(), (ImageDims{32, 32, 3}));
  SrConfig c = tiny_sr();
  c.denoiser.width = 6;
  EXPECT_THROW(c.validate(), ValueError);
}

TEST(SuperResolution, ConditionIsNearestUpsample) {
  const SrConfig c = tiny_sr();
  Tensor low({c.low.size()});
  for (std::size_t i = 0; i < low.size(); ++i) low[i] = float(i) / 48.0f;
  EXPECT_EQ(sr_condition(c, low), upsample_nearest(low, c.low, 2));
}

TEST(SuperResolution, CheckpointRoundTrip) {
  const SrModel sr = init_sr(tiny_sr());
  const auto path = std::filesystem::temp_directory_path() / "subjectlab_sr_test.ckpt";
  save_sr(path, sr, {{"note", "x"}});
  const SrModel back = load_sr(path);
  EXPECT_EQ(back.params, sr.params);
  EXPECT_EQ(back.config.high(), sr.config.high());
  EXPECT_EQ(back.config.denoiser.sigma_data, sr.config.denoiser.sigma_data);
  EXPECT_EQ(back.config.denoiser.skip_sigma, sr.config.denoiser.skip_sigma);
  std::filesystem::remove(path);
}

TEST(SuperResolution, OutputsDeterministicAcrossWorkers) {
  const SrModel sr = init_sr(tiny_sr());
  Rng rng(4);
  std::vector<Tensor> lows;
  for (int k = 0; k < 5; ++k) {
    Tensor t({sr.config.low.size()});
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
    lows.push_back(t);
  }
  const Tensor cond({4}, 0.2f);
  const auto spec = SamplerSpec::uniform(SamplerKind::Ddim, 6);
  const auto a = super_resolve(sr, lows, cond, kTrainAugLevel, spec, 9, 1);
  const auto b = super_resolve(sr, lows, cond, kTrainAugLevel, spec, 9, 3);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[i].size(), sr.config.high().size());
  }
  EXPECT_THROW(super_resolve(sr, {}, cond, kTrainAugLevel, spec, 9), ValueError);
}

TEST(SuperResolution, FinetuneRejectsEmptyPairs) {
  EXPECT_THROW(finetune_sr(init_sr(tiny_sr()), {}, SrFinetuneConfig{}), ValueError);
}
