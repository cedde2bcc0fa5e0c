#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gaussian_oracle.hpp"
#include "subjectlab/denoiser.hpp"
#include "subjectlab/error.hpp"
#include "subjectlab/optimizer.hpp"
#include "subjectlab/sampler.hpp"
#include "subjectlab/schedule.hpp"

using namespace subjectlab;

TEST(Schedule, VariancePreservingOnGrid) {
  const NoiseSchedule s;
  for (int i = 0; i <= 1000; ++i) {
    const auto c = schedule_coeffs(s, i / 1000.0);
    EXPECT_NEAR(c.alpha * c.alpha + c.sigma * c.sigma, 1.0, 1e-6);
    EXPECT_EQ(c.weight, 1.0);
  }
}

TEST(Schedule, CosineClosedForm) {
  for (double t : {0.1, 0.25, 0.5, 0.9}) {
    const auto c = schedule_coeffs(NoiseSchedule{}, t);
    EXPECT_NEAR(c.alpha, std::cos(std::numbers::pi * t / 2), 1e-12);
    EXPECT_NEAR(c.sigma, std::sin(std::numbers::pi * t / 2), 1e-12);
  }
  const auto mid = schedule_coeffs(NoiseSchedule{}, 0.5);
  EXPECT_NEAR(mid.alpha, std::sqrt(0.5), 1e-12);
}

TEST(Schedule, Endpoints) {
  Rng rng(1);
  Tensor x({12}), eps({12});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : eps.data()) v = static_cast<float>(rng.normal());
  const auto a = forward_diffuse(NoiseSchedule{}, x, 0.0, eps);
  const auto b = forward_diffuse(NoiseSchedule{}, x, 1.0, eps);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(a.z[i], x[i], 1e-6);
    EXPECT_NEAR(b.z[i], eps[i], 1e-6);
  }
}

TEST(Schedule, RejectsBadInputs) {
  Tensor x({2}), eps({2});
  EXPECT_THROW(forward_diffuse(NoiseSchedule{}, x, 1.5, eps), ValueError);
  EXPECT_THROW(forward_diffuse(NoiseSchedule{}, x, -0.1, eps), ValueError);
  x[0] = 1.5f;
  EXPECT_THROW(forward_diffuse(NoiseSchedule{}, x, 0.5, eps), ValueError);
  EXPECT_THROW(forward_diffuse(NoiseSchedule{}, Tensor({3}), 0.5, eps), ShapeError);
}

TEST(Schedule, TrainingClamp) {
  const NoiseSchedule s;
  EXPECT_EQ(s.clamp_training_time(0.0), s.train_t_min);
  EXPECT_EQ(s.clamp_training_time(0.5), 0.5);
  EXPECT_GT(schedule_coeffs(s, s.clamp_training_time(0.0)).sigma, 0.0);
}

TEST(Sampler, GridValidation) {
  SamplerSpec s = SamplerSpec::uniform(SamplerKind::Ddim, 4);
  const std::vector<double> want{1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0};
  ASSERT_EQ(s.grid.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(s.grid[i], want[i], 1e-15);
  s.grid = {1.0, 0.5, 0.5, 0.0};
  EXPECT_THROW(s.validate(), ValueError);
  s.grid = {0.9, 0.0};
  EXPECT_THROW(s.validate(), ValueError);
  EXPECT_THROW(SamplerSpec::uniform(SamplerKind::Ddim, 1), ValueError);
}

TEST(Sampler, DdimMatchesGaussianMoments) {
  testnets::GaussianPosteriorMean oracle(2.0, 0.25);
  const auto spec = SamplerSpec::uniform(SamplerKind::Ddim, 64, false);
  const auto xs = sample_batch(oracle, {}, {}, spec, 1, 20000, 5);
  const auto m = testnets::moments(xs);
  EXPECT_LT(std::abs(m.mean - 2.0), 0.05);
  EXPECT_LT(std::abs(m.var - 0.25) / 0.25, 0.10);
}

TEST(Sampler, AncestralMatchesGaussianMoments) {
  testnets::GaussianPosteriorMean oracle(2.0, 0.25);
  const auto spec = SamplerSpec::uniform(SamplerKind::Ancestral, 128, false);
  const auto xs = sample_batch(oracle, {}, {}, spec, 1, 20000, 6);
  const auto m = testnets::moments(xs);
  EXPECT_LT(std::abs(m.mean - 2.0), 0.05);
  EXPECT_LT(std::abs(m.var - 0.25) / 0.25, 0.10);
}

TEST(Sampler, DdimSingleStepByHand) {
  // Two-point grid: one update from t=1 straight to t=0 returns x_hat(z, 1) = mu.
  testnets::GaussianPosteriorMean oracle(0.3, 0.25);
  const auto spec = SamplerSpec::uniform(SamplerKind::Ddim, 2, false);
  Tensor z({1, 1}, 0.7f);
  EXPECT_NEAR(sample_ddim(oracle, {}, {}, spec, z)[0], 0.3, 1e-6);
  // Three points: the t=1/2 state is alpha mu + sigma (z - 0) with alpha(1) = 0.
  const auto spec3 = SamplerSpec::uniform(SamplerKind::Ddim, 3, false);
  const double a = std::cos(std::numbers::pi / 4), s = std::sin(std::numbers::pi / 4);
  const double zh = a * 0.3 + s * 0.7;
  EXPECT_NEAR(sample_ddim(oracle, {}, {}, spec3, z)[0], oracle.mean(zh, 0.5), 1e-5);
}

TEST(Sampler, ClampsOnlyWhenAsked) {
  testnets::GaussianPosteriorMean oracle(2.0, 0.01);
  const auto xs = sample_batch(oracle, {}, {}, SamplerSpec::uniform(SamplerKind::Ddim, 8), 1, 4, 1);
  for (const auto& x : xs) EXPECT_EQ(x[0], 1.0f);
}

TEST(Sampler, DeterministicAcrossRunsAndThreads) {
  DenoiserConfig c;
  c.height = 4;
  c.width = 4;
  c.channels = 3;
  c.hidden = 32;
  c.blocks = 2;
  c.time_dim = 8;
  c.cond_dim = 4;
  const auto model = init_denoiser(c);
  DenoiserNet net(c);
  Tensor cond({1, 4}, 0.5f);
  const auto spec = SamplerSpec::uniform(SamplerKind::Ddim, 16);
  const auto a = sample_batch(net, model.params, {cond}, spec, 48, 13, 9, 1, 4);
  const auto b = sample_batch(net, model.params, {cond}, spec, 48, 13, 9, 1, 4);
  const auto c4 = sample_batch(net, model.params, {cond}, spec, 48, 13, 9, 4, 3);
  const auto c1 = sample_batch(net, model.params, {cond}, spec, 48, 13, 9, 3, 1);
  for (std::size_t i = 0; i < 13; ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[i], c4[i]);
    EXPECT_EQ(a[i], c1[i]);
  }
  const auto anc = SamplerSpec::uniform(SamplerKind::Ancestral, 16);
  EXPECT_EQ(sample_batch(net, model.params, {cond}, anc, 48, 5, 2, 1, 5),
            sample_batch(net, model.params, {cond}, anc, 48, 5, 2, 2, 1));
}

TEST(Denoiser, ZeroModelLossIsSquaredNorm) {
  DenoiserConfig c;
  c.height = 2;
  c.width = 2;
  c.channels = 1;
  c.hidden = 4;
  c.blocks = 1;
  c.time_dim = 4;
  c.cond_dim = 2;
  DenoiserNet net(c);
  // Zero output weights and bias leave x_hat = c_skip z; at t = 1, c_skip = 0.
  ParameterSet p = net.init_parameters();
  for (auto& v : p.at("den.out.w").data()) v = 0.0f;
  DenoisingBatch batch;
  batch.images = Tensor({1, 4}, std::vector<float>{0.5f, -0.25f, 1.0f, 0.0f});
  batch.conds = {Tensor({1, 2})};
  const auto r = denoising_loss_fixed(net, p, batch, NoiseSchedule{}, {1.0}, Tensor({1, 4}, 0.3f));
  EXPECT_NEAR(r.loss, 0.25 + 0.0625 + 1.0, 1e-6);
}

TEST(Denoiser, RejectsEmptyBatchAndBadConditioning) {
  DenoiserConfig c;
  c.height = 2;
  c.width = 2;
  c.channels = 1;
  c.hidden = 4;
  c.blocks = 1;
  c.time_dim = 4;
  c.cond_dim = 2;
  const auto m = init_denoiser(c);
  DenoiserNet net(c);
  Rng rng(1);
  EXPECT_THROW(denoising_loss(net, m.params, DenoisingBatch{}, NoiseSchedule{}, rng), ValueError);
  EXPECT_THROW(predict_x0(m, Tensor({1, 4}), 0.5, Tensor({1, 3})), ShapeError);
}

TEST(Denoiser, InitOutputBoundedAndDeterministic) {
  DenoiserConfig c;
  const auto a = init_denoiser(c), b = init_denoiser(c);
  EXPECT_EQ(a.params, b.params);
  DenoiserConfig c2 = c;
  c2.seed = 99;
  EXPECT_FALSE(init_denoiser(c2).params == a.params);
  Rng rng(3);
  Tensor z({2, c.image_size()});
  for (auto& v : z.data()) v = static_cast<float>(rng.normal());
  Tensor cond({1, c.cond_dim});
  for (auto& v : cond.data()) v = static_cast<float>(rng.normal());
  for (double t : {0.01, 0.5, 1.0}) {
    const Tensor x = predict_x0(a, z, t, cond);
    EXPECT_TRUE(x.all_finite());
    for (float v : x.data()) EXPECT_LE(std::abs(v), 10.0f);
    EXPECT_EQ(x, predict_x0(a, z, t, cond));
  }
}

TEST(Denoiser, LearnsGaussianPosteriorMean) {
  DenoiserConfig c;
  c.height = 1;
  c.width = 1;
  c.channels = 1;
  c.hidden = 32;
  c.blocks = 2;
  c.time_dim = 16;
  c.cond_dim = 1;
  c.sigma_data = 0.5;
  auto m = init_denoiser(c);
  DenoiserNet net(c);
  OptimizerState st = OptimizerState::for_parameters(m.params);
  Rng rng(4);
  for (int step = 0; step < 5000; ++step) {
    DenoisingBatch b;
    b.images = Tensor({64, 1});
    for (auto& v : b.images.data()) v = static_cast<float>(0.5 + 0.3 * rng.normal());
    b.conds = {Tensor({64, 1})};
    const auto r = denoising_loss(net, m.params, b, NoiseSchedule{}, rng);
    optimizer_step(m.params, r.grads, st, step < 4000 ? 3e-3 : 3e-4);
  }
  testnets::GaussianPosteriorMean oracle(0.5, 0.09);
  for (double t : {0.2, 0.5, 0.8})
    for (double z : {-0.5, 0.3, 1.0}) {
      const double got = predict_x0(m, Tensor({1, 1}, float(z)), t, Tensor({1, 1}))[0];
      EXPECT_NEAR(got, oracle.mean(z, t), 0.05) << "t=" << t << " z=" << z;
    }
}
