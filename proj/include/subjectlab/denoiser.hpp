#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subjectlab/autodiff.hpp"
#include "subjectlab/rng.hpp"
#include "subjectlab/schedule.hpp"

namespace subjectlab {

struct DenoiserConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t hidden = 256;
  std::size_t blocks = 4;
  std::size_t time_dim = 64;
  std::size_t cond_dim = 64;
  // Extra image-shaped conditioning input (the upsampled low-res image of a
  // super-resolution stage) plus an embedded scalar level. Zero disables.
  std::size_t image_cond_channels = 0;
  double sigma_data = 0.5;
  // Scale of the skip path; see DenoiserNet.
  double skip_sigma = 0.05;
  std::uint64_t seed = 1;

  std::size_t image_size() const { return height * width * channels; }
  std::size_t image_cond_size() const { return height * width * image_cond_channels; }
  void validate() const;
};

inline constexpr double kTimeEmbeddingMaxFreq = 50.0;

// Sinusoidal embedding of a scalar in [0,1]; frequencies
// kTimeEmbeddingMaxFreq * 10000^(-i/half).
std::vector<float> time_embedding(double t, std::size_t dim);

// Residual MLP over the flattened image. Every block sees [LN(h), temb, c]
// (and, when enabled, the level embedding), so conditioning reaches all
// layers. The raw network output F is combined with the input through the
// variance-preserving preconditioning
//   x_hat = c_skip(t) z + c_out(t) F(c_in(t) z, ...)
// with c_in = 1/d, c_skip = alpha s^2 / d^2, c_out = sigma s / d,
// d^2 = alpha^2 s^2 + sigma^2 and s = sigma_data.
//
// Inputs: z [B,D], t [B,1], c [B,cond_dim], and for SR configs also
// image_cond [B,D_cond] and level [B,1]. Output: x_hat [B,D].
class DenoiserNet : public Network {
 public:
  explicit DenoiserNet(DenoiserConfig config, std::string prefix = "den.");

  std::vector<InputSpec> input_specs() const override;
  std::vector<Var> forward(Tape& tape, const ParameterSet& params,
                           std::span<const Var> inputs) const override;

  // Same computation with the conditioning vector supplied as a tape value,
  // so it can be the output of a text encoder on the same tape.
  Var forward_x0(Tape& tape, const ParameterSet& params, Var z, const std::vector<float>& t,
                 Var c, const Var* image_cond = nullptr,
                 const std::vector<float>* level = nullptr) const;

  const DenoiserConfig& config() const noexcept { return config_; }
  const std::string& prefix() const noexcept { return prefix_; }

  ParameterSet init_parameters() const;

 private:
  DenoiserConfig config_;
  std::string prefix_;
};

struct DenoiserModel {
  DenoiserConfig config;
  ParameterSet params;
};

DenoiserModel init_denoiser(const DenoiserConfig& config);

// x_hat for a batch of noisy images z [B,D] at one time t with conditioning
// c (either [1,cond_dim], broadcast, or [B,cond_dim]).
Tensor predict_x0(const DenoiserModel& model, const Tensor& z, double t, const Tensor& c);

// A batch for the squared-error denoising objective. `conds` are the
// network's conditioning inputs after z and t, each with one row per image.
// Row r contributes row_weight[r] * w_t * ||x_hat - x||^2; an empty weight
// vector means 1/B for every row (the batch mean).
struct DenoisingBatch {
  Tensor images;
  std::vector<Tensor> conds;
  std::vector<float> row_weight;
};

struct LossResult {
  double loss = 0.0;
  // w_t * ||x_hat - x||^2 per row, before row weights.
  std::vector<double> per_sample;
  ParameterSet grads;
};

// Draw order per row r: t_r = clamp(U[0,1]) then eps_r ~ N(0,I) (D values).
LossResult denoising_loss(const Network& net, const ParameterSet& params,
                          const DenoisingBatch& batch, const NoiseSchedule& schedule, Rng& rng);

// Same objective with explicit (t, eps) per row; the draws above feed this.
LossResult denoising_loss_fixed(const Network& net, const ParameterSet& params,
                                const DenoisingBatch& batch, const NoiseSchedule& schedule,
                                const std::vector<double>& times, const Tensor& eps);

}  // namespace subjectlab
