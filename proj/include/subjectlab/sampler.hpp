#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "subjectlab/autodiff.hpp"
#include "subjectlab/rng.hpp"
#include "subjectlab/schedule.hpp"

namespace subjectlab {

enum class SamplerKind { Ancestral, Ddim };

std::string sampler_kind_name(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& name);

// Reverse-process time grid 1 = t_1 > t_2 > ... > t_T = 0.
struct SamplerSpec {
  SamplerKind kind = SamplerKind::Ddim;
  std::vector<double> grid;
  // Clamp the returned sample to [-1,1] (applied once, at output).
  bool clamp_output = true;
  NoiseSchedule schedule;

  static SamplerSpec uniform(SamplerKind kind, std::size_t steps, bool clamp = true);
  std::size_t steps() const noexcept { return grid.size(); }
  // Throws ValueError unless the grid is strictly decreasing from 1 to 0.
  void validate() const;
};

// Conditioning inputs passed to the x-predictor after (z, t). Each tensor has
// either one row (shared by the whole batch) or one row per sample.
using Conditioning = std::vector<Tensor>;

// x_hat for z [B,D] at time t via a network with inputs (z, t, cond...).
Tensor predict_batch(const Network& net, const ParameterSet& params, const Tensor& z, double t,
                     const Conditioning& cond);

// Deterministic DDIM in x-prediction form. For i = 1..T-1:
//   x_hat   = predict(z_i, t_i)
//   z_{i+1} = alpha_{i+1} x_hat + (sigma_{i+1} / sigma_i) (z_i - alpha_i x_hat)
// Since t_T = 0 the final z equals the last x_hat. Rows of z_init are
// independent samples.
Tensor sample_ddim(const Network& net, const ParameterSet& params, const Conditioning& cond,
                   const SamplerSpec& spec, const Tensor& z_init);

// Ancestral sampling from the VP forward-process posterior given x_hat. For
// a step t -> s (s < t), with a = alpha_t / alpha_s and
// v = sigma_t^2 - a^2 sigma_s^2:
//   mean = (a sigma_s^2 / sigma_t^2) z_t + (alpha_s v / sigma_t^2) x_hat
//   var  = v sigma_s^2 / sigma_t^2          (the "small" posterior variance)
// The initial z ~ N(0, I) and every step's noise come from `rng`.
Tensor sample_ancestral(const Network& net, const ParameterSet& params, const Conditioning& cond,
                        const SamplerSpec& spec, std::size_t dim, Rng& rng);

// Row r draws from its own generator; the batch result for row r equals a
// single-sample call with rngs[r].
Tensor sample_ancestral_rows(const Network& net, const ParameterSet& params,
                             const Conditioning& cond, const SamplerSpec& spec, std::size_t dim,
                             std::span<Rng> rngs);

// `count` independent samples. Sample i uses Rng(derive_seed(seed, i)) for
// its initial noise (and ancestral step noise), so the set is the same
// whether generated serially, in chunks, or across `workers` threads.
std::vector<Tensor> sample_batch(const Network& net, const ParameterSet& params,
                                 const Conditioning& cond, const SamplerSpec& spec,
                                 std::size_t dim, std::size_t count, std::uint64_t seed,
                                 std::size_t workers = 1, std::size_t chunk = 64);

}  // namespace subjectlab
