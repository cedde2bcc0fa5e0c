#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "subjectlab/model.hpp"
#include "subjectlab/personalize.hpp"
#include "subjectlab/toyworld.hpp"

namespace subjectlab {

inline constexpr double kTrainAugLevel = 1e-3;
inline constexpr double kFinetuneAugLevel = 1e-5;

// alpha(level) * lowres + sigma(level) * eps with the VP schedule, level
// read as diffusion time. Level 0 returns the input unchanged (no draws).
Tensor augment_conditioning(const Tensor& lowres, double level, Rng& rng);

struct SrConfig {
  ImageDims low{16, 16, 3};
  std::size_t factor = 2;
  DenoiserConfig denoiser;

  ImageDims high() const { return {low.height * factor, low.width * factor, low.channels}; }
  void validate() const;
};

// Default 16x16 -> 32x32 stage with text conditioning width `cond_dim`.
SrConfig default_sr_config(std::size_t cond_dim = 64);

struct SrModel {
  SrConfig config;
  ParameterSet params;
};

SrModel init_sr(const SrConfig& config);

// Inputs z [B,Dh], t [B,1], c [B,cond], up [B,Dh], level [B,1], where up is
// the augmented low-res image upsampled to the high-res grid. The denoiser
// predicts the residual over up from z - alpha_t up, so
// x_hat = up + F(z - alpha_t up, ...).
class SrNet : public Network {
 public:
  explicit SrNet(const SrConfig& config);
  std::vector<InputSpec> input_specs() const override;
  std::vector<Var> forward(Tape& tape, const ParameterSet& params,
                           std::span<const Var> inputs) const override;

 private:
  DenoiserNet denoiser_;
};

// Upsampled image_cond for a low-res image (nearest neighbour).
Tensor sr_condition(const SrConfig& config, const Tensor& lowres);

struct SrPair {
  Tensor low;
  Tensor high;
  Tensor cond;  // [cond_dim]
};

// High-res render and its area-downsampled low-res version; the caption is
// "a [noun] [context phrase]" encoded with `text`.
SrPair make_sr_pair(const SrConfig& config, const Model& text, const Vocabulary& vocab,
                    const SubjectParams& subject, const ContextParams& context,
                    const std::string& caption);

struct SrTrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 16;
  double learning_rate = 1e-3;
  std::size_t warmup = 200;
  double final_lr_fraction = 0.05;
  double aug_level = kTrainAugLevel;
  std::uint64_t seed = 0;
};

// Pretraining on freshly rendered pairs of random subjects and contexts.
// Captions and encodings come from the frozen text model.
SrModel train_sr(const SrConfig& config, const Model& text, const Vocabulary& vocab,
                 const SrTrainConfig& train,
                 const std::function<void(const LossPoint&)>& on_step = {});

struct SrFinetuneConfig {
  double aug_level = kFinetuneAugLevel;
  double learning_rate = 1e-5;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
};

// One step per epoch over all pairs, each with fresh augmentation, t and eps.
SrModel finetune_sr(const SrModel& sr, const std::vector<SrPair>& pairs,
                    const SrFinetuneConfig& config,
                    std::vector<LossPoint>* curve = nullptr);

// Subject renders at high resolution in the given contexts, as SR pairs
// captioned with `caption`.
std::vector<SrPair> subject_sr_pairs(const SrConfig& config, const Model& text,
                                     const Vocabulary& vocab, const SubjectParams& subject,
                                     const std::vector<ContextParams>& contexts,
                                     const std::string& caption);

// Super-resolves each low-res image. Output i draws its augmentation noise
// from derive_seed(derive_seed(seed, "sr-aug"), i) and its sampler noise as
// sample i of sample_batch with seed derive_seed(seed, "sr-sample").
std::vector<Tensor> super_resolve(const SrModel& sr, const std::vector<Tensor>& lowres,
                                  const Tensor& cond, double aug_level, const SamplerSpec& spec,
                                  std::uint64_t seed, std::size_t workers = 1);

// Squared error of the luminance difference restricted to radial spatial
// frequencies >= min_cycles (cycles per image), normalized per pixel
// (Parseval), i.e. the high-pass part of the MSE.
double high_frequency_error(const Tensor& image, const Tensor& reference, const ImageDims& dims,
                            double min_cycles = 4.0);

// Magnitude of the horizontal luminance spectrum at `cycles`, averaged over
// rows.
double horizontal_band_amplitude(const Tensor& image, const ImageDims& dims, int cycles);

Checkpoint sr_checkpoint(const SrModel& sr, const std::map<std::string, std::string>& extra = {});
SrModel sr_from_checkpoint(const Checkpoint& ckpt);
void save_sr(const std::filesystem::path& path, const SrModel& sr,
             const std::map<std::string, std::string>& extra = {});
SrModel load_sr(const std::filesystem::path& path);

}  // namespace subjectlab
