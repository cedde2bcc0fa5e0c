#include "subjectlab/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "subjectlab/error.hpp"

namespace subjectlab {

Tensor augment_conditioning(const Tensor& lowres, double level, Rng& rng) {
  if (!(level >= 0.0 && level <= 1.0))
    throw ValueError("augmentation level must lie in [0,1]");
  if (level == 0.0) return lowres;
  const auto c = schedule_coeffs(NoiseSchedule{}, level);
  Tensor out = lowres;
  for (auto& v : out.data())
    v = static_cast<float>(c.alpha * v + c.sigma * rng.normal());
  return out;
}

void SrConfig::validate() const {
  if (!factor) throw ValueError("sr config: factor must be positive");
  denoiser.validate();
  const ImageDims h = high();
  if (denoiser.height != h.height || denoiser.width != h.width ||
      denoiser.channels != h.channels)
    throw ValueError("sr config: denoiser dims must equal low dims times factor");
  if (denoiser.image_cond_channels != low.channels)
    throw ValueError("sr config: image_cond_channels must equal the image channels");
}

SrConfig default_sr_config(std::size_t cond_dim) {
  SrConfig c;
  c.denoiser.height = c.low.height * c.factor;
  c.denoiser.width = c.low.width * c.factor;
  c.denoiser.channels = c.low.channels;
  c.denoiser.image_cond_channels = c.low.channels;
  c.denoiser.cond_dim = cond_dim;
  c.denoiser.sigma_data = 0.2;
  c.denoiser.seed = 3;
  return c;
}

SrModel init_sr(const SrConfig& config) {
  config.validate();
  return {config, DenoiserNet(config.denoiser, "sr.").init_parameters()};
}

SrNet::SrNet(const SrConfig& config) : denoiser_(config.denoiser, "sr.") { config.validate(); }

std::vector<InputSpec> SrNet::input_specs() const { return denoiser_.input_specs(); }

std::vector<Var> SrNet::forward(Tape& tape, const ParameterSet& params,
                                std::span<const Var> inputs) const {
  const Tensor& tv = tape.value(inputs[1]);
  const Tensor& lv = tape.value(inputs[4]);
  std::vector<float> t(tv.data().begin(), tv.data().end());
  std::vector<float> level(lv.data().begin(), lv.data().end());
  std::vector<float> neg_alpha(t.size());
  for (std::size_t r = 0; r < t.size(); ++r)
    neg_alpha[r] = static_cast<float>(
        -schedule_coeffs(NoiseSchedule{}, std::clamp<double>(t[r], 0.0, 1.0)).alpha);
  const Var up = inputs[3];
  const Var residual_z = ops::add(tape, inputs[0], ops::scale_rows(tape, up, neg_alpha));
  const Var y = denoiser_.forward_x0(tape, params, residual_z, t, inputs[2], &up, &level);
  return {ops::add(tape, up, y)};
}

Tensor sr_condition(const SrConfig& config, const Tensor& lowres) {
  if (lowres.size() != config.low.size())
    throw ShapeError("lowres", "expected " + std::to_string(config.low.size()) + " values, got " +
                                   std::to_string(lowres.size()));
  return upsample_nearest(lowres, config.low, config.factor);
}

namespace {

Tensor encode_captions(const Model& text, const Vocabulary& vocab,
                       const std::vector<std::string>& captions) {
  std::vector<TokenSeq> rows;
  for (const auto& c : captions) rows.push_back(tokenize(vocab, c, text.config.encoder.max_len));
  return encode_tokens(text, rows);
}

double cosine_lr(double base, std::size_t warmup, double final_fraction, std::size_t steps,
                 std::size_t step) {
  PretrainConfig pc;
  pc.learning_rate = base;
  pc.warmup = warmup;
  pc.final_lr_fraction = final_fraction;
  pc.steps = steps;
  return pretrain_learning_rate(pc, step);
}

void copy_row(const Tensor& src, Tensor& dst, std::size_t r) {
  std::copy(src.data().begin(), src.data().end(), dst.raw() + r * src.size());
}

}  // namespace

SrPair make_sr_pair(const SrConfig& config, const Model& text, const Vocabulary& vocab,
                    const SubjectParams& subject, const ContextParams& context,
                    const std::string& caption) {
  SrPair p;
  p.high = render(subject, context, config.high());
  p.low = downsample_area(p.high, config.high(), config.factor);
  p.cond = encode_captions(text, vocab, {caption}).reshaped({config.denoiser.cond_dim});
  return p;
}

std::vector<SrPair> subject_sr_pairs(const SrConfig& config, const Model& text,
                                     const Vocabulary& vocab, const SubjectParams& subject,
                                     const std::vector<ContextParams>& contexts,
                                     const std::string& caption) {
  std::vector<SrPair> out;
  for (const auto& c : contexts) out.push_back(make_sr_pair(config, text, vocab, subject, c, caption));
  return out;
}

SrModel train_sr(const SrConfig& config, const Model& text, const Vocabulary& vocab,
                 const SrTrainConfig& train,
                 const std::function<void(const LossPoint&)>& on_step) {
  SrModel sr = init_sr(config);
  if (text.config.encoder.cond_dim != config.denoiser.cond_dim)
    throw ValueError("sr config: conditioning width differs from the text encoder");
  if (!train.batch) throw ValueError("sr training: batch must be positive");
  const SrNet net(config);
  const NoiseSchedule schedule;
  const ImageDims hi = config.high();
  OptimizerState state = OptimizerState::for_parameters(sr.params);
  const std::uint64_t data_seed = derive_seed(train.seed, "sr-data");
  const std::uint64_t noise_seed = derive_seed(train.seed, "sr-noise");
  for (std::size_t step = 0; step < train.steps; ++step) {
    Rng data(derive_seed(data_seed, step));
    DenoisingBatch batch;
    batch.images = Tensor({train.batch, hi.size()});
    Tensor up({train.batch, hi.size()});
    Tensor level({train.batch, 1}, static_cast<float>(train.aug_level));
    std::vector<std::string> captions;
    for (std::size_t r = 0; r < train.batch; ++r) {
      const int cls = static_cast<int>(data.below(kNumClasses));
      const SubjectParams s = sample_subject(data, cls);
      const ContextParams c = sample_context(data);
      const Tensor high = render(s, c, hi);
      copy_row(high, batch.images, r);
      const Tensor low = downsample_area(high, hi, config.factor);
      copy_row(sr_condition(config, augment_conditioning(low, train.aug_level, data)), up, r);
      captions.push_back(make_caption(class_nouns()[cls], std::nullopt,
                                      context_names()[c.context_id]));
    }
    batch.conds = {encode_captions(text, vocab, captions), std::move(up), std::move(level)};
    Rng noise(derive_seed(noise_seed, step));
    LossResult loss;
    try {
      loss = denoising_loss(net, sr.params, batch, schedule, noise);
    } catch (const NumericError& e) {
      throw NumericError("sr training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const auto applied = optimizer_step(
        sr.params, loss.grads, state,
        cosine_lr(train.learning_rate, train.warmup, train.final_lr_fraction, train.steps, step));
    if (!applied.applied)
      throw NumericError("sr training diverged at step " + std::to_string(step) + ": " +
                         applied.diagnostic);
    if (on_step) on_step({step, loss.loss});
  }
  return sr;
}

SrModel finetune_sr(const SrModel& base, const std::vector<SrPair>& pairs,
                    const SrFinetuneConfig& config, std::vector<LossPoint>* curve) {
  if (pairs.empty()) throw ValueError("sr fine-tuning: no pairs");
  if (config.epochs < 1) throw ValueError("sr fine-tuning: epochs must be at least 1");
  if (!(config.learning_rate > 0.0)) throw ValueError("sr fine-tuning: learning rate must be positive");
  SrModel sr = base;
  const SrNet net(sr.config);
  const NoiseSchedule schedule;
  const std::size_t n = pairs.size();
  const std::size_t dh = sr.config.high().size();
  OptimizerState state = OptimizerState::for_parameters(sr.params);
  Rng aug(derive_seed(config.seed, "sr-finetune-aug"));
  Rng noise(derive_seed(config.seed, "sr-finetune-noise"));
  DenoisingBatch batch;
  batch.images = Tensor({n, dh});
  Tensor cond({n, sr.config.denoiser.cond_dim});
  for (std::size_t r = 0; r < n; ++r) {
    if (pairs[r].high.size() != dh) throw ShapeError("high", "pair size does not match the model");
    copy_row(pairs[r].high, batch.images, r);
    copy_row(pairs[r].cond, cond, r);
  }
  for (std::size_t step = 0; step < config.epochs; ++step) {
    Tensor up({n, dh});
    for (std::size_t r = 0; r < n; ++r)
      copy_row(sr_condition(sr.config, augment_conditioning(pairs[r].low, config.aug_level, aug)),
               up, r);
    batch.conds = {cond, std::move(up), Tensor({n, 1}, static_cast<float>(config.aug_level))};
    LossResult loss;
    try {
      loss = denoising_loss(net, sr.params, batch, schedule, noise);
    } catch (const NumericError& e) {
      throw NumericError("sr fine-tuning diverged at step " + std::to_string(step) + ": " +
                         e.what());
    }
    const auto applied = optimizer_step(sr.params, loss.grads, state, config.learning_rate);
    if (!applied.applied)
      throw NumericError("sr fine-tuning diverged at step " + std::to_string(step) + ": " +
                         applied.diagnostic);
    if (curve) curve->push_back({step, loss.loss});
  }
  return sr;
}

std::vector<Tensor> super_resolve(const SrModel& sr, const std::vector<Tensor>& lowres,
                                  const Tensor& cond, double aug_level, const SamplerSpec& spec,
                                  std::uint64_t seed, std::size_t workers) {
  if (lowres.empty()) throw ValueError("super_resolve: no images");
  const std::size_t n = lowres.size();
  const std::size_t dh = sr.config.high().size();
  const std::uint64_t aug_seed = derive_seed(seed, "sr-aug");
  Tensor up({n, dh});
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(aug_seed, i));
    copy_row(sr_condition(sr.config, augment_conditioning(lowres[i], aug_level, rng)), up, i);
  }
  const std::size_t cd = sr.config.denoiser.cond_dim;
  if (cond.size() != cd && cond.size() != n * cd)
    throw ShapeError("c", "expected one conditioning row or one per image");
  const Tensor c = cond.reshaped({cond.size() / cd, cd});
  const SrNet net(sr.config);
  return sample_batch(net, sr.params,
                      {c, std::move(up), Tensor({1, 1}, static_cast<float>(aug_level))}, spec, dh,
                      n, derive_seed(seed, "sr-sample"), workers);
}

namespace {

std::vector<double> luminance(const Tensor& image, const ImageDims& dims) {
  if (image.size() != dims.size() || dims.channels != 3)
    throw ShapeError("image", "expected an RGB image of the stated dims");
  std::vector<double> y(dims.height * dims.width);
  for (std::size_t p = 0; p < y.size(); ++p)
    y[p] = 0.299 * image[3 * p] + 0.587 * image[3 * p + 1] + 0.114 * image[3 * p + 2];
  return y;
}

std::mutex fftw_planner;

}  // namespace

double high_frequency_error(const Tensor& image, const Tensor& reference, const ImageDims& dims,
                            double min_cycles) {
  const auto a = luminance(image, dims);
  const auto b = luminance(reference, dims);
  const int h = static_cast<int>(dims.height), w = static_cast<int>(dims.width);
  const int wc = w / 2 + 1;
  double* in = fftw_alloc_real(static_cast<std::size_t>(h * w));
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(h * wc));
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner);
    plan = fftw_plan_dft_r2c_2d(h, w, in, out, FFTW_ESTIMATE);
  }
  for (std::size_t p = 0; p < a.size(); ++p) in[p] = a[p] - b[p];
  fftw_execute(plan);
  double sum = 0.0;
  for (int ky = 0; ky < h; ++ky) {
    const int fy = ky <= h / 2 ? ky : ky - h;
    for (int kx = 0; kx < wc; ++kx) {
      if (std::hypot(fy, kx) < min_cycles) continue;
      // Columns other than 0 and w/2 stand for a conjugate pair.
      const double mult = (kx == 0 || (w % 2 == 0 && kx == w / 2)) ? 1.0 : 2.0;
      const auto& v = out[ky * wc + kx];
      sum += mult * (v[0] * v[0] + v[1] * v[1]);
    }
  }
  {
    std::lock_guard lock(fftw_planner);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  const double n = static_cast<double>(h) * w;
  return sum / (n * n);
}

double horizontal_band_amplitude(const Tensor& image, const ImageDims& dims, int cycles) {
  const auto y = luminance(image, dims);
  double total = 0.0;
  for (std::size_t i = 0; i < dims.height; ++i) {
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < dims.width; ++j)
      acc += y[i * dims.width + j] *
             std::polar(1.0, -2.0 * std::numbers::pi * cycles * static_cast<double>(j) /
                                 static_cast<double>(dims.width));
    total += 2.0 * std::abs(acc) / static_cast<double>(dims.width);
  }
  return total / static_cast<double>(dims.height);
}

Checkpoint sr_checkpoint(const SrModel& sr, const std::map<std::string, std::string>& extra) {
  Checkpoint ck;
  ck.meta = extra;
  ck.meta["kind"] = "super-resolution";
  ck.meta["sr.low_height"] = std::to_string(sr.config.low.height);
  ck.meta["sr.low_width"] = std::to_string(sr.config.low.width);
  ck.meta["sr.low_channels"] = std::to_string(sr.config.low.channels);
  ck.meta["sr.factor"] = std::to_string(sr.config.factor);
  write_denoiser_meta(sr.config.denoiser, "denoiser.", ck.meta);
  ck.params = sr.params;
  return ck;
}

SrModel sr_from_checkpoint(const Checkpoint& ck) {
  const auto kind = ck.meta.find("kind");
  if (kind == ck.meta.end() || kind->second != "super-resolution")
    throw IoError("checkpoint does not hold a super-resolution model");
  auto get = [&](const std::string& k) -> std::size_t {
    const auto it = ck.meta.find(k);
    if (it == ck.meta.end()) throw IoError("checkpoint metadata lacks '" + k + "'");
    return std::stoull(it->second);
  };
  SrConfig c;
  c.low = {get("sr.low_height"), get("sr.low_width"), get("sr.low_channels")};
  c.factor = get("sr.factor");
  c.denoiser = read_denoiser_meta(ck.meta, "denoiser.");
  SrModel sr = init_sr(c);
  if (!sr.params.same_layout(ck.params))
    throw IoError("checkpoint tensors do not match the configured SR layout");
  sr.params = ck.params;
  return sr;
}

void save_sr(const std::filesystem::path& path, const SrModel& sr,
             const std::map<std::string, std::string>& extra) {
  save_checkpoint(path, sr_checkpoint(sr, extra));
}

SrModel load_sr(const std::filesystem::path& path) {
  return sr_from_checkpoint(load_checkpoint(path));
}

}  // namespace subjectlab
