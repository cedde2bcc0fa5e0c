#include "subjectlab/personalize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "subjectlab/error.hpp"

namespace subjectlab {

void PretrainConfig::validate() const {
  if (!batch) throw ValueError("pretrain: batch must be positive");
  if (!(learning_rate > 0.0)) throw ValueError("pretrain: learning_rate must be positive");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0))
    throw ValueError("pretrain: final_lr_fraction must lie in [0,1]");
  if (!(context_prob >= 0.0 && context_prob <= 1.0))
    throw ValueError("pretrain: context_prob must lie in [0,1]");
  if (!(modifier_prob >= 0.0 && modifier_prob <= 1.0))
    throw ValueError("pretrain: modifier_prob must lie in [0,1]");
}

double pretrain_learning_rate(const PretrainConfig& c, std::size_t step) {
  if (step < c.warmup)
    return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup);
  const std::size_t span = c.steps > c.warmup ? c.steps - c.warmup : 1;
  const double p = std::min(1.0, static_cast<double>(step - c.warmup) / static_cast<double>(span));
  const double lo = c.final_lr_fraction;
  return c.learning_rate * (lo + (1.0 - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * p)));
}

std::vector<std::string> modifier_words(const Vocabulary& vocab, std::size_t count) {
  std::vector<std::string> reserved(class_nouns().begin(), class_nouns().end());
  for (const auto& phrase : context_phrases()) {
    std::size_t pos = 0;
    while (pos < phrase.size()) {
      const std::size_t end = std::min(phrase.find(' ', pos), phrase.size());
      reserved.push_back(phrase.substr(pos, end - pos));
      pos = end + 1;
    }
  }
  reserved.push_back("a");
  std::vector<std::string> out;
  for (std::size_t id = kReservedTokens; id < vocab.size() && out.size() < count; ++id) {
    const std::string& s = vocab.surface(static_cast<int>(id));
    if (s.size() < 3) continue;
    if (!std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::islower(ch); }))
      continue;
    if (std::find(reserved.begin(), reserved.end(), s) != reserved.end()) continue;
    if (tokenize_ids(vocab, s).size() != 1) continue;
    out.push_back(s);
  }
  return out;
}

double mean_loss(const std::vector<LossPoint>& curve, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : curve)
    if (p.step >= begin && p.step < end) {
      sum += p.loss;
      ++n;
    }
  if (!n) throw ValueError("mean_loss: no curve points in range");
  return sum / static_cast<double>(n);
}

PretrainResult pretrain_base(const ModelConfig& config, const Vocabulary& vocab,
                             const PretrainConfig& pc,
                             const std::function<void(const LossPoint&)>& on_step) {
  pc.validate();
  PretrainResult res{init_model(config), {}};
  check_vocabulary(res.model, vocab);
  const auto modifiers = modifier_words(vocab, pc.modifier_count);
  const ImageDims dims{config.denoiser.height, config.denoiser.width, config.denoiser.channels};
  const std::size_t dim = dims.size();
  const std::size_t len = config.encoder.max_len;
  const TextToImageNet net(config);
  const NoiseSchedule schedule;
  OptimizerState state = OptimizerState::for_parameters(res.model.params);
  const std::uint64_t data_seed = derive_seed(pc.seed, "pretrain-data");
  const std::uint64_t noise_seed = derive_seed(pc.seed, "pretrain-noise");

  res.curve.reserve(pc.steps);
  for (std::size_t step = 0; step < pc.steps; ++step) {
    Rng data(derive_seed(data_seed, step));
    DenoisingBatch batch;
    batch.images = Tensor({pc.batch, dim});
    Tensor tokens({pc.batch, len});
    for (std::size_t r = 0; r < pc.batch; ++r) {
      const int cls = static_cast<int>(data.below(kNumClasses));
      const SubjectParams s = sample_subject(data, cls);
      const ContextParams c = sample_context(data);
      const Tensor img = render(s, c, dims);
      std::copy(img.data().begin(), img.data().end(), batch.images.raw() + r * dim);
      std::optional<std::string> ctx, mod;
      if (data.uniform() < pc.context_prob) ctx = context_names()[c.context_id];
      if (!modifiers.empty() && data.uniform() < pc.modifier_prob)
        mod = modifiers[data.below(modifiers.size())];
      const TokenSeq ids = tokenize(vocab, make_caption(class_nouns()[cls], mod, ctx), len);
      for (std::size_t i = 0; i < len; ++i) tokens[r * len + i] = static_cast<float>(ids[i]);
    }
    batch.conds.push_back(std::move(tokens));
    Rng noise(derive_seed(noise_seed, step));
    LossResult loss;
    try {
      loss = denoising_loss(net, res.model.params, batch, schedule, noise);
    } catch (const NumericError& e) {
      throw NumericError("pretraining diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const StepResult applied = optimizer_step(res.model.params, loss.grads, state,
                                              pretrain_learning_rate(pc, step));
    if (!applied.applied)
      throw NumericError("pretraining diverged at step " + std::to_string(step) + ": " +
                         applied.diagnostic);
    res.curve.push_back({step, loss.loss});
    if (on_step) on_step(res.curve.back());
  }
  return res;
}

SamplerSpec default_prior_sampler() { return SamplerSpec::uniform(SamplerKind::Ancestral, 128); }

PriorSet generate_prior_set(const Model& base, const Vocabulary& vocab, const std::string& noun,
                            std::size_t count, const SamplerSpec& spec, std::uint64_t seed,
                            std::size_t workers) {
  if (count < 1) throw ValueError("prior set size must be at least 1");
  check_vocabulary(base, vocab);
  PriorSet set;
  set.class_noun = noun;
  set.prompt = make_caption(noun, std::nullopt, std::nullopt);
  set.tokens = tokenize(vocab, set.prompt, base.config.encoder.max_len);
  set.master_seed = seed;
  set.base_hash = hash_parameters(base.params);
  set.images = sample_prompt(base, set.tokens, spec, count, seed, workers);
  for (std::size_t i = 0; i < count; ++i) set.seeds.push_back(derive_seed(seed, i));
  if (hash_parameters(base.params) != set.base_hash)
    throw Error("base model changed while generating the prior set");
  return set;
}

SubjectSet make_subject_set(const SubjectParams& subject, const Identifier& identifier,
                            std::size_t n, int context, std::uint64_t seed) {
  subject.validate();
  if (n < 1) throw ValueError("subject set must hold at least one image");
  if (context < 0 || context >= kNumContexts) throw ValueError("unknown context id");
  SubjectSet set;
  set.subject = subject;
  set.class_noun = class_nouns()[subject.class_id];
  set.identifier = identifier;
  Rng rng(derive_seed(seed, "subject-set"));
  for (std::size_t i = 0; i < n; ++i) {
    ContextParams c;
    c.context_id = context;
    c.cx = rng.uniform(-kCenterRange, kCenterRange);
    c.cy = rng.uniform(-kCenterRange, kCenterRange);
    set.contexts.push_back(c);
    set.images.push_back(render(subject, c, ImageDims{}));
  }
  return set;
}

std::string finetune_mode_name(FinetuneMode mode) {
  return mode == FinetuneMode::Naive ? "naive" : "prior-preservation";
}

FinetuneMode parse_finetune_mode(const std::string& name) {
  if (name == "naive") return FinetuneMode::Naive;
  if (name == "prior-preservation" || name == "prior") return FinetuneMode::PriorPreservation;
  throw ValueError("unknown fine-tune mode '" + name + "'");
}

std::string caption_mode_name(CaptionMode mode) {
  switch (mode) {
    case CaptionMode::Correct: return "correct";
    case CaptionMode::NoNoun: return "none";
    case CaptionMode::WrongNoun: return "wrong";
  }
  return "correct";
}

CaptionMode parse_caption_mode(const std::string& name) {
  if (name == "correct") return CaptionMode::Correct;
  if (name == "none") return CaptionMode::NoNoun;
  if (name == "wrong") return CaptionMode::WrongNoun;
  throw ValueError("unknown caption mode '" + name + "'");
}

void FinetuneConfig::validate() const {
  if (!(lambda >= 0.0)) throw ValueError("finetune: lambda must be non-negative");
  if (!(learning_rate > 0.0)) throw ValueError("finetune: learning_rate must be positive");
  if (epochs < 1) throw ValueError("finetune: epochs must be at least 1");
  if (caption == CaptionMode::WrongNoun && class_id(wrong_noun) < 0)
    throw ValueError("finetune: wrong-noun captions need a known wrong_noun");
}

std::string subject_caption(const SubjectSet& set, const FinetuneConfig& config) {
  const std::string& v = set.identifier.surface;
  switch (config.caption) {
    case CaptionMode::Correct: return make_caption(set.class_noun, v, std::nullopt);
    case CaptionMode::NoNoun: return "a " + v;
    case CaptionMode::WrongNoun:
      if (config.wrong_noun == set.class_noun)
        throw ValueError("finetune: wrong_noun equals the subject's class noun");
      return make_caption(config.wrong_noun, v, std::nullopt);
  }
  return {};
}

FinetuneResult finetune(const Model& base, const Vocabulary& vocab, const SubjectSet& subjects,
                        const PriorSet* prior, const FinetuneConfig& config,
                        const std::function<void(const FinetunePoint&)>& on_step) {
  config.validate();
  check_vocabulary(base, vocab);
  const bool use_prior = config.mode == FinetuneMode::PriorPreservation && prior &&
                         !prior->images.empty();
  if (config.mode == FinetuneMode::PriorPreservation && config.lambda > 0.0 && !use_prior)
    throw ValueError("finetune: lambda > 0 requires a non-empty prior set");
  const std::size_t n = subjects.images.size();
  if (!n) throw ValueError("finetune: empty subject set");
  const std::size_t dim = base.config.denoiser.image_size();
  const std::size_t len = base.config.encoder.max_len;
  const std::size_t p = use_prior ? (config.prior_batch ? config.prior_batch : n) : 0;

  FinetuneResult res{base, subject_caption(subjects, config), {}};
  const TokenSeq subject_ids = tokenize(vocab, res.caption, len);
  if (use_prior && prior->tokens.size() != len)
    throw ShapeError("prior.tokens", "prior prompt length does not match the encoder");

  const TextToImageNet net(base.config);
  const NoiseSchedule schedule;
  OptimizerState state = OptimizerState::for_parameters(res.model.params);
  Rng subject_noise(derive_seed(config.seed, "finetune-subject"));
  Rng prior_noise(derive_seed(config.seed, "finetune-prior"));
  Rng prior_pick(derive_seed(config.seed, "finetune-prior-index"));

  DenoisingBatch batch;
  batch.images = Tensor({n + p, dim});
  Tensor tokens({n + p, len});
  batch.row_weight.assign(n + p, 1.0f / static_cast<float>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& img = subjects.images[r];
    if (img.size() != dim) throw ShapeError("subject image", "size does not match the model");
    std::copy(img.data().begin(), img.data().end(), batch.images.raw() + r * dim);
    for (std::size_t i = 0; i < len; ++i) tokens[r * len + i] = static_cast<float>(subject_ids[i]);
  }
  for (std::size_t r = n; r < n + p; ++r) {
    batch.row_weight[r] = static_cast<float>(config.lambda / static_cast<double>(p));
    for (std::size_t i = 0; i < len; ++i)
      tokens[r * len + i] = static_cast<float>(prior->tokens[i]);
  }
  batch.conds.push_back(std::move(tokens));

  std::vector<double> times(n + p);
  Tensor eps({n + p, dim});
  for (std::size_t step = 0; step < config.epochs; ++step) {
    for (std::size_t r = 0; r < n; ++r) {
      times[r] = schedule.clamp_training_time(subject_noise.uniform());
      for (std::size_t j = 0; j < dim; ++j) eps[r * dim + j] = static_cast<float>(subject_noise.normal());
    }
    for (std::size_t r = n; r < n + p; ++r) {
      const auto& img = prior->images[prior_pick.below(prior->images.size())];
      std::copy(img.data().begin(), img.data().end(), batch.images.raw() + r * dim);
      times[r] = schedule.clamp_training_time(prior_noise.uniform());
      for (std::size_t j = 0; j < dim; ++j) eps[r * dim + j] = static_cast<float>(prior_noise.normal());
    }
    LossResult loss;
    try {
      loss = denoising_loss_fixed(net, res.model.params, batch, schedule, times, eps);
    } catch (const NumericError& e) {
      throw NumericError("fine-tuning diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const StepResult applied =
        optimizer_step(res.model.params, loss.grads, state, config.learning_rate);
    if (!applied.applied)
      throw NumericError("fine-tuning diverged at step " + std::to_string(step) + ": " +
                         applied.diagnostic);
    FinetunePoint pt;
    pt.step = step;
    for (std::size_t r = 0; r < n; ++r) pt.subject_loss += loss.per_sample[r] / static_cast<double>(n);
    for (std::size_t r = n; r < n + p; ++r)
      pt.prior_loss += loss.per_sample[r] / static_cast<double>(p);
    pt.total = pt.subject_loss + config.lambda * pt.prior_loss;
    res.curve.push_back(pt);
    if (on_step) on_step(pt);
  }
  return res;
}

}  // namespace subjectlab
