#include "subjectlab/recipe.hpp"

#include <cstdio>
#include <sstream>

#include "subjectlab/error.hpp"

namespace subjectlab {

Vocabulary recipe_vocab(const ExperimentConfig& config) {
  return build_vocab(vocab_corpus(), config.vocab);
}

Identifier recipe_identifier(const ExperimentConfig& config, const Vocabulary& vocab) {
  Rng rng(run_seeds(config.seed).identifier);
  return mine_rare_identifier(vocab, config.identifier_tokens,
                              scaled_rank_range(config.identifier_range, vocab.size()), rng);
}

ModelConfig recipe_model_config(const ExperimentConfig& config, const Vocabulary& vocab) {
  ModelConfig m = config.model;
  m.encoder.vocab_size = vocab.size();
  return m;
}

PretrainResult recipe_pretrain(const ExperimentConfig& config, const Vocabulary& vocab,
                               const std::function<void(const LossPoint&)>& on_step) {
  return pretrain_base(recipe_model_config(config, vocab), vocab, config.pretrain, on_step);
}

SubjectSet recipe_subject_set(const ExperimentConfig& config, const Identifier& identifier) {
  return make_subject_set(reference_subject(config), identifier, config.subject_images,
                          context_id(config.subject_context), run_seeds(config.seed).subject_set);
}

PriorSet recipe_prior_set(const ExperimentConfig& config, const Model& base,
                          const Vocabulary& vocab, const std::string& noun, std::size_t workers) {
  return generate_prior_set(base, vocab, noun, config.prior_per_image * config.subject_images,
                            config.prior_sampler, derive_seed(run_seeds(config.seed).prior, noun),
                            workers);
}

namespace {

std::string pretrain_hash(const ExperimentConfig& config) {
  const Json full = config_to_json(config);
  Json j;
  for (const char* k : {"seed", "vocab", "encoder", "denoiser", "pretrain"}) j[k] = full.at(k);
  const std::string text = canonical_json(j);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

Model cached_pretrain(const ExperimentConfig& config, const Vocabulary& vocab,
                      const std::filesystem::path& path,
                      const std::function<void(const LossPoint&)>& on_step) {
  const std::string hash = pretrain_hash(config);
  if (std::filesystem::exists(path)) {
    const Checkpoint ck = load_checkpoint(path);
    const auto it = ck.meta.find("pretrain_hash");
    if (it != ck.meta.end() && it->second == hash) return model_from_checkpoint(ck);
  }
  PretrainResult res = recipe_pretrain(config, vocab, on_step);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_model(path, res.model, {{"pretrain_hash", hash}});
  return res.model;
}

ArmReport evaluate_arm(const ExperimentConfig& config, const std::string& name,
                       const Model& base, const Model& tuned, const Vocabulary& vocab,
                       const SubjectSet& subjects, const std::string& caption,
                       const ArmEvalOptions& options,
                       std::map<std::string, MetricReport>& base_diversity,
                       std::size_t workers) {
  const std::uint64_t seed = run_seeds(config.seed).eval;
  const std::size_t len = tuned.config.encoder.max_len;
  auto drift = [&](const std::string& noun) {
    const std::uint64_t s = derive_seed(seed, "diversity:" + noun);
    auto it = base_diversity.find(noun);
    if (it == base_diversity.end())
      it = base_diversity
               .emplace(noun, prior_diversity(base, vocab, noun, config.eval_samples,
                                              config.eval_sampler, s, workers))
               .first;
    const auto tuned_div =
        prior_diversity(tuned, vocab, noun, config.eval_samples, config.eval_sampler, s, workers);
    MetricReport r = language_drift_ratio(it->second, tuned_div);
    r.diagnostics.insert(r.diagnostics.begin(), {"noun", noun});
    return r;
  };

  ArmReport a;
  a.name = name;
  a.drift = drift(subjects.class_noun);
  if (!options.other_noun.empty()) a.other_drift = drift(options.other_noun);

  const auto samples =
      sample_prompt(tuned, tokenize(vocab, caption, len), config.eval_sampler,
                    config.eval_samples, derive_seed(seed, "fidelity"), workers);
  a.fidelity = subject_fidelity(samples, subjects.subject, workers);
  a.fidelity.seed = derive_seed(seed, "fidelity");
  a.fidelity.diagnostics.insert(a.fidelity.diagnostics.begin(), {"prompt", caption});

  if (options.contexts) {
    for (int c = 0; c < kNumContexts; ++c) {
      const std::string prompt = caption + " " + context_phrases()[c];
      const std::uint64_t s = derive_seed(seed, "context:" + context_names()[c]);
      const auto images = sample_prompt(tuned, tokenize(vocab, prompt, len), config.eval_sampler,
                                        config.context_samples, s, workers);
      const auto fits = invert_all(images, ImageDims{}, workers);
      MetricReport r = context_accuracy(fits, c);
      r.seed = s;
      const MetricReport fid = subject_fidelity(fits, subjects.subject);
      r.diagnostics.insert(r.diagnostics.begin(), {"prompt", prompt});
      r.diagnostics.push_back({"subject_fidelity", fmt(fid.value)});
      a.mean_context_accuracy += r.value / kNumContexts;
      a.mean_context_fidelity += fid.value / kNumContexts;
      a.context.push_back(std::move(r));
    }
  }
  return a;
}

std::string arm_table(const std::vector<ArmReport>& arms) {
  std::ostringstream os;
  os << "arm                      drift    fidelity  ctx_acc  ctx_fid  other_drift\n";
  for (const auto& a : arms) {
    char line[160];
    std::snprintf(line, sizeof line, "%-24s %-8s %-9s %-8s %-8s %s\n", a.name.c_str(),
                  fmt(a.drift.value).c_str(), fmt(a.fidelity.value).c_str(),
                  a.context.empty() ? "-" : fmt(a.mean_context_accuracy).c_str(),
                  a.context.empty() ? "-" : fmt(a.mean_context_fidelity).c_str(),
                  a.other_drift ? fmt(a.other_drift->value).c_str() : "-");
    os << line;
  }
  return os.str();
}

SrEvalSet recipe_sr_eval_set(const ExperimentConfig& config, const Model& text,
                             const Vocabulary& vocab, const Identifier& identifier) {
  const RunSeeds seeds = run_seeds(config.seed);
  SrEvalSet set;
  Rng rng(derive_seed(seeds.subject, "sr-subject"));
  set.subject = sample_subject(rng, class_id(config.subject_noun));
  set.subject.tex_freq = config.sr_subject_tex_freq;
  const std::string caption = make_caption(config.subject_noun, identifier.surface, std::nullopt);

  Rng place(derive_seed(seeds.subject_set, "sr-train"));
  std::vector<ContextParams> train;
  for (std::size_t i = 0; i < config.subject_images; ++i) {
    ContextParams c;
    c.context_id = context_id(config.subject_context);
    c.cx = place.uniform(-kCenterRange, kCenterRange);
    c.cy = place.uniform(-kCenterRange, kCenterRange);
    train.push_back(c);
  }
  set.train_pairs = subject_sr_pairs(config.sr, text, vocab, set.subject, train, caption);

  Rng held(derive_seed(seeds.sr_eval, "held-out"));
  for (std::size_t i = 0; i < config.sr_eval_images; ++i) {
    const ContextParams c = sample_context(held);
    const SrPair p = make_sr_pair(config.sr, text, vocab, set.subject, c, caption);
    set.lowres.push_back(p.low);
    set.truth.push_back(p.high);
    if (set.cond.empty()) set.cond = p.cond;
  }
  return set;
}

SrArmReport evaluate_sr(const std::string& name, const SrModel& sr, const SrEvalSet& set,
                        double aug_level, const SamplerSpec& spec, std::uint64_t seed,
                        std::size_t workers) {
  const auto out = super_resolve(sr, set.lowres, set.cond, aug_level, spec, seed, workers);
  const ImageDims hi = sr.config.high();
  SrArmReport r;
  r.name = name;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = high_frequency_error(out[i], set.truth[i], hi);
    r.per_sample.push_back(e);
    r.hf_error += e / static_cast<double>(out.size());
    double sq = 0.0;
    for (std::size_t j = 0; j < hi.size(); ++j) {
      const double d = out[i][j] - set.truth[i][j];
      sq += d * d;
    }
    r.mse += sq / static_cast<double>(hi.size() * out.size());
    r.band_amplitude +=
        horizontal_band_amplitude(out[i], hi, set.subject.tex_freq) / static_cast<double>(out.size());
  }
  return r;
}

}  // namespace subjectlab
