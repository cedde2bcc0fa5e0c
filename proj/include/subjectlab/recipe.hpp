#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "subjectlab/experiment.hpp"

namespace subjectlab {

// Building blocks of the reference recipe shared by the CLI and the
// acceptance harness. Each is a pure function of the config (and its
// inputs), so reruns regenerate identical artifacts.

Vocabulary recipe_vocab(const ExperimentConfig& config);
Identifier recipe_identifier(const ExperimentConfig& config, const Vocabulary& vocab);
// config.model with the encoder sized to the vocabulary.
ModelConfig recipe_model_config(const ExperimentConfig& config, const Vocabulary& vocab);
PretrainResult recipe_pretrain(const ExperimentConfig& config, const Vocabulary& vocab,
                               const std::function<void(const LossPoint&)>& on_step = {});
SubjectSet recipe_subject_set(const ExperimentConfig& config, const Identifier& identifier);
PriorSet recipe_prior_set(const ExperimentConfig& config, const Model& base,
                          const Vocabulary& vocab, const std::string& noun,
                          std::size_t workers = 1);

// Cached pretraining: reuses `path` when it holds a checkpoint whose
// recorded config hash matches, otherwise trains and saves it.
Model cached_pretrain(const ExperimentConfig& config, const Vocabulary& vocab,
                      const std::filesystem::path& path,
                      const std::function<void(const LossPoint&)>& on_step = {});

// Metrics of one fine-tuned arm against the base model.
struct ArmReport {
  std::string name;
  MetricReport drift;                        // on the subject's class noun
  std::optional<MetricReport> other_drift;   // on a second noun, when requested
  MetricReport fidelity;                     // "a V noun"
  std::vector<MetricReport> context;         // "a V noun <context>", per context
  double mean_context_accuracy = 0.0;
  double mean_context_fidelity = 0.0;
};

struct ArmEvalOptions {
  bool contexts = true;
  std::string other_noun;  // empty: skip other_drift
};

// `caption` is the arm's training caption; fidelity prompts use it as is and
// context prompts append a context phrase. `base_diversity` caches
// prior_diversity(base, noun) keyed by noun.
ArmReport evaluate_arm(const ExperimentConfig& config, const std::string& name,
                       const Model& base, const Model& tuned, const Vocabulary& vocab,
                       const SubjectSet& subjects, const std::string& caption,
                       const ArmEvalOptions& options,
                       std::map<std::string, MetricReport>& base_diversity,
                       std::size_t workers = 1);

std::string arm_table(const std::vector<ArmReport>& arms);

// Super-resolution ablation: SR outputs for held-out renders of a subject
// with config.sr_subject_tex_freq, scored by high-frequency band error
// against the true high-res renders.
struct SrEvalSet {
  SubjectParams subject;
  std::vector<Tensor> lowres;
  std::vector<Tensor> truth;
  Tensor cond;
  std::vector<SrPair> train_pairs;
};
SrEvalSet recipe_sr_eval_set(const ExperimentConfig& config, const Model& text,
                             const Vocabulary& vocab, const Identifier& identifier);

struct SrArmReport {
  std::string name;
  double hf_error = 0.0;  // mean over outputs
  double mse = 0.0;
  double band_amplitude = 0.0;  // at the subject's texture frequency
  std::vector<double> per_sample;
};
SrArmReport evaluate_sr(const std::string& name, const SrModel& sr, const SrEvalSet& set,
                        double aug_level, const SamplerSpec& spec, std::uint64_t seed,
                        std::size_t workers = 1);

}  // namespace subjectlab
