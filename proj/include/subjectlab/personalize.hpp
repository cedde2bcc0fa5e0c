#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "subjectlab/model.hpp"
#include "subjectlab/optimizer.hpp"
#include "subjectlab/toyworld.hpp"

namespace subjectlab {

struct PretrainConfig {
  std::size_t steps = 20000;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  std::size_t warmup = 500;
  // Cosine decay from learning_rate down to final_lr_fraction * learning_rate.
  double final_lr_fraction = 0.05;
  // Per caption: probability of a context phrase, and of a common word in the
  // identifier slot ("a [word] [noun]").
  double context_prob = 0.5;
  double modifier_prob = 0.3;
  std::size_t modifier_count = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

double pretrain_learning_rate(const PretrainConfig& config, std::size_t step);

// The most frequent lowercase single-token pieces of 3+ letters, excluding
// class nouns and context words.
std::vector<std::string> modifier_words(const Vocabulary& vocab, std::size_t count);

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct PretrainResult {
  Model model;
  std::vector<LossPoint> curve;  // one point per step
};

// Trains on freshly rendered (image, caption) pairs: each step draws `batch`
// random subjects of every class in random contexts. Step k's data and noise
// come from streams derived from (seed, k). Throws NumericError naming the
// step on a non-finite loss or gradient.
PretrainResult pretrain_base(const ModelConfig& config, const Vocabulary& vocab,
                             const PretrainConfig& pretrain,
                             const std::function<void(const LossPoint&)>& on_step = {});

// Mean of a curve over [begin, end) steps.
double mean_loss(const std::vector<LossPoint>& curve, std::size_t begin, std::size_t end);

struct PriorSet {
  std::string class_noun;
  std::string prompt;
  TokenSeq tokens;
  std::vector<Tensor> images;
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> seeds;  // per image, derive_seed(master_seed, i)
  std::uint64_t base_hash = 0;
};

SamplerSpec default_prior_sampler();

// `count` samples of "a [noun]" from the frozen model.
PriorSet generate_prior_set(const Model& base, const Vocabulary& vocab, const std::string& noun,
                            std::size_t count, const SamplerSpec& spec, std::uint64_t seed,
                            std::size_t workers = 1);

struct SubjectSet {
  SubjectParams subject;  // ground truth, for evaluation only
  std::string class_noun;
  Identifier identifier;
  std::vector<ContextParams> contexts;
  std::vector<Tensor> images;
};

// N renders of one subject in a single context at random positions.
SubjectSet make_subject_set(const SubjectParams& subject, const Identifier& identifier,
                            std::size_t n, int context, std::uint64_t seed);

enum class FinetuneMode { Naive, PriorPreservation };
std::string finetune_mode_name(FinetuneMode mode);
FinetuneMode parse_finetune_mode(const std::string& name);

// Subject caption: "a V noun", "a V", or "a V wrong-noun".
enum class CaptionMode { Correct, NoNoun, WrongNoun };
std::string caption_mode_name(CaptionMode mode);
CaptionMode parse_caption_mode(const std::string& name);

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::PriorPreservation;
  double lambda = 1.0;
  double learning_rate = 1e-5;
  std::size_t epochs = 200;
  // Prior images per step; 0 means the subject set size.
  std::size_t prior_batch = 0;
  CaptionMode caption = CaptionMode::Correct;
  std::string wrong_noun;
  std::uint64_t seed = 0;

  void validate() const;
};

std::string subject_caption(const SubjectSet& set, const FinetuneConfig& config);

struct FinetunePoint {
  std::size_t step = 0;
  double subject_loss = 0.0;
  double prior_loss = 0.0;  // 0 in naive mode
  double total = 0.0;       // subject_loss + lambda * prior_loss
};

struct FinetuneResult {
  Model model;
  std::string caption;
  std::vector<FinetunePoint> curve;
};

// One step per epoch: every subject image with fresh (t, eps) plus a prior
// batch drawn with replacement, with its own (t', eps'), in one weighted
// batch (subject rows 1/N, prior rows lambda/P). Naive mode drops the prior
// rows. Subject noise, prior noise and prior indices use separate streams,
// so lambda = 0 reproduces the naive trajectory.
FinetuneResult finetune(const Model& base, const Vocabulary& vocab, const SubjectSet& subjects,
                        const PriorSet* prior, const FinetuneConfig& config,
                        const std::function<void(const FinetunePoint&)>& on_step = {});

}  // namespace subjectlab
