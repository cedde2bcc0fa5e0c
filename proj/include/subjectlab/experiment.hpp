#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "subjectlab/cascade.hpp"
#include "subjectlab/eval.hpp"
#include "subjectlab/personalize.hpp"

namespace subjectlab {

using Json = nlohmann::json;

// Every tunable of a run. Missing JSON keys keep their defaults; unknown
// keys are rejected so typos surface as errors. Thread counts are not part
// of the config since no result depends on them. The encoder's vocab_size
// is filled from the vocabulary at run time.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  VocabOptions vocab;
  RankRange identifier_range;
  std::size_t identifier_tokens = 1;
  ModelConfig model;
  PretrainConfig pretrain;
  SamplerSpec eval_sampler = default_eval_sampler();
  SamplerSpec prior_sampler = default_prior_sampler();

  std::string subject_noun = "blob";
  std::size_t subject_images = 4;
  std::string subject_context = "snow";
  // 2..6, or 0 to keep the sampled frequency.
  int subject_tex_freq = 0;

  FinetuneConfig finetune;
  std::size_t prior_per_image = 200;

  SrConfig sr = default_sr_config();
  SrTrainConfig sr_train;
  SrFinetuneConfig sr_finetune;
  int sr_subject_tex_freq = 6;
  std::size_t sr_eval_images = 32;

  std::size_t eval_samples = 64;
  std::size_t context_samples = 32;

  void validate() const;
};

Json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const Json& j);

// Sorted keys, no whitespace: the form that is hashed.
std::string canonical_json(const Json& j);
// 16 hex digits of FNV-1a over the canonical form.
std::string config_hash(const ExperimentConfig& config);

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
// Throws ValueError naming the path when it does not exist.
void apply_override(Json& j, const std::string& assignment);

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

// Output root: SUBJECTLAB_OUT when set, else config.output_dir.
std::filesystem::path output_root(const ExperimentConfig& config);

// Derived seeds of the run; every random stream starts from one of these.
struct RunSeeds {
  std::uint64_t pretrain, identifier, subject, subject_set, prior, finetune, eval, sr_train,
      sr_finetune, sr_eval;
};
RunSeeds run_seeds(std::uint64_t master);

// Images on a white-bordered grid: 1-pixel separators around and between
// cells, row-major. Output is (rows*(H+1)+1) x (cols*(W+1)+1).
Tensor make_grid(const std::vector<Tensor>& images, const ImageDims& dims, std::size_t columns,
                 ImageDims* grid_dims);
void emit_grid(const std::vector<Tensor>& images, const ImageDims& dims, std::size_t columns,
               const std::filesystem::path& path);

// The held-out subject of a run, drawn from the subject seed.
SubjectParams reference_subject(const ExperimentConfig& config);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace subjectlab
