#pragma once

#include <map>
#include <string>
#include <vector>

#include "subjectlab/checkpoint.hpp"
#include "subjectlab/denoiser.hpp"
#include "subjectlab/sampler.hpp"
#include "subjectlab/textenc.hpp"
#include "subjectlab/vocab.hpp"

namespace subjectlab {

// Text encoder and denoiser trained as one model. Parameters live in a
// single set under the "enc." and "den." prefixes.
struct ModelConfig {
  EncoderConfig encoder;
  DenoiserConfig denoiser;

  void validate() const;
};

struct Model {
  ModelConfig config;
  ParameterSet params;
};

Model init_model(const ModelConfig& config);

// Inputs z [B,D], t [B,1], tokens [B,L]; output x_hat [B,D].
class TextToImageNet : public Network {
 public:
  explicit TextToImageNet(const ModelConfig& config);

  std::vector<InputSpec> input_specs() const override;
  std::vector<Var> forward(Tape& tape, const ParameterSet& params,
                           std::span<const Var> inputs) const override;

  const TextEncoderNet& encoder() const noexcept { return encoder_; }
  const DenoiserNet& denoiser() const noexcept { return denoiser_; }

 private:
  TextEncoderNet encoder_;
  DenoiserNet denoiser_;
};

// Throws ValueError when the vocabulary and the encoder's table disagree.
void check_vocabulary(const Model& model, const Vocabulary& vocab);

// Rows of token ids as a float tensor [B, L].
Tensor token_tensor(const std::vector<TokenSeq>& rows);

// Conditioning vectors [B, cond_dim] for token sequences.
Tensor encode_tokens(const Model& model, const std::vector<TokenSeq>& rows);

// `count` samples for one prompt. The prompt is encoded once; sample i uses
// derive_seed(seed, i) as in sample_batch.
std::vector<Tensor> sample_prompt(const Model& model, const TokenSeq& tokens,
                                  const SamplerSpec& spec, std::size_t count, std::uint64_t seed,
                                  std::size_t workers = 1);

// Checkpoint with the configuration in the metadata; `extra` entries are
// added verbatim.
Checkpoint model_checkpoint(const Model& model,
                            const std::map<std::string, std::string>& extra = {});
Model model_from_checkpoint(const Checkpoint& ckpt);

void save_model(const std::filesystem::path& path, const Model& model,
                const std::map<std::string, std::string>& extra = {});
Model load_model(const std::filesystem::path& path);

// Metadata encoding shared with the super-resolution checkpoints.
void write_denoiser_meta(const DenoiserConfig& c, const std::string& prefix,
                         std::map<std::string, std::string>& meta);
DenoiserConfig read_denoiser_meta(const std::map<std::string, std::string>& meta,
                                  const std::string& prefix);

std::size_t default_workers();

}  // namespace subjectlab
