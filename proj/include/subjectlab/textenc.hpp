#pragma once

#include <cstdint>
#include <string>

#include "subjectlab/autodiff.hpp"

namespace subjectlab {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  std::size_t cond_dim = 64;
  std::size_t max_len = 16;
  std::uint64_t seed = 2;

  void validate() const;
};

// Maps a padded token sequence to the conditioning vector c:
//   u_l = silu(E[token_l] + P_l)           per non-padding position l
//   c   = W2 silu(W1 mean_l(u_l) + b1) + b2
// P is a fixed sinusoidal positional table; padding positions (id 0) are
// masked out of the mean. The nonlinearity before pooling makes c depend on
// token order.
class TextEncoderNet : public Network {
 public:
  explicit TextEncoderNet(EncoderConfig config, std::string prefix = "enc.");

  // Input: tokens [B, max_len] holding ids as floats. Output: c [B, cond_dim].
  std::vector<InputSpec> input_specs() const override;
  std::vector<Var> forward(Tape& tape, const ParameterSet& params,
                           std::span<const Var> inputs) const override;

  Var encode(Tape& tape, const ParameterSet& params, const Tensor& tokens) const;

  const EncoderConfig& config() const noexcept { return config_; }
  ParameterSet init_parameters() const;

 private:
  EncoderConfig config_;
  std::string prefix_;
  Tensor positional_;
};

struct TextEncoder {
  EncoderConfig config;
  ParameterSet params;
};

TextEncoder init_encoder(std::size_t vocab_size, std::size_t embed_dim, std::size_t cond_dim,
                         std::uint64_t seed);
TextEncoder init_encoder(const EncoderConfig& config);

// Throws ShapeError for ids outside the embedding table or a sequence of the
// wrong length.
Tensor encode_prompt(const TextEncoder& encoder, std::span<const int> tokens);

}  // namespace subjectlab
