#include "subjectlab/textenc.hpp"

#include <cmath>

#include "subjectlab/error.hpp"
#include "subjectlab/rng.hpp"

namespace subjectlab {

void EncoderConfig::validate() const {
  if (!vocab_size || !embed_dim || !hidden || !cond_dim || !max_len)
    throw ValueError("encoder config: all dimensions must be positive");
}

TextEncoderNet::TextEncoderNet(EncoderConfig config, std::string prefix)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
  config_.validate();
  positional_ = Tensor({config_.max_len, config_.embed_dim});
  const std::size_t d = config_.embed_dim;
  for (std::size_t l = 0; l < config_.max_len; ++l)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::exp(-std::log(100.0) * static_cast<double>(i / 2 * 2) /
                                   static_cast<double>(d));
      const double a = static_cast<double>(l) * freq;
      positional_[l * d + i] = static_cast<float>(0.5 * (i % 2 ? std::cos(a) : std::sin(a)));
    }
}

std::vector<InputSpec> TextEncoderNet::input_specs() const {
  return {{"tokens", config_.max_len}};
}

ParameterSet TextEncoderNet::init_parameters() const {
  const auto& c = config_;
  Rng rng(derive_seed(c.seed, "encoder-init"));
  ParameterSet p;
  Tensor embed({c.vocab_size, c.embed_dim});
  for (auto& v : embed.data()) v = static_cast<float>(rng.normal());
  p.add(prefix_ + "embed", std::move(embed));
  auto dense = [&](std::size_t in, std::size_t out) {
    Tensor w({in, out});
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.data()) v = static_cast<float>(sd * rng.normal());
    return w;
  };
  p.add(prefix_ + "fc1.w", dense(c.embed_dim, c.hidden));
  p.add(prefix_ + "fc1.b", Tensor({c.hidden}));
  p.add(prefix_ + "fc2.w", dense(c.hidden, c.cond_dim));
  p.add(prefix_ + "fc2.b", Tensor({c.cond_dim}));
  return p;
}

Var TextEncoderNet::encode(Tape& tape, const ParameterSet& params, const Tensor& token_ref) const {
  // token_ref may live on the tape, which reallocates as nodes are recorded.
  const Tensor tokens = token_ref;
  const std::size_t len = config_.max_len;
  if (tokens.cols() != len)
    throw ShapeError("tokens", "expected sequences of length " + std::to_string(len) +
                                   ", got " + shape_string(tokens.shape()));
  const std::size_t rows = tokens.rows();
  const std::size_t d = config_.embed_dim;
  std::vector<bool> mask(rows * len);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = tokens[i] != 0.0f;

  auto P = [&](const char* name) { return tape.parameter(params, prefix_ + name); };
  Var e = ops::embedding(tape, P("embed"), tokens);
  Tensor pos({rows * len, d});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(positional_.data().begin(), positional_.data().end(), pos.raw() + r * len * d);
  Var u = ops::silu(tape, ops::add(tape, e, tape.constant(std::move(pos))));
  Var pooled = ops::masked_mean(tape, u, len, mask);
  Var h = ops::silu(tape, ops::linear(tape, pooled, P("fc1.w"), P("fc1.b")));
  return ops::linear(tape, h, P("fc2.w"), P("fc2.b"));
}

std::vector<Var> TextEncoderNet::forward(Tape& tape, const ParameterSet& params,
                                         std::span<const Var> inputs) const {
  return {encode(tape, params, tape.value(inputs[0]))};
}

TextEncoder init_encoder(const EncoderConfig& config) {
  TextEncoderNet net(config);
  return {config, net.init_parameters()};
}

TextEncoder init_encoder(std::size_t vocab_size, std::size_t embed_dim, std::size_t cond_dim,
                         std::uint64_t seed) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = embed_dim;
  c.cond_dim = cond_dim;
  c.seed = seed;
  return init_encoder(c);
}

Tensor encode_prompt(const TextEncoder& encoder, std::span<const int> tokens) {
  const auto& c = encoder.config;
  if (tokens.size() != c.max_len)
    throw ShapeError("tokens", "expected " + std::to_string(c.max_len) + " ids, got " +
                                   std::to_string(tokens.size()));
  Tensor t({1, c.max_len});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= c.vocab_size)
      throw ShapeError("tokens", "token id " + std::to_string(tokens[i]) +
                                     " outside vocabulary of " + std::to_string(c.vocab_size));
    t[i] = static_cast<float>(tokens[i]);
  }
  TextEncoderNet net(c);
  Tape tape(false);
  return tape.value(net.encode(tape, encoder.params, t));
}

}  // namespace subjectlab
