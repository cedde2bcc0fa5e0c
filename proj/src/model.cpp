#include "subjectlab/model.hpp"

#include <algorithm>
#include <sstream>
#include <thread>

#include "subjectlab/error.hpp"

namespace subjectlab {

void ModelConfig::validate() const {
  encoder.validate();
  denoiser.validate();
  if (encoder.cond_dim != denoiser.cond_dim)
    throw ValueError("encoder output width " + std::to_string(encoder.cond_dim) +
                     " != denoiser conditioning width " + std::to_string(denoiser.cond_dim));
  if (denoiser.image_cond_channels)
    throw ValueError("text-to-image model must not use image conditioning");
}

Model init_model(const ModelConfig& config) {
  config.validate();
  Model m{config, {}};
  m.params.append(TextEncoderNet(config.encoder).init_parameters(), "");
  m.params.append(DenoiserNet(config.denoiser).init_parameters(), "");
  return m;
}

TextToImageNet::TextToImageNet(const ModelConfig& config)
    : encoder_(config.encoder), denoiser_(config.denoiser) {
  config.validate();
}

std::vector<InputSpec> TextToImageNet::input_specs() const {
  return {{"z", denoiser_.config().image_size()},
          {"t", 1},
          {"tokens", encoder_.config().max_len}};
}

std::vector<Var> TextToImageNet::forward(Tape& tape, const ParameterSet& params,
                                         std::span<const Var> inputs) const {
  const Tensor& tv = tape.value(inputs[1]);
  std::vector<float> t(tv.data().begin(), tv.data().end());
  const Var c = encoder_.encode(tape, params, tape.value(inputs[2]));
  return {denoiser_.forward_x0(tape, params, inputs[0], t, c)};
}

void check_vocabulary(const Model& model, const Vocabulary& vocab) {
  if (vocab.size() != model.config.encoder.vocab_size)
    throw ValueError("vocabulary has " + std::to_string(vocab.size()) +
                     " tokens but the encoder was built for " +
                     std::to_string(model.config.encoder.vocab_size));
}

Tensor token_tensor(const std::vector<TokenSeq>& rows) {
  if (rows.empty()) throw ValueError("token_tensor: no rows");
  const std::size_t len = rows[0].size();
  Tensor t({rows.size(), len});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != len) throw ShapeError("tokens", "token rows differ in length");
    for (std::size_t i = 0; i < len; ++i) t[r * len + i] = static_cast<float>(rows[r][i]);
  }
  return t;
}

Tensor encode_tokens(const Model& model, const std::vector<TokenSeq>& rows) {
  const auto& ec = model.config.encoder;
  for (const auto& row : rows) {
    if (row.size() != ec.max_len)
      throw ShapeError("tokens", "expected " + std::to_string(ec.max_len) + " ids, got " +
                                     std::to_string(row.size()));
    for (int id : row)
      if (id < 0 || static_cast<std::size_t>(id) >= ec.vocab_size)
        throw ShapeError("tokens", "token id " + std::to_string(id) + " outside vocabulary of " +
                                       std::to_string(ec.vocab_size));
  }
  TextEncoderNet net(ec);
  Tape tape(false);
  return tape.value(net.encode(tape, model.params, token_tensor(rows)));
}

std::vector<Tensor> sample_prompt(const Model& model, const TokenSeq& tokens,
                                  const SamplerSpec& spec, std::size_t count, std::uint64_t seed,
                                  std::size_t workers) {
  const Tensor c = encode_tokens(model, {tokens});
  DenoiserNet net(model.config.denoiser);
  return sample_batch(net, model.params, {c}, spec, model.config.denoiser.image_size(), count,
                      seed, workers);
}

void write_denoiser_meta(const DenoiserConfig& c, const std::string& p,
                         std::map<std::string, std::string>& meta) {
  meta[p + "height"] = std::to_string(c.height);
  meta[p + "width"] = std::to_string(c.width);
  meta[p + "channels"] = std::to_string(c.channels);
  meta[p + "hidden"] = std::to_string(c.hidden);
  meta[p + "blocks"] = std::to_string(c.blocks);
  meta[p + "time_dim"] = std::to_string(c.time_dim);
  meta[p + "cond_dim"] = std::to_string(c.cond_dim);
  meta[p + "image_cond_channels"] = std::to_string(c.image_cond_channels);
  std::ostringstream sd;
  sd.precision(17);
  sd << c.sigma_data;
  meta[p + "sigma_data"] = sd.str();
  std::ostringstream ks;
  ks.precision(17);
  ks << c.skip_sigma;
  meta[p + "skip_sigma"] = ks.str();
  meta[p + "seed"] = std::to_string(c.seed);
}

namespace {

const std::string& meta_at(const std::map<std::string, std::string>& meta, const std::string& k) {
  const auto it = meta.find(k);
  if (it == meta.end()) throw IoError("checkpoint metadata lacks '" + k + "'");
  return it->second;
}

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& k) {
  return std::stoull(meta_at(meta, k));
}

}  // namespace

DenoiserConfig read_denoiser_meta(const std::map<std::string, std::string>& meta,
                                  const std::string& p) {
  DenoiserConfig c;
  c.height = meta_size(meta, p + "height");
  c.width = meta_size(meta, p + "width");
  c.channels = meta_size(meta, p + "channels");
  c.hidden = meta_size(meta, p + "hidden");
  c.blocks = meta_size(meta, p + "blocks");
  c.time_dim = meta_size(meta, p + "time_dim");
  c.cond_dim = meta_size(meta, p + "cond_dim");
  c.image_cond_channels = meta_size(meta, p + "image_cond_channels");
  c.sigma_data = std::stod(meta_at(meta, p + "sigma_data"));
  c.skip_sigma = std::stod(meta_at(meta, p + "skip_sigma"));
  c.seed = std::stoull(meta_at(meta, p + "seed"));
  return c;
}

Checkpoint model_checkpoint(const Model& model, const std::map<std::string, std::string>& extra) {
  Checkpoint ck;
  ck.meta = extra;
  const auto& e = model.config.encoder;
  ck.meta["kind"] = "text-to-image";
  ck.meta["encoder.vocab_size"] = std::to_string(e.vocab_size);
  ck.meta["encoder.embed_dim"] = std::to_string(e.embed_dim);
  ck.meta["encoder.hidden"] = std::to_string(e.hidden);
  ck.meta["encoder.cond_dim"] = std::to_string(e.cond_dim);
  ck.meta["encoder.max_len"] = std::to_string(e.max_len);
  ck.meta["encoder.seed"] = std::to_string(e.seed);
  write_denoiser_meta(model.config.denoiser, "denoiser.", ck.meta);
  const NoiseSchedule schedule;
  ck.meta["schedule.kind"] = schedule.kind_name();
  std::ostringstream tm;
  tm.precision(17);
  tm << schedule.train_t_min;
  ck.meta["schedule.train_t_min"] = tm.str();
  ck.params = model.params;
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.count("kind") && ck.meta.at("kind") != "text-to-image")
    throw IoError("checkpoint holds a '" + ck.meta.at("kind") + "' model, not text-to-image");
  ModelConfig c;
  c.encoder.vocab_size = meta_size(ck.meta, "encoder.vocab_size");
  c.encoder.embed_dim = meta_size(ck.meta, "encoder.embed_dim");
  c.encoder.hidden = meta_size(ck.meta, "encoder.hidden");
  c.encoder.cond_dim = meta_size(ck.meta, "encoder.cond_dim");
  c.encoder.max_len = meta_size(ck.meta, "encoder.max_len");
  c.encoder.seed = std::stoull(meta_at(ck.meta, "encoder.seed"));
  c.denoiser = read_denoiser_meta(ck.meta, "denoiser.");
  Model m = init_model(c);
  if (!m.params.same_layout(ck.params))
    throw IoError("checkpoint tensors do not match the configured model layout");
  m.params = ck.params;
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model,
                const std::map<std::string, std::string>& extra) {
  save_checkpoint(path, model_checkpoint(model, extra));
}

Model load_model(const std::filesystem::path& path) {
  return model_from_checkpoint(load_checkpoint(path));
}

std::size_t default_workers() {
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace subjectlab
