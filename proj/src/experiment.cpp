#include "subjectlab/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "subjectlab/error.hpp"

namespace subjectlab {

void ExperimentConfig::validate() const {
  model.encoder.validate();
  model.denoiser.validate();
  pretrain.validate();
  eval_sampler.validate();
  prior_sampler.validate();
  finetune.validate();
  sr.validate();
  if (identifier_range.lo > identifier_range.hi)
    throw ValueError("vocab.rank_lo must not exceed vocab.rank_hi");
  if (identifier_tokens < 1) throw ValueError("vocab.identifier_tokens must be at least 1");
  if (class_id(subject_noun) < 0) throw ValueError("subject.noun: unknown class noun");
  if (context_id(subject_context) < 0) throw ValueError("subject.context: unknown context");
  if (subject_images < 1) throw ValueError("subject.images must be at least 1");
  if (subject_tex_freq != 0 && (subject_tex_freq < kFreqMin || subject_tex_freq > kFreqMax))
    throw ValueError("subject.tex_freq must be 0 or within the texture range");
  if (sr_subject_tex_freq < kFreqMin || sr_subject_tex_freq > kFreqMax)
    throw ValueError("sr.subject_tex_freq outside the texture range");
  if (prior_per_image < 1) throw ValueError("finetune.prior_per_image must be at least 1");
  if (eval_samples < 16) throw ValueError("eval.samples must be at least 16");
  if (context_samples < 1) throw ValueError("eval.context_samples must be at least 1");
  if (sr_eval_images < 1) throw ValueError("sr.eval_images must be at least 1");
  if (model.denoiser.image_cond_channels)
    throw ValueError("model.denoiser must not use image conditioning");
  if (sr.denoiser.cond_dim != model.encoder.cond_dim)
    throw ValueError("sr conditioning width must equal model.encoder.cond_dim");
}

namespace {

Json sampler_json(const SamplerSpec& s) {
  return {{"kind", sampler_kind_name(s.kind)}, {"steps", s.steps()}, {"clamp", s.clamp_output}};
}

SamplerSpec sampler_from(const Json& j) {
  return SamplerSpec::uniform(parse_sampler_kind(j.at("kind").get<std::string>()),
                              j.at("steps").get<std::size_t>(), j.at("clamp").get<bool>());
}

// Rejects keys of `user` that are absent from `schema`.
void check_keys(const Json& user, const Json& schema, const std::string& path) {
  if (!user.is_object()) return;
  if (!schema.is_object())
    throw ValueError("config field '" + path + "' is not a section");
  for (const auto& [k, v] : user.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!schema.contains(k)) throw ValueError("unknown config field '" + p + "'");
    check_keys(v, schema.at(k), p);
  }
}

template <typename T>
T field(const Json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValueError("config field '" + std::string(section) + "." + key + "': " + e.what());
  }
}

}  // namespace

Json config_to_json(const ExperimentConfig& c) {
  const auto& e = c.model.encoder;
  const auto& d = c.model.denoiser;
  const auto& p = c.pretrain;
  const auto& f = c.finetune;
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["vocab"] = {{"max_size", c.vocab.max_size},
                {"max_piece", c.vocab.max_piece},
                {"rank_lo", c.identifier_range.lo},
                {"rank_hi", c.identifier_range.hi},
                {"identifier_tokens", c.identifier_tokens}};
  j["encoder"] = {{"embed_dim", e.embed_dim}, {"hidden", e.hidden},
                  {"cond_dim", e.cond_dim},   {"max_len", e.max_len},
                  {"init_seed", e.seed}};
  j["denoiser"] = {{"height", d.height},         {"width", d.width},
                   {"channels", d.channels},     {"hidden", d.hidden},
                   {"blocks", d.blocks},         {"time_dim", d.time_dim},
                   {"sigma_data", d.sigma_data}, {"skip_sigma", d.skip_sigma},
                   {"init_seed", d.seed}};
  j["pretrain"] = {{"steps", p.steps},
                   {"batch", p.batch},
                   {"learning_rate", p.learning_rate},
                   {"warmup", p.warmup},
                   {"final_lr_fraction", p.final_lr_fraction},
                   {"context_prob", p.context_prob},
                   {"modifier_prob", p.modifier_prob},
                   {"modifier_count", p.modifier_count}};
  j["sampler"] = {{"eval", sampler_json(c.eval_sampler)},
                  {"prior", sampler_json(c.prior_sampler)}};
  j["subject"] = {{"noun", c.subject_noun},
                  {"images", c.subject_images},
                  {"context", c.subject_context},
                  {"tex_freq", c.subject_tex_freq}};
  j["finetune"] = {{"mode", finetune_mode_name(f.mode)},
                   {"lambda", f.lambda},
                   {"learning_rate", f.learning_rate},
                   {"epochs", f.epochs},
                   {"prior_batch", f.prior_batch},
                   {"prior_per_image", c.prior_per_image},
                   {"caption", caption_mode_name(f.caption)},
                   {"wrong_noun", f.wrong_noun}};
  j["sr"] = {{"hidden", c.sr.denoiser.hidden},
             {"blocks", c.sr.denoiser.blocks},
             {"sigma_data", c.sr.denoiser.sigma_data},
             {"skip_sigma", c.sr.denoiser.skip_sigma},
             {"init_seed", c.sr.denoiser.seed},
             {"train_steps", c.sr_train.steps},
             {"train_batch", c.sr_train.batch},
             {"train_learning_rate", c.sr_train.learning_rate},
             {"train_warmup", c.sr_train.warmup},
             {"train_aug_level", c.sr_train.aug_level},
             {"finetune_aug_level", c.sr_finetune.aug_level},
             {"finetune_learning_rate", c.sr_finetune.learning_rate},
             {"finetune_epochs", c.sr_finetune.epochs},
             {"subject_tex_freq", c.sr_subject_tex_freq},
             {"eval_images", c.sr_eval_images}};
  j["eval"] = {{"samples", c.eval_samples}, {"context_samples", c.context_samples}};
  return j;
}

ExperimentConfig config_from_json(const Json& user) {
  ExperimentConfig c;
  Json j = config_to_json(c);
  check_keys(user, j, "");
  j.merge_patch(user);
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("config field 'seed'/'output_dir': ") + e.what());
  }
  c.vocab.max_size = field<std::size_t>(j, "vocab", "max_size");
  c.vocab.max_piece = field<std::size_t>(j, "vocab", "max_piece");
  c.identifier_range.lo = field<std::size_t>(j, "vocab", "rank_lo");
  c.identifier_range.hi = field<std::size_t>(j, "vocab", "rank_hi");
  c.identifier_tokens = field<std::size_t>(j, "vocab", "identifier_tokens");

  auto& e = c.model.encoder;
  e.embed_dim = field<std::size_t>(j, "encoder", "embed_dim");
  e.hidden = field<std::size_t>(j, "encoder", "hidden");
  e.cond_dim = field<std::size_t>(j, "encoder", "cond_dim");
  e.max_len = field<std::size_t>(j, "encoder", "max_len");
  e.seed = field<std::uint64_t>(j, "encoder", "init_seed");
  e.vocab_size = c.vocab.max_size;
  auto& d = c.model.denoiser;
  d.height = field<std::size_t>(j, "denoiser", "height");
  d.width = field<std::size_t>(j, "denoiser", "width");
  d.channels = field<std::size_t>(j, "denoiser", "channels");
  d.hidden = field<std::size_t>(j, "denoiser", "hidden");
  d.blocks = field<std::size_t>(j, "denoiser", "blocks");
  d.time_dim = field<std::size_t>(j, "denoiser", "time_dim");
  d.sigma_data = field<double>(j, "denoiser", "sigma_data");
  d.skip_sigma = field<double>(j, "denoiser", "skip_sigma");
  d.seed = field<std::uint64_t>(j, "denoiser", "init_seed");
  d.cond_dim = e.cond_dim;

  auto& p = c.pretrain;
  p.steps = field<std::size_t>(j, "pretrain", "steps");
  p.batch = field<std::size_t>(j, "pretrain", "batch");
  p.learning_rate = field<double>(j, "pretrain", "learning_rate");
  p.warmup = field<std::size_t>(j, "pretrain", "warmup");
  p.final_lr_fraction = field<double>(j, "pretrain", "final_lr_fraction");
  p.context_prob = field<double>(j, "pretrain", "context_prob");
  p.modifier_prob = field<double>(j, "pretrain", "modifier_prob");
  p.modifier_count = field<std::size_t>(j, "pretrain", "modifier_count");

  try {
    c.eval_sampler = sampler_from(j.at("sampler").at("eval"));
    c.prior_sampler = sampler_from(j.at("sampler").at("prior"));
  } catch (const nlohmann::json::exception& ex) {
    throw ValueError(std::string("config field 'sampler': ") + ex.what());
  }

  c.subject_noun = field<std::string>(j, "subject", "noun");
  c.subject_images = field<std::size_t>(j, "subject", "images");
  c.subject_context = field<std::string>(j, "subject", "context");
  c.subject_tex_freq = field<int>(j, "subject", "tex_freq");

  auto& f = c.finetune;
  f.mode = parse_finetune_mode(field<std::string>(j, "finetune", "mode"));
  f.lambda = field<double>(j, "finetune", "lambda");
  f.learning_rate = field<double>(j, "finetune", "learning_rate");
  f.epochs = field<std::size_t>(j, "finetune", "epochs");
  f.prior_batch = field<std::size_t>(j, "finetune", "prior_batch");
  c.prior_per_image = field<std::size_t>(j, "finetune", "prior_per_image");
  f.caption = parse_caption_mode(field<std::string>(j, "finetune", "caption"));
  f.wrong_noun = field<std::string>(j, "finetune", "wrong_noun");

  c.sr = default_sr_config(e.cond_dim);
  c.sr.denoiser.hidden = field<std::size_t>(j, "sr", "hidden");
  c.sr.denoiser.blocks = field<std::size_t>(j, "sr", "blocks");
  c.sr.denoiser.sigma_data = field<double>(j, "sr", "sigma_data");
  c.sr.denoiser.skip_sigma = field<double>(j, "sr", "skip_sigma");
  c.sr.denoiser.seed = field<std::uint64_t>(j, "sr", "init_seed");
  c.sr.low = {d.height, d.width, d.channels};
  c.sr.denoiser.height = d.height * c.sr.factor;
  c.sr.denoiser.width = d.width * c.sr.factor;
  c.sr.denoiser.channels = d.channels;
  c.sr.denoiser.image_cond_channels = d.channels;
  c.sr_train.steps = field<std::size_t>(j, "sr", "train_steps");
  c.sr_train.batch = field<std::size_t>(j, "sr", "train_batch");
  c.sr_train.learning_rate = field<double>(j, "sr", "train_learning_rate");
  c.sr_train.warmup = field<std::size_t>(j, "sr", "train_warmup");
  c.sr_train.aug_level = field<double>(j, "sr", "train_aug_level");
  c.sr_finetune.aug_level = field<double>(j, "sr", "finetune_aug_level");
  c.sr_finetune.learning_rate = field<double>(j, "sr", "finetune_learning_rate");
  c.sr_finetune.epochs = field<std::size_t>(j, "sr", "finetune_epochs");
  c.sr_subject_tex_freq = field<int>(j, "sr", "subject_tex_freq");
  c.sr_eval_images = field<std::size_t>(j, "sr", "eval_images");

  c.eval_samples = field<std::size_t>(j, "eval", "samples");
  c.context_samples = field<std::size_t>(j, "eval", "context_samples");

  const RunSeeds s = run_seeds(c.seed);
  c.pretrain.seed = s.pretrain;
  c.finetune.seed = s.finetune;
  c.sr_train.seed = s.sr_train;
  c.sr_finetune.seed = s.sr_finetune;
  c.validate();
  return c;
}

std::string canonical_json(const Json& j) { return j.dump(); }

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = canonical_json(config_to_json(config));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValueError("override '" + assignment + "' is not of the form path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const Json schema = config_to_json(ExperimentConfig{});
  const Json* s = &schema;
  Json* node = &j;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!s->is_object() || !s->contains(key))
      throw ValueError("unknown config field '" + path + "'");
    s = &s->at(key);
    if (!node->is_object()) *node = Json::object();
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (s->is_object()) throw ValueError("config field '" + path + "' is a section");
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded() || (s->is_string() && !value.is_string())) value = text;
  *node = value;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  Json j = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("config not found: " + path.string());
    j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValueError("config is not valid JSON: " + path.string());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

std::filesystem::path output_root(const ExperimentConfig& config) {
  if (const char* env = std::getenv("SUBJECTLAB_OUT"); env && *env) return env;
  return config.output_dir;
}

RunSeeds run_seeds(std::uint64_t m) {
  return {derive_seed(m, "pretrain"),    derive_seed(m, "identifier"),
          derive_seed(m, "subject"),     derive_seed(m, "subject-set"),
          derive_seed(m, "prior"),       derive_seed(m, "finetune"),
          derive_seed(m, "eval"),        derive_seed(m, "sr-train"),
          derive_seed(m, "sr-finetune"), derive_seed(m, "sr-eval")};
}

Tensor make_grid(const std::vector<Tensor>& images, const ImageDims& dims, std::size_t columns,
                 ImageDims* grid_dims) {
  if (images.empty()) throw ValueError("emit_grid: no images");
  if (columns < 1) throw ValueError("emit_grid: columns must be positive");
  for (const auto& im : images)
    if (im.size() != dims.size()) throw ShapeError("images", "grid images differ in size");
  const std::size_t cols = std::min(columns, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols;
  const ImageDims g{rows * (dims.height + 1) + 1, cols * (dims.width + 1) + 1, dims.channels};
  Tensor out({g.size()}, 1.0f);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const std::size_t oy = (k / cols) * (dims.height + 1) + 1;
    const std::size_t ox = (k % cols) * (dims.width + 1) + 1;
    for (std::size_t i = 0; i < dims.height; ++i)
      std::copy_n(images[k].raw() + i * dims.width * dims.channels, dims.width * dims.channels,
                  out.raw() + ((oy + i) * g.width + ox) * g.channels);
  }
  if (grid_dims) *grid_dims = g;
  return out;
}

void emit_grid(const std::vector<Tensor>& images, const ImageDims& dims, std::size_t columns,
               const std::filesystem::path& path) {
  ImageDims g;
  const Tensor grid = make_grid(images, dims, columns, &g);
  write_ppm(path, grid, g);
}

SubjectParams reference_subject(const ExperimentConfig& config) {
  Rng rng(run_seeds(config.seed).subject);
  SubjectParams s = sample_subject(rng, class_id(config.subject_noun));
  if (config.subject_tex_freq) s.tex_freq = config.subject_tex_freq;
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace subjectlab
