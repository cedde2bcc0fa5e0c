#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "subjectlab/error.hpp"
#include "subjectlab/recipe.hpp"

namespace fs = std::filesystem;
using namespace subjectlab;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::size_t workers = 1;
};

// One subcommand invocation: resolved config, output root, log and manifest.
class Run {
 public:
  Run(const std::string& command, const Common& common)
      : command_(command),
        config_(load_config(common.config_path, common.overrides)),
        workers_(std::max<std::size_t>(1, common.workers)) {
    root_ = common.out.empty() ? output_root(config_) : fs::path(common.out);
    fs::create_directories(root_ / "logs");
    fs::create_directories(root_ / "manifests");
    log_.open(root_ / "logs" / (command + ".log"), std::ios::binary);
    manifest_["command"] = command;
    manifest_["config_hash"] = config_hash(config_);
    manifest_["seed"] = config_.seed;
    manifest_["config"] = config_to_json(config_);
    manifest_["artifacts"] = Json::array();
    manifest_["parameters"] = Json::object();
  }

  const ExperimentConfig& config() const { return config_; }
  const fs::path& root() const { return root_; }
  std::size_t workers() const { return workers_; }
  Json& parameters() { return manifest_["parameters"]; }

  void log(const std::string& line) {
    log_ << line << "\n";
    log_.flush();
    std::cout << line << "\n";
  }

  void artifact(const fs::path& path) {
    manifest_["artifacts"].push_back(fs::relative(path, root_).generic_string());
  }

  void finish() {
    write_text(root_ / "manifests" / (command_ + ".json"), manifest_.dump(2) + "\n");
  }

  Vocabulary vocab() const { return load_vocab(root_ / "vocab.tsv"); }

  Identifier identifier(const Vocabulary& vocab, const std::string& surface) const {
    Identifier id;
    if (!surface.empty()) {
      id.surface = surface;
    } else {
      const fs::path p = root_ / "identifier.json";
      std::ifstream in(p);
      if (!in) throw IoError("identifier not found: " + p.string() + " (run mine-token)");
      id.surface = Json::parse(in).at("surface").get<std::string>();
    }
    id.ids = tokenize_ids(vocab, id.surface);
    id.k = id.ids.size();
    return id;
  }

  fs::path path_or(const std::string& flag, const std::string& fallback) const {
    return flag.empty() ? root_ / fallback : fs::path(flag);
  }

 private:
  std::string command_;
  ExperimentConfig config_;
  std::size_t workers_;
  fs::path root_;
  std::ofstream log_;
  Json manifest_;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string index_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.%s", i, ext);
  return buf;
}

std::vector<Tensor> read_images(const fs::path& dir, ImageDims expected) {
  if (!fs::is_directory(dir)) throw IoError("image directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .ppm images in " + dir.string());
  std::vector<Tensor> out;
  for (const auto& f : files) {
    ImageDims d;
    out.push_back(read_ppm(f, &d));
    if (!(d == expected))
      throw ShapeError("image", f.string() + " is " + std::to_string(d.width) + "x" +
                                    std::to_string(d.height) + ", expected " +
                                    std::to_string(expected.width) + "x" +
                                    std::to_string(expected.height));
  }
  return out;
}

ImageDims low_dims(const ExperimentConfig& c) {
  return {c.model.denoiser.height, c.model.denoiser.width, c.model.denoiser.channels};
}

void write_images(Run& run, const std::vector<Tensor>& images, const ImageDims& dims,
                  const fs::path& dir, std::size_t columns) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_ppm(dir / index_name(i, "ppm"), images[i], dims);
    run.artifact(dir / index_name(i, "ppm"));
  }
  emit_grid(images, dims, columns, dir / "grid.ppm");
  run.artifact(dir / "grid.ppm");
}

void save_report(Run& run, const std::string& stem, const std::vector<MetricReport>& reports) {
  Json arr = Json::array();
  std::string text;
  for (auto r : reports) {
    r.config_hash = config_hash(run.config());
    arr.push_back(Json::parse(r.to_json()));
    text += r.to_text();
  }
  const fs::path dir = run.root() / "reports";
  write_text(dir / (stem + ".json"), arr.dump(2) + "\n");
  write_text(dir / (stem + ".txt"), text);
  run.artifact(dir / (stem + ".json"));
  run.artifact(dir / (stem + ".txt"));
  run.log(text);
}

std::vector<MetricReport> arm_reports(const ArmReport& a) {
  std::vector<MetricReport> out = {a.drift};
  if (a.other_drift) out.push_back(*a.other_drift);
  out.push_back(a.fidelity);
  out.insert(out.end(), a.context.begin(), a.context.end());
  for (auto& r : out) r.name = a.name + "/" + r.name;
  return out;
}

void cmd_gen_data(Run& run, std::size_t count) {
  const auto& c = run.config();
  const ImageDims dims = low_dims(c);
  const fs::path dir = run.root() / "data";
  fs::create_directories(dir / "images");
  Rng rng(derive_seed(c.seed, "gen-data"));
  std::string manifest;
  for (std::size_t i = 0; i < count; ++i) {
    DatasetEntry e;
    const int cls = static_cast<int>(rng.below(kNumClasses));
    e.subject = sample_subject(rng, cls);
    e.context = sample_context(rng);
    const bool with_ctx = rng.uniform() < c.pretrain.context_prob;
    e.caption = make_caption(class_nouns()[cls], std::nullopt,
                             with_ctx ? std::optional(context_names()[e.context.context_id])
                                      : std::nullopt);
    e.image_file = "images/" + index_name(i, "ppm");
    write_ppm(dir / e.image_file, render(e.subject, e.context, dims), dims);
    manifest += format_entry(e) + "\n";
  }
  write_text(dir / "manifest.txt", manifest);
  run.artifact(dir / "manifest.txt");
  run.parameters()["count"] = count;
  run.log("wrote " + std::to_string(count) + " renders to " + dir.string());
}

void cmd_build_vocab(Run& run) {
  const Vocabulary v = recipe_vocab(run.config());
  save_vocab(run.root() / "vocab.tsv", v);
  run.artifact(run.root() / "vocab.tsv");
  run.log("vocabulary: " + std::to_string(v.size()) + " entries");
}

void cmd_mine_token(Run& run) {
  const Vocabulary v = run.vocab();
  const Identifier id = recipe_identifier(run.config(), v);
  const RankRange r = scaled_rank_range(run.config().identifier_range, v.size());
  Json j = {{"surface", id.surface}, {"ids", id.ids}, {"k", id.k},
            {"rank_lo", r.lo},       {"rank_hi", r.hi}};
  write_text(run.root() / "identifier.json", j.dump(2) + "\n");
  run.artifact(run.root() / "identifier.json");
  run.log("identifier: '" + id.surface + "' (" + std::to_string(id.k) + " tokens)");
}

void cmd_pretrain(Run& run) {
  const Vocabulary v = run.vocab();
  std::string curve = "step\tloss\n";
  double window = 0.0;
  const auto res = recipe_pretrain(run.config(), v, [&](const LossPoint& p) {
    curve += std::to_string(p.step) + "\t" + num(p.loss) + "\n";
    window += p.loss;
    if ((p.step + 1) % 100 == 0) {
      run.log("step " + std::to_string(p.step + 1) + " loss " + num(window / 100.0));
      window = 0.0;
    }
  });
  const fs::path ck = run.root() / "base.ckpt";
  save_model(ck, res.model, {{"config_hash", config_hash(run.config())}});
  write_text(run.root() / "pretrain_curve.tsv", curve);
  run.artifact(ck);
  run.artifact(run.root() / "pretrain_curve.tsv");
}

struct PersonalizeFlags {
  std::string subject_dir, class_noun, identifier, mode, caption, wrong_noun, base, name;
  double lambda = -1.0;
  long epochs = -1;
};

FinetuneConfig finetune_config(const ExperimentConfig& c, const PersonalizeFlags& f) {
  FinetuneConfig fc = c.finetune;
  if (!f.mode.empty()) fc.mode = parse_finetune_mode(f.mode);
  if (f.lambda >= 0.0) fc.lambda = f.lambda;
  if (f.epochs >= 0) fc.epochs = static_cast<std::size_t>(f.epochs);
  if (!f.caption.empty()) fc.caption = parse_caption_mode(f.caption);
  if (!f.wrong_noun.empty()) fc.wrong_noun = f.wrong_noun;
  fc.validate();
  return fc;
}

void cmd_personalize(Run& run, const PersonalizeFlags& f) {
  const auto& c = run.config();
  const Vocabulary v = run.vocab();
  const Model base = load_model(run.path_or(f.base, "base.ckpt"));
  check_vocabulary(base, v);
  const Identifier id = run.identifier(v, f.identifier);
  const FinetuneConfig fc = finetune_config(c, f);

  SubjectSet set = recipe_subject_set(c, id);
  if (!f.subject_dir.empty()) {
    set.images = read_images(f.subject_dir, low_dims(c));
    set.contexts.clear();
    if (!f.class_noun.empty()) set.class_noun = f.class_noun;
  } else {
    if (!f.class_noun.empty() && f.class_noun != set.class_noun)
      throw ValueError("--class-noun differs from the configured subject; pass --subject-dir");
    write_images(run, set.images, low_dims(c), run.root() / "subject", 8);
  }
  if (class_id(set.class_noun) < 0) throw ValueError("unknown class noun '" + set.class_noun + "'");

  std::optional<PriorSet> prior;
  if (fc.mode == FinetuneMode::PriorPreservation) {
    prior = generate_prior_set(base, v, set.class_noun, c.prior_per_image * set.images.size(),
                               c.prior_sampler,
                               derive_seed(run_seeds(c.seed).prior, set.class_noun),
                               run.workers());
    const fs::path dir = run.root() / "prior";
    fs::create_directories(dir);
    std::string manifest = "prompt\t" + prior->prompt + "\nmaster_seed\t" +
                           std::to_string(prior->master_seed) + "\nbase_hash\t" +
                           std::to_string(prior->base_hash) + "\n";
    for (std::size_t i = 0; i < prior->images.size(); ++i) {
      write_ppm(dir / index_name(i, "ppm"), prior->images[i], low_dims(c));
      manifest += index_name(i, "ppm") + "\t" + std::to_string(prior->seeds[i]) + "\n";
    }
    write_text(dir / "manifest.txt", manifest);
    run.artifact(dir / "manifest.txt");
    run.log("prior set: " + std::to_string(prior->images.size()) + " samples of '" +
            prior->prompt + "'");
  }

  std::string curve = "step\tsubject_loss\tprior_loss\ttotal\n";
  const auto res = finetune(base, v, set, prior ? &*prior : nullptr, fc,
                            [&](const FinetunePoint& p) {
                              curve += std::to_string(p.step) + "\t" + num(p.subject_loss) +
                                       "\t" + num(p.prior_loss) + "\t" + num(p.total) + "\n";
                            });
  const std::string name = f.name.empty() ? "personalized-" + finetune_mode_name(fc.mode) : f.name;
  const fs::path ck = run.root() / (name + ".ckpt");
  save_model(ck, res.model,
             {{"config_hash", config_hash(c)},
              {"caption", res.caption},
              {"identifier", id.surface},
              {"class_noun", set.class_noun},
              {"mode", finetune_mode_name(fc.mode)},
              {"lambda", num(fc.lambda)}});
  write_text(run.root() / (name + "_curve.tsv"), curve);
  run.artifact(ck);
  run.artifact(run.root() / (name + "_curve.tsv"));
  run.parameters() = {{"mode", finetune_mode_name(fc.mode)}, {"lambda", fc.lambda},
                      {"epochs", fc.epochs}, {"learning_rate", fc.learning_rate},
                      {"caption", res.caption}, {"seed", fc.seed},
                      {"subject_images", set.images.size()}};
  run.log("fine-tuned '" + res.caption + "': subject loss " + num(res.curve.front().subject_loss) +
          " -> " + num(res.curve.back().subject_loss));
}

struct SampleFlags {
  std::string checkpoint, prompt, sampler, name;
  std::size_t count = 16, steps = 0, columns = 8;
  long long seed = -1;
};

SamplerSpec sampler_from_flags(const SamplerSpec& base, const std::string& kind,
                               std::size_t steps) {
  if (kind.empty() && !steps) return base;
  return SamplerSpec::uniform(kind.empty() ? base.kind : parse_sampler_kind(kind),
                              steps ? steps : base.steps(), base.clamp_output);
}

void cmd_sample(Run& run, const SampleFlags& f) {
  const auto& c = run.config();
  const Model m = load_model(run.path_or(f.checkpoint, "base.ckpt"));
  const Vocabulary v = run.vocab();
  check_vocabulary(m, v);
  const SamplerSpec spec = sampler_from_flags(c.eval_sampler, f.sampler, f.steps);
  const std::uint64_t seed =
      f.seed >= 0 ? static_cast<std::uint64_t>(f.seed) : derive_seed(run_seeds(c.seed).eval, f.prompt);
  const auto images =
      sample_prompt(m, tokenize(v, f.prompt, m.config.encoder.max_len), spec, f.count, seed,
                    run.workers());
  const std::string name = f.name.empty() ? "default" : f.name;
  write_images(run, images, low_dims(c), run.root() / "samples" / name, f.columns);
  run.parameters() = {{"prompt", f.prompt},   {"count", f.count},
                      {"seed", seed},         {"sampler", sampler_kind_name(spec.kind)},
                      {"steps", spec.steps()}};
  run.log("sampled " + std::to_string(f.count) + " images of '" + f.prompt + "'");
}

void cmd_sr_train(Run& run, const std::string& base_path) {
  const auto& c = run.config();
  const Vocabulary v = run.vocab();
  const Model text = load_model(run.path_or(base_path, "base.ckpt"));
  std::string curve = "step\tloss\n";
  double window = 0.0;
  const SrModel sr = train_sr(c.sr, text, v, c.sr_train, [&](const LossPoint& p) {
    curve += std::to_string(p.step) + "\t" + num(p.loss) + "\n";
    window += p.loss;
    if ((p.step + 1) % 100 == 0) {
      run.log("step " + std::to_string(p.step + 1) + " loss " + num(window / 100.0));
      window = 0.0;
    }
  });
  save_sr(run.root() / "sr.ckpt", sr,
          {{"config_hash", config_hash(c)}, {"aug_level", num(c.sr_train.aug_level)}});
  write_text(run.root() / "sr_curve.tsv", curve);
  run.artifact(run.root() / "sr.ckpt");
  run.artifact(run.root() / "sr_curve.tsv");
}

std::string level_tag(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0e", level);
  return buf;
}

void cmd_sr_finetune(Run& run, double aug_level, const std::string& sr_path,
                     const std::string& base_path, const std::string& identifier) {
  const auto& c = run.config();
  const Vocabulary v = run.vocab();
  const Model text = load_model(run.path_or(base_path, "base.ckpt"));
  const SrModel sr = load_sr(run.path_or(sr_path, "sr.ckpt"));
  const SrEvalSet set = recipe_sr_eval_set(c, text, v, run.identifier(v, identifier));
  SrFinetuneConfig fc = c.sr_finetune;
  if (aug_level >= 0.0) fc.aug_level = aug_level;
  std::vector<LossPoint> pts;
  const SrModel tuned = finetune_sr(sr, set.train_pairs, fc, &pts);
  std::string curve = "step\tloss\n";
  for (const auto& p : pts) curve += std::to_string(p.step) + "\t" + num(p.loss) + "\n";
  const std::string name = "sr-ft-" + level_tag(fc.aug_level);
  save_sr(run.root() / (name + ".ckpt"), tuned,
          {{"config_hash", config_hash(c)}, {"aug_level", num(fc.aug_level)}});
  write_text(run.root() / (name + "_curve.tsv"), curve);
  run.artifact(run.root() / (name + ".ckpt"));
  run.artifact(run.root() / (name + "_curve.tsv"));
  run.parameters() = {{"aug_level", fc.aug_level}, {"epochs", fc.epochs},
                      {"learning_rate", fc.learning_rate}, {"seed", fc.seed}};
  run.log("fine-tuned SR at augmentation level " + num(fc.aug_level));
}

struct SrApplyFlags {
  std::string sr, base, input, prompt, name;
  double aug_level = -1.0;
  long long seed = -1;
  std::size_t steps = 0;
};

void cmd_sr_apply(Run& run, const SrApplyFlags& f) {
  const auto& c = run.config();
  const Vocabulary v = run.vocab();
  const Model text = load_model(run.path_or(f.base, "base.ckpt"));
  const SrModel sr = load_sr(run.path_or(f.sr, "sr.ckpt"));
  std::vector<Tensor> low;
  if (fs::is_directory(f.input)) {
    low = read_images(f.input, sr.config.low);
  } else {
    ImageDims d;
    low.push_back(read_ppm(f.input, &d));
    if (!(d == sr.config.low)) throw ShapeError("input", "low-res image has the wrong size");
  }
  const Tensor cond =
      encode_tokens(text, {tokenize(v, f.prompt, text.config.encoder.max_len)});
  const double level = f.aug_level >= 0.0 ? f.aug_level : c.sr_finetune.aug_level;
  const std::uint64_t seed =
      f.seed >= 0 ? static_cast<std::uint64_t>(f.seed) : run_seeds(c.seed).sr_eval;
  const auto out = super_resolve(sr, low, cond, level,
                                 sampler_from_flags(c.eval_sampler, "", f.steps), seed,
                                 run.workers());
  write_images(run, out, sr.config.high(),
               run.root() / "sr-out" / (f.name.empty() ? "default" : f.name), 8);
  run.parameters() = {{"aug_level", level}, {"seed", seed}, {"prompt", f.prompt},
                      {"count", out.size()}};
  run.log("super-resolved " + std::to_string(out.size()) + " images");
}

void cmd_evaluate(Run& run, const std::string& ckpt, const std::string& base_path,
                  const std::string& identifier) {
  const auto& c = run.config();
  const Vocabulary v = run.vocab();
  const Model base = load_model(run.path_or(base_path, "base.ckpt"));
  const fs::path tuned_path = run.path_or(ckpt, "personalized-prior-preservation.ckpt");
  const Checkpoint ck = load_checkpoint(tuned_path);
  const Model tuned = model_from_checkpoint(ck);
  const Identifier id = run.identifier(v, identifier);
  const SubjectSet set = recipe_subject_set(c, id);
  const auto cap = ck.meta.find("caption");
  const std::string caption =
      cap != ck.meta.end() ? cap->second : make_caption(set.class_noun, id.surface, std::nullopt);
  std::map<std::string, MetricReport> cache;
  const ArmReport a = evaluate_arm(c, tuned_path.stem().string(), base, tuned, v, set, caption,
                                   {}, cache, run.workers());
  save_report(run, "evaluate", arm_reports(a));
}

void cmd_ablate(Run& run, const std::string& kind) {
  const auto& c = run.config();
  const Vocabulary v = run.vocab();
  const Model base = load_model(run.root() / "base.ckpt");
  const Identifier id = run.identifier(v, "");
  const SubjectSet set = recipe_subject_set(c, id);
  const fs::path dir = run.root() / "ablate";
  std::string table;
  std::vector<MetricReport> reports;

  if (kind == "prior-preservation" || kind == "class-noun") {
    struct Arm {
      std::string name;
      FinetuneConfig fc;
    };
    std::vector<Arm> arms;
    ArmEvalOptions opts;
    if (kind == "prior-preservation") {
      FinetuneConfig naive = c.finetune, prior = c.finetune;
      naive.mode = FinetuneMode::Naive;
      naive.lambda = 0.0;
      prior.mode = FinetuneMode::PriorPreservation;
      prior.lambda = 1.0;
      arms = {{"lambda=0 (naive)", naive}, {"lambda=1", prior}};
    } else {
      const std::string wrong = c.finetune.wrong_noun.empty()
                                    ? class_nouns()[(class_id(set.class_noun) + 1) % kNumClasses]
                                    : c.finetune.wrong_noun;
      opts.contexts = false;
      opts.other_noun = wrong;
      for (CaptionMode m : {CaptionMode::Correct, CaptionMode::NoNoun, CaptionMode::WrongNoun}) {
        FinetuneConfig fc = c.finetune;
        fc.mode = FinetuneMode::Naive;
        fc.caption = m;
        fc.wrong_noun = wrong;
        arms.push_back({"noun=" + caption_mode_name(m), fc});
      }
    }
    std::optional<PriorSet> prior;
    std::map<std::string, MetricReport> cache;
    std::vector<ArmReport> results;
    for (const auto& arm : arms) {
      if (arm.fc.mode == FinetuneMode::PriorPreservation && !prior)
        prior = recipe_prior_set(c, base, v, set.class_noun, run.workers());
      const auto res = finetune(base, v, set, prior ? &*prior : nullptr, arm.fc);
      results.push_back(
          evaluate_arm(c, arm.name, base, res.model, v, set, res.caption, opts, cache, run.workers()));
      run.log("arm " + arm.name + " done");
      const auto r = arm_reports(results.back());
      reports.insert(reports.end(), r.begin(), r.end());
    }
    table = arm_table(results);
  } else if (kind == "sr-noise") {
    const SrModel sr = load_sr(run.root() / "sr.ckpt");
    const SrEvalSet set_sr = recipe_sr_eval_set(c, base, v, id);
    const std::uint64_t seed = run_seeds(c.seed).sr_eval;
    std::vector<SrArmReport> arms;
    arms.push_back(evaluate_sr("no fine-tune", sr, set_sr, c.sr_train.aug_level, c.eval_sampler,
                               seed, run.workers()));
    for (double level : {kTrainAugLevel, kFinetuneAugLevel}) {
      SrFinetuneConfig fc = c.sr_finetune;
      fc.aug_level = level;
      const SrModel tuned = finetune_sr(sr, set_sr.train_pairs, fc);
      arms.push_back(evaluate_sr("fine-tune @" + level_tag(level), tuned, set_sr, level,
                                 c.eval_sampler, seed, run.workers()));
    }
    table = "arm              hf_error      mse           band_amp@" +
            std::to_string(set_sr.subject.tex_freq) + "\n";
    for (const auto& a : arms) {
      char line[160];
      std::snprintf(line, sizeof line, "%-16s %-13.6e %-13.6e %.6f\n", a.name.c_str(), a.hf_error,
                    a.mse, a.band_amplitude);
      table += line;
      MetricReport r;
      r.name = "sr/" + a.name + "/hf_error";
      r.value = a.hf_error;
      r.hi = 4.0;
      r.count = a.per_sample.size();
      r.seed = seed;
      r.per_sample = a.per_sample;
      r.diagnostics = {{"mse", num(a.mse)}, {"band_amplitude", num(a.band_amplitude)}};
      reports.push_back(r);
    }
    char line[64];
    std::snprintf(line, sizeof line, "%.6f", horizontal_band_amplitude(
                                                 set_sr.truth[0], c.sr.high(), set_sr.subject.tex_freq));
    table += std::string("reference band_amp (first render): ") + line + "\n";
  } else {
    throw ValueError("unknown ablation '" + kind +
                     "' (expected prior-preservation, class-noun or sr-noise)");
  }
  write_text(dir / (kind + ".txt"), table);
  run.artifact(dir / (kind + ".txt"));
  run.log(table);
  save_report(run, "ablate-" + kind, reports);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subjectlab: subject-driven personalization of a toy text-to-image diffusion model"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "experiment config (JSON)");
    sub->add_option("-s,--set", common.overrides, "override a config field: path.to.key=value");
    sub->add_option("-o,--out", common.out, "output root (default: $SUBJECTLAB_OUT or config)");
    sub->add_option("-j,--workers", common.workers, "threads for sampling and evaluation");
  };

  std::size_t gen_count = 256;
  auto* gen = app.add_subcommand("gen-data", "render a captioned toy dataset");
  gen->add_option("--count", gen_count, "number of renders");
  auto* vocab = app.add_subcommand("build-vocab", "build the frequency-ranked vocabulary");
  auto* mine = app.add_subcommand("mine-token", "draw a rare-token identifier");
  auto* pre = app.add_subcommand("pretrain", "pretrain the base text-to-image model");

  PersonalizeFlags pf;
  auto* pers = app.add_subcommand("personalize", "fine-tune on a subject set");
  pers->add_option("--subject-dir", pf.subject_dir, "directory of subject PPM images");
  pers->add_option("--class-noun", pf.class_noun, "class noun of the subject");
  pers->add_option("--identifier", pf.identifier, "identifier surface (default: identifier.json)");
  pers->add_option("--lambda", pf.lambda, "prior-preservation weight");
  pers->add_option("--epochs", pf.epochs, "fine-tuning epochs");
  pers->add_option("--mode", pf.mode, "naive | prior-preservation");
  pers->add_option("--caption", pf.caption, "correct | none | wrong");
  pers->add_option("--wrong-noun", pf.wrong_noun, "noun used by --caption wrong");
  pers->add_option("--base", pf.base, "base checkpoint");
  pers->add_option("--name", pf.name, "output checkpoint stem");

  SampleFlags sf;
  auto* sample = app.add_subcommand("sample", "sample images for a prompt");
  sample->add_option("--checkpoint", sf.checkpoint, "model checkpoint");
  sample->add_option("--prompt", sf.prompt, "prompt text")->required();
  sample->add_option("--count", sf.count, "number of samples");
  sample->add_option("--seed", sf.seed, "batch seed (default: derived from the run seed)");
  sample->add_option("--sampler", sf.sampler, "ddim | ancestral");
  sample->add_option("--steps", sf.steps, "sampler steps");
  sample->add_option("--columns", sf.columns, "grid columns");
  sample->add_option("--name", sf.name, "output folder name");

  std::string sr_base;
  auto* srt = app.add_subcommand("sr-train", "pretrain the super-resolution stage");
  srt->add_option("--base", sr_base, "text model checkpoint");

  double ft_level = -1.0;
  std::string ft_sr, ft_base, ft_id;
  auto* srf = app.add_subcommand("sr-finetune", "fine-tune the SR stage on the subject");
  srf->add_option("--aug-level", ft_level, "noise augmentation level");
  srf->add_option("--sr", ft_sr, "SR checkpoint");
  srf->add_option("--base", ft_base, "text model checkpoint");
  srf->add_option("--identifier", ft_id, "identifier surface");

  SrApplyFlags af;
  auto* sra = app.add_subcommand("sr-apply", "super-resolve low-res images");
  sra->add_option("--sr", af.sr, "SR checkpoint");
  sra->add_option("--base", af.base, "text model checkpoint");
  sra->add_option("--input", af.input, "low-res PPM file or directory")->required();
  sra->add_option("--prompt", af.prompt, "conditioning prompt")->required();
  sra->add_option("--aug-level", af.aug_level, "noise augmentation level");
  sra->add_option("--seed", af.seed, "seed");
  sra->add_option("--steps", af.steps, "sampler steps");
  sra->add_option("--name", af.name, "output folder name");

  std::string ev_ckpt, ev_base, ev_id;
  auto* evaluate = app.add_subcommand("evaluate", "drift, fidelity and context metrics");
  evaluate->add_option("--checkpoint", ev_ckpt, "fine-tuned checkpoint");
  evaluate->add_option("--base", ev_base, "base checkpoint");
  evaluate->add_option("--identifier", ev_id, "identifier surface");

  std::string ablation;
  auto* ablate = app.add_subcommand("ablate", "run an ablation and emit a comparison table");
  ablate->add_option("kind", ablation, "prior-preservation | class-noun | sr-noise")->required();

  for (auto* s : {gen, vocab, mine, pre, pers, sample, srt, srf, sra, evaluate, ablate})
    add_common(s);

  CLI11_PARSE(app, argc, argv);
  try {
    const std::string name = app.get_subcommands().front()->get_name();
    Run run(name, common);
    if (gen->parsed()) cmd_gen_data(run, gen_count);
    if (vocab->parsed()) cmd_build_vocab(run);
    if (mine->parsed()) cmd_mine_token(run);
    if (pre->parsed()) cmd_pretrain(run);
    if (pers->parsed()) cmd_personalize(run, pf);
    if (sample->parsed()) cmd_sample(run, sf);
    if (srt->parsed()) cmd_sr_train(run, sr_base);
    if (srf->parsed()) cmd_sr_finetune(run, ft_level, ft_sr, ft_base, ft_id);
    if (sra->parsed()) cmd_sr_apply(run, af);
    if (evaluate->parsed()) cmd_evaluate(run, ev_ckpt, ev_base, ev_id);
    if (ablate->parsed()) cmd_ablate(run, ablation);
    run.finish();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
