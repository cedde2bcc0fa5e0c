// Acceptance harness: one PASS/FAIL line per criterion.
//   acceptance [--dir DIR] [--workers N] [criterion ...]
// DIR caches the pretrained base and SR checkpoints between runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gaussian_oracle.hpp"
#include "subjectlab/error.hpp"
#include "subjectlab/recipe.hpp"
#include "test_nets.hpp"
#include "vocab_oracle.hpp"

using namespace subjectlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

struct Context {
  fs::path dir;
  std::size_t workers = 1;
};

// ---- 1 ----

Outcome numerics(const Context&) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (const auto& c : testnets::gradient_cases(seed)) {
      const auto ev = evaluate_with_gradients(*c.net, c.params, c.inputs, c.upstream);
      const auto fd = finite_difference_grad(*c.net, c.params, c.inputs, c.upstream, 1e-2f);
      const double e = fd.non_finite.empty() ? relative_error(ev.param_grads, fd.grads) : INFINITY;
      if (!(e <= worst)) {
        worst = e;
        worst_case = c.name + "/seed" + std::to_string(seed);
      }
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 10.0, "max rel err " + num(worst) + " (" + worst_case +
                                           ", tol 1e-3), " + num(secs, 3) + " s (limit 10)"};
}

// ---- 2 ----

Outcome schedule(const Context&) {
  const NoiseSchedule s;
  double vp = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const auto c = schedule_coeffs(s, i / 1000.0);
    vp = std::max(vp, std::abs(c.alpha * c.alpha + c.sigma * c.sigma - 1.0));
  }
  Rng rng(1);
  Tensor x({768}), eps({768});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : eps.data()) v = static_cast<float>(rng.normal());
  const Tensor z0 = forward_diffuse(s, x, 0.0, eps).z;
  const Tensor z1 = forward_diffuse(s, x, 1.0, eps).z;
  double e0 = 0.0, e1 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e0 = std::max(e0, double(std::abs(z0[i] - x[i])));
    e1 = std::max(e1, double(std::abs(z1[i] - eps[i])));
  }
  return {vp < 1e-6 && e0 < 1e-6 && e1 < 1e-6,
          "max |a^2+s^2-1| " + num(vp) + ", |z0-x| " + num(e0) + ", |z1-eps| " + num(e1) +
              " (tol 1e-6)"};
}

// ---- 3 ----

Outcome samplers(const Context&) {
  const auto t0 = Clock::now();
  const testnets::GaussianPosteriorMean oracle(2.0, 0.25);
  bool ok = true;
  std::string detail;
  for (const auto& [kind, steps, seed] :
       {std::tuple{SamplerKind::Ddim, 64, 5ull}, std::tuple{SamplerKind::Ancestral, 128, 6ull}}) {
    const auto xs = sample_batch(oracle, {}, {}, SamplerSpec::uniform(kind, steps, false), 1, 20000, seed);
    const auto m = testnets::moments(xs);
    const bool good = std::abs(m.mean - 2.0) < 0.05 && std::abs(m.var - 0.25) / 0.25 < 0.10;
    ok = ok && good;
    detail += std::string(kind == SamplerKind::Ddim ? "ddim" : "ancestral") + " mean " +
              num(m.mean) + " var " + num(m.var) + "; ";
  }
  // Bit determinism of DDIM on the default denoiser.
  DenoiserConfig dc;
  dc.cond_dim = 8;
  const auto model = init_denoiser(dc);
  const DenoiserNet net(dc);
  const Tensor cond({1, 8}, 0.3f);
  const auto spec = SamplerSpec::uniform(SamplerKind::Ddim, 16);
  const auto a = sample_batch(net, model.params, {cond}, spec, dc.image_size(), 6, 3, 1, 2);
  const auto b = sample_batch(net, model.params, {cond}, spec, dc.image_size(), 6, 3, 1, 2);
  const auto c = sample_batch(net, model.params, {cond}, spec, dc.image_size(), 6, 3, 4, 1);
  const bool det = a == b && a == c;
  const double secs = seconds_since(t0);
  return {ok && det && secs < 60.0, detail + "ddim bit-deterministic " + (det ? "yes" : "no") +
                                        ", " + num(secs, 3) + " s (limit 60)"};
}

// ---- 4 ----

Outcome vocabulary(const Context&) {
  std::string detail;
  bool ok = true;
  auto check_rank = [&](const std::vector<std::string>& corpus, const std::string& label) {
    VocabOptions opt;
    opt.max_size = 1 << 30;
    const Vocabulary v = build_vocab(corpus, opt);
    const auto expected = testnets::brute_force_ranking(corpus, opt.max_piece);
    bool same = v.size() == expected.size() + kReservedTokens;
    for (std::size_t i = 0; same && i < expected.size(); ++i) {
      const int id = static_cast<int>(i + kReservedTokens);
      same = v.surface(id) == expected[i].first && v.count(id) == expected[i].second;
    }
    ok = ok && same;
    detail += label + " rank order " + (same ? "matches" : "differs") + "; ";
  };
  check_rank(testnets::random_corpus(100000, 23), "random 1e5 lines");
  check_rank(vocab_corpus(), "toy corpus");

  const Vocabulary v = build_vocab(vocab_corpus());
  const RankRange range = scaled_rank_range({}, v.size());
  std::size_t bad = 0;
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const Identifier id = mine_rare_identifier(v, 1 + trial % 3, range, rng);
    std::set<int> distinct(id.ids.begin(), id.ids.end());
    bool good = distinct.size() == id.ids.size();
    for (int t : id.ids) {
      const std::string& s = v.surface(t);
      good = good && std::size_t(t) >= range.lo && std::size_t(t) <= range.hi &&
             utf8_length(s) <= 3 && s.find(' ') == std::string::npos;
    }
    good = good && tokenize_ids(v, id.surface) == id.ids && detokenize(v, id.ids) == id.surface;
    bad += !good;
  }
  ok = ok && bad == 0;
  detail += "mined identifiers violating constraints " + std::to_string(bad) + "/300; ";

  // Exhaustive draws: a range holding exactly three eligible tokens, k = 3.
  RankRange small{range.lo, range.lo};
  while (eligible_identifier_tokens(v, small).size() < 3) ++small.hi;
  const auto eligible = eligible_identifier_tokens(v, small);
  std::set<TokenSeq> orders;
  bool perm = true;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng ex(derive_seed(37, seed));
    TokenSeq ids = mine_rare_identifier(v, 3, small, ex).ids;
    orders.insert(ids);
    std::sort(ids.begin(), ids.end());
    perm = perm && ids == eligible;
  }
  // Orders whose concatenation re-tokenizes differently are never valid draws.
  std::set<TokenSeq> valid;
  TokenSeq p = eligible;
  do {
    if (tokenize_ids(v, detokenize(v, p)) == p) valid.insert(p);
  } while (std::next_permutation(p.begin(), p.end()));
  ok = ok && perm && orders == valid;
  detail += "exhaustive k=3 draws are permutations " + std::string(perm ? "yes" : "no") + " (" +
            std::to_string(orders.size()) + " of " + std::to_string(valid.size()) +
            " round-tripping orders seen)";
  return {ok, detail};
}

// ---- 5-7: personalization on the reference recipe ----

struct Recipe {
  ExperimentConfig config;
  Vocabulary vocab;
  Model base;
  Identifier identifier;
  SubjectSet subjects;
};

const Recipe& recipe(const Context& ctx) {
  static const Recipe r = [&] {
    ExperimentConfig c;
    Vocabulary v = recipe_vocab(c);
    const auto t0 = Clock::now();
    std::printf("  (pretraining base into %s if not cached)\n", (ctx.dir / "base.ckpt").c_str());
    std::fflush(stdout);
    Model base = cached_pretrain(c, v, ctx.dir / "base.ckpt");
    std::printf("  (base ready after %.1f s)\n", seconds_since(t0));
    Identifier id = recipe_identifier(c, v);
    SubjectSet set = recipe_subject_set(c, id);
    return Recipe{c, std::move(v), std::move(base), std::move(id), std::move(set)};
  }();
  return r;
}

struct PersonalizationArms {
  ArmReport naive, prior;
  double seconds = 0.0;
};

const PersonalizationArms& personalization(const Context& ctx) {
  static const PersonalizationArms arms = [&] {
    const Recipe& r = recipe(ctx);
    const auto t0 = Clock::now();
    const PriorSet prior = recipe_prior_set(r.config, r.base, r.vocab, r.subjects.class_noun, ctx.workers);
    FinetuneConfig naive = r.config.finetune, pp = r.config.finetune;
    naive.mode = FinetuneMode::Naive;
    naive.lambda = 0.0;
    pp.mode = FinetuneMode::PriorPreservation;
    pp.lambda = 1.0;
    std::map<std::string, MetricReport> cache;
    PersonalizationArms out;
    const auto a = finetune(r.base, r.vocab, r.subjects, nullptr, naive);
    out.naive = evaluate_arm(r.config, "naive", r.base, a.model, r.vocab, r.subjects, a.caption, {},
                             cache, ctx.workers);
    const auto b = finetune(r.base, r.vocab, r.subjects, &prior, pp);
    out.prior = evaluate_arm(r.config, "prior", r.base, b.model, r.vocab, r.subjects, b.caption, {},
                             cache, ctx.workers);
    out.seconds = seconds_since(t0);
    std::printf("%s", arm_table({out.naive, out.prior}).c_str());
    return out;
  }();
  return arms;
}

Outcome drift(const Context& ctx) {
  const auto& a = personalization(ctx);
  const double n = a.naive.drift.value, p = a.prior.drift.value;
  return {n < 0.5 && p > 0.8 && a.seconds < 1800.0,
          "naive drift " + num(n) + " (< 0.5), prior-preservation drift " + num(p) +
              " (> 0.8), base diversity " + num(a.naive.drift.per_sample[0]) + ", both arms " +
              num(a.seconds, 4) + " s (limit 1800)"};
}

Outcome overfitting(const Context& ctx) {
  const auto& a = personalization(ctx);
  const double acc = a.prior.mean_context_accuracy, fid = a.prior.fidelity.value;
  const double naive_acc = a.naive.mean_context_accuracy;
  return {acc >= 0.75 && fid >= 0.7 && naive_acc < acc,
          "prior-preservation context accuracy " + num(acc) + " (>= 0.75), fidelity " + num(fid) +
              " (>= 0.7); naive context accuracy " + num(naive_acc) + " (< prior arm)"};
}

Outcome class_noun(const Context& ctx) {
  const Recipe& r = recipe(ctx);
  const std::string wrong = class_nouns()[(class_id(r.subjects.class_noun) + 1) % kNumClasses];
  ArmEvalOptions opts;
  opts.contexts = false;
  opts.other_noun = wrong;
  std::map<std::string, MetricReport> cache;
  std::vector<ArmReport> arms;
  for (CaptionMode m : {CaptionMode::Correct, CaptionMode::NoNoun, CaptionMode::WrongNoun}) {
    FinetuneConfig fc = r.config.finetune;
    fc.mode = FinetuneMode::Naive;
    fc.caption = m;
    fc.wrong_noun = wrong;
    const auto res = finetune(r.base, r.vocab, r.subjects, nullptr, fc);
    arms.push_back(evaluate_arm(r.config, "noun=" + caption_mode_name(m), r.base, res.model,
                                r.vocab, r.subjects, res.caption, opts, cache, ctx.workers));
  }
  std::printf("%s", arm_table(arms).c_str());
  const double fc = arms[0].fidelity.value, fn = arms[1].fidelity.value;
  const double dc = arms[0].other_drift->value, dn = arms[1].other_drift->value,
               dw = arms[2].other_drift->value;
  return {fc >= fn && dw < dc && dw < dn,
          "fidelity correct " + num(fc) + " >= none " + num(fn) + "; drift on '" + wrong +
              "': wrong " + num(dw) + " lowest of (correct " + num(dc) + ", none " + num(dn) + ")"};
}

// ---- 8 ----

SrModel cached_sr(const Recipe& r, const fs::path& path) {
  const std::string hash = config_hash(r.config);
  if (fs::exists(path)) {
    const Checkpoint ck = load_checkpoint(path);
    const auto it = ck.meta.find("config_hash");
    if (it != ck.meta.end() && it->second == hash) return sr_from_checkpoint(ck);
  }
  SrConfig sc = r.config.sr;
  sc.denoiser.cond_dim = r.base.config.encoder.cond_dim;
  SrModel sr = train_sr(sc, r.base, r.vocab, r.config.sr_train);
  save_sr(path, sr, {{"config_hash", hash}});
  return sr;
}

Outcome sr_noise(const Context& ctx) {
  const Recipe& r = recipe(ctx);
  const auto t0 = Clock::now();
  const SrModel sr = cached_sr(r, ctx.dir / "sr.ckpt");
  std::printf("  (sr model ready after %.1f s)\n", seconds_since(t0));
  const SrEvalSet set = recipe_sr_eval_set(r.config, r.base, r.vocab, r.identifier);
  const std::uint64_t seed = run_seeds(r.config.seed).sr_eval;
  const auto& spec = r.config.eval_sampler;
  const auto none = evaluate_sr("none", sr, set, r.config.sr_train.aug_level, spec, seed, ctx.workers);
  std::map<double, SrArmReport> tuned;
  for (double level : {kTrainAugLevel, kFinetuneAugLevel}) {
    SrFinetuneConfig fc = r.config.sr_finetune;
    fc.aug_level = level;
    const SrModel m = finetune_sr(sr, set.train_pairs, fc);
    tuned[level] = evaluate_sr("tuned", m, set, level, spec, seed, ctx.workers);
  }
  const double e5 = tuned[kFinetuneAugLevel].hf_error, e3 = tuned[kTrainAugLevel].hf_error;
  const double e0 = none.hf_error;
  return {e5 < e3 && e3 < e0, "hf error @1e-5 " + num(e5) + " < @1e-3 " + num(e3) +
                                  " < no fine-tune " + num(e0) + " over " +
                                  std::to_string(none.per_sample.size()) + " outputs"};
}

// ---- 9 ----

struct Artifacts {
  ParameterSet base, tuned;
  std::vector<Tensor> prior, samples;
};

// A scaled-down end-to-end run: pretrain, prior set, fine-tune, sample.
Artifacts small_run(std::uint64_t master) {
  ExperimentConfig c;
  c.seed = master;
  c = config_from_json(config_to_json(c));
  c.model.denoiser.hidden = 32;
  c.model.denoiser.blocks = 1;
  c.model.encoder.embed_dim = 16;
  c.model.encoder.hidden = 16;
  c.model.encoder.cond_dim = 16;
  c.model.denoiser.cond_dim = 16;
  c.pretrain.steps = 20;
  c.pretrain.batch = 4;
  c.pretrain.warmup = 2;
  c.finetune.epochs = 5;
  c.prior_per_image = 2;
  c.prior_sampler = SamplerSpec::uniform(SamplerKind::Ancestral, 8);
  const Vocabulary v = recipe_vocab(c);
  const Model base = recipe_pretrain(c, v).model;
  const Identifier id = recipe_identifier(c, v);
  const SubjectSet set = recipe_subject_set(c, id);
  const PriorSet prior = recipe_prior_set(c, base, v, set.class_noun, 2);
  const auto tuned = finetune(base, v, set, &prior, c.finetune);
  const auto samples = sample_prompt(tuned.model, tokenize(v, tuned.caption, c.model.encoder.max_len),
                                     SamplerSpec::uniform(SamplerKind::Ddim, 8), 4,
                                     run_seeds(c.seed).eval, 2);
  return {base.params, tuned.model.params, prior.images, samples};
}

Outcome persistence(const Context& ctx) {
  const Recipe& r = recipe(ctx);
  const fs::path path = ctx.dir / "roundtrip.ckpt";
  save_model(path, r.base);
  const Model back = load_model(path);
  fs::remove(path);
  const TokenSeq tokens = tokenize(r.vocab, "a blob", r.base.config.encoder.max_len);
  const auto spec = SamplerSpec::uniform(SamplerKind::Ddim, 16);
  const bool same_params = back.params == r.base.params;
  const bool same_samples = sample_prompt(back, tokens, spec, 4, 77, ctx.workers) ==
                            sample_prompt(r.base, tokens, spec, 4, 77, ctx.workers);
  const Artifacts a = small_run(3), b = small_run(3);
  const bool regen = a.base == b.base && a.tuned == b.tuned && a.prior == b.prior &&
                     a.samples == b.samples;
  return {same_params && same_samples && regen,
          std::string("checkpoint params ") + (same_params ? "identical" : "differ") +
              ", samples after reload " + (same_samples ? "identical" : "differ") +
              ", end-to-end rerun " + (regen ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.dir = "acceptance";
  ctx.workers = default_workers();
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--dir" && i + 1 < argc)
      ctx.dir = argv[++i];
    else if (a == "--workers" && i + 1 < argc)
      ctx.workers = std::max(1, std::stoi(argv[++i]));
    else
      wanted.insert(std::stoi(a));
  }
  fs::create_directories(ctx.dir);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria = {
      {"numerics", numerics},     {"schedule", schedule},        {"samplers", samplers},
      {"vocabulary", vocabulary}, {"language drift", drift},     {"overfitting", overfitting},
      {"class noun", class_noun}, {"sr noise", sr_noise},        {"persistence", persistence}};

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %-15s %s  %s  [%.1f s]\n", id, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
