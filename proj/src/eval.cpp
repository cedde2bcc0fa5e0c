#include "subjectlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "subjectlab/error.hpp"

namespace subjectlab {

double subject_error(const SubjectParams& est, const SubjectParams& truth) {
  double dr = 0.0;
  for (int k = 0; k < kNumRadii; ++k) dr += std::abs(est.radii[k] - truth.radii[k]);
  dr /= kNumRadii;
  const double df = std::abs(est.tex_freq - truth.tex_freq);
  return kFidelityHueWeight * hue_distance(est.hue, truth.hue) / 0.5 +
         kFidelityRadiiWeight * dr / (kRadiusMax - kRadiusMin) +
         kFidelityTextureWeight * df / (kFreqMax - kFreqMin);
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = name;
  j["value"] = value;
  j["range"] = {lo, hi};
  j["count"] = count;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["per_sample"] = per_sample;
  nlohmann::ordered_json d = nlohmann::ordered_json::object();
  for (const auto& [k, v] : diagnostics) d[k] = v;
  j["diagnostics"] = d;
  return j.dump(2) + "\n";
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(6);
  os << name << " = " << value << "  (range [" << lo << ", " << hi << "], n=" << count
     << ", seed=" << seed;
  if (!config_hash.empty()) os << ", config=" << config_hash;
  os << ")\n";
  for (const auto& [k, v] : diagnostics) os << "  " << k << ": " << v << "\n";
  return os.str();
}

std::vector<Inversion> invert_all(const std::vector<Tensor>& images, const ImageDims& dims,
                                  std::size_t workers) {
  std::vector<Inversion> out(images.size());
  workers = std::max<std::size_t>(1, std::min(workers, images.size()));
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < images.size(); i += workers) out[i] = invert_render(images[i], dims);
  };
  if (workers == 1) {
    run(0);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  for (auto& t : pool) t.join();
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

double circular_dispersion(const std::vector<double>& turns) {
  std::complex<double> m = 0.0;
  for (double a : turns) m += std::polar(1.0, 2.0 * std::numbers::pi * a);
  return 1.0 - std::abs(m) / static_cast<double>(turns.size());
}

double stddev(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

MetricReport subject_fidelity(const std::vector<Inversion>& fits, const SubjectParams& truth) {
  if (fits.empty()) throw ValueError("subject_fidelity: no images");
  MetricReport r;
  r.name = "subject_fidelity";
  r.count = fits.size();
  std::size_t pass = 0, rejected = 0, wrong_class = 0;
  for (const auto& f : fits) {
    if (f.residual > kRejectResidual) {
      ++rejected;
      r.per_sample.push_back(1.0);
      continue;
    }
    const double e = subject_error(f.subject, truth);
    r.per_sample.push_back(e);
    if (f.subject.class_id != truth.class_id)
      ++wrong_class;
    else if (e < kFidelityThreshold)
      ++pass;
  }
  r.value = static_cast<double>(pass) / static_cast<double>(fits.size());
  r.diagnostics = {{"threshold", fmt(kFidelityThreshold)},
                   {"rejected_fits", std::to_string(rejected)},
                   {"wrong_class", std::to_string(wrong_class)}};
  return r;
}

MetricReport subject_fidelity(const std::vector<Tensor>& images, const SubjectParams& truth,
                              std::size_t workers) {
  return subject_fidelity(invert_all(images, ImageDims{}, workers), truth);
}

MetricReport prior_diversity(const std::vector<Inversion>& fits) {
  if (fits.empty()) throw ValueError("prior_diversity: no images");
  MetricReport r;
  r.name = "prior_diversity";
  r.count = fits.size();
  std::vector<const SubjectParams*> ok;
  for (const auto& f : fits)
    if (f.residual <= kRejectResidual) ok.push_back(&f.subject);
  r.diagnostics.push_back({"fitted", std::to_string(ok.size())});
  if (ok.size() < 2) {
    r.diagnostics.push_back({"note", "fewer than two fitted images"});
    return r;
  }
  std::vector<double> hue, phase, freq;
  for (const auto* s : ok) {
    hue.push_back(s->hue);
    phase.push_back(s->tex_phase / (2.0 * std::numbers::pi));
    freq.push_back(s->tex_freq);
  }
  double radii = 0.0;
  for (int k = 0; k < kNumRadii; ++k) {
    std::vector<double> v;
    for (const auto* s : ok) v.push_back(s->radii[k]);
    radii += stddev(v);
  }
  const double prior_radius_sd = (kRadiusMax - kRadiusMin) / std::sqrt(12.0);
  const double prior_freq_sd =
      std::sqrt(((kFreqMax - kFreqMin + 1) * (kFreqMax - kFreqMin + 1) - 1) / 12.0);
  const double d_hue = std::clamp(circular_dispersion(hue), 0.0, 1.0);
  const double d_radii = std::clamp(radii / kNumRadii / prior_radius_sd, 0.0, 1.0);
  const double d_freq = std::clamp(stddev(freq) / prior_freq_sd, 0.0, 1.0);
  const double d_phase = std::clamp(circular_dispersion(phase), 0.0, 1.0);
  r.per_sample = {d_hue, d_radii, d_freq, d_phase};
  r.value = (d_hue + d_radii + d_freq + d_phase) / 4.0;
  r.diagnostics.push_back({"hue", fmt(d_hue)});
  r.diagnostics.push_back({"radii", fmt(d_radii)});
  r.diagnostics.push_back({"frequency", fmt(d_freq)});
  r.diagnostics.push_back({"phase", fmt(d_phase)});
  std::array<std::size_t, kNumClasses> classes{};
  for (const auto* s : ok) ++classes[s->class_id];
  for (int c = 0; c < kNumClasses; ++c)
    r.diagnostics.push_back({"class_" + class_nouns()[c], std::to_string(classes[c])});
  return r;
}

MetricReport prior_diversity(const std::vector<Tensor>& images, std::size_t workers) {
  return prior_diversity(invert_all(images, ImageDims{}, workers));
}

SamplerSpec default_eval_sampler() { return SamplerSpec::uniform(SamplerKind::Ddim, 64); }

MetricReport prior_diversity(const Model& model, const Vocabulary& vocab, const std::string& noun,
                             std::size_t n, const SamplerSpec& spec, std::uint64_t seed,
                             std::size_t workers) {
  if (n < 16) throw ValueError("prior_diversity: n must be at least 16");
  check_vocabulary(model, vocab);
  const std::string prompt = make_caption(noun, std::nullopt, std::nullopt);
  const auto images = sample_prompt(model, tokenize(vocab, prompt, model.config.encoder.max_len),
                                    spec, n, seed, workers);
  MetricReport r = prior_diversity(images, workers);
  r.seed = seed;
  r.diagnostics.insert(r.diagnostics.begin(), {"prompt", prompt});
  return r;
}

MetricReport language_drift_ratio(const MetricReport& base, const MetricReport& tuned) {
  if (base.value < 0.05)
    throw ValueError("base model unusable: prior diversity " + fmt(base.value) + " < 0.05");
  MetricReport r;
  r.name = "language_drift_ratio";
  r.lo = 0.0;
  r.hi = 2.0;
  r.count = tuned.count;
  r.seed = tuned.seed;
  r.value = std::clamp(tuned.value / base.value, 0.0, 2.0);
  r.per_sample = {base.value, tuned.value};
  r.diagnostics = {{"base_diversity", fmt(base.value)}, {"tuned_diversity", fmt(tuned.value)}};
  return r;
}

MetricReport language_drift_ratio(const Model& base, const Model& tuned, const Vocabulary& vocab,
                                  const std::string& noun, std::size_t n,
                                  const SamplerSpec& spec, std::uint64_t seed,
                                  std::size_t workers) {
  if (!base.params.same_layout(tuned.params))
    throw ValueError("language_drift_ratio: models differ in architecture");
  const auto b = prior_diversity(base, vocab, noun, n, spec, seed, workers);
  if (b.value < 0.05)
    throw ValueError("base model unusable: prior diversity " + fmt(b.value) + " < 0.05");
  const auto t = prior_diversity(tuned, vocab, noun, n, spec, seed, workers);
  MetricReport r = language_drift_ratio(b, t);
  r.diagnostics.insert(r.diagnostics.begin(), {"noun", noun});
  return r;
}

MetricReport context_accuracy(const std::vector<Inversion>& fits, int context) {
  if (context < 0 || context >= kNumContexts) throw ValueError("unknown context id");
  if (fits.empty()) throw ValueError("context_accuracy: no images");
  MetricReport r;
  r.name = "context_accuracy";
  r.count = fits.size();
  std::array<std::size_t, kNumContexts> seen{};
  std::size_t hit = 0;
  for (const auto& f : fits) {
    ++seen[f.context.context_id];
    const bool ok = f.context.context_id == context;
    hit += ok;
    r.per_sample.push_back(ok ? 1.0 : 0.0);
  }
  r.value = static_cast<double>(hit) / static_cast<double>(fits.size());
  r.diagnostics.push_back({"prompted", context_names()[context]});
  for (int c = 0; c < kNumContexts; ++c)
    r.diagnostics.push_back({"seen_" + context_names()[c], std::to_string(seen[c])});
  return r;
}

MetricReport context_accuracy(const std::vector<Tensor>& images, int context,
                              std::size_t workers) {
  return context_accuracy(invert_all(images, ImageDims{}, workers), context);
}

}  // namespace subjectlab
