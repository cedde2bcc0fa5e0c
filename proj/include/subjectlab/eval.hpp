#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subjectlab/model.hpp"
#include "subjectlab/toyworld.hpp"

namespace subjectlab {

// Normalized subject error:
//   0.4 * hue_dist / 0.5 + 0.4 * mean|dr| / 0.25 + 0.2 * |df| / 4
// where the denominators are the largest possible differences.
inline constexpr double kFidelityHueWeight = 0.4;
inline constexpr double kFidelityRadiiWeight = 0.4;
inline constexpr double kFidelityTextureWeight = 0.2;
inline constexpr double kFidelityThreshold = 0.15;

double subject_error(const SubjectParams& estimate, const SubjectParams& truth);

struct MetricReport {
  std::string name;
  double value = 0.0;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> per_sample;
  // Free-form "key=value" diagnostics, in insertion order.
  std::vector<std::pair<std::string, std::string>> diagnostics;

  std::string to_json() const;
  std::string to_text() const;
};

// invert_render over every image, spread across `workers` threads. The
// result order matches the input.
std::vector<Inversion> invert_all(const std::vector<Tensor>& images, const ImageDims& dims,
                                  std::size_t workers = 1);

// Fraction of images whose inversion has the subject's class and a subject
// error below kFidelityThreshold. Fits above kRejectResidual count as
// failures. per_sample holds the subject error (or 1 for rejected fits).
MetricReport subject_fidelity(const std::vector<Tensor>& images, const SubjectParams& truth,
                              std::size_t workers = 1);
MetricReport subject_fidelity(const std::vector<Inversion>& fits, const SubjectParams& truth);

// Dispersion of recovered subjects relative to the sampling prior, averaged
// over four dimensions each clamped to [0,1]:
//   hue and phase   1 - |mean of exp(i angle)|        (circular)
//   radii           mean std over the 5 radii / (0.25 / sqrt 12)
//   frequency       std / sqrt 2
// Fits above kRejectResidual are excluded; fewer than two fits give 0.
MetricReport prior_diversity(const std::vector<Inversion>& fits);
MetricReport prior_diversity(const std::vector<Tensor>& images, std::size_t workers = 1);

// Samples "a [noun]" n times (n >= 16) and measures their diversity.
MetricReport prior_diversity(const Model& model, const Vocabulary& vocab, const std::string& noun,
                             std::size_t n, const SamplerSpec& spec, std::uint64_t seed,
                             std::size_t workers = 1);

// diversity(tuned) / diversity(base) on "a [noun]", clamped to [0,2]. Throws
// ValueError when the base diversity is below 0.05.
MetricReport language_drift_ratio(const Model& base, const Model& tuned, const Vocabulary& vocab,
                                  const std::string& noun, std::size_t n,
                                  const SamplerSpec& spec, std::uint64_t seed,
                                  std::size_t workers = 1);
MetricReport language_drift_ratio(const MetricReport& base_diversity,
                                  const MetricReport& tuned_diversity);

// Fraction of images whose inverted context is `context`.
MetricReport context_accuracy(const std::vector<Tensor>& images, int context,
                              std::size_t workers = 1);
MetricReport context_accuracy(const std::vector<Inversion>& fits, int context);

SamplerSpec default_eval_sampler();

}  // namespace subjectlab
