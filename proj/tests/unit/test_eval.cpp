#include <gtest/gtest.h>

#include <cmath>

#include "subjectlab/error.hpp"
#include "subjectlab/eval.hpp"

using namespace subjectlab;

namespace {

std::vector<Tensor> renders_of(const SubjectParams& s, int context, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    ContextParams c = sample_context(rng);
    c.context_id = context;
    out.push_back(render(s, c, ImageDims{}));
  }
  return out;
}

}  // namespace

TEST(SubjectError, WeightedNormalizedDistance) {
  SubjectParams a;
  a.hue = 0.95;
  a.radii = {0.3, 0.3, 0.3, 0.3, 0.3};
  a.tex_freq = 2;
  SubjectParams b = a;
  b.hue = 0.05;
  b.radii = {0.4, 0.3, 0.3, 0.3, 0.2};
  b.tex_freq = 6;
  // hue wraps to 0.1; mean |dr| = 0.04; |df| = 4.
  const double expected = 0.4 * 0.1 / 0.5 + 0.4 * 0.04 / 0.25 + 0.2 * 4.0 / 4.0;
  EXPECT_NEAR(subject_error(a, b), expected, 1e-12);
  EXPECT_EQ(subject_error(a, a), 0.0);
}

TEST(Fidelity, RendersOfTruthScoreOne) {
  Rng rng(1);
  const SubjectParams truth = sample_subject(rng, 1);
  const auto imgs = renders_of(truth, 2, 12, 2);
  const auto r = subject_fidelity(imgs, truth, 2);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.count, 12u);
  SubjectParams other = truth;
  other.class_id = 0;
  EXPECT_EQ(subject_fidelity(imgs, other).value, 0.0);
  EXPECT_THROW(subject_fidelity(std::vector<Tensor>{}, truth), ValueError);
}

TEST(Fidelity, RejectedFitsCountAsFailures) {
  Rng rng(3);
  const SubjectParams truth = sample_subject(rng, 0);
  auto imgs = renders_of(truth, 0, 3, 4);
  Tensor noise({ImageDims{}.size()});
  for (auto& v : noise.data()) v = static_cast<float>(rng.uniform(-1, 1));
  imgs.push_back(noise);
  const auto r = subject_fidelity(imgs, truth);
  EXPECT_DOUBLE_EQ(r.value, 0.75);
  EXPECT_EQ(r.per_sample[3], 1.0);
}

TEST(Diversity, PriorDrawsNearOneAndCopiesZero) {
  Rng rng(5);
  std::vector<Tensor> varied;
  for (int i = 0; i < 200; ++i)
    varied.push_back(render(sample_subject(rng, i % 3), sample_context(rng), ImageDims{}));
  EXPECT_GT(prior_diversity(varied, 4).value, 0.9);
  const SubjectParams s = sample_subject(rng, 2);
  EXPECT_NEAR(prior_diversity(renders_of(s, 1, 20, 6)).value, 0.0, 0.02);
}

TEST(Diversity, FewFitsGiveZero) {
  Rng rng(7);
  Tensor noise({ImageDims{}.size()});
  for (auto& v : noise.data()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto r = prior_diversity(std::vector<Tensor>{noise, noise, noise});
  EXPECT_EQ(r.value, 0.0);
}

TEST(Drift, RatioOfDiversities) {
  MetricReport base, tuned;
  base.value = 0.8;
  tuned.value = 0.8;
  EXPECT_DOUBLE_EQ(language_drift_ratio(base, tuned).value, 1.0);
  tuned.value = 0.2;
  EXPECT_DOUBLE_EQ(language_drift_ratio(base, tuned).value, 0.25);
  tuned.value = 3.0;
  EXPECT_DOUBLE_EQ(language_drift_ratio(base, tuned).value, 2.0);
  base.value = 0.01;
  EXPECT_THROW(language_drift_ratio(base, tuned), ValueError);
}

TEST(ContextAccuracy, CorrectAndWrongContext) {
  Rng rng(8);
  const auto imgs = renders_of(sample_subject(rng, 0), 3, 10, 9);
  EXPECT_EQ(context_accuracy(imgs, 3).value, 1.0);
  EXPECT_EQ(context_accuracy(imgs, 1).value, 0.0);
}

TEST(Report, JsonCarriesFields) {
  MetricReport r;
  r.name = "m";
  r.value = 0.5;
  r.count = 3;
  r.diagnostics = {{"k", "v"}};
  const std::string j = r.to_json();
  EXPECT_NE(j.find("\"metric\""), std::string::npos);
  EXPECT_NE(j.find("\"k\""), std::string::npos);
  EXPECT_NE(r.to_text().find("0.5"), std::string::npos);
}

TEST(Inversion, ParallelMatchesSerial) {
  Rng rng(10);
  std::vector<Tensor> imgs;
  for (int i = 0; i < 9; ++i)
    imgs.push_back(render(sample_subject(rng, i % 3), sample_context(rng), ImageDims{}));
  const auto a = invert_all(imgs, ImageDims{}, 1);
  const auto b = invert_all(imgs, ImageDims{}, 4);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    EXPECT_EQ(a[i].subject, b[i].subject);
    EXPECT_EQ(a[i].residual, b[i].residual);
  }
}
