#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "subjectlab/error.hpp"
#include "subjectlab/toyworld.hpp"

using namespace subjectlab;

namespace {

const ImageDims kDims{16, 16, 3};

bool recovered(const Inversion& inv, const SubjectParams& s, const ContextParams& c) {
  if (inv.context.context_id != c.context_id || inv.subject.class_id != s.class_id) return false;
  if (hue_distance(inv.subject.hue, s.hue) > 0.02) return false;
  for (int k = 0; k < kNumRadii; ++k)
    if (std::abs(inv.subject.radii[k] - s.radii[k]) > 0.02) return false;
  return inv.residual < 1e-3;
}

}  // namespace

TEST(Render, Deterministic) {
  Rng rng(1);
  const auto s = sample_subject(rng, 2);
  const auto c = sample_context(rng);
  EXPECT_EQ(render(s, c, kDims), render(s, c, kDims));
}

TEST(Render, HueShiftChangesInterior) {
  SubjectParams a;
  a.hue = 0.1;
  SubjectParams b = a;
  b.hue = 0.6;
  const ContextParams c;
  const Tensor ia = render(a, c, kDims), ib = render(b, c, kDims);
  // Centre pixel block lies inside a radius-0.3 blob at the origin.
  double d2 = 0;
  for (std::size_t i = 6; i < 10; ++i)
    for (std::size_t j = 6; j < 10; ++j)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t k = (i * 16 + j) * 3 + ch;
        d2 += (ia[k] - ib[k]) * (ia[k] - ib[k]);
      }
  EXPECT_GT(std::sqrt(d2 / 16), 0.1);
}

TEST(Render, BackgroundMatchesPalette) {
  SubjectParams s;
  s.radii.fill(0.2);
  ContextParams c;
  c.context_id = context_id("snow");
  c.cx = 0.5;
  c.cy = 0.5;
  const Tensor img = render(s, c, kDims);
  const Palette& p = context_palettes()[c.context_id];
  // Top-left pixel row 0: gradient weight (0.5/16) toward bottom.
  const double w = 0.5 / 16.0;
  const double r = p.top.r + w * (p.bottom.r - p.top.r);
  EXPECT_NEAR(img[0], 2 * r - 1, 0.02);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double t = (i + 0.5) / 16.0;
      const double top = ch == 0 ? p.top.r : ch == 1 ? p.top.g : p.top.b;
      const double bot = ch == 0 ? p.bottom.r : ch == 1 ? p.bottom.g : p.bottom.b;
      EXPECT_NEAR(img[(i * 16) * 3 + ch], 2 * (top + t * (bot - top)) - 1, 0.02);
    }
}

TEST(Render, ValuesInRange) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto s = sample_subject(rng, int(rng.below(3)));
    const Tensor img = render(s, sample_context(rng), kDims);
    for (float v : img.data()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
  }
}

TEST(Sampling, HueUniformKolmogorovSmirnov) {
  Rng rng(3);
  std::vector<double> h;
  for (int i = 0; i < 10000; ++i) h.push_back(sample_subject(rng, i % 3).hue);
  std::sort(h.begin(), h.end());
  double d = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double n = double(h.size());
    d = std::max({d, std::abs((i + 1) / n - h[i]), std::abs(h[i] - i / n)});
  }
  // Asymptotic critical value at p = 0.01: 1.628 / sqrt(n).
  EXPECT_LT(d, 1.628 / std::sqrt(10000.0));
}

TEST(Sampling, RangesAndErrors) {
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const auto s = sample_subject(rng, i % 3);
    for (double r : s.radii) ASSERT_TRUE(r >= 0.2 && r <= 0.45);
    ASSERT_TRUE(s.tex_freq >= 2 && s.tex_freq <= 6);
  }
  EXPECT_THROW(sample_subject(rng, 3), ValueError);
  Rng a(9), b(9);
  EXPECT_EQ(sample_subject(a, 1), sample_subject(b, 1));
}

TEST(Caption, Templates) {
  const Lexicon dogs{{"dog", "clock"}};
  EXPECT_EQ(make_caption("dog", "pqm", "snow", dogs), "a pqm dog on snow");
  EXPECT_EQ(make_caption("dog", std::nullopt, std::nullopt, dogs), "a dog");
  EXPECT_EQ(make_caption("dog", "pqm", std::nullopt, dogs), "a pqm dog");
  EXPECT_THROW(make_caption("dog", std::nullopt, "mars", dogs), ValueError);
  EXPECT_THROW(make_caption("cat", std::nullopt, std::nullopt, dogs), ValueError);
  EXPECT_THROW(make_caption("blob", "two words", std::nullopt), ValueError);
}

TEST(Caption, EveryCaptionParsesUniquely) {
  for (const auto& noun : class_nouns())
    for (const std::optional<std::string> id : {std::optional<std::string>{}, {"xq"}})
      for (int c = -1; c < kNumContexts; ++c) {
        std::optional<std::string> ctx;
        if (c >= 0) ctx = context_names()[c];
        const ParsedCaption p = parse_caption(make_caption(noun, id, ctx));
        EXPECT_EQ(p.noun, noun);
        EXPECT_EQ(p.identifier, id);
        EXPECT_EQ(p.context, ctx);
      }
  EXPECT_THROW(parse_caption("the blob"), ValueError);
  EXPECT_THROW(parse_caption("a blob on mars"), ValueError);
}

TEST(Inversion, RoundTripOnRandomRenders) {
  Rng rng(5);
  int ok = 0;
  for (int i = 0; i < 100; ++i) {
    const auto s = sample_subject(rng, int(rng.below(3)));
    const auto c = sample_context(rng);
    ok += recovered(invert_render(render(s, c, kDims), kDims), s, c);
  }
  EXPECT_GE(ok, 99);
}

TEST(Inversion, NoiseIsRejected) {
  Rng rng(6);
  Tensor img({kDims.size()});
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform(-1, 1));
  EXPECT_GT(invert_render(img, kDims).residual, kRejectResidual);
}

TEST(Inversion, SameSubjectAcrossContexts) {
  Rng rng(7);
  const auto s = sample_subject(rng, 0);
  ContextParams a, b;
  a.context_id = 0;
  b.context_id = 3;
  b.cx = 0.2;
  const auto ia = invert_render(render(s, a, kDims), kDims);
  const auto ib = invert_render(render(s, b, kDims), kDims);
  EXPECT_LT(hue_distance(ia.subject.hue, ib.subject.hue), 0.02);
  for (int k = 0; k < kNumRadii; ++k) EXPECT_NEAR(ia.subject.radii[k], ib.subject.radii[k], 0.02);
  EXPECT_EQ(ia.subject.tex_freq, ib.subject.tex_freq);
}

TEST(Ppm, RoundTripWithinQuantization) {
  Rng rng(8);
  const Tensor img = render(sample_subject(rng, 1), sample_context(rng), kDims);
  const auto path = std::filesystem::temp_directory_path() / "subjectlab_test.ppm";
  write_ppm(path, img, kDims);
  ImageDims d;
  const Tensor back = read_ppm(path, &d);
  EXPECT_EQ(d, kDims);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1.0 / 255 + 1e-6);
  // Quantized images survive a second round trip unchanged.
  write_ppm(path, back, kDims);
  EXPECT_EQ(read_ppm(path), back);
  std::filesystem::remove(path);
  EXPECT_THROW(read_ppm(path), IoError);
}

TEST(Ppm, HeaderBytes) {
  Tensor img({1 * 2 * 3}, std::vector<float>{-1, 1, 0, 1, -1, -1});
  const std::string s = encode_ppm(img, {1, 2, 3});
  ASSERT_EQ(s.substr(0, 11), "P6\n2 1\n255\n");
  EXPECT_EQ(static_cast<unsigned char>(s[11]), 0);
  EXPECT_EQ(static_cast<unsigned char>(s[12]), 255);
  EXPECT_EQ(static_cast<unsigned char>(s[13]), 128);
}

TEST(Manifest, EntryRoundTrip) {
  Rng rng(9);
  DatasetEntry e{sample_subject(rng, 2), sample_context(rng), "a star at night", "images/00001.ppm"};
  const DatasetEntry back = parse_entry(format_entry(e));
  EXPECT_EQ(back.caption, e.caption);
  EXPECT_EQ(back.image_file, e.image_file);
  EXPECT_EQ(back.subject, e.subject);
  EXPECT_EQ(back.context, e.context);
}

TEST(Resample, AreaDownAndNearestUp) {
  ImageDims d{2, 2, 1};
  Tensor img({4}, std::vector<float>{0.0f, 0.5f, 1.0f, -1.0f});
  const Tensor down = downsample_area(img, d, 2);
  ASSERT_EQ(down.size(), 1u);
  EXPECT_FLOAT_EQ(down[0], 0.125f);
  const Tensor up = upsample_nearest(img, d, 2);
  ASSERT_EQ(up.size(), 16u);
  EXPECT_EQ(up[0], 0.0f);
  EXPECT_EQ(up[1], 0.0f);
  EXPECT_EQ(up[2], 0.5f);
  EXPECT_EQ(up[4], 0.0f);
  EXPECT_EQ(up[15], -1.0f);
}
