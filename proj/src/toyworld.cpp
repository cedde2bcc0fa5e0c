#include "subjectlab/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "subjectlab/error.hpp"
#include "subjectlab/vocab.hpp"

namespace subjectlab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_phase(double p) {
  p = std::fmod(p, kTwoPi);
  return p < 0 ? p + kTwoPi : p;
}

double wrap_hue(double h) {
  h = std::fmod(h, 1.0);
  return h < 0 ? h + 1.0 : h;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

const std::array<std::string, kNumClasses>& class_nouns() {
  static const std::array<std::string, kNumClasses> n = {"blob", "box", "star"};
  return n;
}

const std::array<std::string, kNumContexts>& context_names() {
  static const std::array<std::string, kNumContexts> n = {"snow", "jungle", "beach", "night"};
  return n;
}

const std::array<std::string, kNumContexts>& context_phrases() {
  static const std::array<std::string, kNumContexts> p = {"on snow", "in the jungle",
                                                          "on the beach", "at night"};
  return p;
}

int class_id(const std::string& noun) {
  const auto& n = class_nouns();
  const auto it = std::find(n.begin(), n.end(), noun);
  return it == n.end() ? -1 : static_cast<int>(it - n.begin());
}

int context_id(const std::string& name) {
  const auto& n = context_names();
  const auto it = std::find(n.begin(), n.end(), name);
  return it == n.end() ? -1 : static_cast<int>(it - n.begin());
}

const std::array<Palette, kNumContexts>& context_palettes() {
  static const std::array<Palette, kNumContexts> p = {{
      {{0.80, 0.85, 0.95}, {0.97, 0.97, 1.00}},  // snow
      {{0.04, 0.30, 0.08}, {0.12, 0.42, 0.10}},  // jungle
      {{0.45, 0.72, 0.95}, {0.93, 0.82, 0.55}},  // beach
      {{0.02, 0.02, 0.12}, {0.10, 0.08, 0.25}},  // night
  }};
  return p;
}

Rgb hsv_to_rgb(double h, double s, double v) {
  h = wrap_hue(h) * 6.0;
  const int i = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double rgb_hue(const Rgb& c) {
  const double mx = std::max({c.r, c.g, c.b});
  const double mn = std::min({c.r, c.g, c.b});
  const double d = mx - mn;
  if (d <= 0) return 0.0;
  double h;
  if (mx == c.r)
    h = (c.g - c.b) / d;
  else if (mx == c.g)
    h = 2.0 + (c.b - c.r) / d;
  else
    h = 4.0 + (c.r - c.g) / d;
  return wrap_hue(h / 6.0);
}

double hue_distance(double a, double b) {
  const double d = std::fabs(wrap_hue(a) - wrap_hue(b));
  return std::min(d, 1.0 - d);
}

void SubjectParams::validate() const {
  if (class_id < 0 || class_id >= kNumClasses)
    throw ValueError("subject class id " + std::to_string(class_id) + " unknown");
  for (double r : radii)
    if (!(r >= kRadiusMin && r <= kRadiusMax))
      throw ValueError("subject radius " + fmt(r) + " outside [0.2, 0.45]");
  if (!(hue >= 0.0 && hue < 1.0)) throw ValueError("subject hue outside [0,1)");
  if (tex_freq < kFreqMin || tex_freq > kFreqMax)
    throw ValueError("texture frequency " + std::to_string(tex_freq) + " outside 2..6");
  if (!(tex_phase >= 0.0 && tex_phase < kTwoPi)) throw ValueError("texture phase outside [0, 2pi)");
}

void ContextParams::validate() const {
  if (context_id < 0 || context_id >= kNumContexts)
    throw ValueError("context id " + std::to_string(context_id) + " unknown");
  if (!(std::fabs(cx) <= kCenterRange && std::fabs(cy) <= kCenterRange))
    throw ValueError("subject centre outside the central 50% of the frame");
}

double outline_radius(const SubjectParams& s, double theta) {
  const double u = wrap_phase(theta) / (kTwoPi / kNumRadii);
  const int k = static_cast<int>(std::floor(u)) % kNumRadii;
  const double t = u - std::floor(u);
  auto r = [&](int i) { return s.radii[((i % kNumRadii) + kNumRadii) % kNumRadii]; };
  const double p0 = r(k - 1), p1 = r(k), p2 = r(k + 1), p3 = r(k + 2);
  const double base = 0.5 * (2 * p1 + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t * t +
                             (-p0 + 3 * p1 - 3 * p2 + p3) * t * t * t);
  switch (s.class_id) {
    case 1: return base * 0.85 / std::max(std::fabs(std::cos(theta)), std::fabs(std::sin(theta)));
    case 2: return base * (0.6 + 0.4 * std::fabs(std::cos(2.5 * theta)));
    default: return base;
  }
}

namespace {

// Background and pixel-centre tables for one image size.
struct Canvas {
  ImageDims dims;
  std::vector<double> xs, ys;
  std::array<std::vector<Rgb>, kNumContexts> bg;

  explicit Canvas(const ImageDims& d) : dims(d) {
    if (d.channels != 3 || d.height == 0 || d.width == 0)
      throw ShapeError("image", "toy images need 3 channels and positive size");
    for (std::size_t j = 0; j < d.width; ++j)
      xs.push_back((2.0 * j + 1.0) / static_cast<double>(d.width) - 1.0);
    for (std::size_t i = 0; i < d.height; ++i)
      ys.push_back((2.0 * i + 1.0) / static_cast<double>(d.height) - 1.0);
    for (int c = 0; c < kNumContexts; ++c) {
      const auto& p = context_palettes()[c];
      bg[c].resize(d.height * d.width);
      for (std::size_t i = 0; i < d.height; ++i) {
        const double a = (ys[i] + 1.0) / 2.0;
        const Rgb col{p.top.r + a * (p.bottom.r - p.top.r), p.top.g + a * (p.bottom.g - p.top.g),
                      p.top.b + a * (p.bottom.b - p.top.b)};
        for (std::size_t j = 0; j < d.width; ++j) bg[c][i * d.width + j] = col;
      }
    }
  }

  // Per-pixel polar coordinates for one subject centre.
  struct Polar {
    double cx = std::nan(""), cy = std::nan("");
    std::vector<double> dx, r, theta;
  };

  void polar(const ContextParams& ctx, Polar& p) const {
    if (p.cx == ctx.cx && p.cy == ctx.cy) return;
    const std::size_t n = dims.height * dims.width;
    p.dx.resize(n);
    p.r.resize(n);
    p.theta.resize(n);
    for (std::size_t i = 0; i < dims.height; ++i)
      for (std::size_t j = 0; j < dims.width; ++j) {
        const std::size_t k = i * dims.width + j;
        const double dx = xs[j] - ctx.cx, dy = ys[i] - ctx.cy;
        p.dx[k] = dx;
        p.r[k] = std::sqrt(dx * dx + dy * dy);
        p.theta[k] = std::atan2(dy, dx);
      }
    p.cx = ctx.cx;
    p.cy = ctx.cy;
  }

  // Render into `out` ([0,1] colours, HWC). texture=false uses the mean
  // brightness instead of the sinusoid.
  void draw(const SubjectParams& s, const ContextParams& ctx, bool texture,
            std::vector<double>& out, Polar& p) const {
    polar(ctx, p);
    out.resize(dims.size());
    const Rgb col = hsv_to_rgb(s.hue, kSaturation, kValue);
    const double ramp = kEdgeWidth * 2.0 / static_cast<double>(dims.width);
    const auto& background = bg[ctx.context_id];
    const std::size_t n = dims.height * dims.width;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = outline_radius(s, p.theta[k]) - p.r[k];
      const double u = std::clamp(0.5 + d / ramp, 0.0, 1.0);
      const double cov = u * u * (3.0 - 2.0 * u);
      const double b =
          texture ? kTextureBase + kTextureAmp * std::sin(kPi * s.tex_freq * p.dx[k] + s.tex_phase)
                  : kTextureBase;
      const Rgb& g = background[k];
      double* o = &out[k * 3];
      o[0] = cov * col.r * b + (1 - cov) * g.r;
      o[1] = cov * col.g * b + (1 - cov) * g.g;
      o[2] = cov * col.b * b + (1 - cov) * g.b;
    }
  }
};

const Canvas& canvas_for(const ImageDims& dims) {
  thread_local std::vector<std::unique_ptr<Canvas>> cache;
  for (const auto& c : cache)
    if (c->dims == dims) return *c;
  cache.push_back(std::make_unique<Canvas>(dims));
  return *cache.back();
}

}  // namespace

Tensor render(const SubjectParams& subject, const ContextParams& context, const ImageDims& dims) {
  subject.validate();
  context.validate();
  const Canvas& canvas = canvas_for(dims);
  std::vector<double> buf;
  Canvas::Polar polar;
  canvas.draw(subject, context, true, buf, polar);
  Tensor out({dims.size()});
  for (std::size_t i = 0; i < buf.size(); ++i)
    out[i] = static_cast<float>(2.0 * std::clamp(buf[i], 0.0, 1.0) - 1.0);
  return out;
}

SubjectParams sample_subject(Rng& rng, int cls) {
  if (cls < 0 || cls >= kNumClasses) throw ValueError("unknown class id " + std::to_string(cls));
  SubjectParams s;
  s.class_id = cls;
  for (auto& r : s.radii) r = rng.uniform(kRadiusMin, kRadiusMax);
  s.hue = rng.uniform();
  s.tex_freq = kFreqMin + static_cast<int>(rng.below(kFreqMax - kFreqMin + 1));
  s.tex_phase = rng.uniform(0.0, kTwoPi);
  return s;
}

ContextParams sample_context(Rng& rng) {
  ContextParams c;
  c.context_id = static_cast<int>(rng.below(kNumContexts));
  c.cx = rng.uniform(-kCenterRange, kCenterRange);
  c.cy = rng.uniform(-kCenterRange, kCenterRange);
  return c;
}

Lexicon Lexicon::toy() {
  const auto& n = class_nouns();
  return {{n.begin(), n.end()}};
}

bool Lexicon::has(const std::string& noun) const {
  return std::find(nouns.begin(), nouns.end(), noun) != nouns.end();
}

std::vector<std::string> toy_captions() {
  std::vector<std::string> out;
  for (const auto& noun : class_nouns()) {
    out.push_back(make_caption(noun, std::nullopt, std::nullopt));
    for (const auto& ctx : context_names()) out.push_back(make_caption(noun, std::nullopt, ctx));
  }
  return out;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("SUBJECTLAB_DATA")) return env;
  return SUBJECTLAB_DATA_DIR;
}

std::vector<std::string> vocab_corpus(const std::filesystem::path& data_dir) {
  std::vector<std::string> corpus = toy_captions();
  for (auto& line : read_lines(data_dir / "filler.txt"))
    if (!line.empty()) corpus.push_back(std::move(line));
  return corpus;
}

std::string make_caption(const std::string& noun, const std::optional<std::string>& identifier,
                         const std::optional<std::string>& context, const Lexicon& lexicon) {
  if (!lexicon.has(noun)) throw ValueError("class noun '" + noun + "' is not in the lexicon");
  std::string out = "a ";
  if (identifier) {
    if (identifier->empty() || identifier->find_first_of(" \t\n") != std::string::npos)
      throw ValueError("identifier must be a single non-empty word");
    out += *identifier + " ";
  }
  out += noun;
  if (context) {
    const int id = context_id(*context);
    if (id < 0) throw ValueError("unknown context phrase '" + *context + "'");
    out += " " + context_phrases()[id];
  }
  return out;
}

ParsedCaption parse_caption(const std::string& text, const Lexicon& lexicon) {
  std::vector<std::string> words;
  std::istringstream in(text);
  for (std::string w; in >> w;) words.push_back(w);
  ParsedCaption p;
  for (int c = 0; c < kNumContexts; ++c) {
    std::vector<std::string> pw;
    std::istringstream pin(context_phrases()[c]);
    for (std::string w; pin >> w;) pw.push_back(w);
    if (words.size() > pw.size() && std::equal(pw.begin(), pw.end(), words.end() - pw.size())) {
      words.resize(words.size() - pw.size());
      p.context = context_names()[c];
      break;
    }
  }
  if (words.size() < 2 || words.size() > 3 || words[0] != "a" || !lexicon.has(words.back()))
    throw ValueError("caption '" + text + "' does not match 'a [identifier] [noun] [context]'");
  p.noun = words.back();
  if (words.size() == 3) p.identifier = words[1];
  return p;
}

namespace {

struct Fit {
  SubjectParams s;
  ContextParams c;
  double err = 1e300;
};

constexpr int kFitParams = 9;

void clamp_params(SubjectParams& s, ContextParams& c) {
  for (auto& r : s.radii) r = std::clamp(r, kRadiusMin, kRadiusMax);
  s.hue = wrap_hue(s.hue);
  s.tex_phase = wrap_phase(s.tex_phase);
  c.cx = std::clamp(c.cx, -kCenterRange, kCenterRange);
  c.cy = std::clamp(c.cy, -kCenterRange, kCenterRange);
}

// Continuous parameters refined by least squares: centre, radii, phase, hue.
double& fit_param(Fit& f, int p) {
  switch (p) {
    case 0: return f.c.cx;
    case 1: return f.c.cy;
    case 7: return f.s.tex_phase;
    case 8: return f.s.hue;
    default: return f.s.radii[p - 2];
  }
}

class Fitter {
 public:
  Fitter(const Canvas& canvas, std::vector<double> target)
      : canvas_(canvas), target_(std::move(target)) {}

  // MSE on the [-1,1] scale.
  double error(Fit& f, bool texture = true) {
    clamp_params(f.s, f.c);
    canvas_.draw(f.s, f.c, texture, buf_, polar_);
    double s = 0;
    for (std::size_t i = 0; i < buf_.size(); ++i) {
      const double d = buf_[i] - target_[i];
      s += d * d;
    }
    f.err = 4.0 * s / static_cast<double>(buf_.size());
    return f.err;
  }

  // Levenberg-Marquardt with a forward-difference Jacobian.
  void refine(Fit& f, int max_iter) {
    const std::size_t n = target_.size();
    error(f);
    std::vector<double> base = buf_;
    Eigen::MatrixXd J(n, kFitParams);
    Eigen::VectorXd r(n);
    double mu = 1e-3;
    for (int it = 0; it < max_iter; ++it) {
      for (std::size_t i = 0; i < n; ++i) r[i] = base[i] - target_[i];
      for (int p = 0; p < kFitParams; ++p) {
        Fit g = f;
        const double h = p == 8 ? 1e-6 : 1e-6;
        fit_param(g, p) += h;
        clamp_params(g.s, g.c);
        const double actual = fit_param(g, p) - fit_param(f, p);
        canvas_.draw(g.s, g.c, true, buf_, polar_);
        for (std::size_t i = 0; i < n; ++i)
          J(i, p) = actual != 0.0 ? (buf_[i] - base[i]) / actual : 0.0;
      }
      const Eigen::MatrixXd A = J.transpose() * J;
      const Eigen::VectorXd g = J.transpose() * r;
      bool improved = false;
      for (int tries = 0; tries < 16 && !improved; ++tries) {
        Eigen::MatrixXd M = A;
        for (int p = 0; p < kFitParams; ++p) M(p, p) += mu * (A(p, p) + 1e-9);
        const Eigen::VectorXd delta = M.ldlt().solve(-g);
        Fit cand = f;
        for (int p = 0; p < kFitParams; ++p) fit_param(cand, p) += delta[p];
        if (error(cand) < f.err) {
          f = cand;
          base = buf_;
          mu = std::max(mu / 3.0, 1e-9);
          improved = true;
        } else {
          mu *= 4.0;
        }
      }
      if (!improved || f.err < 1e-14) break;
    }
  }

  // Best (frequency, phase) on a 16-step phase grid with the outline fixed.
  void texture_grid(Fit& f, int freq_lo, int freq_hi) {
    Fit best = f;
    best.err = 1e300;
    for (int fr = freq_lo; fr <= freq_hi; ++fr)
      for (int ph = 0; ph < 16; ++ph) {
        Fit g = f;
        g.s.tex_freq = fr;
        g.s.tex_phase = kTwoPi * ph / 16.0;
        if (error(g) < best.err) best = g;
      }
    f = best;
  }

 private:
  const Canvas& canvas_;
  std::vector<double> target_;
  std::vector<double> buf_;
  Canvas::Polar polar_;
};

// Radii whose sectors enclose the same area as the estimated coverage.
std::array<double, kNumRadii> sector_radii(const Canvas& canvas, const std::vector<double>& v,
                                           const std::vector<double>& dev, double max_dev,
                                           const ContextParams& c, int cls, double hue) {
  const Rgb col = hsv_to_rgb(hue, kSaturation, kValue * kTextureBase);
  const auto& bg = canvas.bg[c.context_id];
  const std::size_t w = canvas.dims.width;
  const double pix_area = (2.0 / static_cast<double>(w)) * (2.0 / static_cast<double>(canvas.dims.height));
  const double sector = kTwoPi / kNumRadii;
  std::array<double, kNumRadii> area{};
  for (std::size_t i = 0; i < canvas.dims.height; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      if (dev[p] < 0.02 * max_dev) continue;
      const Rgb& g = bg[p];
      const double fr = col.r - g.r, fg = col.g - g.g, fb = col.b - g.b;
      const double den = fr * fr + fg * fg + fb * fb;
      if (den < 1e-6) continue;
      const double cov = std::clamp(
          ((v[3 * p] - g.r) * fr + (v[3 * p + 1] - g.g) * fg + (v[3 * p + 2] - g.b) * fb) / den,
          0.0, 1.0);
      const double th = wrap_phase(std::atan2(canvas.ys[i] - c.cy, canvas.xs[j] - c.cx) + sector / 2);
      area[static_cast<int>(th / sector) % kNumRadii] += cov * pix_area;
    }
  SubjectParams unit;
  unit.class_id = cls;
  unit.radii.fill(1.0);
  std::array<double, kNumRadii> out{};
  for (int k = 0; k < kNumRadii; ++k) {
    // Area of the unit-profile sector: integral of R(theta)^2 / 2.
    double unit_area = 0;
    constexpr int kSteps = 64;
    for (int s = 0; s < kSteps; ++s) {
      const double th = k * sector - sector / 2 + sector * (s + 0.5) / kSteps;
      const double r = outline_radius(unit, th);
      unit_area += 0.5 * r * r * sector / kSteps;
    }
    out[k] = std::clamp(std::sqrt(area[k] / unit_area), kRadiusMin, kRadiusMax);
  }
  return out;
}

}  // namespace

Inversion invert_render(const Tensor& image, const ImageDims& dims) {
  if (image.size() != dims.size())
    throw ShapeError("image", "expected " + std::to_string(dims.size()) + " values, got " +
                                  std::to_string(image.size()));
  const Canvas& canvas = canvas_for(dims);
  const std::size_t npix = dims.height * dims.width;
  std::vector<double> v(dims.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = (std::clamp(static_cast<double>(image[i]), -1.0, 1.0) + 1.0) / 2.0;

  // Context: the palette that explains the median pixel best.
  int ctx = 0;
  double best_bg = 1e300;
  std::vector<double> dev(npix);
  for (int c = 0; c < kNumContexts; ++c) {
    std::vector<double> e(npix);
    for (std::size_t p = 0; p < npix; ++p) {
      const Rgb& g = canvas.bg[c][p];
      const double dr = v[3 * p] - g.r, dg = v[3 * p + 1] - g.g, db = v[3 * p + 2] - g.b;
      e[p] = dr * dr + dg * dg + db * db;
    }
    std::vector<double> sorted = e;
    std::nth_element(sorted.begin(), sorted.begin() + npix / 2, sorted.end());
    if (sorted[npix / 2] < best_bg) {
      best_bg = sorted[npix / 2];
      ctx = c;
      dev = e;
    }
  }

  // Foreground centroid and chroma hue.
  const double max_dev = *std::max_element(dev.begin(), dev.end());
  double wx = 0, wy = 0, wsum = 0, hs = 0, hc = 0;
  for (std::size_t i = 0; i < dims.height; ++i)
    for (std::size_t j = 0; j < dims.width; ++j) {
      const std::size_t p = i * dims.width + j;
      if (dev[p] <= 0.1 * max_dev || dev[p] < 1e-4) continue;
      const double w = dev[p];
      wx += w * canvas.xs[j];
      wy += w * canvas.ys[i];
      wsum += w;
      const double h = rgb_hue({v[3 * p], v[3 * p + 1], v[3 * p + 2]});
      hs += w * w * std::sin(kTwoPi * h);
      hc += w * w * std::cos(kTwoPi * h);
    }
  const double cx0 = wsum > 0 ? wx / wsum : 0.0;
  const double cy0 = wsum > 0 ? wy / wsum : 0.0;
  const double hue0 = wrap_hue(std::atan2(hs, hc) / kTwoPi);

  Fitter fitter(canvas, v);
  Fit best;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    // Outline grid with a flat texture.
    Fit f;
    for (int a = -2; a <= 2; ++a)
      for (int b = -2; b <= 2; ++b)
        for (int k = 0; k <= 10; ++k) {
          Fit g;
          g.s.class_id = cls;
          g.s.hue = hue0;
          g.s.radii.fill(kRadiusMin + 0.025 * k);
          g.c = {ctx, cx0 + 0.04 * a, cy0 + 0.04 * b};
          if (fitter.error(g, false) < f.err) f = g;
        }
    // Second start: per-sector radii from the estimated coverage area.
    Fit sector = f;
    sector.s.radii = sector_radii(canvas, v, dev, max_dev, f.c, cls, hue0);
    for (Fit* g : {&f, &sector}) {
      fitter.texture_grid(*g, kFreqMin, kFreqMax);
      fitter.refine(*g, 30);
    }
    if (sector.err < f.err) f = sector;
    if (f.err < best.err) best = f;
  }

  // The centre/radius trade-off and the texture frequency both have shallow
  // local minima. While the fit looks like a render but is not exact, re-fit
  // the other frequencies and restart from shifted centres with re-estimated
  // radii.
  constexpr double kExact = 1e-12;
  constexpr double kRestartBelow = 5e-3;
  fitter.refine(best, 60);
  for (int round = 0; round < 3; ++round) {
    if (best.err < kExact || best.err > kRestartBelow) break;
    const Fit centre = best;
    for (int fr = kFreqMin; fr <= kFreqMax; ++fr) {
      if (fr == centre.s.tex_freq) continue;
      Fit g = centre;
      fitter.texture_grid(g, fr, fr);
      fitter.refine(g, 60);
      if (g.err < best.err) best = g;
    }
    for (double step : {0.04, 0.02}) {
      if (best.err < kExact) break;
      const Fit from = best;
      for (int dir = 0; dir < 8; ++dir) {
        const double ang = kTwoPi * dir / 8.0;
        Fit g = from;
        g.c.cx += step * std::cos(ang);
        g.c.cy += step * std::sin(ang);
        clamp_params(g.s, g.c);
        g.s.radii = sector_radii(canvas, v, dev, max_dev, g.c, g.s.class_id, g.s.hue);
        fitter.refine(g, 60);
        if (g.err < best.err) best = g;
        if (best.err < kExact) break;
      }
    }
  }
  clamp_params(best.s, best.c);
  return {best.s, best.c, best.err};
}

std::string encode_ppm(const Tensor& image, const ImageDims& dims) {
  if (image.size() != dims.size() || dims.channels != 3)
    throw ShapeError("image", "PPM needs an RGB image of " + std::to_string(dims.size()) + " values");
  std::string out = "P6\n" + std::to_string(dims.width) + " " + std::to_string(dims.height) +
                    "\n255\n";
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), -1.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) / 2.0 * 255.0))));
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image, const ImageDims& dims) {
  const std::string bytes = encode_ppm(image, dims);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path, ImageDims* dims_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("image not found: " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || !w || !h || maxval != 255)
    throw IoError(path.string() + ": expected an 8-bit P6 PPM");
  in.get();
  ImageDims dims{h, w, 3};
  std::string bytes(dims.size(), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoError(path.string() + ": truncated pixel data");
  Tensor img({dims.size()});
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img[i] = static_cast<float>(2.0 * static_cast<unsigned char>(bytes[i]) / 255.0 - 1.0);
  if (dims_out) *dims_out = dims;
  return img;
}

std::string format_subject(const SubjectParams& s) {
  std::ostringstream os;
  os << "class=" << class_nouns().at(s.class_id) << " radii=";
  for (int k = 0; k < kNumRadii; ++k) os << (k ? "," : "") << fmt(s.radii[k]);
  os << " hue=" << fmt(s.hue) << " freq=" << s.tex_freq << " phase=" << fmt(s.tex_phase);
  return os.str();
}

namespace {

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string tok; in >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ValueError("expected key=value, got '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ValueError("missing field '" + key + "'");
  return it->second;
}

}  // namespace

SubjectParams parse_subject(const std::string& text) {
  const auto kv = key_values(text);
  SubjectParams s;
  s.class_id = class_id(need(kv, "class"));
  const auto radii = split(need(kv, "radii"), ',');
  if (radii.size() != kNumRadii) throw ValueError("expected 5 radii");
  for (int k = 0; k < kNumRadii; ++k) s.radii[k] = std::stod(radii[k]);
  s.hue = std::stod(need(kv, "hue"));
  s.tex_freq = std::stoi(need(kv, "freq"));
  s.tex_phase = std::stod(need(kv, "phase"));
  s.validate();
  return s;
}

std::string format_entry(const DatasetEntry& e) {
  std::ostringstream os;
  os << format_subject(e.subject) << " | context=" << context_names().at(e.context.context_id)
     << " cx=" << fmt(e.context.cx) << " cy=" << fmt(e.context.cy) << " | " << e.caption << " | "
     << e.image_file;
  return os.str();
}

DatasetEntry parse_entry(const std::string& line) {
  const auto parts = split(line, '|');
  if (parts.size() != 4)
    throw ValueError("manifest line needs 4 '|'-separated fields: " + line);
  DatasetEntry e;
  e.subject = parse_subject(trim(parts[0]));
  const auto kv = key_values(trim(parts[1]));
  e.context.context_id = context_id(need(kv, "context"));
  e.context.cx = std::stod(need(kv, "cx"));
  e.context.cy = std::stod(need(kv, "cy"));
  e.context.validate();
  e.caption = trim(parts[2]);
  e.image_file = trim(parts[3]);
  return e;
}

Tensor downsample_area(const Tensor& image, const ImageDims& dims, std::size_t factor) {
  if (!factor || dims.height % factor || dims.width % factor || image.size() != dims.size())
    throw ShapeError("image", "dimensions not divisible by the downsampling factor");
  const std::size_t h = dims.height / factor, w = dims.width / factor, ch = dims.channels;
  Tensor out({h * w * ch});
  const double norm = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < ch; ++c) {
        double s = 0;
        for (std::size_t a = 0; a < factor; ++a)
          for (std::size_t b = 0; b < factor; ++b)
            s += image[((i * factor + a) * dims.width + j * factor + b) * ch + c];
        out[(i * w + j) * ch + c] = static_cast<float>(s * norm);
      }
  return out;
}

Tensor upsample_nearest(const Tensor& image, const ImageDims& dims, std::size_t factor) {
  if (!factor || image.size() != dims.size()) throw ShapeError("image", "bad upsampling input");
  const std::size_t h = dims.height * factor, w = dims.width * factor, ch = dims.channels;
  Tensor out({h * w * ch});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < ch; ++c)
        out[(i * w + j) * ch + c] = image[((i / factor) * dims.width + j / factor) * ch + c];
  return out;
}

}  // namespace subjectlab
