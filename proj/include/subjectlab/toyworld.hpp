#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "subjectlab/rng.hpp"
#include "subjectlab/tensor.hpp"

namespace subjectlab {

inline constexpr int kNumClasses = 3;
inline constexpr int kNumContexts = 4;
inline constexpr int kNumRadii = 5;
inline constexpr double kRadiusMin = 0.2;
inline constexpr double kRadiusMax = 0.45;
inline constexpr int kFreqMin = 2;
inline constexpr int kFreqMax = 6;
// Subject centers lie in [-kCenterRange, kCenterRange]^2 (the central 50%).
inline constexpr double kCenterRange = 0.5;
// Subject colour is HSV(hue, kSaturation, kValue) times a texture brightness
// of kTextureBase + kTextureAmp * sin(...).
inline constexpr double kSaturation = 0.85;
inline constexpr double kValue = 0.9;
inline constexpr double kTextureBase = 0.78;
inline constexpr double kTextureAmp = 0.22;
// invert_render fits with residual MSE above this are treated as non-renders.
inline constexpr double kRejectResidual = 0.05;
// Outline anti-aliasing ramp, in pixels.
inline constexpr double kEdgeWidth = 2.0;

// Class ids: 0 blob, 1 box, 2 star.
const std::array<std::string, kNumClasses>& class_nouns();
// Context ids: 0 snow, 1 jungle, 2 beach, 3 night.
const std::array<std::string, kNumContexts>& context_names();
const std::array<std::string, kNumContexts>& context_phrases();
int class_id(const std::string& noun);      // -1 if unknown
int context_id(const std::string& name);    // -1 if unknown

struct Rgb {
  double r = 0, g = 0, b = 0;
};

// Background of each context is a vertical gradient from top to bottom in
// [0,1] RGB.
struct Palette {
  Rgb top;
  Rgb bottom;
};
const std::array<Palette, kNumContexts>& context_palettes();

Rgb hsv_to_rgb(double h, double s, double v);
// Hue in [0,1) of an RGB colour (0 for greys).
double rgb_hue(const Rgb& c);
// Shortest distance on the unit hue circle, in [0, 0.5].
double hue_distance(double a, double b);

struct SubjectParams {
  int class_id = 0;
  std::array<double, kNumRadii> radii{0.3, 0.3, 0.3, 0.3, 0.3};
  double hue = 0.0;
  int tex_freq = 2;
  double tex_phase = 0.0;

  void validate() const;
  friend bool operator==(const SubjectParams&, const SubjectParams&) = default;
};

struct ContextParams {
  int context_id = 0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
  friend bool operator==(const ContextParams&, const ContextParams&) = default;
};

struct ImageDims {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

// Boundary radius of the subject outline at polar angle theta (radians,
// image coordinates with y pointing down). The 5 radii are control points at
// angles 2 pi k / 5, joined by periodic Catmull-Rom interpolation; boxes and
// stars reshape that profile.
double outline_radius(const SubjectParams& subject, double theta);

// Image in HWC order with values in [-1,1], flattened to [H*W*C]. Pixel
// (row i, col j) has centre (x, y) = ((2j+1)/W - 1, (2i+1)/H - 1). Coverage
// of the outline is a smoothstep over kEdgeWidth pixels; the texture is a
// horizontal sinusoid of tex_freq cycles per image width anchored at the
// subject centre.
Tensor render(const SubjectParams& subject, const ContextParams& context, const ImageDims& dims);

SubjectParams sample_subject(Rng& rng, int class_id);
ContextParams sample_context(Rng& rng);

// Nouns accepted by make_caption / parse_caption.
struct Lexicon {
  std::vector<std::string> nouns;
  static Lexicon toy();
  bool has(const std::string& noun) const;
};

// "a [identifier] [noun] [context phrase]" with optional parts omitted.
// `context` is a context name (snow, jungle, beach, night).
std::string make_caption(const std::string& noun, const std::optional<std::string>& identifier,
                         const std::optional<std::string>& context,
                         const Lexicon& lexicon = Lexicon::toy());

// Every class noun with and without each context phrase.
std::vector<std::string> toy_captions();

// Directory holding the shipped filler text (overridable with SUBJECTLAB_DATA).
std::filesystem::path default_data_dir();

// Vocabulary corpus: toy captions followed by the lines of filler.txt.
std::vector<std::string> vocab_corpus(const std::filesystem::path& data_dir = default_data_dir());

struct ParsedCaption {
  std::optional<std::string> identifier;
  std::string noun;
  std::optional<std::string> context;
  friend bool operator==(const ParsedCaption&, const ParsedCaption&) = default;
};

// Throws ValueError when the text does not follow the caption grammar.
ParsedCaption parse_caption(const std::string& text, const Lexicon& lexicon = Lexicon::toy());

struct Inversion {
  SubjectParams subject;
  ContextParams context;
  double residual = 0.0;
};

// Oracle fit of the generative parameters. The median background error picks
// the context and foreground chroma the hue; per class, a grid over centre and
// mean radius (plus a start with per-sector radii from the covered area) and
// a frequency/phase grid seed a Levenberg-Marquardt fit of centre, radii,
// phase and hue. Inexact fits below 5e-3 MSE are restarted from the other
// frequencies and from shifted centres. Returns the best fit and its MSE on
// the [-1,1] scale.
Inversion invert_render(const Tensor& image, const ImageDims& dims);

// P6 PPM with byte = round((v + 1) / 2 * 255), v clamped to [-1,1]; reading
// maps back with v = 2 byte / 255 - 1.
void write_ppm(const std::filesystem::path& path, const Tensor& image, const ImageDims& dims);
Tensor read_ppm(const std::filesystem::path& path, ImageDims* dims = nullptr);
std::string encode_ppm(const Tensor& image, const ImageDims& dims);

// Dataset manifest line "subject-params | context-params | caption | image-file".
struct DatasetEntry {
  SubjectParams subject;
  ContextParams context;
  std::string caption;
  std::string image_file;
};
std::string format_entry(const DatasetEntry& entry);
DatasetEntry parse_entry(const std::string& line);
std::string format_subject(const SubjectParams& s);
SubjectParams parse_subject(const std::string& text);

// Area-average downsampling by an integer factor.
Tensor downsample_area(const Tensor& image, const ImageDims& dims, std::size_t factor);
// Nearest-neighbour upsampling by an integer factor.
Tensor upsample_nearest(const Tensor& image, const ImageDims& dims, std::size_t factor);

}  // namespace subjectlab
