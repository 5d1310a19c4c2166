#pragma once

// Procedural image-caption pairs: one colored shape on a constant background,
// captioned by its four attributes. 4 shapes x 8 colors x 3 sizes x 4
// quadrants = 384 discrete scenes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dream {

enum class Shape : std::uint8_t { circle, square, triangle, cross };
enum class Color : std::uint8_t { red, green, blue, yellow, cyan, magenta, white, orange };
enum class Size : std::uint8_t { small, medium, large };
enum class Quadrant : std::uint8_t { top_left, top_right, bottom_left, bottom_right };

inline constexpr int kShapeCount = 4;
inline constexpr int kColorCount = 8;
inline constexpr int kSizeCount = 3;
inline constexpr int kQuadrantCount = 4;
inline constexpr int kSceneCount = kShapeCount * kColorCount * kSizeCount * kQuadrantCount;

struct SceneSpec {
  Shape shape = Shape::circle;
  Color color = Color::red;
  Size size = Size::small;
  Quadrant quadrant = Quadrant::top_left;
  std::uint64_t seed = 0;       // placement jitter only
  bool background_only = false;  // test scenes with no shape drawn

  /// Dense index in [0, 384) over the four attributes (seed ignored).
  int index() const;
  static SceneSpec from_index(int index, std::uint64_t seed = 0);
  bool same_scene(const SceneSpec& other) const { return index() == other.index(); }
};

// ---------------------------------------------------------------------------
// Caption vocabulary.

using TokenId = std::uint16_t;
inline constexpr int kCaptionLength = 8;
inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kNullToken = 1;
inline constexpr TokenId kFirstShapeToken = 2;
inline constexpr TokenId kFirstColorToken = kFirstShapeToken + kShapeCount;
inline constexpr TokenId kFirstSizeToken = kFirstColorToken + kColorCount;
inline constexpr TokenId kFirstQuadrantToken = kFirstSizeToken + kSizeCount;
inline constexpr int kVocabSize = kFirstQuadrantToken + kQuadrantCount;

static_assert(kVocabSize <= 64);

struct CaptionTokens {
  std::array<TokenId, kCaptionLength> ids{};

  /// The all-NULL prompt used for classifier-free guidance.
  static CaptionTokens null_prompt();
  bool is_null() const;
  bool operator==(const CaptionTokens&) const = default;
};

class CaptionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

CaptionTokens caption_of(const SceneSpec& spec);
/// Inverse of caption_of; throws CaptionError on PAD misuse, NULL or unknown ids.
SceneSpec spec_of(const CaptionTokens& caption);

std::string_view word_of(TokenId id);
/// Whitespace-separated attribute words in any order, e.g. "red circle large TL".
CaptionTokens parse_prompt(std::string_view text);
std::string caption_text(const CaptionTokens& caption);

// ---------------------------------------------------------------------------
// Images: side x side x 3, row-major HWC, values in [-1, 1].

struct Image {
  int side = 0;
  std::vector<float> pixels;

  Image() = default;
  explicit Image(int side_, float fill = 0.0f)
      : side(side_), pixels(static_cast<std::size_t>(side_) * side_ * 3, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * side + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * side + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

inline constexpr float kBackground = 0.0f;
std::array<float, 3> color_value(Color c);
/// Shape radius in pixels at the 32-pixel reference side.
double size_radius(Size s, int side);

/// Integer pixel center of the shape's bounding frame after seed jitter.
std::array<double, 2> shape_center(const SceneSpec& spec, int side);
/// Hard-edged membership test used by the rasterizer (pixel-center sampling).
bool inside_shape(const SceneSpec& spec, int side, double px, double py);

Image render_scene(const SceneSpec& spec, int side = 32);

// ---------------------------------------------------------------------------
// Dataset streams.

enum class Split : std::uint8_t { train, val };

/// Scenes belonging to a split; the splits partition all 384 scenes.
std::vector<int> split_scenes(Split split);
bool in_split(int scene_index, Split split);

struct Sample {
  SceneSpec spec;
  Image image;
  CaptionTokens caption;
};

/// n samples drawn uniformly from the split's scenes; a pure function of
/// (seed, split, index).
Sample dataset_sample(std::uint64_t seed, Split split, std::size_t index, int side = 32);
std::vector<Sample> dataset(std::uint64_t seed, std::size_t n, Split split, int side = 32);

// On-disk cache: "DRM1", u32 version, u32 count, u32 side, f32 images, u16 captions.
inline constexpr std::uint32_t kDataCacheVersion = 1;
void write_data_cache(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_data_cache(const std::filesystem::path& path);

}  // namespace dream
