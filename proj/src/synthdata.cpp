#include "dream/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dream/binary_io.hpp"
#include "dream/rng.hpp"

namespace dream {

namespace {

constexpr std::array<std::string_view, kVocabSize> kWords = {
    "<pad>", "<null>",                                                    //
    "circle", "square", "triangle", "cross",                              //
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",  //
    "small", "medium", "large",                                           //
    "TL", "TR", "BL", "BR",
};

void check_range(int value, int count, const char* what) {
  if (value < 0 || value >= count) throw CaptionError(std::string("attribute out of range: ") + what);
}

}  // namespace

int SceneSpec::index() const {
  return ((static_cast<int>(shape) * kColorCount + static_cast<int>(color)) * kSizeCount + static_cast<int>(size)) *
             kQuadrantCount +
         static_cast<int>(quadrant);
}

SceneSpec SceneSpec::from_index(int index, std::uint64_t seed) {
  if (index < 0 || index >= kSceneCount) throw std::out_of_range("scene index out of range");
  SceneSpec s;
  s.quadrant = static_cast<Quadrant>(index % kQuadrantCount);
  index /= kQuadrantCount;
  s.size = static_cast<Size>(index % kSizeCount);
  index /= kSizeCount;
  s.color = static_cast<Color>(index % kColorCount);
  s.shape = static_cast<Shape>(index / kColorCount);
  s.seed = seed;
  return s;
}

CaptionTokens CaptionTokens::null_prompt() {
  CaptionTokens c;
  c.ids.fill(kNullToken);
  return c;
}

bool CaptionTokens::is_null() const {
  for (auto id : ids) {
    if (id == kNullToken) return true;
  }
  return false;
}

CaptionTokens caption_of(const SceneSpec& spec) {
  CaptionTokens c;
  c.ids.fill(kPadToken);
  c.ids[0] = static_cast<TokenId>(kFirstColorToken + static_cast<int>(spec.color));
  c.ids[1] = static_cast<TokenId>(kFirstShapeToken + static_cast<int>(spec.shape));
  c.ids[2] = static_cast<TokenId>(kFirstSizeToken + static_cast<int>(spec.size));
  c.ids[3] = static_cast<TokenId>(kFirstQuadrantToken + static_cast<int>(spec.quadrant));
  return c;
}

SceneSpec spec_of(const CaptionTokens& caption) {
  for (auto id : caption.ids) {
    if (id == kNullToken) throw CaptionError("caption contains the NULL token");
    if (id >= kVocabSize) throw CaptionError("unknown token id " + std::to_string(id));
  }
  for (int i = 4; i < kCaptionLength; ++i) {
    if (caption.ids[static_cast<std::size_t>(i)] != kPadToken) throw CaptionError("caption has trailing words");
  }
  const int color = caption.ids[0] - kFirstColorToken;
  const int shape = caption.ids[1] - kFirstShapeToken;
  const int size = caption.ids[2] - kFirstSizeToken;
  const int quadrant = caption.ids[3] - kFirstQuadrantToken;
  check_range(color, kColorCount, "color");
  check_range(shape, kShapeCount, "shape");
  check_range(size, kSizeCount, "size");
  check_range(quadrant, kQuadrantCount, "quadrant");
  SceneSpec s;
  s.color = static_cast<Color>(color);
  s.shape = static_cast<Shape>(shape);
  s.size = static_cast<Size>(size);
  s.quadrant = static_cast<Quadrant>(quadrant);
  return s;
}

std::string_view word_of(TokenId id) {
  if (id >= kVocabSize) throw CaptionError("unknown token id " + std::to_string(id));
  return kWords[id];
}

CaptionTokens parse_prompt(std::string_view text) {
  int color = -1, shape = -1, size = -1, quadrant = -1;
  std::istringstream words{std::string(text)};
  std::string word;
  auto assign = [&](int& slot, int value, const char* what) {
    if (slot >= 0) throw CaptionError(std::string("prompt names more than one ") + what);
    slot = value;
  };
  while (words >> word) {
    int found = -1;
    for (int id = kFirstShapeToken; id < kVocabSize; ++id) {
      if (kWords[static_cast<std::size_t>(id)] == word) found = id;
    }
    if (found < 0) throw CaptionError("unknown prompt word '" + word + "'");
    if (found < kFirstColorToken) {
      assign(shape, found - kFirstShapeToken, "shape");
    } else if (found < kFirstSizeToken) {
      assign(color, found - kFirstColorToken, "color");
    } else if (found < kFirstQuadrantToken) {
      assign(size, found - kFirstSizeToken, "size");
    } else {
      assign(quadrant, found - kFirstQuadrantToken, "quadrant");
    }
  }
  if (color < 0 || shape < 0 || size < 0 || quadrant < 0) {
    throw CaptionError("prompt must name a color, shape, size and quadrant");
  }
  SceneSpec s;
  s.color = static_cast<Color>(color);
  s.shape = static_cast<Shape>(shape);
  s.size = static_cast<Size>(size);
  s.quadrant = static_cast<Quadrant>(quadrant);
  return caption_of(s);
}

std::string caption_text(const CaptionTokens& caption) {
  std::string out;
  for (auto id : caption.ids) {
    if (id == kPadToken) continue;
    if (!out.empty()) out += ' ';
    out += word_of(id);
  }
  return out;
}

std::array<float, 3> color_value(Color c) {
  switch (c) {
    case Color::red: return {1.0f, -1.0f, -1.0f};
    case Color::green: return {-1.0f, 1.0f, -1.0f};
    case Color::blue: return {-1.0f, -1.0f, 1.0f};
    case Color::yellow: return {1.0f, 1.0f, -1.0f};
    case Color::cyan: return {-1.0f, 1.0f, 1.0f};
    case Color::magenta: return {1.0f, -1.0f, 1.0f};
    case Color::white: return {1.0f, 1.0f, 1.0f};
    case Color::orange: return {1.0f, 0.0f, -1.0f};
  }
  throw std::invalid_argument("unknown color");
}

double size_radius(Size s, int side) {
  const double unit = side / 32.0;
  switch (s) {
    case Size::small: return 3.0 * unit;
    case Size::medium: return 5.0 * unit;
    case Size::large: return 7.0 * unit;
  }
  throw std::invalid_argument("unknown size");
}

std::array<double, 2> shape_center(const SceneSpec& spec, int side) {
  const int half = side / 2;
  const int q = static_cast<int>(spec.quadrant);
  const int x0 = (q % 2) * half;
  const int y0 = (q / 2) * half;
  // Jitter of -1, 0 or +1 pixel per axis, derived from the seed.
  const std::uint64_t h = splitmix64(spec.seed);
  const int jx = static_cast<int>(h % 3) - 1;
  const int jy = static_cast<int>((h / 3) % 3) - 1;
  return {static_cast<double>(x0 + half / 2 + jx), static_cast<double>(y0 + half / 2 + jy)};
}

bool inside_shape(const SceneSpec& spec, int side, double px, double py) {
  const auto [cx, cy] = shape_center(spec, side);
  const double r = size_radius(spec.size, side);
  const double dx = px - cx;
  const double dy = py - cy;
  switch (spec.shape) {
    case Shape::circle: return dx * dx + dy * dy <= r * r;
    case Shape::square: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case Shape::triangle: return dy >= -r && dy <= 0.6 * r && std::abs(dx) <= 0.6 * (dy + r);
    case Shape::cross:
      return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
  }
  return false;
}

Image render_scene(const SceneSpec& spec, int side) {
  if (side <= 0 || side % 4 != 0) throw std::invalid_argument("render_scene: side must be a positive multiple of 4");
  Image img(side, kBackground);
  if (spec.background_only) return img;
  const auto rgb = color_value(spec.color);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      if (!inside_shape(spec, side, x + 0.5, y + 0.5)) continue;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[static_cast<std::size_t>(c)];
    }
  }
  return img;
}

bool in_split(int scene_index, Split split) {
  const SceneSpec s = SceneSpec::from_index(scene_index);
  const int sum = static_cast<int>(s.shape) + static_cast<int>(s.color) + static_cast<int>(s.size) +
                  static_cast<int>(s.quadrant);
  const bool held_out = sum % 8 == 0;
  return split == Split::val ? held_out : !held_out;
}

std::vector<int> split_scenes(Split split) {
  std::vector<int> out;
  for (int i = 0; i < kSceneCount; ++i) {
    if (in_split(i, split)) out.push_back(i);
  }
  return out;
}

Sample dataset_sample(std::uint64_t seed, Split split, std::size_t index, int side) {
  static const std::vector<int> train = split_scenes(Split::train);
  static const std::vector<int> val = split_scenes(Split::val);
  const auto& scenes = split == Split::train ? train : val;
  Rng rng(seed, {key(Stream::data), static_cast<std::uint64_t>(split), index});
  const int scene = scenes[rng.uniform_int(scenes.size())];
  Sample s;
  s.spec = SceneSpec::from_index(scene, rng.engine()());
  s.image = render_scene(s.spec, side);
  s.caption = caption_of(s.spec);
  return s;
}

std::vector<Sample> dataset(std::uint64_t seed, std::size_t n, Split split, int side) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(dataset_sample(seed, split, i, side));
  return out;
}

void write_data_cache(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const int side = samples.empty() ? 0 : samples.front().image.side;
  out.write("DRM1", 4);
  io::write_le<std::uint32_t>(out, kDataCacheVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(samples.size()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(side));
  for (const auto& s : samples) {
    if (s.image.side != side) throw std::invalid_argument("write_data_cache: mixed image sides");
    for (float v : s.image.pixels) io::write_le<float>(out, v);
  }
  for (const auto& s : samples) {
    for (auto id : s.caption.ids) io::write_le<std::uint16_t>(out, id);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Sample> read_data_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (io::read_bytes(in, 4) != "DRM1") throw std::runtime_error("not a data cache: " + path.string());
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kDataCacheVersion) throw std::runtime_error("unsupported data cache version");
  const auto count = io::read_le<std::uint32_t>(in);
  const auto side = static_cast<int>(io::read_le<std::uint32_t>(in));
  std::vector<Sample> out(count);
  for (auto& s : out) {
    s.image = Image(side);
    for (float& v : s.image.pixels) v = io::read_le<float>(in);
  }
  for (auto& s : out) {
    for (auto& id : s.caption.ids) id = io::read_le<std::uint16_t>(in);
    s.spec = spec_of(s.caption);
  }
  return out;
}

}  // namespace dream
