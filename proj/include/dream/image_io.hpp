#pragma once

// Binary PPM (P6) for 8-bit RGB. Pixels in [-1, 1] map linearly onto [0, 255].

#include <cstdint>
#include <filesystem>

#include "dream/synthdata.hpp"

namespace dream {

std::uint8_t to_byte(float v);
float from_byte(std::uint8_t b);

void write_ppm(const std::filesystem::path& path, const Image& image);
/// Square images only; throws std::runtime_error on malformed files.
Image read_ppm(const std::filesystem::path& path);

}  // namespace dream
