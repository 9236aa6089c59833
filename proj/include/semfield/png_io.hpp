#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace semfield {

struct GrayImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Reads an 8-bit grayscale PNG. Any other color type or bit depth is a
/// FormatError; a missing file is a DataError.
GrayImage read_gray8_png(const std::filesystem::path& path);

void write_gray8_png(const std::filesystem::path& path, int width, int height,
                     const std::uint8_t* pixels);

/// Writes 8-bit RGB, interleaved row-major.
void write_rgb8_png(const std::filesystem::path& path, int width, int height,
                    const std::uint8_t* pixels);

}  // namespace semfield
