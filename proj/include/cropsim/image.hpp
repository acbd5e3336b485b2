#pragma once

// PNG <-> float image conversion. Images are C x H x W in [-1, 1].

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "cropsim/tensor.hpp"

namespace cropsim {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Image = Tensor<float>;

/// Reads an 8-bit RGB(A)/gray PNG as 3 x H x W in [-1, 1].
Image read_png(const std::filesystem::path& path);

/// Writes a 3 x H x W (or 1 x H x W) image in [-1, 1]; values are clipped.
void write_png(const std::filesystem::path& path, const Image& img);

/// 8-bit helpers.
inline uint8_t to_u8(float v) {
  float s = (v + 1.0f) * 127.5f;
  s = s < 0.0f ? 0.0f : (s > 255.0f ? 255.0f : s);
  return static_cast<uint8_t>(s + 0.5f);
}
inline float from_u8(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

/// Rounds an image to the 8-bit grid (what a PNG round trip stores).
Image quantize_u8(const Image& img);

/// Tiles equally sized images into a rows x cols grid with `pad` pixels of
/// `fill` between cells. Cells listed row-major; missing cells stay fill.
Image tile_grid(const std::vector<Image>& cells, int rows, int cols, int pad = 2, float fill = 1.0f);

/// Draws a one-pixel rectangle border of the given RGB colour ([-1, 1]) around
/// the whole image.
void draw_border(Image& img, float r, float g, float b, int thickness = 1);

}  // namespace cropsim
