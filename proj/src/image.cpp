#include "cropsim/image.hpp"

#include <png.h>

#include <cstring>

namespace cropsim {

Image read_png(const std::filesystem::path& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw ImageError("cannot read PNG " + path.string() + ": " + im.message);
  im.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&im);
    throw ImageError("cannot decode PNG " + path.string() + ": " + im.message);
  }
  const int64_t h = im.height, w = im.width;
  Image out(Shape{3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = from_u8(buf[static_cast<size_t>((y * w + x) * 3 + c)]);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.shape().rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1))
    throw ImageError("write_png expects 3 x H x W or 1 x H x W, got " + img.shape().str());
  const int64_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<uint8_t> buf(static_cast<size_t>(h * w * ch));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < ch; ++c) buf[static_cast<size_t>((y * w + x) * ch + c)] = to_u8(img[(c * h + y) * w + x]);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(w);
  im.height = static_cast<png_uint_32>(h);
  im.format = ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw ImageError("cannot write PNG " + path.string() + ": " + im.message);
}

Image quantize_u8(const Image& img) {
  Image out(img.shape());
  for (int64_t i = 0; i < img.numel(); ++i) out[i] = from_u8(to_u8(img[i]));
  return out;
}

Image tile_grid(const std::vector<Image>& cells, int rows, int cols, int pad, float fill) {
  if (cells.empty()) throw ImageError("tile_grid needs at least one cell");
  const int64_t c = cells[0].dim(0), h = cells[0].dim(1), w = cells[0].dim(2);
  const int64_t H = rows * h + (rows + 1) * pad, W = cols * w + (cols + 1) * pad;
  Image out(Shape{c, H, W}, fill);
  for (size_t k = 0; k < cells.size() && k < static_cast<size_t>(rows * cols); ++k) {
    const Image& cell = cells[k];
    if (cell.empty()) continue;
    if (cell.shape() != cells[0].shape()) throw ImageError("tile_grid cells differ in shape");
    const int64_t oy = pad + static_cast<int64_t>(k / static_cast<size_t>(cols)) * (h + pad);
    const int64_t ox = pad + static_cast<int64_t>(k % static_cast<size_t>(cols)) * (w + pad);
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) out[(ci * H + oy + y) * W + ox + x] = cell[(ci * h + y) * w + x];
  }
  return out;
}

void draw_border(Image& img, float r, float g, float b, int thickness) {
  const int64_t h = img.dim(1), w = img.dim(2);
  const float col[3] = {r, g, b};
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (y >= thickness && y < h - thickness && x >= thickness && x < w - thickness) continue;
      for (int64_t c = 0; c < img.dim(0) && c < 3; ++c) img[(c * h + y) * w + x] = col[c];
    }
}

}  // namespace cropsim
