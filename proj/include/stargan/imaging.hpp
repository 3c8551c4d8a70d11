#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stargan/architectures.hpp"
#include "stargan/tensor.hpp"

namespace stargan {

/// 8-bit interleaved RGB raster, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  void set(std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  bool operator==(const Image&) const = default;
};

/// Non-interlaced 8-bit RGB PNG.
std::vector<std::uint8_t> encode_png(const Image& image);
/// Accepts any PNG colour type/bit depth; the result is always 8-bit RGB.
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// [3, H, W] in [-1, 1] -> RGB. Values are clamped, then v -> (v + 1) * 127.5
/// rounded half away from zero.
Image tensor_to_image(const Tensor& t);
/// RGB -> [3, H, W] via p / 127.5 - 1.
Tensor image_to_tensor(const Image& image);
std::uint8_t quantize_unit(double v);

/// Bilinear resampling of a [C, H, W] tensor with half-pixel centres and
/// edge clamping.
Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w);

inline constexpr std::size_t kGridColumns = 8;
inline constexpr std::size_t kGridGutter = 2;
inline constexpr std::size_t kGlyphWidth = 5;
inline constexpr std::size_t kGlyphHeight = 7;
/// Header strip: glyph height plus the gutter above and below.
inline constexpr std::size_t kHeaderBand = kGlyphHeight + 2 * kGridGutter;

const std::vector<std::string>& grid_headers();

struct ImageGrid {
  std::vector<std::string> headers;
  std::vector<std::vector<Image>> rows;
  std::size_t tile = 0;
};

/// Maps a batch [N, 3, S, S] and one target domain per row to translated images.
using Translator = std::function<Tensor(const Tensor& batch, const std::vector<int>& domains)>;

/// Row r holds input r followed by its translation to every domain in index order.
/// Each input is [3, S, S] or [1, 3, S, S].
ImageGrid compose_grid(const std::vector<Tensor>& inputs, const Translator& translate, std::size_t domain_count = 7);
ImageGrid compose_grid(const std::vector<Tensor>& inputs, const Generator& generator, std::size_t domain_count = 7);

/// White background with 2-px gutters around every tile and a header strip on top.
/// Labels wider than a tile are clipped to it.
Image render_grid(const ImageGrid& grid);
std::vector<std::uint8_t> grid_png(const ImageGrid& grid);

/// Draws text with the built-in 5x7 font, one pixel of spacing between glyphs,
/// clipped to [x, x + max_width).
void draw_text(Image& image, std::size_t x, std::size_t y, const std::string& text, std::size_t max_width,
               std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0);

}  // namespace stargan
