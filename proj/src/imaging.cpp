#include "stargan/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "stargan/errors.hpp"

namespace stargan {

void Image::set(std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  std::uint8_t* p = &rgb[(y * width + x) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.width == 0 || image.height == 0 || image.rgb.size() != image.width * image.height * 3) {
    throw DimensionError("encode_png: image buffer does not match " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + " RGB");
  }
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("encode_png: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("encode_png: ") + desc.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw IoError(std::string("decode_png: ") + desc.message);
  }
  desc.format = PNG_FORMAT_RGB;
  Image image(desc.width, desc.height);
  // A white background is composited under any alpha channel.
  png_color background{255, 255, 255};
  if (!png_image_finish_read(&desc, &background, image.rgb.data(), 0, nullptr)) {
    std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("decode_png: " + msg);
  }
  return image;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& image) { write_file_bytes(path, encode_png(image)); }

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::uint8_t quantize_unit(double v) {
  if (std::isnan(v)) v = -1.0;
  v = std::clamp(v, -1.0, 1.0);
  // std::round rounds halves away from zero.
  return static_cast<std::uint8_t>(std::round((v + 1.0) * 127.5));
}

Image tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw DimensionError("tensor_to_image: expected [3, H, W], got " + shape_to_string(t.shape()));
  }
  const std::size_t h = t.dim(1), w = t.dim(2), plane = h * w;
  Image image(w, h);
  auto d = t.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) image.rgb[i * 3 + c] = quantize_unit(d[c * plane + i]);
  }
  return image;
}

Tensor image_to_tensor(const Image& image) {
  const std::size_t plane = image.width * image.height;
  std::vector<double> values(3 * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) values[c * plane + i] = image.rgb[i * 3 + c] / 127.5 - 1.0;
  }
  return Tensor({3, image.height, image.width}, std::move(values));
}

Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w) {
  if (chw.rank() != 3) throw DimensionError("resize_bilinear: expected [C, H, W], got " + shape_to_string(chw.shape()));
  if (out_h == 0 || out_w == 0) throw ContractError("resize_bilinear: empty output size");
  const std::size_t channels = chw.dim(0), in_h = chw.dim(1), in_w = chw.dim(2);
  if (in_h == out_h && in_w == out_w) return chw.detach().clone();

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      result[o] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return result;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);

  auto src = chw.data();
  std::vector<double> out(channels * out_h * out_w);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = src.data() + c * in_h * in_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double* r0 = plane + ty[y].lo * in_w;
      const double* r1 = plane + ty[y].hi * in_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double top = r0[tx[x].lo] + (r0[tx[x].hi] - r0[tx[x].lo]) * tx[x].frac;
        const double bottom = r1[tx[x].lo] + (r1[tx[x].hi] - r1[tx[x].lo]) * tx[x].frac;
        out[(c * out_h + y) * out_w + x] = top + (bottom - top) * ty[y].frac;
      }
    }
  }
  return Tensor({channels, out_h, out_w}, std::move(out));
}

// ---------------------------------------------------------------------------
// text

namespace {

using Glyph = std::array<std::uint8_t, kGlyphHeight>;

const std::unordered_map<char, Glyph>& font() {
  static const std::unordered_map<char, Glyph> table = {
    {'A', {0x0e, 0x11, 0x11, 0x11, 0x1f, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a}},
    {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0a, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
    {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1e}},
    {'c', {0x00, 0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e}},
    {'d', {0x01, 0x01, 0x0d, 0x13, 0x11, 0x11, 0x0f}},
    {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
    {'f', {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08}},
    {'g', {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
    {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
    {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0c}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
    {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'m', {0x00, 0x00, 0x1a, 0x15, 0x15, 0x11, 0x11}},
    {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'o', {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e}},
    {'p', {0x00, 0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10}},
    {'q', {0x00, 0x00, 0x0d, 0x13, 0x0f, 0x01, 0x01}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'s', {0x00, 0x00, 0x0e, 0x10, 0x0e, 0x01, 0x1e}},
    {'t', {0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d}},
    {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'w', {0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0a}},
    {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
    {'y', {0x00, 0x00, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
    {'z', {0x00, 0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f}},
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},

  };
  return table;
}

constexpr Glyph kMissingGlyph = {0x1f, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1f};
constexpr Glyph kBlankGlyph = {0, 0, 0, 0, 0, 0, 0};

}  // namespace

void draw_text(Image& image, std::size_t x, std::size_t y, const std::string& text, std::size_t max_width,
               std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const std::size_t limit = std::min(image.width, x + max_width);
  std::size_t pen = x;
  for (char ch : text) {
    if (pen >= limit) break;
    const Glyph* glyph = &kBlankGlyph;
    if (ch != ' ') {
      auto it = font().find(ch);
      glyph = it == font().end() ? &kMissingGlyph : &it->second;
    }
    for (std::size_t row = 0; row < kGlyphHeight && y + row < image.height; ++row) {
      for (std::size_t col = 0; col < kGlyphWidth; ++col) {
        if (pen + col >= limit) break;
        if ((*glyph)[row] & (0x10 >> col)) image.set(pen + col, y + row, r, g, b);
      }
    }
    pen += kGlyphWidth + 1;
  }
}

// ---------------------------------------------------------------------------
// grids

const std::vector<std::string>& grid_headers() {
  static const std::vector<std::string> headers = {"Input", "Angry",   "Disgust", "Fear",
                                                   "Happy", "Neutral", "Sad",     "Surprised"};
  return headers;
}

namespace {

Tensor as_batch(const Tensor& t) {
  if (t.rank() == 3) return reshape(t.detach(), {1, t.dim(0), t.dim(1), t.dim(2)});
  if (t.rank() == 4 && t.dim(0) == 1) return t.detach();
  throw DimensionError("compose_grid: expected [3, S, S] or [1, 3, S, S], got " + shape_to_string(t.shape()));
}

Tensor sample_of(const Tensor& batch, std::size_t n) {
  Tensor row = slice(batch, 0, n, 1);
  return reshape(row, {batch.dim(1), batch.dim(2), batch.dim(3)});
}

}  // namespace

ImageGrid compose_grid(const std::vector<Tensor>& inputs, const Translator& translate, std::size_t domain_count) {
  ImageGrid grid;
  grid.headers = grid_headers();
  grid.headers.resize(std::min(grid.headers.size(), domain_count + 1));
  for (std::size_t k = grid.headers.size(); k < domain_count + 1; ++k) grid.headers.push_back(std::to_string(k - 1));

  NoGradGuard no_grad;
  for (const Tensor& input : inputs) {
    Tensor x = as_batch(input);
    if (grid.tile == 0) grid.tile = x.dim(3);
    if (x.dim(2) != grid.tile || x.dim(3) != grid.tile) {
      throw DimensionError("compose_grid: all inputs must share one square size");
    }
    std::vector<Tensor> copies(domain_count, x);
    std::vector<int> domains(domain_count);
    for (std::size_t k = 0; k < domain_count; ++k) domains[k] = static_cast<int>(k);
    Tensor translated = translate(concat(copies, 0), domains);
    if (translated.rank() != 4 || translated.dim(0) != domain_count) {
      throw DimensionError("compose_grid: translator returned " + shape_to_string(translated.shape()));
    }

    std::vector<Image> row;
    row.push_back(tensor_to_image(sample_of(x, 0)));
    for (std::size_t k = 0; k < domain_count; ++k) row.push_back(tensor_to_image(sample_of(translated, k)));
    grid.rows.push_back(std::move(row));
  }
  return grid;
}

ImageGrid compose_grid(const std::vector<Tensor>& inputs, const Generator& generator, std::size_t domain_count) {
  return compose_grid(
      inputs, [&generator](const Tensor& batch, const std::vector<int>& domains) {
        return generator.forward(batch, domains);
      },
      domain_count);
}

Image render_grid(const ImageGrid& grid) {
  const std::size_t columns = grid.headers.size();
  const std::size_t tile = grid.tile;
  const std::size_t width = columns * tile + (columns + 1) * kGridGutter;
  const std::size_t height = kHeaderBand + grid.rows.size() * tile + (grid.rows.size() + 1) * kGridGutter;
  Image sheet(width, height, 255);

  for (std::size_t c = 0; c < columns; ++c) {
    const std::size_t x0 = kGridGutter + c * (tile + kGridGutter);
    draw_text(sheet, x0, kGridGutter, grid.headers[c], tile);
  }
  for (std::size_t r = 0; r < grid.rows.size(); ++r) {
    const std::size_t y0 = kHeaderBand + kGridGutter + r * (tile + kGridGutter);
    for (std::size_t c = 0; c < grid.rows[r].size() && c < columns; ++c) {
      const Image& t = grid.rows[r][c];
      if (t.width != tile || t.height != tile) throw DimensionError("render_grid: tile size mismatch");
      const std::size_t x0 = kGridGutter + c * (tile + kGridGutter);
      for (std::size_t y = 0; y < tile; ++y) {
        std::copy_n(&t.rgb[y * tile * 3], tile * 3, &sheet.rgb[((y0 + y) * width + x0) * 3]);
      }
    }
  }
  return sheet;
}

std::vector<std::uint8_t> grid_png(const ImageGrid& grid) { return encode_png(render_grid(grid)); }

}  // namespace stargan
