#include "cpn/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cpn {

uint8_t quantize8(float v) {
  if (v <= 0.0f) return 0;
  float q = std::floor(v * 255.0f + 0.5f);
  if (q >= 255.0f) return 255;
  return static_cast<uint8_t>(q);
}

namespace {

struct FileCloser {
  std::FILE* f = nullptr;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

void write_png(const std::string& path, int height, int width, int channels,
               const std::vector<uint8_t>& rows_interleaved) {
  FileCloser fc;
  fc.f = std::fopen(path.c_str(), "wb");
  if (!fc.f) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error while writing " + path);
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(&rows_interleaved[static_cast<size_t>(y) * width * channels]);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png(const std::string& path, int& height, int& width, int channels) {
  FileCloser fc;
  fc.f = std::fopen(path.c_str(), "rb");
  if (!fc.f) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error while reading " + path);
  }
  png_init_io(png, fc.f);
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (channels == 3) {
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
  } else {
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  std::vector<uint8_t> out(static_cast<size_t>(height) * width * channels);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = &out[static_cast<size_t>(y) * width * channels];
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void save_image(const std::string& path, const Image& image) {
  if (image.empty()) throw std::invalid_argument("save_image: empty image");
  std::vector<uint8_t> rows(static_cast<size_t>(image.height) * image.width * 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        rows[(static_cast<size_t>(y) * image.width + x) * 3 + c] = quantize8(image.at(c, y, x));
  write_png(path, image.height, image.width, 3, rows);
}

Image load_image(const std::string& path) {
  int h = 0, w = 0;
  auto rows = read_png(path, h, w, 3);
  Image im;
  im.height = h;
  im.width = w;
  im.values.resize(static_cast<size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(c, y, x) = rows[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0f;
  return im;
}

void save_mask(const std::string& path, const Mask& mask) {
  if (mask.ids.empty()) throw std::invalid_argument("save_mask: empty mask");
  write_png(path, mask.height, mask.width, 1, mask.ids);
}

Mask load_mask(const std::string& path) {
  Mask m;
  m.ids = read_png(path, m.height, m.width, 1);
  return m;
}

DatasetMean compute_dataset_mean(const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("compute_dataset_mean: no samples");
  double acc[3] = {0.0, 0.0, 0.0};
  int64_t count = 0;
  for (const auto& s : samples) {
    int64_t px = static_cast<int64_t>(s.image.height) * s.image.width;
    for (int c = 0; c < 3; ++c) {
      const float* base = &s.image.values[static_cast<size_t>(c) * px];
      for (int64_t i = 0; i < px; ++i) acc[c] += base[i];
    }
    count += px;
  }
  DatasetMean mean;
  for (int c = 0; c < 3; ++c) mean.rgb[static_cast<size_t>(c)] = static_cast<float>(acc[c] / static_cast<double>(count));
  return mean;
}

namespace {

// Nine anchors of the viridis ramp, linearly interpolated.
const float kViridis[9][3] = {
    {0.267f, 0.005f, 0.329f}, {0.283f, 0.141f, 0.458f}, {0.254f, 0.265f, 0.530f},
    {0.207f, 0.372f, 0.553f}, {0.164f, 0.471f, 0.558f}, {0.128f, 0.567f, 0.551f},
    {0.135f, 0.659f, 0.518f}, {0.267f, 0.749f, 0.441f}, {0.993f, 0.906f, 0.144f}};

}  // namespace

Image render_heatmap(const std::vector<float>& map, int height, int width) {
  if (static_cast<int64_t>(map.size()) != static_cast<int64_t>(height) * width)
    throw std::invalid_argument("render_heatmap: map size does not match extents");
  Image im = Image::filled(height, width, 0, 0, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      float v = map[static_cast<size_t>(y) * width + x];
      v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      float pos = v * 8.0f;
      int lo = static_cast<int>(pos);
      if (lo > 7) lo = 7;
      float t = pos - lo;
      for (int c = 0; c < 3; ++c)
        im.at(c, y, x) = kViridis[lo][c] * (1.0f - t) + kViridis[lo + 1][c] * t;
    }
  return im;
}

Image crop_image(const Image& image, int y0, int x0, int h, int w) {
  if (h <= 0 || w <= 0 || y0 < 0 || x0 < 0 || y0 + h > image.height || x0 + w > image.width)
    throw std::invalid_argument("crop_image: window " + std::to_string(w) + "x" +
                                std::to_string(h) + "+" + std::to_string(x0) + "+" +
                                std::to_string(y0) + " outside " + std::to_string(image.width) +
                                "x" + std::to_string(image.height));
  Image out;
  out.height = h;
  out.width = w;
  out.values.resize(static_cast<size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y0 + y, x0 + x);
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out;
  out.height = image.height;
  out.width = image.width;
  out.values.resize(image.values.size());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image pad_reflect(const Image& image, int pad_bottom, int pad_right) {
  if (pad_bottom < 0 || pad_right < 0)
    throw std::invalid_argument("pad_reflect: negative padding");
  if (pad_bottom >= image.height || pad_right >= image.width)
    throw std::invalid_argument("pad_reflect: padding must be smaller than the image");
  Image out;
  out.height = image.height + pad_bottom;
  out.width = image.width + pad_right;
  out.values.resize(static_cast<size_t>(3) * out.height * out.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out.height; ++y) {
      int sy = y < image.height ? y : 2 * image.height - 1 - y;
      for (int x = 0; x < out.width; ++x) {
        int sx = x < image.width ? x : 2 * image.width - 1 - x;
        out.at(c, y, x) = image.at(c, sy, sx);
      }
    }
  return out;
}

std::array<float, 3> distinct_color(int index) {
  // Golden-angle hue walk keeps neighbouring indices visually far apart.
  float h = std::fmod(static_cast<float>(index) * 0.61803399f, 1.0f) * 6.0f;
  float s = 0.65f, v = 0.95f;
  int i = static_cast<int>(h);
  float f = h - i;
  float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace cpn
