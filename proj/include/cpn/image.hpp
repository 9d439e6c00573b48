#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cpn {

// Planar RGB image, values in [0,1], layout [3][H][W].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  static Image filled(int h, int w, float r, float g, float b) {
    Image im;
    im.height = h;
    im.width = w;
    im.values.resize(static_cast<size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        im.at(0, y, x) = r;
        im.at(1, y, x) = g;
        im.at(2, y, x) = b;
      }
    return im;
  }

  float& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  bool empty() const { return values.empty(); }
};

// Dense class-id map; 0 is background.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> ids;

  uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y) * width + x]; }
};

struct DatasetMean {
  std::array<float, 3> rgb{0.0f, 0.0f, 0.0f};
};

/// One weakly supervised sample: the mask ships with the data for evaluation
// only; training consumes just the presence labels.
struct LabeledSample {
  Image image;
  std::vector<uint8_t> labels;  // one presence bit per foreground class
  Mask mask;
};

// 8-bit PNG round trip. Values are quantised round-half-up to the /255 grid.
void save_image(const std::string& path, const Image& image);
Image load_image(const std::string& path);
void save_mask(const std::string& path, const Mask& mask);
Mask load_mask(const std::string& path);

uint8_t quantize8(float v);

DatasetMean compute_dataset_mean(const std::vector<LabeledSample>& samples);

// Augmentation and padding primitives.
Image crop_image(const Image& image, int y0, int x0, int h, int w);
Image flip_horizontal(const Image& image);
// Mirror padding (edge pixel included) on the bottom/right sides only.
Image pad_reflect(const Image& image, int pad_bottom, int pad_right);

// Viridis-style rendering of a [0,1] scalar map, for CAM inspection dumps.
Image render_heatmap(const std::vector<float>& map, int height, int width);

// Stable distinct color for label visualisations.
std::array<float, 3> distinct_color(int index);

}  // namespace cpn
