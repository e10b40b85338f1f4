#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crds/media_io.hpp"
#include "crds/tensor.hpp"

namespace crds {

// 8-bit raster, row-major interleaved; 1 channel (gray) or 3 (RGB).
struct Image {
  int height = 0, width = 0, channels = 1;
  std::vector<uint8_t> px;

  Image() = default;
  Image(int h, int w, int c, uint8_t fill = 255)
      : height(h), width(w), channels(c),
        px(static_cast<size_t>(h) * w * c, fill) {}

  uint8_t& at(int y, int x, int c = 0) {
    return px[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c = 0) const {
    return px[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Minimal PNG encoder: 8-bit grayscale or truecolor, filter 0 scanlines,
// deflate-compressed. Output bytes are a pure function of the pixels.
std::vector<uint8_t> png_bytes(const Image& img);
void write_png(const std::string& path, const Image& img);

// (1,H,W) or (3,H,W) frame to 8-bit; values clipped to [0,1], or min/max
// rescaled first when normalize is set (flat frames map to mid-gray).
Image frame_to_image(const Frame& f, bool normalize = false);

// Per-pixel flow (plane 0 = dy, plane 1 = dx) drawn as arrows sampled on a
// cell grid, dark on white. gain stretches arrow length in pixels per unit.
Image arrow_map(const Tensor<double>& flow, int cell = 8, double gain = 1.0);

// Bar histogram of samples over [lo, hi); samples outside are dropped.
// Bright bars on dark ground, baseline along the bottom row.
Image histogram_image(const std::vector<double>& samples, double lo, double hi,
                      int bins = 64, int height = 120);

// Channel-wise magnitude sum of a (C,h,w) map, binarized at its median:
// 255 where the activity reaches the median, 0 below.
Image binarize_at_median(const Tensor<double>& latent);

// Side-by-side composition on a white gutter; heights must match.
Image hstack(const std::vector<Image>& imgs, int gutter = 6);

}  // namespace crds
