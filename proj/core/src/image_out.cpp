#include "crds/image_out.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "crds/errors.hpp"

namespace crds {

namespace {

void be32(std::vector<uint8_t>& out, uint32_t x) {
  out.push_back(static_cast<uint8_t>(x >> 24));
  out.push_back(static_cast<uint8_t>(x >> 16));
  out.push_back(static_cast<uint8_t>(x >> 8));
  out.push_back(static_cast<uint8_t>(x));
}

void chunk(std::vector<uint8_t>& out, const char* type, const std::vector<uint8_t>& data) {
  be32(out, static_cast<uint32_t>(data.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, out.data() + start, static_cast<uInt>(4 + data.size())));
  be32(out, crc);
}

uint8_t to_byte(double v) {
  const double c = std::min(std::max(v, 0.0), 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

// Bresenham segment, endpoints already inside the raster.
void draw_line(Image& img, int y0, int x0, int y1, int x1, uint8_t shade) {
  const int dy = std::abs(y1 - y0), dx = std::abs(x1 - x0);
  const int sy = y0 < y1 ? 1 : -1, sx = x0 < x1 ? 1 : -1;
  int err = dx - dy;
  int y = y0, x = x0;
  for (;;) {
    for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = shade;
    if (y == y1 && x == x1) break;
    const int e2 = 2 * err;
    if (e2 > -dy) {
      err -= dy;
      x += sx;
    }
    if (e2 < dx) {
      err += dx;
      y += sy;
    }
  }
}

}  // namespace

std::vector<uint8_t> png_bytes(const Image& img) {
  if (img.height < 1 || img.width < 1)
    throw InvalidArgument("png: empty image");
  if (img.channels != 1 && img.channels != 3)
    throw InvalidArgument("png: channels must be 1 or 3");
  if (img.px.size() != static_cast<size_t>(img.height) * img.width * img.channels)
    throw InvalidArgument("png: pixel buffer size mismatch");

  // filter byte 0 in front of every scanline
  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (stride + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = img.px.data() + static_cast<size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  z.resize(zlen);

  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  be32(ihdr, static_cast<uint32_t>(img.width));
  be32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                                 // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);         // gray / truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", z);
  chunk(out, "IEND", {});
  return out;
}

void write_png(const std::string& path, const Image& img) {
  const std::vector<uint8_t> bytes = png_bytes(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write: " + path);
}

Image frame_to_image(const Frame& f, bool normalize) {
  if (f.dims.size() != 3 || (f.dim(0) != 1 && f.dim(0) != 3))
    throw InvalidArgument("frame_to_image: want (1,H,W) or (3,H,W)");
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  double lo = 0.0, scale = 1.0;
  if (normalize) {
    double mn = f.v[0], mx = f.v[0];
    for (double v : f.v) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    if (mx - mn < 1e-12) {
      Image img(h, w, c, 128);
      return img;
    }
    lo = mn;
    scale = 1.0 / (mx - mn);
  }
  Image img(h, w, c);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(y, x, ch) = to_byte((f.at(ch, y, x) - lo) * scale);
  return img;
}

Image arrow_map(const Tensor<double>& flow, int cell, double gain) {
  if (flow.dims.size() != 3 || flow.dim(0) != 2)
    throw InvalidArgument("arrow_map: want (2,H,W) flow");
  if (cell < 2) throw InvalidArgument("arrow_map: cell must be >= 2");
  const int h = flow.dim(1), w = flow.dim(2);
  Image img(h, w, 1, 255);
  const auto clampi = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
  for (int y = cell / 2; y < h; y += cell)
    for (int x = cell / 2; x < w; x += cell) {
      const int ty = clampi(y + static_cast<int>(std::lround(gain * flow.at(0, y, x))), h - 1);
      const int tx = clampi(x + static_cast<int>(std::lround(gain * flow.at(1, y, x))), w - 1);
      draw_line(img, y, x, ty, tx, 0);
      img.at(y, x) = 96;  // anchor marker so static fields still show the grid
    }
  return img;
}

Image histogram_image(const std::vector<double>& samples, double lo, double hi, int bins,
                      int height) {
  if (!(hi > lo)) throw InvalidArgument("histogram: empty range");
  if (bins < 1 || height < 8) throw InvalidArgument("histogram: bad geometry");
  std::vector<int64_t> count(bins, 0);
  for (double s : samples) {
    if (s < lo || s >= hi) continue;
    int b = static_cast<int>((s - lo) / (hi - lo) * bins);
    b = std::min(b, bins - 1);
    count[b]++;
  }
  const int64_t peak = *std::max_element(count.begin(), count.end());
  const int bw = 4;
  Image img(height, bins * bw, 1, 16);
  for (int x = 0; x < img.width; ++x) img.at(height - 1, x) = 128;  // baseline
  if (peak == 0) return img;
  for (int b = 0; b < bins; ++b) {
    const int bar =
        static_cast<int>(std::lround(static_cast<double>(count[b]) / peak * (height - 2)));
    for (int y = 0; y < bar; ++y)
      for (int x = b * bw; x < (b + 1) * bw - 1; ++x) img.at(height - 2 - y, x) = 220;
  }
  return img;
}

Image binarize_at_median(const Tensor<double>& latent) {
  if (latent.dims.size() != 3) throw InvalidArgument("binarize_at_median: want (C,h,w)");
  const int c = latent.dim(0), h = latent.dim(1), w = latent.dim(2);
  std::vector<double> act(static_cast<size_t>(h) * w, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) act[static_cast<size_t>(y) * w + x] += std::abs(latent.at(ch, y, x));
  std::vector<double> sorted = act;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double med = sorted[sorted.size() / 2];
  Image img(h, w, 1, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (act[static_cast<size_t>(y) * w + x] >= med) img.at(y, x) = 255;
  return img;
}

Image hstack(const std::vector<Image>& imgs, int gutter) {
  if (imgs.empty()) throw InvalidArgument("hstack: no images");
  if (gutter < 0) throw InvalidArgument("hstack: negative gutter");
  const int h = imgs[0].height;
  int channels = 1;
  int w = 0;
  for (const auto& im : imgs) {
    if (im.height != h) throw InvalidArgument("hstack: heights differ");
    channels = std::max(channels, im.channels);
    w += im.width;
  }
  w += gutter * static_cast<int>(imgs.size() - 1);
  Image out(h, w, channels, 255);
  int x0 = 0;
  for (const auto& im : imgs) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < im.width; ++x)
        for (int c = 0; c < channels; ++c)
          out.at(y, x0 + x, c) = im.at(y, x, im.channels == 1 ? 0 : c);
    x0 += im.width + gutter;
  }
  return out;
}

}  // namespace crds
