#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "crds/errors.hpp"
#include "crds/image_out.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace {

uint32_t rd32(const std::vector<uint8_t>& v, size_t off) {
  return (uint32_t(v[off]) << 24) | (uint32_t(v[off + 1]) << 16) | (uint32_t(v[off + 2]) << 8) |
         uint32_t(v[off + 3]);
}

struct Chunk {
  std::string type;
  std::vector<uint8_t> data;
};

// Independent walk of the container: verifies signature, per-chunk CRCs, and
// returns the chunk sequence.
std::vector<Chunk> parse_png(const std::vector<uint8_t>& b) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  REQUIRE(b.size() > 8);
  REQUIRE(std::memcmp(b.data(), sig, 8) == 0);
  std::vector<Chunk> out;
  size_t off = 8;
  while (off < b.size()) {
    REQUIRE(off + 12 <= b.size());
    const uint32_t len = rd32(b, off);
    REQUIRE(off + 12 + len <= b.size());
    Chunk c;
    c.type.assign(b.begin() + off + 4, b.begin() + off + 8);
    c.data.assign(b.begin() + off + 8, b.begin() + off + 8 + len);
    const uint32_t want = rd32(b, off + 8 + len);
    const uint32_t got =
        uint32_t(crc32(0L, b.data() + off + 4, static_cast<uInt>(4 + len)));
    CHECK(got == want);
    out.push_back(std::move(c));
    off += 12 + len;
  }
  return out;
}

// Inflate the IDAT stream and strip filter bytes (all rows must use filter 0).
std::vector<uint8_t> decode_pixels(const std::vector<Chunk>& chunks, int h, int w, int ch) {
  std::vector<uint8_t> z;
  for (const auto& c : chunks)
    if (c.type == "IDAT") z.insert(z.end(), c.data.begin(), c.data.end());
  const size_t stride = size_t(w) * ch;
  std::vector<uint8_t> raw(size_t(h) * (stride + 1));
  uLongf rawlen = static_cast<uLongf>(raw.size());
  REQUIRE(uncompress(raw.data(), &rawlen, z.data(), static_cast<uLong>(z.size())) == Z_OK);
  REQUIRE(rawlen == raw.size());
  std::vector<uint8_t> px;
  for (int y = 0; y < h; ++y) {
    REQUIRE(raw[size_t(y) * (stride + 1)] == 0);
    const uint8_t* row = raw.data() + size_t(y) * (stride + 1) + 1;
    px.insert(px.end(), row, row + stride);
  }
  return px;
}

}  // namespace

TEST_CASE("png: container structure, CRCs, and pixel round-trip") {
  crds::Image img(5, 7, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) img.at(y, x) = uint8_t(37 * y + 11 * x);

  const std::vector<uint8_t> bytes = crds::png_bytes(img);
  const std::vector<Chunk> chunks = parse_png(bytes);
  REQUIRE(chunks.size() >= 3);
  CHECK(chunks.front().type == "IHDR");
  CHECK(chunks.back().type == "IEND");
  CHECK(chunks.back().data.empty());

  const auto& ihdr = chunks.front().data;
  REQUIRE(ihdr.size() == 13);
  CHECK(rd32(ihdr, 0) == 7);   // width
  CHECK(rd32(ihdr, 4) == 5);   // height
  CHECK(ihdr[8] == 8);         // bit depth
  CHECK(ihdr[9] == 0);         // grayscale
  CHECK(ihdr[10] == 0);
  CHECK(ihdr[11] == 0);
  CHECK(ihdr[12] == 0);

  CHECK(decode_pixels(chunks, 5, 7, 1) == img.px);

  // deterministic bytes, and the file writer emits exactly them
  CHECK(crds::png_bytes(img) == bytes);
  const std::string path = testutil::tmp_path("io_png.png");
  crds::write_png(path, img);
  std::ifstream f(path, std::ios::binary);
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
  CHECK(file == bytes);
}

TEST_CASE("png: truecolor round-trip and input validation") {
  crds::Image img(3, 2, 3);
  uint8_t v = 1;
  for (auto& p : img.px) p = v += 7;
  const std::vector<uint8_t> bytes = crds::png_bytes(img);
  const std::vector<Chunk> chunks = parse_png(bytes);
  CHECK(chunks.front().data[9] == 2);  // truecolor
  CHECK(decode_pixels(chunks, 3, 2, 3) == img.px);

  CHECK_THROWS_AS(crds::png_bytes(crds::Image{}), crds::InvalidArgument);
  crds::Image two(2, 2, 2);
  CHECK_THROWS_AS(crds::png_bytes(two), crds::InvalidArgument);
  crds::Image bad(2, 2, 1);
  bad.px.pop_back();
  CHECK_THROWS_AS(crds::png_bytes(bad), crds::InvalidArgument);
  CHECK_THROWS_AS(crds::write_png("/nonexistent-dir/x.png", img), crds::IoError);
}

TEST_CASE("frame_to_image: clipping, normalization, and channel checks") {
  crds::Frame f({1, 2, 3});
  f.v = {-0.5, 0.0, 0.25, 0.5, 1.0, 2.0};
  const crds::Image img = crds::frame_to_image(f);
  CHECK(img.px == std::vector<uint8_t>({0, 0, 64, 128, 255, 255}));

  const crds::Image norm = crds::frame_to_image(f, true);
  CHECK(norm.px.front() == 0);    // -0.5 is the minimum
  CHECK(norm.px.back() == 255);   // 2.0 is the maximum
  CHECK(norm.px[3] == uint8_t(std::lround((0.5 + 0.5) / 2.5 * 255)));

  crds::Frame flat({1, 2, 2});
  flat.v = {0.7, 0.7, 0.7, 0.7};
  CHECK(crds::frame_to_image(flat, true).px == std::vector<uint8_t>(4, 128));

  crds::Frame rgb({3, 1, 2});
  rgb.v = {0.0, 1.0, 0.5, 0.5, 1.0, 0.0};
  const crds::Image c = crds::frame_to_image(rgb);
  CHECK(c.channels == 3);
  // planar input becomes interleaved output
  CHECK(c.at(0, 0, 0) == 0);
  CHECK(c.at(0, 0, 1) == 128);
  CHECK(c.at(0, 0, 2) == 255);
  CHECK(c.at(0, 1, 0) == 255);
  CHECK(c.at(0, 1, 1) == 128);
  CHECK(c.at(0, 1, 2) == 0);

  crds::Frame bad({2, 2, 2});
  CHECK_THROWS_AS(crds::frame_to_image(bad), crds::InvalidArgument);
}

TEST_CASE("arrow_map: static fields mark anchors only; flows stay inside the raster") {
  crds::Tensor<double> zero({2, 16, 16});
  const crds::Image still = crds::arrow_map(zero, 8);
  int dark = 0, anchors = 0;
  for (uint8_t p : still.px) {
    if (p < 255) dark++;
    if (p == 96) anchors++;
  }
  CHECK(anchors == 4);  // 16/8 = 2 grid points per axis
  CHECK(dark == 4);     // nothing but the anchors

  crds::Tensor<double> shift({2, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      shift.at(0, y, x) = 0.0;
      shift.at(1, y, x) = 3.0;
    }
  const crds::Image moved = crds::arrow_map(shift, 8);
  int moved_dark = 0;
  for (uint8_t p : moved.px) moved_dark += p < 255;
  CHECK(moved_dark > dark);  // arrows add shaft pixels
  // shaft extends to the right of an anchor
  CHECK(moved.at(4, 5) == 0);
  CHECK(moved.at(4, 7) == 0);

  // absurd magnitudes clamp instead of escaping the raster
  crds::Tensor<double> wild({2, 16, 16});
  for (auto& v : wild.v) v = 1e9;
  CHECK_NOTHROW(crds::arrow_map(wild, 8));

  CHECK_THROWS_AS(crds::arrow_map(crds::Tensor<double>({3, 4, 4}), 8), crds::InvalidArgument);
  CHECK_THROWS_AS(crds::arrow_map(zero, 1), crds::InvalidArgument);
}

TEST_CASE("histogram_image: bins fill, outliers drop, degenerate input stays flat") {
  std::vector<double> samples;
  for (int i = 0; i < 640; ++i) samples.push_back(-0.5 + (i + 0.5) / 640.0);
  const crds::Image h = crds::histogram_image(samples, -0.5, 0.5, 64, 120);
  CHECK(h.width == 64 * 4);
  CHECK(h.height == 120);
  // uniform data: every bin column contains bar pixels, bars all full height
  for (int b = 0; b < 64; ++b) CHECK(h.at(1, b * 4) == 220);

  std::vector<double> spiked = samples;
  spiked.push_back(9.0);
  spiked.push_back(-9.0);
  CHECK(crds::histogram_image(spiked, -0.5, 0.5, 64, 120).px == h.px);

  const crds::Image empty = crds::histogram_image({}, -0.5, 0.5, 8, 32);
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < empty.width; ++x) CHECK(empty.at(y, x) == 16);

  CHECK_THROWS_AS(crds::histogram_image(samples, 0.5, 0.5, 8, 32), crds::InvalidArgument);
  CHECK_THROWS_AS(crds::histogram_image(samples, -0.5, 0.5, 0, 32), crds::InvalidArgument);
}

TEST_CASE("binarize_at_median: magnitude sum against the exact median") {
  crds::Tensor<double> lat({2, 2, 2});
  // activities: |1|+|−1|=2, |2|+|0|=2, |−3|+|1|=4, |4|+|2|=6 → median (upper) 4
  lat.v = {1, 2, -3, 4, -1, 0, 1, 2};
  const crds::Image m = crds::binarize_at_median(lat);
  CHECK(m.px == std::vector<uint8_t>({0, 0, 255, 255}));
  CHECK_THROWS_AS(crds::binarize_at_median(crds::Tensor<double>({2, 2})),
                  crds::InvalidArgument);
}

TEST_CASE("hstack: geometry, gutters, and channel promotion") {
  crds::Image a(4, 3, 1, 10);
  crds::Image b(4, 2, 3, 200);
  const crds::Image s = crds::hstack({a, b}, 2);
  CHECK(s.height == 4);
  CHECK(s.width == 3 + 2 + 2);
  CHECK(s.channels == 3);
  CHECK(s.at(0, 0, 0) == 10);
  CHECK(s.at(0, 0, 2) == 10);   // gray promoted across channels
  CHECK(s.at(0, 3, 0) == 255);  // gutter stays white
  CHECK(s.at(0, 5, 1) == 200);

  crds::Image c(3, 3, 1);
  CHECK_THROWS_AS(crds::hstack({a, c}), crds::InvalidArgument);
  CHECK_THROWS_AS(crds::hstack({}), crds::InvalidArgument);
}