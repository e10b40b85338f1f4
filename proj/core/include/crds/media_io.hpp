#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crds/tensor.hpp"

namespace crds {

enum class Colorspace { GRAY, RGB };

// Real-valued frame in [0,1], planar (channels, height, width).
using Frame = Tensor<double>;

// A stored video: planar 8-bit frames plus header metadata.
struct RawClip {
  std::vector<std::vector<uint8_t>> frames;  // each plane-major, C*H*W bytes
  int height = 0;
  int width = 0;
  int channels = 1;
  std::pair<int64_t, int64_t> fps{25, 1};
  Colorspace colorspace = Colorspace::GRAY;

  size_t frame_count() const { return frames.size(); }
  size_t frame_bytes() const {
    return static_cast<size_t>(channels) * height * width;
  }
  void validate() const;  // throws InvalidArgument on broken invariants
};

struct MetricsReport {
  std::vector<double> per_frame_psnr;   // enhanced vs gt
  std::vector<double> per_frame_ssim;   // enhanced vs gt
  std::vector<double> per_frame_psnr_compressed;
  std::vector<double> per_frame_ssim_compressed;
  double delta_psnr = 0.0;
  double delta_ssim = 0.0;
};

struct PatchPair {
  Frame lq;
  Frame gt;
  int frame_index = 0;
  int y0 = 0;
  int x0 = 0;
};

inline constexpr double kPsnrCapDb = 100.0;

// Container I/O (magic CRDSRAW1; see README for the layout).
RawClip load_clip(const std::string& path);
void save_clip(const RawClip& clip, const std::string& path);

// 8-bit samples -> [0,1] planar frames (value = byte / 255).
std::vector<Frame> to_frames(const RawClip& clip);
Frame to_frame(const RawClip& clip, size_t index);

// Frames -> 8-bit clip (round half away from zero, clamped).
RawClip from_frames(const std::vector<Frame>& frames, Colorspace cs,
                    std::pair<int64_t, int64_t> fps = {25, 1});

// BT.601 luma plane for RGB, identity for single-channel frames.
Tensor<double> luma_plane(const Frame& f);

// 10*log10(1/MSE) on the luma plane (full-channel MSE when use_luma=false),
// capped at 100 dB when MSE < 1e-10.
double psnr(const Frame& a, const Frame& b, bool use_luma = true);

// Single-scale SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01 K2=0.03,
// luma plane, statistics over the valid (un-padded) region.
double ssim(const Frame& a, const Frame& b, bool use_luma = true);

std::vector<PatchPair> sample_patches(const RawClip& lq, const RawClip& gt,
                                      int size, int count, uint64_t seed);

MetricsReport delta_metrics(const RawClip& enhanced, const RawClip& compressed,
                            const RawClip& gt, bool use_luma = true);

std::string metrics_to_json(const MetricsReport& r);
std::string metrics_to_csv(const MetricsReport& r);

}  // namespace crds
