#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crds/media_io.hpp"
#include "crds/tensor.hpp"

namespace crds {

struct CodecConfig {
  int block = 8;
  int search_range = 8;   // integer-pel exhaustive window radius
  int qp = 37;
  enum class Gop { FIRST_INTRA_THEN_P } gop = Gop::FIRST_INTRA_THEN_P;

  void validate() const;
};

enum class PredMode { INTRA_DC, INTER };

struct BlockMotion {
  int row = 0, col = 0;       // block index within the padded tiling
  int dy = 0, dx = 0;         // integer-pel displacement into the reference
  PredMode mode = PredMode::INTRA_DC;
  double sad = 0.0;
};

// Everything the decoder-side analysis needs: motions plus the code-space
// residuals before and after quantization, tiled into padded frame shape.
struct CodecMetadata {
  int block = 8;
  double qstep = 0.0;
  int height = 0, width = 0;              // source geometry
  int pad_height = 0, pad_width = 0;      // block-aligned geometry
  int channels = 1;
  std::vector<std::vector<BlockMotion>> motions;     // [frame][block]
  std::vector<Tensor<double>> residual_coeffs;       // r^c, (C,Hp,Wp)
  std::vector<Tensor<double>> quantized_coeffs;      // r-hat^c, multiples of qstep
};

struct FramePrediction {
  Frame predicted;   // x-bar, padded shape
  Frame residual;    // cur - predicted, pre-quantization
  Frame recon;       // predicted + (hooked) residual, padded shape
  std::vector<BlockMotion> motions;
};

struct EncodeResult {
  RawClip lq;
  CodecMetadata meta;
  std::vector<Frame> recon;       // real-valued closed-loop frames, padded
  std::vector<Frame> predicted;   // x-bar per frame, padded
};

// HEVC-style step size: 2^((qp-4)/6).
double qstep(int qp);

Frame pad_to_blocks(const Frame& f, int block);           // edge replication
Frame crop_frame(const Frame& f, int height, int width);

// Exhaustive SAD search (channel 0) over the clipped (2R+1)^2 window.
// Ties: smaller |dy|+|dx| wins, then first in row-major (dy, dx) order.
BlockMotion block_motion_search(const Frame& cur, const Frame& ref, int by,
                                int bx, const CodecConfig& cfg);

// Per-block residual filter applied inside the closed loop; identity when
// absent. dims {C, block, block}.
using ResidualHook = std::function<Tensor<double>(const Tensor<double>&)>;

// Block-sequential prediction with in-loop reconstruction: INTER vs INTRA_DC
// by channel-0 SAD (INTER preferred on ties), intra DC from reconstructed
// top/left borders (0.5 when none). cur must already be block-aligned.
FramePrediction predict_frame(const Frame& cur, const std::vector<Frame>& recon_refs,
                              const CodecConfig& cfg,
                              const ResidualHook& hook = nullptr);

// Orthonormal 2-D DCT-II over an {n,n} tensor and its inverse.
Tensor<double> dct2(const Tensor<double>& block);
Tensor<double> idct2(const Tensor<double>& coeffs);

// q = round(c/delta), half away from zero; dequantize returns q*delta.
Tensor<double> quantize(const Tensor<double>& coeffs, double delta);
Tensor<double> dequantize(const Tensor<double>& q, double delta);

// Full closed-loop encode: predict from reconstructed references, transform
// the residual on 255-scaled samples, quantize, reconstruct, crop to source
// geometry for the emitted clip.
EncodeResult encode_clip(const RawClip& clip, const CodecConfig& cfg);

// Per-coefficient quantization errors r-hat^c - r^c, skipping coefficients
// with |r^c| < qstep*1e-6 (all-zero blocks would skew the histogram).
std::vector<double> noise_samples(const CodecMetadata& meta);

// Dense per-pixel views of the stored side-information, cropped to source
// geometry. motion_field broadcasts each block's vector over its pixels
// (plane 0 = dy, plane 1 = dx; intra blocks contribute zero). residual_frame
// inverse-transforms the quantized coefficients back to the [0,1] sample
// scale: it equals the closed-loop reconstruction minus its prediction.
Tensor<double> motion_field(const CodecMetadata& meta, size_t frame);
Frame residual_frame(const CodecMetadata& meta, size_t frame);

void save_metadata(const CodecMetadata& meta, const std::string& json_path,
                   const std::string& blob_path);
CodecMetadata load_metadata(const std::string& json_path,
                            const std::string& blob_path);

}  // namespace crds
