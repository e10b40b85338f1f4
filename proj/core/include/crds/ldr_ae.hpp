#pragma once

#include <cstdint>
#include <vector>

#include "crds/media_io.hpp"
#include "crds/nn/graph.hpp"
#include "crds/nn/params.hpp"
#include "crds/noise_model.hpp"

namespace crds {

// Latent feature map, (channels, H, W) at full frame resolution.
template <typename T>
using LatentMapT = Tensor<T>;
using LatentMap = Tensor<double>;

struct LdraeConfig {
  int in_channels = 1;
  int channels = 64;      // latent width
  int enc_blocks = 5;     // residual blocks after the encoder stem
  int dec_blocks = 2;     // residual blocks in the decoder
  int dec_channels = 32;  // decoder internal width
  void validate() const;
};

// Parameter layout (ParamStore names):
//   enc.stem.{w,b}                in_channels -> channels, 3x3   [group "encoder"]
//   enc.rb<i>.{c1,c2}.{w,b}       channels -> channels, 3x3
//   dec.stem.{w,b}                2*channels -> dec_channels, 1x1 [group "main"]
//   dec.rb<i>.{c1,c2}.{w,b}       dec_channels -> dec_channels, 3x3
//   dec.out.{w,b}                 dec_channels -> in_channels, 3x3, zero-init
// The zero-initialized output convolution makes a fresh decoder emit an
// exactly-zero residual. Construction enforces the lightweight-decoder
// budget (decoder < 1/4 of encoder parameters).
template <typename T>
void init_ldrae_params(nn::ParamStore<T>& store, const LdraeConfig& cfg, Rng& rng);

// Graph builders shared by pretraining and the denoising network.
template <typename T>
int encode_node(nn::Graph<T>& g, const nn::MountedStore<T>& p, int x, const LdraeConfig& cfg);
template <typename T>
int decode_node(nn::Graph<T>& g, const nn::MountedStore<T>& p, int lat_lq, int lat_hq,
                const LdraeConfig& cfg);

// Convenience forward passes outside any training loop.
template <typename T>
LatentMapT<T> encode(const Tensor<T>& frame, const nn::ParamStore<T>& w, const LdraeConfig& cfg);
template <typename T>
Tensor<T> decode(const LatentMapT<T>& lat_lq, const LatentMapT<T>& lat_hq,
                 const nn::ParamStore<T>& w, const LdraeConfig& cfg);

// mean((pred + x_hat - x_hat_s)^2) / (alpha_s + eps): squared recovery error
// of the predicted degradation residual, weighted harder for less-degraded
// targets.
double ldrae_loss(const Frame& pred, const Frame& x_hat, const Frame& x_hat_s, double alpha_s,
                  double eps);
template <typename T>
int ldrae_loss_node(nn::Graph<T>& g, int pred, const Tensor<T>& x_hat, const Tensor<T>& x_hat_s,
                    double alpha_s, double eps);

struct PretrainConfig {
  int steps = 2500;
  int batch = 2;
  double lr = 1e-4;
  double eps = 0.25;  // loss weighting bias
  uint64_t seed = 1;
  LdraeConfig model;
  nn::AdamConfig adam;
};

struct PretrainResult {
  nn::ParamStore<float> weights;
  std::vector<double> loss_trace;  // mean batch loss per step
};

// Auto-encoder pretraining over paired patches: each sample draws a noise
// level s uniformly from {0..N-1}, builds the hybrid target, and minimizes
// ldrae_loss. Aborts with DivergenceError if the loss leaves the finite
// range. Fully deterministic for a fixed seed.
PretrainResult pretrain(const std::vector<PatchPair>& dataset, const NoiseSchedule& sched,
                        const PretrainConfig& cfg);

}  // namespace crds
