#pragma once

#include <string>
#include <vector>

#include "crds/ldr_ae.hpp"
#include "crds/media_io.hpp"
#include "crds/muna.hpp"
#include "crds/nn/graph.hpp"
#include "crds/nn/params.hpp"
#include "crds/rng.hpp"
#include "crds/tensor.hpp"

namespace crds {

// Whole-network shape: auto-encoder at the ends, `stages` denoising blocks in
// between, each owning its own attention, fusion, and propagation weights.
struct CrdsConfig {
  int stages = 4;          // N: number of denoising blocks
  int channels = 64;       // latent width (must equal ldrae.channels)
  MunaConfig muna;         // heads * head_dim must equal channels
  int fusion_hidden = 32;  // bottleneck width in the fusion residual block
  int rp_hidden = 32;      // hidden width of the temporal propagation scanners
  LdraeConfig ldrae;
  bool keep_trace = true;
  void validate() const;
};

// Parameter prefix of denoising block s (s = 1..N; the forward pass applies
// them in order s = N down to 1).
std::string stage_prefix(int s);

// Full parameter set: "enc.*" (group "encoder"), "dec.*", and per stage
// "s<k>.{pq,pk,pv,bias}", "s<k>.fuse.*", "s<k>.rp.{f,g,h}". Fresh weights
// form an identity network: the decoder output conv starts at zero, so
// enhanced == input bitwise.
template <typename T>
void init_crds_params(nn::ParamStore<T>& store, const CrdsConfig& cfg, Rng& rng);

// ---- graph level ------------------------------------------------------------

// Bidirectional first-order recurrence over time: h_t = F([r_t, h_{t-1}]),
// g_t = G([r_t, g_{t+1}]), output r~_t = r_t + H([h_t, g_t]). Weights under
// <prefix>.{f,g,h}; H's output conv starting at zero makes this the identity.
template <typename T>
std::vector<int> residual_propagation_nodes(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                                            const std::string& prefix,
                                            const std::vector<int>& r_seq);

struct StageNodes {
  std::vector<int> x_next;  // x^{s-1}_t = r~_t + xbar_t
  std::vector<int> xbar;    // fused attention prediction
  std::vector<int> resid;   // r_t = x^s_t - xbar_t
  std::vector<int> rtilde;  // propagated residual
};

// One denoising block: attention over references {t-m..t+m} (clamped at clip
// boundaries, m=0 with zero flow), fusion, residual propagation, recompose.
// Flow for m != 0 comes from `flow` applied to the current-stage latents
// (estimate_flow when empty).
template <typename T>
StageNodes denoising_block_nodes(nn::Graph<T>& g, const nn::MountedStore<T>& p, int s,
                                    const std::vector<int>& x_seq, const CrdsConfig& cfg,
                                    const FlowEstimator& flow = nullptr);

struct CrdsNodes {
  std::vector<int> inputs;                // the compressed input frames (constants)
  std::vector<std::vector<int>> latents;  // [s][t], s = 0..N
  std::vector<std::vector<int>> xbar;     // [s][t], s = 1..N ([0] unused)
  std::vector<std::vector<int>> resid;
  std::vector<std::vector<int>> rtilde;
  std::vector<int> recon;  // unclipped x^_t + decode(x^{l,N}, x^{l,0})
};

// Full forward pass on one clip as graph nodes (training path). The caller
// owns loss construction; reconstruction nodes are unclipped so gradients
// flow everywhere.
template <typename T>
CrdsNodes crds_forward_nodes(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                                const std::vector<Tensor<T>>& frames, const CrdsConfig& cfg,
                                const FlowEstimator& flow = nullptr);

// Data-space reconstruction from a pair of latent nodes: xhat + decode(lat_n, lat_s).
template <typename T>
int reconstruct_node(nn::Graph<T>& g, const nn::MountedStore<T>& p, int lat_n, int lat_s,
                     int xhat, const CrdsConfig& cfg);

// ---- data level (inference / inspection) ------------------------------------

struct ForwardTrace {
  std::vector<Frame> input;                     // x^_t as fed in
  std::vector<std::vector<LatentMap>> latents;  // [s][t], s = 0..N
  std::vector<std::vector<LatentMap>> xbar;     // [s][t], s = 1..N ([0] unused)
  std::vector<std::vector<LatentMap>> resid;
  std::vector<std::vector<LatentMap>> rtilde;
  bool kept() const { return !latents.empty(); }
};

struct CrdsForward {
  std::vector<Frame> enhanced;  // clipped to [0,1]
  ForwardTrace trace;           // populated when cfg.keep_trace
};

CrdsForward crds_forward(const std::vector<Frame>& lq, const nn::ParamStore<double>& w,
                         const CrdsConfig& cfg, const FlowEstimator& flow = nullptr);

// x^_t + decode(x^{l,N}, x^{l,s}), clipped; s = 0 reproduces the forward
// output bitwise. Requires a kept trace and 0 <= s <= N-1.
std::vector<Frame> reconstruct_intermediate(const ForwardTrace& trace, int s,
                                            const nn::ParamStore<double>& w,
                                            const CrdsConfig& cfg);

std::vector<LatentMap> residual_propagation(const std::vector<LatentMap>& r_seq,
                                            const nn::ParamStore<double>& w,
                                            const std::string& prefix);

}  // namespace crds
