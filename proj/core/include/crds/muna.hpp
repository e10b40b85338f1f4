#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crds/ldr_ae.hpp"
#include "crds/nn/blocks.hpp"
#include "crds/nn/graph.hpp"
#include "crds/nn/params.hpp"
#include "crds/rng.hpp"
#include "crds/tensor.hpp"

namespace crds {

// Dense displacement field (2,H,W): plane 0 = dy, plane 1 = dx, pointing from
// the current frame into the reference (same convention as the codec MVs).
using FlowField = Tensor<double>;

struct MunaConfig {
  int window = 3;           // odd; k = window^2 neighbors per reference
  int temporal_radius = 1;  // references t-m .. t+m (m = 0 is the intra pass)
  int heads = 4;
  int head_dim = 16;  // heads * head_dim must equal the latent channel count
  void validate(int channels) const;
};

// One attention pass against a single reference: raw logits (pre-scaling
// q·k + relative-position bias, laid out (heads, H*W, k) with k neighbors in
// window row-major order), combined motion vectors, and the geometry needed
// to re-aggregate.
struct AttentionResult {
  Tensor<double> logits;  // (heads, H*W, k)
  Tensor<double> mv;      // (2, H, W): flow + head-averaged soft-argmax offset
  FlowField flow;         // the flow the window placement used
  int window = 0;
  int heads = 0;
  int head_dim = 0;
};

// Pluggable frame-pair flow hook: (f_t, f_ref) -> (2,H,W) field.
using FlowEstimator =
    std::function<FlowField(const Tensor<double>&, const Tensor<double>&)>;

// Default estimator: integer-pel SAD block matching on channel 0 (edge-padded
// to the block grid, cropped back), one vector per block broadcast to its
// pixels. Parameter-free; reuses the codec's exhaustive search, so identical
// inputs give a zero field by the search's rest-preferring tie break.
FlowField estimate_flow(const Tensor<double>& f_t, const Tensor<double>& f_ref,
                        int block = 8, int search_range = 8);

// ---- weights ---------------------------------------------------------------
// Attention weights under <prefix>.: pq.{w,b}, pk.{w,b}, pv.{w,b} (1x1, CxC)
// and bias (heads, (2w-1)^2), shared across references. P^V starts as the
// identity and the relative-position table at zero, so a fresh head passes
// reference values through unchanged.
template <typename T>
void init_muna_params(nn::ParamStore<T>& store, const std::string& prefix,
                      int channels, const MunaConfig& cfg, Rng& rng,
                      const std::string& group = "main");

// Fusion of the 2*m_w+1 per-reference predictions: channel concat -> linear
// 1x1 stem (initialized to select the intra map exactly) -> bottleneck
// residual block whose second conv starts at zero. Names under <prefix>.:
// stem.{w,b}, rb0.c1.{w,b}, rb0.c2.{w,b}.
template <typename T>
void init_fusion_params(nn::ParamStore<T>& store, const std::string& prefix,
                        int channels, int n_inputs, int hidden, Rng& rng,
                        const std::string& group = "main");

// ---- graph-level ops (training path) ---------------------------------------
// Q from the current latent, K/V from the reference latent, windowed
// softmax((QK + B)/sqrt(d)) aggregation of V. Returns the prediction node.
template <typename T>
int muna_predict_node(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                      const std::string& prefix, int h_t, int h_ref,
                      const FlowField& flow, const MunaConfig& cfg,
                      nn::AttnArtifacts* art = nullptr);

template <typename T>
int fuse_predictions_node(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                          const std::string& prefix,
                          const std::vector<int>& preds);

// ---- tensor-level ops (inspection / oracle path) ---------------------------
// Motion-estimation view of one attention pass: logits and motion vectors.
AttentionResult muna_me(const LatentMap& h_t, const LatentMap& h_ref,
                        const FlowField& flow, const nn::ParamStore<double>& w,
                        const MunaConfig& cfg, const std::string& prefix = "");

// Aggregation from a (possibly hand-built) attention result: softmax over the
// stored logits, weighted sum of P^V(h_ref) per head, heads reassembled into
// the full channel layout.
LatentMap muna_agp(const AttentionResult& att, const LatentMap& h_ref,
                   const nn::ParamStore<double>& w, const MunaConfig& cfg,
                   const std::string& prefix = "");

// r = x - x_bar, entrywise.
LatentMap extract_residual(const LatentMap& x, const LatentMap& x_bar);

}  // namespace crds
