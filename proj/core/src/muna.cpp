#include "crds/muna.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crds/errors.hpp"
#include "crds/toy_codec.hpp"

namespace crds {

namespace {

std::string jn(const std::string& prefix, const char* name) {
  return prefix.empty() ? std::string(name) : prefix + "." + name;
}

}  // namespace

void MunaConfig::validate(int channels) const {
  if (window < 1 || window % 2 == 0)
    throw InvalidArgument("MunaConfig: window must be odd and positive");
  if (temporal_radius < 0)
    throw InvalidArgument("MunaConfig: temporal_radius must be >= 0");
  if (heads < 1 || head_dim < 1)
    throw InvalidArgument("MunaConfig: heads and head_dim must be positive");
  if (heads * head_dim != channels)
    throw InvalidArgument("MunaConfig: heads*head_dim must equal channels");
}

FlowField estimate_flow(const Tensor<double>& f_t, const Tensor<double>& f_ref,
                        int block, int search_range) {
  if (f_t.dims.size() != 3) throw InvalidArgument("estimate_flow: frames must be (C,H,W)");
  require_same_shape(f_t, f_ref, "estimate_flow");
  const int h = f_t.dim(1), w = f_t.dim(2);
  CodecConfig cc;
  cc.block = block;
  cc.search_range = search_range;
  cc.validate();

  const Frame cur = pad_to_blocks(f_t, block);
  const Frame ref = pad_to_blocks(f_ref, block);
  FlowField flow({2, h, w});
  for (int y0 = 0; y0 < cur.dim(1); y0 += block) {
    for (int x0 = 0; x0 < cur.dim(2); x0 += block) {
      const BlockMotion bm = block_motion_search(cur, ref, y0, x0, cc);
      for (int y = y0; y < std::min(y0 + block, h); ++y)
        for (int x = x0; x < std::min(x0 + block, w); ++x) {
          flow.at(0, y, x) = bm.dy;
          flow.at(1, y, x) = bm.dx;
        }
    }
  }
  return flow;
}

template <typename T>
void init_muna_params(nn::ParamStore<T>& store, const std::string& prefix,
                      int channels, const MunaConfig& cfg, Rng& rng,
                      const std::string& group) {
  cfg.validate(channels);
  nn::add_conv(store, jn(prefix, "pq"), channels, channels, 1, rng, group);
  nn::add_conv(store, jn(prefix, "pk"), channels, channels, 1, rng, group);
  Tensor<T> pv = Tensor<T>::zeros({channels, channels, 1, 1});
  for (int c = 0; c < channels; ++c) pv.v[static_cast<size_t>(c) * channels + c] = T(1);
  store.add(jn(prefix, "pv") + ".w", std::move(pv), group);
  store.add(jn(prefix, "pv") + ".b", Tensor<T>::zeros({channels}), group);
  const int span = 2 * cfg.window - 1;
  store.add(jn(prefix, "bias"), Tensor<T>::zeros({cfg.heads, span * span}), group);
}

template <typename T>
void init_fusion_params(nn::ParamStore<T>& store, const std::string& prefix,
                        int channels, int n_inputs, int hidden, Rng& rng,
                        const std::string& group) {
  if (channels < 1 || n_inputs < 1 || hidden < 1)
    throw InvalidArgument("init_fusion_params: sizes must be positive");
  if (n_inputs % 2 == 0)
    throw InvalidArgument("init_fusion_params: expected an odd reference count");
  Tensor<T> stem = Tensor<T>::zeros({channels, channels * n_inputs, 1, 1});
  const int center = n_inputs / 2;  // inputs ordered m = -m_w .. m_w
  for (int c = 0; c < channels; ++c)
    stem.v[static_cast<size_t>(c) * channels * n_inputs + static_cast<size_t>(center) * channels + c] = T(1);
  store.add(jn(prefix, "stem") + ".w", std::move(stem), group);
  store.add(jn(prefix, "stem") + ".b", Tensor<T>::zeros({channels}), group);
  nn::add_res_block(store, jn(prefix, "rb0"), channels, hidden, rng, group, /*zero_c2=*/true);
}

template <typename T>
int muna_predict_node(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                      const std::string& prefix, int h_t, int h_ref,
                      const FlowField& flow, const MunaConfig& cfg,
                      nn::AttnArtifacts* art) {
  cfg.validate(static_cast<int>(g.val(h_t).dim(0)));
  const int q = nn::conv(g, p, jn(prefix, "pq"), h_t);
  const int k = nn::conv(g, p, jn(prefix, "pk"), h_ref);
  const int v = nn::conv(g, p, jn(prefix, "pv"), h_ref);
  return g.windowed_attention(q, k, v, p.id(jn(prefix, "bias")), flow,
                              cfg.window, cfg.heads, art);
}

template <typename T>
int fuse_predictions_node(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                          const std::string& prefix,
                          const std::vector<int>& preds) {
  const std::vector<int> wdims = g.val(p.id(jn(prefix, "stem") + ".w")).dims;
  const int c = static_cast<int>(wdims[0]);
  const int expected = static_cast<int>(wdims[1]) / c;
  if (static_cast<int>(preds.size()) != expected)
    throw InvalidArgument("fuse_predictions: expected " + std::to_string(expected) +
                          " prediction maps, got " + std::to_string(preds.size()));
  const int cat = g.concat_ch(preds);
  const int stem = nn::conv(g, p, jn(prefix, "stem"), cat);  // linear stem
  return nn::res_block(g, p, jn(prefix, "rb0"), stem);
}

AttentionResult muna_me(const LatentMap& h_t, const LatentMap& h_ref,
                        const FlowField& flow, const nn::ParamStore<double>& w,
                        const MunaConfig& cfg, const std::string& prefix) {
  if (h_t.dims.size() != 3) throw InvalidArgument("muna_me: latents must be (C,H,W)");
  require_same_shape(h_t, h_ref, "muna_me");
  cfg.validate(h_t.dim(0));

  nn::Graph<double> g;
  g.set_grad_enabled(false);
  const auto p = nn::mount(g, w);
  nn::AttnArtifacts art;
  (void)muna_predict_node(g, p, prefix, g.input(h_t), g.input(h_ref), flow, cfg, &art);

  AttentionResult res;
  res.logits = std::move(art.logits);
  res.mv = std::move(art.mv);
  res.flow = flow;
  res.window = cfg.window;
  res.heads = cfg.heads;
  res.head_dim = cfg.head_dim;
  return res;
}

LatentMap muna_agp(const AttentionResult& att, const LatentMap& h_ref,
                   const nn::ParamStore<double>& w, const MunaConfig& cfg,
                   const std::string& prefix) {
  if (h_ref.dims.size() != 3) throw InvalidArgument("muna_agp: latents must be (C,H,W)");
  const int c = h_ref.dim(0), h = h_ref.dim(1), wd = h_ref.dim(2);
  cfg.validate(c);
  const int kk = cfg.window * cfg.window;
  const int hw = h * wd;
  if (att.window != cfg.window || att.heads != cfg.heads || att.head_dim != cfg.head_dim)
    throw InvalidArgument("muna_agp: attention geometry does not match config");
  if (att.logits.dims.size() != 3 || att.logits.dim(0) != cfg.heads ||
      att.logits.dim(1) != hw || att.logits.dim(2) != kk)
    throw InvalidArgument("muna_agp: logits shape does not match the reference");
  if (att.flow.dims.size() != 3 || att.flow.dim(0) != 2 || att.flow.dim(1) != h ||
      att.flow.dim(2) != wd)
    throw InvalidArgument("muna_agp: flow shape does not match the reference");

  // V = P^V(h_ref): a 1x1 conv is a channel-mixing matrix product.
  const Tensor<double>& pw = w.get(jn(prefix, "pv") + ".w");
  const Tensor<double>& pb = w.get(jn(prefix, "pv") + ".b");
  if (pw.dims.size() != 4 || pw.dim(0) != c || pw.dim(1) != c || pw.dim(2) != 1 || pw.dim(3) != 1)
    throw InvalidArgument("muna_agp: value projection must be (C,C,1,1)");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Tensor<double> vmap({c, h, wd});
  {
    Eigen::Map<const Mat> wm(pw.data(), c, c);
    Eigen::Map<const Mat> xm(h_ref.data(), c, hw);
    Eigen::Map<Mat> vm(vmap.data(), c, hw);
    vm.noalias() = wm * xm;
    for (int cc = 0; cc < c; ++cc) vm.row(cc).array() += pb.v[cc];
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  LatentMap out({c, h, wd});
  std::vector<double> z(kk);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wd; ++x) {
      const int i = y * wd + x;
      int oy, ox, cy, cx;
      nn::Graph<double>::window_geometry(att.flow, y, x, h, wd, cfg.window, oy, ox, cy, cx);
      for (int hd = 0; hd < cfg.heads; ++hd) {
        const int c0 = hd * cfg.head_dim;
        double zmax = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < kk; ++j) {
          z[j] = att.logits[(static_cast<size_t>(hd) * hw + i) * kk + j] * inv_sqrt_d;
          if (z[j] > zmax) zmax = z[j];
        }
        double zsum = 0.0;
        for (int j = 0; j < kk; ++j) {
          z[j] = std::exp(z[j] - zmax);
          zsum += z[j];
        }
        for (int cc = c0; cc < c0 + cfg.head_dim; ++cc) {
          double acc = 0.0;
          for (int j = 0; j < kk; ++j)
            acc += z[j] / zsum * vmap.at(cc, oy + j / cfg.window, ox + j % cfg.window);
          out.at(cc, y, x) = acc;
        }
      }
    }
  }
  return out;
}

LatentMap extract_residual(const LatentMap& x, const LatentMap& x_bar) {
  require_same_shape(x, x_bar, "extract_residual");
  LatentMap r(x.dims);
  for (size_t i = 0; i < x.v.size(); ++i) r.v[i] = x.v[i] - x_bar.v[i];
  return r;
}

template void init_muna_params<float>(nn::ParamStore<float>&, const std::string&, int,
                                      const MunaConfig&, Rng&, const std::string&);
template void init_muna_params<double>(nn::ParamStore<double>&, const std::string&, int,
                                       const MunaConfig&, Rng&, const std::string&);
template void init_fusion_params<float>(nn::ParamStore<float>&, const std::string&, int, int,
                                        int, Rng&, const std::string&);
template void init_fusion_params<double>(nn::ParamStore<double>&, const std::string&, int, int,
                                         int, Rng&, const std::string&);
template int muna_predict_node<float>(nn::Graph<float>&, const nn::MountedStore<float>&,
                                      const std::string&, int, int, const FlowField&,
                                      const MunaConfig&, nn::AttnArtifacts*);
template int muna_predict_node<double>(nn::Graph<double>&, const nn::MountedStore<double>&,
                                       const std::string&, int, int, const FlowField&,
                                       const MunaConfig&, nn::AttnArtifacts*);
template int fuse_predictions_node<float>(nn::Graph<float>&, const nn::MountedStore<float>&,
                                          const std::string&, const std::vector<int>&);
template int fuse_predictions_node<double>(nn::Graph<double>&, const nn::MountedStore<double>&,
                                           const std::string&, const std::vector<int>&);

}  // namespace crds
