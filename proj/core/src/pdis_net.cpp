#include "crds/pdis_net.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "crds/errors.hpp"
#include "crds/nn/blocks.hpp"

namespace crds {

namespace {

Frame clip01(Frame f) {
  for (auto& v : f.v) v = std::min(std::max(v, 0.0), 1.0);
  return f;
}

FlowEstimator effective(const FlowEstimator& flow) {
  if (flow) return flow;
  return [](const Tensor<double>& a, const Tensor<double>& b) { return estimate_flow(a, b); };
}

}  // namespace

void CrdsConfig::validate() const {
  if (stages < 1) throw InvalidArgument("CrdsConfig: stages must be >= 1");
  if (channels < 1) throw InvalidArgument("CrdsConfig: channels must be >= 1");
  if (fusion_hidden < 1 || rp_hidden < 1)
    throw InvalidArgument("CrdsConfig: hidden widths must be >= 1");
  muna.validate(channels);
  ldrae.validate();
  if (ldrae.channels != channels)
    throw InvalidArgument("CrdsConfig: latent width must match the auto-encoder");
}

std::string stage_prefix(int s) { return "s" + std::to_string(s); }

template <typename T>
void init_crds_params(nn::ParamStore<T>& store, const CrdsConfig& cfg, Rng& rng) {
  cfg.validate();
  init_ldrae_params(store, cfg.ldrae, rng);
  const int refs = 2 * cfg.muna.temporal_radius + 1;
  for (int s = 1; s <= cfg.stages; ++s) {
    const std::string sp = stage_prefix(s);
    init_muna_params(store, sp, cfg.channels, cfg.muna, rng);
    init_fusion_params(store, sp + ".fuse", cfg.channels, refs, cfg.fusion_hidden, rng);
    nn::add_conv(store, sp + ".rp.f", cfg.rp_hidden, cfg.channels + cfg.rp_hidden, 3, rng, "main");
    nn::add_conv(store, sp + ".rp.g", cfg.rp_hidden, cfg.channels + cfg.rp_hidden, 3, rng, "main");
    nn::add_conv(store, sp + ".rp.h", cfg.channels, 2 * cfg.rp_hidden, 1, rng, "main",
                 /*zero=*/true);
  }
}

template <typename T>
std::vector<int> residual_propagation_nodes(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                                            const std::string& prefix,
                                            const std::vector<int>& r_seq) {
  if (r_seq.empty()) throw InvalidArgument("residual_propagation: empty sequence");
  const int n = static_cast<int>(r_seq.size());
  // Copy: growing the tape below invalidates references into it.
  const std::vector<int> rd = g.val(r_seq[0]).dims;
  if (rd.size() != 3) throw InvalidArgument("residual_propagation: residuals must be (C,H,W)");
  const int rph = g.val(p.id(prefix + ".f.w")).dim(0);

  std::vector<int> hs(n), gs(n), out(n);
  int prev = g.input(Tensor<T>::zeros({rph, rd[1], rd[2]}));
  for (int t = 0; t < n; ++t) {
    hs[t] = nn::conv_lrelu(g, p, prefix + ".f", g.concat_ch({r_seq[t], prev}));
    prev = hs[t];
  }
  int next = g.input(Tensor<T>::zeros({rph, rd[1], rd[2]}));
  for (int t = n - 1; t >= 0; --t) {
    gs[t] = nn::conv_lrelu(g, p, prefix + ".g", g.concat_ch({r_seq[t], next}));
    next = gs[t];
  }
  for (int t = 0; t < n; ++t)
    out[t] = g.add(r_seq[t], nn::conv(g, p, prefix + ".h", g.concat_ch({hs[t], gs[t]})));
  return out;
}

template <typename T>
StageNodes denoising_block_nodes(nn::Graph<T>& g, const nn::MountedStore<T>& p, int s,
                                 const std::vector<int>& x_seq, const CrdsConfig& cfg,
                                 const FlowEstimator& flow) {
  if (x_seq.empty()) throw InvalidArgument("denoising_block: empty sequence");
  if (s < 1 || s > cfg.stages) throw InvalidArgument("denoising_block: stage out of range");
  const int n = static_cast<int>(x_seq.size());
  const std::vector<int> xd = g.val(x_seq[0]).dims;
  if (xd.size() != 3) throw InvalidArgument("denoising_block: latents must be (C,H,W)");
  cfg.muna.validate(xd[0]);
  const int h = xd[1], w = xd[2];
  const std::string sp = stage_prefix(s);
  const FlowEstimator est = effective(flow);

  // K/V (and Q) once per frame; references reuse them across queries.
  std::vector<int> qs(n), ks(n), vs(n);
  for (int t = 0; t < n; ++t) {
    qs[t] = nn::conv(g, p, sp + ".pq", x_seq[t]);
    ks[t] = nn::conv(g, p, sp + ".pk", x_seq[t]);
    vs[t] = nn::conv(g, p, sp + ".pv", x_seq[t]);
  }
  const int bias = p.id(sp + ".bias");

  StageNodes out;
  out.xbar.resize(n);
  out.resid.resize(n);
  for (int t = 0; t < n; ++t) {
    std::vector<int> preds;
    for (int m = -cfg.muna.temporal_radius; m <= cfg.muna.temporal_radius; ++m) {
      const int ref = std::min(std::max(t + m, 0), n - 1);
      FlowField f;
      if (m == 0) {
        f = FlowField::zeros({2, h, w});
      } else {
        f = est(g.val(x_seq[t]).template cast<double>(),
                g.val(x_seq[ref]).template cast<double>());
      }
      preds.push_back(g.windowed_attention(qs[t], ks[ref], vs[ref], bias, f, cfg.muna.window,
                                           cfg.muna.heads));
    }
    out.xbar[t] = fuse_predictions_node(g, p, sp + ".fuse", preds);
    out.resid[t] = g.sub(x_seq[t], out.xbar[t]);
  }
  out.rtilde = residual_propagation_nodes(g, p, sp + ".rp", out.resid);
  out.x_next.resize(n);
  for (int t = 0; t < n; ++t) out.x_next[t] = g.add(out.rtilde[t], out.xbar[t]);
  return out;
}

template <typename T>
int reconstruct_node(nn::Graph<T>& g, const nn::MountedStore<T>& p, int lat_n, int lat_s,
                     int xhat, const CrdsConfig& cfg) {
  return g.add(decode_node(g, p, lat_n, lat_s, cfg.ldrae), xhat);
}

template <typename T>
CrdsNodes crds_forward_nodes(nn::Graph<T>& g, const nn::MountedStore<T>& p,
                             const std::vector<Tensor<T>>& frames, const CrdsConfig& cfg,
                             const FlowEstimator& flow) {
  cfg.validate();
  if (frames.empty()) throw InvalidArgument("crds_forward: empty clip");
  const int n = static_cast<int>(frames.size());
  const int top = cfg.stages;

  CrdsNodes out;
  out.latents.assign(top + 1, {});
  out.xbar.assign(top + 1, {});
  out.resid.assign(top + 1, {});
  out.rtilde.assign(top + 1, {});
  for (int t = 0; t < n; ++t) {
    out.inputs.push_back(g.input(frames[t]));
    out.latents[top].push_back(encode_node(g, p, out.inputs[t], cfg.ldrae));
  }
  std::vector<int> cur = out.latents[top];
  for (int s = top; s >= 1; --s) {
    const StageNodes st = denoising_block_nodes(g, p, s, cur, cfg, flow);
    cur = st.x_next;
    out.latents[s - 1] = st.x_next;
    out.xbar[s] = st.xbar;
    out.resid[s] = st.resid;
    out.rtilde[s] = st.rtilde;
  }
  for (int t = 0; t < n; ++t)
    out.recon.push_back(reconstruct_node(g, p, out.latents[top][t], out.latents[0][t],
                                         out.inputs[t], cfg));
  return out;
}

CrdsForward crds_forward(const std::vector<Frame>& lq, const nn::ParamStore<double>& w,
                         const CrdsConfig& cfg, const FlowEstimator& flow) {
  cfg.validate();
  if (lq.empty()) throw InvalidArgument("crds_forward: empty clip");
  const int n = static_cast<int>(lq.size());
  const int top = cfg.stages;
  const FlowEstimator est = effective(flow);

  // One tape per frame for the auto-encoder ends and one per stage between
  // them, so peak memory stays bounded on long clips. Every op sees the same
  // input values as the single-graph training path, so outputs are identical.
  CrdsForward out;
  ForwardTrace& tr = out.trace;
  std::vector<LatentMap> cur(n);
  for (int t = 0; t < n; ++t) {
    nn::Graph<double> g;
    g.set_grad_enabled(false);
    const auto p = nn::mount(g, w);
    cur[t] = g.val(encode_node(g, p, g.input(lq[t]), cfg.ldrae));
  }
  const std::vector<LatentMap> lat_top = cur;

  if (cfg.keep_trace) {
    tr.input = lq;
    tr.latents.assign(top + 1, {});
    tr.xbar.assign(top + 1, {});
    tr.resid.assign(top + 1, {});
    tr.rtilde.assign(top + 1, {});
    tr.latents[top] = lat_top;
  }

  for (int s = top; s >= 1; --s) {
    nn::Graph<double> g;
    g.set_grad_enabled(false);
    const auto p = nn::mount(g, w);
    std::vector<int> xs;
    for (const auto& c : cur) xs.push_back(g.input(c));
    const StageNodes st = denoising_block_nodes(g, p, s, xs, cfg, est);
    for (int t = 0; t < n; ++t) cur[t] = g.val(st.x_next[t]);
    if (cfg.keep_trace) {
      tr.latents[s - 1] = cur;
      for (int t = 0; t < n; ++t) {
        tr.xbar[s].push_back(g.val(st.xbar[t]));
        tr.resid[s].push_back(g.val(st.resid[t]));
        tr.rtilde[s].push_back(g.val(st.rtilde[t]));
      }
    }
  }

  for (int t = 0; t < n; ++t) {
    nn::Graph<double> g;
    g.set_grad_enabled(false);
    const auto p = nn::mount(g, w);
    const int rec =
        reconstruct_node(g, p, g.input(lat_top[t]), g.input(cur[t]), g.input(lq[t]), cfg);
    out.enhanced.push_back(clip01(g.val(rec)));
  }
  return out;
}

std::vector<Frame> reconstruct_intermediate(const ForwardTrace& trace, int s,
                                            const nn::ParamStore<double>& w,
                                            const CrdsConfig& cfg) {
  if (!trace.kept()) throw InvalidArgument("reconstruct_intermediate: trace absent");
  const int top = static_cast<int>(trace.latents.size()) - 1;
  if (s < 0 || s > top - 1)
    throw InvalidArgument("reconstruct_intermediate: stage out of range");
  nn::Graph<double> g;
  g.set_grad_enabled(false);
  const auto p = nn::mount(g, w);
  std::vector<Frame> out;
  for (size_t t = 0; t < trace.input.size(); ++t) {
    const int rec = reconstruct_node(g, p, g.input(trace.latents[top][t]),
                                     g.input(trace.latents[s][t]), g.input(trace.input[t]), cfg);
    out.push_back(clip01(g.val(rec)));
  }
  return out;
}

std::vector<LatentMap> residual_propagation(const std::vector<LatentMap>& r_seq,
                                            const nn::ParamStore<double>& w,
                                            const std::string& prefix) {
  nn::Graph<double> g;
  g.set_grad_enabled(false);
  const auto p = nn::mount(g, w);
  std::vector<int> ids;
  for (const auto& r : r_seq) ids.push_back(g.input(r));
  const std::vector<int> out = residual_propagation_nodes(g, p, prefix, ids);
  std::vector<LatentMap> vals;
  for (int id : out) vals.push_back(g.val(id));
  return vals;
}

template void init_crds_params<float>(nn::ParamStore<float>&, const CrdsConfig&, Rng&);
template void init_crds_params<double>(nn::ParamStore<double>&, const CrdsConfig&, Rng&);
template std::vector<int> residual_propagation_nodes<float>(nn::Graph<float>&,
                                                            const nn::MountedStore<float>&,
                                                            const std::string&,
                                                            const std::vector<int>&);
template std::vector<int> residual_propagation_nodes<double>(nn::Graph<double>&,
                                                             const nn::MountedStore<double>&,
                                                             const std::string&,
                                                             const std::vector<int>&);
template StageNodes denoising_block_nodes<float>(nn::Graph<float>&, const nn::MountedStore<float>&,
                                                 int, const std::vector<int>&, const CrdsConfig&,
                                                 const FlowEstimator&);
template StageNodes denoising_block_nodes<double>(nn::Graph<double>&,
                                                  const nn::MountedStore<double>&, int,
                                                  const std::vector<int>&, const CrdsConfig&,
                                                  const FlowEstimator&);
template int reconstruct_node<float>(nn::Graph<float>&, const nn::MountedStore<float>&, int, int,
                                     int, const CrdsConfig&);
template int reconstruct_node<double>(nn::Graph<double>&, const nn::MountedStore<double>&, int,
                                      int, int, const CrdsConfig&);
template CrdsNodes crds_forward_nodes<float>(nn::Graph<float>&, const nn::MountedStore<float>&,
                                             const std::vector<Tensor<float>>&, const CrdsConfig&,
                                             const FlowEstimator&);
template CrdsNodes crds_forward_nodes<double>(nn::Graph<double>&, const nn::MountedStore<double>&,
                                              const std::vector<Tensor<double>>&,
                                              const CrdsConfig&, const FlowEstimator&);

}  // namespace crds
