#include "crds/ldr_ae.hpp"

#include <cmath>
#include <string>

#include "crds/nn/blocks.hpp"

namespace crds {

using nn::Graph;
using nn::MountedStore;
using nn::ParamStore;

void LdraeConfig::validate() const {
  if (in_channels < 1 || channels < 1 || dec_channels < 1)
    throw InvalidArgument("LdraeConfig: channel counts must be positive");
  if (enc_blocks < 1 || dec_blocks < 0)
    throw InvalidArgument("LdraeConfig: bad block counts");
}

template <typename T>
void init_ldrae_params(ParamStore<T>& store, const LdraeConfig& cfg, Rng& rng) {
  cfg.validate();
  nn::add_conv(store, "enc.stem", cfg.channels, cfg.in_channels, 3, rng, "encoder");
  for (int i = 0; i < cfg.enc_blocks; ++i)
    nn::add_res_block(store, "enc.rb" + std::to_string(i), cfg.channels, cfg.channels, rng,
                      "encoder");
  nn::add_conv(store, "dec.stem", cfg.dec_channels, 2 * cfg.channels, 1, rng, "main");
  for (int i = 0; i < cfg.dec_blocks; ++i)
    nn::add_res_block(store, "dec.rb" + std::to_string(i), cfg.dec_channels, cfg.dec_channels,
                      rng, "main");
  nn::add_conv(store, "dec.out", cfg.in_channels, cfg.dec_channels, 3, rng, "main",
               /*zero=*/true);
  const int64_t enc = store.param_count("enc.");
  const int64_t dec = store.param_count("dec.");
  if (dec * 4 >= enc)
    throw InvalidArgument("LdraeConfig: decoder must stay under 1/4 of encoder parameters");
}

template <typename T>
int encode_node(Graph<T>& g, const MountedStore<T>& p, int x, const LdraeConfig& cfg) {
  const Tensor<T>& xv = g.val(x);
  if (xv.dims.size() != 3 || xv.dim(0) != cfg.in_channels)
    throw InvalidArgument("encode: frame must be (in_channels,H,W)");
  if (xv.dim(1) < 3 || xv.dim(2) < 3)
    throw InvalidArgument("encode: frame below minimum receptive size");
  int h = nn::conv_lrelu(g, p, "enc.stem", x);
  for (int i = 0; i < cfg.enc_blocks; ++i)
    h = nn::res_block(g, p, "enc.rb" + std::to_string(i), h);
  return h;
}

template <typename T>
int decode_node(Graph<T>& g, const MountedStore<T>& p, int lat_lq, int lat_hq,
                const LdraeConfig& cfg) {
  require_same_shape(g.val(lat_lq), g.val(lat_hq), "decode latents");
  int h = nn::conv_lrelu(g, p, "dec.stem", g.concat_ch({lat_lq, lat_hq}));
  for (int i = 0; i < cfg.dec_blocks; ++i)
    h = nn::res_block(g, p, "dec.rb" + std::to_string(i), h);
  return nn::conv(g, p, "dec.out", h);
}

template <typename T>
LatentMapT<T> encode(const Tensor<T>& frame, const ParamStore<T>& w, const LdraeConfig& cfg) {
  Graph<T> g;
  g.set_grad_enabled(false);
  auto p = nn::mount(g, w);
  return g.val(encode_node(g, p, g.input(frame), cfg));
}

template <typename T>
Tensor<T> decode(const LatentMapT<T>& lat_lq, const LatentMapT<T>& lat_hq, const ParamStore<T>& w,
                 const LdraeConfig& cfg) {
  Graph<T> g;
  g.set_grad_enabled(false);
  auto p = nn::mount(g, w);
  return g.val(decode_node(g, p, g.input(lat_lq), g.input(lat_hq), cfg));
}

double ldrae_loss(const Frame& pred, const Frame& x_hat, const Frame& x_hat_s, double alpha_s,
                  double eps) {
  if (eps <= 0.0) throw InvalidArgument("ldrae_loss: eps must be > 0");
  require_same_shape(pred, x_hat, "ldrae_loss pred/x_hat");
  require_same_shape(pred, x_hat_s, "ldrae_loss pred/x_hat_s");
  double acc = 0.0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const double d = pred[i] + x_hat[i] - x_hat_s[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.v.size()) / (alpha_s + eps);
}

template <typename T>
int ldrae_loss_node(Graph<T>& g, int pred, const Tensor<T>& x_hat, const Tensor<T>& x_hat_s,
                    double alpha_s, double eps) {
  if (eps <= 0.0) throw InvalidArgument("ldrae_loss: eps must be > 0");
  Tensor<T> diff(x_hat.dims);
  require_same_shape(x_hat, x_hat_s, "ldrae_loss targets");
  for (size_t i = 0; i < diff.v.size(); ++i) diff[i] = x_hat[i] - x_hat_s[i];
  const int shifted = g.add_const(pred, diff);
  const int mse = g.mse_to_const(shifted, Tensor<T>::zeros(x_hat.dims));
  return g.scale(mse, static_cast<T>(1.0 / (alpha_s + eps)));
}

PretrainResult pretrain(const std::vector<PatchPair>& dataset, const NoiseSchedule& sched,
                        const PretrainConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("pretrain: empty dataset");
  sched.validate();
  cfg.model.validate();

  PretrainResult res;
  Rng init_rng = Rng::derive(cfg.seed, 0x6c647261u);  // "ldra"
  init_ldrae_params(res.weights, cfg.model, init_rng);
  nn::Adam<float> opt;
  opt.cfg = cfg.adam;
  opt.init(res.weights);

  res.loss_trace.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng = Rng::derive(cfg.seed, 0x70726574u, static_cast<uint64_t>(step));  // "pret"
    Graph<float> g;
    auto p = nn::mount(g, res.weights);
    std::vector<int> losses;
    for (int b = 0; b < cfg.batch; ++b) {
      const PatchPair& pair = dataset[rng.below(dataset.size())];
      const int s = static_cast<int>(rng.below(static_cast<uint64_t>(sched.N)));
      const double alpha = sched.alphas[s];
      Frame hybrid = hybrid_target(pair.gt, pair.lq, alpha);
      Tensor<float> x_hat = pair.lq.cast<float>();
      Tensor<float> x_hat_s = hybrid.cast<float>();
      const int lat_lq = encode_node(g, p, g.input(x_hat), cfg.model);
      const int lat_s = encode_node(g, p, g.input(x_hat_s), cfg.model);
      const int pred = decode_node(g, p, lat_lq, lat_s, cfg.model);
      losses.push_back(ldrae_loss_node(g, pred, x_hat, x_hat_s, alpha, cfg.eps));
    }
    const int total = g.scale(g.sum_scalars(losses), 1.0f / static_cast<float>(cfg.batch));
    const double loss = g.val(total)[0];
    if (!std::isfinite(loss))
      throw DivergenceError("pretrain: non-finite loss at step " + std::to_string(step));
    g.backward(total);
    for (size_t i = 0; i < res.weights.entries.size(); ++i)
      opt.step_param(res.weights, static_cast<int>(i),
                     g.grad(p.id(res.weights.entries[i].name)), cfg.lr);
    res.loss_trace.push_back(loss);
  }
  return res;
}

template void init_ldrae_params<float>(ParamStore<float>&, const LdraeConfig&, Rng&);
template void init_ldrae_params<double>(ParamStore<double>&, const LdraeConfig&, Rng&);
template int encode_node<float>(Graph<float>&, const MountedStore<float>&, int,
                                const LdraeConfig&);
template int encode_node<double>(Graph<double>&, const MountedStore<double>&, int,
                                 const LdraeConfig&);
template int decode_node<float>(Graph<float>&, const MountedStore<float>&, int, int,
                                const LdraeConfig&);
template int decode_node<double>(Graph<double>&, const MountedStore<double>&, int, int,
                                 const LdraeConfig&);
template LatentMapT<float> encode<float>(const Tensor<float>&, const ParamStore<float>&,
                                         const LdraeConfig&);
template LatentMapT<double> encode<double>(const Tensor<double>&, const ParamStore<double>&,
                                           const LdraeConfig&);
template Tensor<float> decode<float>(const LatentMapT<float>&, const LatentMapT<float>&,
                                     const ParamStore<float>&, const LdraeConfig&);
template Tensor<double> decode<double>(const LatentMapT<double>&, const LatentMapT<double>&,
                                       const ParamStore<double>&, const LdraeConfig&);
template int ldrae_loss_node<float>(Graph<float>&, int, const Tensor<float>&,
                                    const Tensor<float>&, double, double);
template int ldrae_loss_node<double>(Graph<double>&, int, const Tensor<double>&,
                                     const Tensor<double>&, double, double);

}  // namespace crds
