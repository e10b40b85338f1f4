#include "crds/train_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "crds/errors.hpp"
#include "crds/ldr_ae.hpp"

namespace crds {

namespace {

using ojson = nlohmann::ordered_json;

const double kPi = std::acos(-1.0);

// RNG stream tags (distinct from the pretraining streams).
constexpr uint64_t kInitStream = 0x63726473;   // fresh-weight initialisation
constexpr uint64_t kBatchStream = 0x74726169;  // per-iteration batch sampling

double cosine_lr(double base, int64_t iter, int64_t total) {
  const double t = static_cast<double>(iter) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(kPi * t));
}

TrainConfig apply_env_seed(TrainConfig tc) {
  if (const char* s = std::getenv("CRDS_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0')
      throw InvalidArgument("CRDS_SEED: not an unsigned integer");
    tc.seed = static_cast<uint64_t>(v);
  }
  return tc;
}

void check_dataset(const TrainSet& data, const TrainConfig& tc, const CrdsConfig& cfg) {
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  for (const auto& c : data) {
    if (c.lq.empty() || c.lq.size() != c.gt.size())
      throw InvalidArgument("train: clip lq/gt frame counts differ");
    for (size_t t = 0; t < c.lq.size(); ++t) {
      require_same_shape(c.lq[t], c.gt[t], "train clip");
      require_same_shape(c.lq[t], c.lq[0], "train clip frames");
    }
    if (c.lq[0].dims.size() != 3 || c.lq[0].dim(0) != cfg.ldrae.in_channels)
      throw InvalidArgument("train: clip channel count does not match the network");
    if (static_cast<int>(c.lq.size()) < tc.seq_frames)
      throw InvalidArgument("train: clip shorter than seq_frames");
    if (c.lq[0].dim(1) < tc.patch || c.lq[0].dim(2) < tc.patch)
      throw InvalidArgument("train: clip smaller than the training patch");
  }
}

Frame crop(const Frame& f, int y0, int x0, int p) {
  const int c = f.dim(0);
  Frame out({c, p, p});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) out.at(ch, y, x) = f.at(ch, y0 + y, x0 + x);
  return out;
}

double frame_mse(const Frame& a, const Frame& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.v.size());
}

// The training loop shared by train() and resume(). Owns the rolling
// checkpoint and the loss CSV under out_dir.
TrainResult run_loop(const TrainSet& data, nn::ParamStore<float> store, nn::Adam<float> opt,
                     std::vector<nn::LossRow> history, int64_t start_iter, const TrainConfig& tc,
                     const CrdsConfig& cfg, const std::string& out_dir, int64_t stop_after,
                     const FlowEstimator& flow) {
  std::filesystem::create_directories(out_dir);
  const std::string prefix = out_dir + "/ckpt";
  const std::string csv_path = out_dir + "/loss.csv";
  const std::string hash = config_hash(tc);
  const NoiseSchedule sched = make_schedule(cfg.stages);
  const int64_t stop =
      stop_after < 0 ? tc.total_iters : std::min<int64_t>(stop_after, tc.total_iters);
  if (start_iter > stop)
    throw InvalidArgument("train: checkpoint is already past the stop point");

  const auto save = [&](int64_t done) {
    nn::CheckpointExtra extra;
    extra.iteration = done;
    extra.config_hash = hash;
    extra.loss_history = history;
    nn::save_checkpoint(prefix, store, &opt, extra);
    write_loss_csv(csv_path, history);
  };
  // A divergence before the first interval save must still leave a loadable
  // last-good state behind.
  if (start_iter == 0) save(0);

  for (int64_t iter = start_iter; iter < stop; ++iter) {
    const bool enc_frozen = iter < tc.encoder_freeze_iters;
    const bool flow_frozen = iter < tc.flow_freeze_iters;
    const bool interm_on = iter < tc.interm_iters;
    const auto trainable = [&](const nn::ParamStore<float>::Entry& e) {
      if (e.group == "encoder") return !enc_frozen;
      if (e.group == "flow") return !flow_frozen;
      return true;
    };

    Rng rng = Rng::derive(tc.seed, kBatchStream, static_cast<uint64_t>(iter));
    std::vector<Tensor<float>> gacc;
    gacc.reserve(store.entries.size());
    for (const auto& e : store.entries) gacc.push_back(Tensor<float>::zeros(e.value.dims));

    double li_sum = 0.0, lm_sum = 0.0;
    for (int b = 0; b < tc.batch; ++b) {
      const int ci = static_cast<int>(rng.below(data.size()));
      const auto& cl = data[ci];
      const int frames = static_cast<int>(cl.lq.size());
      const int h = cl.lq[0].dim(1), w = cl.lq[0].dim(2);
      const int t0 = static_cast<int>(rng.below(static_cast<uint64_t>(frames - tc.seq_frames + 1)));
      const int y0 = static_cast<int>(rng.below(static_cast<uint64_t>(h - tc.patch + 1)));
      const int x0 = static_cast<int>(rng.below(static_cast<uint64_t>(w - tc.patch + 1)));

      std::vector<Tensor<float>> lq_f;
      std::vector<Frame> lq_d, gt_d;
      for (int dt = 0; dt < tc.seq_frames; ++dt) {
        lq_d.push_back(crop(cl.lq[t0 + dt], y0, x0, tc.patch));
        gt_d.push_back(crop(cl.gt[t0 + dt], y0, x0, tc.patch));
        lq_f.push_back(lq_d.back().cast<float>());
      }

      nn::Graph<float> g;
      const auto ms = nn::mount(g, store, trainable);
      const CrdsNodes nodes = crds_forward_nodes(g, ms, lq_f, cfg, flow);

      std::vector<int> lm_terms;
      for (int t = 0; t < tc.seq_frames; ++t)
        lm_terms.push_back(g.charbonnier_to_const(nodes.recon[t], gt_d[t].cast<float>(),
                                                  static_cast<float>(tc.charbonnier_eps)));
      const int lm = g.scale(g.sum_scalars(lm_terms), 1.0f / static_cast<float>(tc.seq_frames));

      int total = lm;
      int li = -1;
      if (interm_on && cfg.stages > 1) {
        std::vector<int> li_terms;
        for (int s = 1; s < cfg.stages; ++s)
          for (int t = 0; t < tc.seq_frames; ++t) {
            const Tensor<float> hyb =
                hybrid_target(gt_d[t], lq_d[t], sched.alphas[s]).cast<float>();
            const int rec = reconstruct_node(g, ms, nodes.latents[cfg.stages][t],
                                             nodes.latents[s][t], nodes.inputs[t], cfg);
            li_terms.push_back(g.mse_to_const(rec, hyb));
          }
        li = g.sum_scalars(li_terms);
        total = g.add(g.scale(li, static_cast<float>(tc.lambda_i)), lm);
      }

      const int loss = g.scale(total, 1.0f / static_cast<float>(tc.batch));
      const double loss_v = g.val(loss)[0];
      lm_sum += g.val(lm)[0];
      if (li >= 0) li_sum += g.val(li)[0];
      if (!std::isfinite(loss_v))
        throw DivergenceError("train: non-finite loss at iteration " + std::to_string(iter));

      g.backward(loss);
      for (size_t i = 0; i < store.entries.size(); ++i) {
        if (!trainable(store.entries[i])) continue;
        const auto& gr = g.grad(ms.id(store.entries[i].name));
        auto& acc = gacc[i];
        for (size_t k = 0; k < acc.v.size(); ++k) acc[k] += gr[k];
      }
    }

    const double lr_main_now = cosine_lr(tc.lr_main, iter, tc.total_iters);
    const double lr_flow_now = cosine_lr(tc.lr_flow, iter, tc.total_iters);
    for (size_t i = 0; i < store.entries.size(); ++i) {
      const auto& e = store.entries[i];
      if (!trainable(e)) continue;
      opt.step_param(store, static_cast<int>(i), gacc[i],
                     e.group == "flow" ? lr_flow_now : lr_main_now);
    }

    history.push_back(nn::LossRow{iter, li_sum / tc.batch, lm_sum / tc.batch, lr_main_now});
    if ((iter + 1) % tc.checkpoint_interval == 0) save(iter + 1);
  }
  save(stop);

  TrainResult res;
  res.weights = std::move(store);
  res.history = std::move(history);
  res.iteration = stop;
  res.checkpoint_prefix = prefix;
  return res;
}

}  // namespace

void TrainConfig::validate() const {
  if (total_iters < 1) throw InvalidArgument("TrainConfig: total_iters must be >= 1");
  if (interm_iters < 0 || interm_iters > total_iters)
    throw InvalidArgument("TrainConfig: interm_iters must lie in [0, total_iters]");
  if (flow_freeze_iters < 0 || flow_freeze_iters > total_iters)
    throw InvalidArgument("TrainConfig: flow_freeze_iters must lie in [0, total_iters]");
  if (encoder_freeze_iters < 0 || encoder_freeze_iters > total_iters)
    throw InvalidArgument("TrainConfig: encoder_freeze_iters must lie in [0, total_iters]");
  if (!(lr_main > 0.0) || !(lr_flow > 0.0))
    throw InvalidArgument("TrainConfig: learning rates must be positive");
  if (batch < 1) throw InvalidArgument("TrainConfig: batch must be >= 1");
  if (patch < 8) throw InvalidArgument("TrainConfig: patch must be >= 8");
  if (seq_frames < 1) throw InvalidArgument("TrainConfig: seq_frames must be >= 1");
  if (!(lambda_i >= 0.0)) throw InvalidArgument("TrainConfig: lambda_I must be >= 0");
  if (!(charbonnier_eps > 0.0))
    throw InvalidArgument("TrainConfig: charbonnier_eps must be positive");
  if (checkpoint_interval < 1)
    throw InvalidArgument("TrainConfig: checkpoint_interval must be >= 1");
}

TrainConfig desk_preset() { return TrainConfig{}; }

TrainConfig tiny_preset() {
  TrainConfig tc;
  tc.patch = 32;
  return tc;
}

TrainConfig paper_preset() {
  TrainConfig tc;
  tc.total_iters = 300000;
  tc.interm_iters = 150000;
  tc.encoder_freeze_iters = 20000;
  tc.flow_freeze_iters = 5000;
  tc.checkpoint_interval = 10000;
  return tc;
}

std::string to_json(const TrainConfig& tc) {
  ojson j;
  j["total_iters"] = tc.total_iters;
  j["interm_iters"] = tc.interm_iters;
  j["flow_freeze_iters"] = tc.flow_freeze_iters;
  j["encoder_freeze_iters"] = tc.encoder_freeze_iters;
  j["lr_main"] = tc.lr_main;
  j["lr_flow"] = tc.lr_flow;
  j["batch"] = tc.batch;
  j["patch"] = tc.patch;
  j["seed"] = tc.seed;
  j["lambda_I"] = tc.lambda_i;
  j["charbonnier_eps"] = tc.charbonnier_eps;
  j["seq_frames"] = tc.seq_frames;
  j["checkpoint_interval"] = tc.checkpoint_interval;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("train config: expected a JSON object");
  TrainConfig tc;
  try {
    if (j.contains("total_iters")) tc.total_iters = j["total_iters"].get<int64_t>();
    if (j.contains("interm_iters")) tc.interm_iters = j["interm_iters"].get<int64_t>();
    if (j.contains("flow_freeze_iters"))
      tc.flow_freeze_iters = j["flow_freeze_iters"].get<int64_t>();
    if (j.contains("encoder_freeze_iters"))
      tc.encoder_freeze_iters = j["encoder_freeze_iters"].get<int64_t>();
    if (j.contains("lr_main")) tc.lr_main = j["lr_main"].get<double>();
    if (j.contains("lr_flow")) tc.lr_flow = j["lr_flow"].get<double>();
    if (j.contains("batch")) tc.batch = j["batch"].get<int>();
    if (j.contains("patch")) tc.patch = j["patch"].get<int>();
    if (j.contains("seed")) tc.seed = j["seed"].get<uint64_t>();
    if (j.contains("lambda_I")) tc.lambda_i = j["lambda_I"].get<double>();
    if (j.contains("charbonnier_eps")) tc.charbonnier_eps = j["charbonnier_eps"].get<double>();
    if (j.contains("seq_frames")) tc.seq_frames = j["seq_frames"].get<int>();
    if (j.contains("checkpoint_interval"))
      tc.checkpoint_interval = j["checkpoint_interval"].get<int64_t>();
  } catch (const ojson::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return tc;
}

std::string config_hash(const TrainConfig& tc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(nn::fnv1a64(to_json(tc))));
  return std::string(buf);
}

// Accumulated as eps + mean(sqrt(d^2+eps^2) - eps): each term is exactly zero
// for equal samples, so identical inputs return eps bit-for-bit.
double charbonnier(const Tensor<double>& a, const Tensor<double>& b, double eps) {
  require_same_shape(a, b, "charbonnier");
  if (!(eps > 0.0)) throw InvalidArgument("charbonnier: eps must be positive");
  double acc = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    acc += std::sqrt(d * d + eps * eps) - eps;
  }
  return eps + acc / static_cast<double>(a.v.size());
}

double main_loss(const std::vector<Frame>& enhanced, const std::vector<Frame>& gt, double eps) {
  if (enhanced.empty() || enhanced.size() != gt.size())
    throw InvalidArgument("main_loss: frame counts differ");
  if (!(eps > 0.0)) throw InvalidArgument("main_loss: eps must be positive");
  double acc = 0.0;
  int64_t n = 0;
  for (size_t t = 0; t < enhanced.size(); ++t) {
    require_same_shape(enhanced[t], gt[t], "main_loss");
    for (size_t i = 0; i < enhanced[t].v.size(); ++i) {
      const double d = enhanced[t].v[i] - gt[t].v[i];
      acc += std::sqrt(d * d + eps * eps) - eps;
    }
    n += static_cast<int64_t>(enhanced[t].v.size());
  }
  return eps + acc / static_cast<double>(n);
}

double intermediate_loss(const ForwardTrace& trace,
                         const std::vector<std::vector<Frame>>& hybrids,
                         const nn::ParamStore<double>& w, const CrdsConfig& cfg,
                         const NoiseSchedule& sched) {
  if (!trace.kept()) throw InvalidArgument("intermediate_loss: trace absent");
  sched.validate();
  const int top = static_cast<int>(trace.latents.size()) - 1;
  if (sched.N != top)
    throw InvalidArgument("intermediate_loss: schedule and trace stage counts differ");
  if (static_cast<int>(hybrids.size()) != top - 1)
    throw InvalidArgument("intermediate_loss: expected one hybrid set per stage 1..N-1");
  double acc = 0.0;
  for (int s = 1; s < top; ++s) {
    const std::vector<Frame> rec = reconstruct_intermediate(trace, s, w, cfg);
    const auto& hyb = hybrids[s - 1];
    if (hyb.size() != rec.size())
      throw InvalidArgument("intermediate_loss: hybrid frame count mismatch");
    for (size_t t = 0; t < rec.size(); ++t) acc += frame_mse(rec[t], hyb[t]);
  }
  return acc;
}

TrainResult train(const TrainSet& data, const std::string& ldrae_ckpt, const TrainConfig& tc0,
                  const CrdsConfig& cfg, const std::string& out_dir, int64_t stop_after,
                  const FlowEstimator& flow) {
  const TrainConfig tc = apply_env_seed(tc0);
  tc.validate();
  cfg.validate();
  check_dataset(data, tc, cfg);

  nn::ParamStore<float> store;
  Rng rng = Rng::derive(tc.seed, kInitStream);
  init_crds_params(store, cfg, rng);
  if (!ldrae_ckpt.empty())
    nn::load_checkpoint(ldrae_ckpt, store, nullptr, nn::LoadMode::kSubset);
  nn::Adam<float> opt;
  opt.init(store);
  return run_loop(data, std::move(store), std::move(opt), {}, 0, tc, cfg, out_dir, stop_after,
                  flow);
}

TrainResult resume(const TrainSet& data, const std::string& ckpt_prefix, const TrainConfig& tc0,
                   const CrdsConfig& cfg, const std::string& out_dir, int64_t stop_after,
                   const FlowEstimator& flow) {
  const TrainConfig tc = apply_env_seed(tc0);
  tc.validate();
  cfg.validate();
  check_dataset(data, tc, cfg);

  nn::ParamStore<float> store;
  Rng rng = Rng::derive(tc.seed, kInitStream);
  init_crds_params(store, cfg, rng);  // shapes only; the strict load overwrites values
  nn::Adam<float> opt;
  opt.init(store);
  nn::CheckpointExtra extra = nn::load_checkpoint(ckpt_prefix, store, &opt, nn::LoadMode::kStrict);
  if (extra.config_hash != config_hash(tc))
    throw InvalidArgument("resume: config does not match the checkpoint");
  return run_loop(data, std::move(store), std::move(opt), std::move(extra.loss_history),
                  extra.iteration, tc, cfg, out_dir, stop_after, flow);
}

EvalReport evaluate(const TrainSet& testset, const nn::ParamStore<float>& weights,
                    const CrdsConfig& cfg, const EvalOptions& opt, const FlowEstimator& flow) {
  cfg.validate();
  if (testset.empty()) throw InvalidArgument("evaluate: empty test set");
  const nn::ParamStore<double> wd = weights.cast<double>();
  CrdsConfig fwd_cfg = cfg;
  fwd_cfg.keep_trace = opt.stage_breakdown;

  EvalReport rep;
  if (opt.stage_breakdown) rep.mean_stage_psnr.assign(cfg.stages, 0.0);
  std::ostringstream csv;
  csv << "clip,frame,psnr,ssim,psnr_compressed,ssim_compressed\n";
  csv << std::setprecision(17);

  for (const auto& clip : testset) {
    if (clip.lq.empty() || clip.lq.size() != clip.gt.size())
      throw InvalidArgument("evaluate: clip lq/gt frame counts differ");
    const Colorspace cs = clip.lq[0].dim(0) == 3 ? Colorspace::RGB : Colorspace::GRAY;
    const CrdsForward fw = crds_forward(clip.lq, wd, fwd_cfg, flow);

    ClipEval ce;
    ce.name = clip.name;
    ce.metrics = delta_metrics(from_frames(fw.enhanced, cs), from_frames(clip.lq, cs),
                               from_frames(clip.gt, cs), opt.use_luma);
    if (opt.stage_breakdown) {
      ce.stage_psnr.assign(cfg.stages, 0.0);
      for (int s = 0; s < cfg.stages; ++s) {
        const std::vector<Frame> rec = reconstruct_intermediate(fw.trace, s, wd, fwd_cfg);
        double acc = 0.0;
        for (size_t t = 0; t < rec.size(); ++t) acc += psnr(rec[t], clip.gt[t], opt.use_luma);
        ce.stage_psnr[s] = acc / static_cast<double>(rec.size());
        rep.mean_stage_psnr[s] += ce.stage_psnr[s];
      }
    }

    const auto& m = ce.metrics;
    double pe = 0.0, pc = 0.0;
    for (size_t t = 0; t < m.per_frame_psnr.size(); ++t) {
      csv << ce.name << ',' << t << ',' << m.per_frame_psnr[t] << ',' << m.per_frame_ssim[t]
          << ',' << m.per_frame_psnr_compressed[t] << ',' << m.per_frame_ssim_compressed[t]
          << '\n';
      pe += m.per_frame_psnr[t];
      pc += m.per_frame_psnr_compressed[t];
    }
    rep.mean_delta_psnr += m.delta_psnr;
    rep.mean_delta_ssim += m.delta_ssim;
    rep.mean_psnr_enhanced += pe / static_cast<double>(m.per_frame_psnr.size());
    rep.mean_psnr_compressed += pc / static_cast<double>(m.per_frame_psnr.size());
    rep.clips.push_back(std::move(ce));
  }

  const double nclips = static_cast<double>(rep.clips.size());
  rep.mean_delta_psnr /= nclips;
  rep.mean_delta_ssim /= nclips;
  rep.mean_psnr_enhanced /= nclips;
  rep.mean_psnr_compressed /= nclips;
  for (double& v : rep.mean_stage_psnr) v /= nclips;

  if (!opt.csv_path.empty()) {
    std::ofstream f(opt.csv_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + opt.csv_path);
    f << csv.str();
  }
  return rep;
}

std::string eval_to_json(const EvalReport& r) {
  ojson j;
  j["clips"] = ojson::array();
  for (const auto& c : r.clips) {
    ojson jc;
    jc["name"] = c.name;
    jc["delta_psnr"] = c.metrics.delta_psnr;
    jc["delta_ssim"] = c.metrics.delta_ssim;
    if (!c.stage_psnr.empty()) jc["stage_psnr"] = c.stage_psnr;
    j["clips"].push_back(std::move(jc));
  }
  j["mean_delta_psnr"] = r.mean_delta_psnr;
  j["mean_delta_ssim"] = r.mean_delta_ssim;
  j["mean_psnr_compressed"] = r.mean_psnr_compressed;
  j["mean_psnr_enhanced"] = r.mean_psnr_enhanced;
  if (!r.mean_stage_psnr.empty()) j["mean_stage_psnr"] = r.mean_stage_psnr;
  return j.dump();
}

void write_loss_csv(const std::string& path, const std::vector<nn::LossRow>& history) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "iter,L_I,L_M,lr\n" << std::setprecision(17);
  for (const auto& r : history)
    f << r.iter << ',' << r.l_i << ',' << r.l_m << ',' << r.lr << '\n';
  if (!f) throw IoError("short write: " + path);
}

std::vector<nn::LossRow> read_loss_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "iter,L_I,L_M,lr")
    throw FormatError("loss csv: bad header in " + path);
  std::vector<nn::LossRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nn::LossRow r;
    char c1, c2, c3;
    std::istringstream ss(line);
    if (!(ss >> r.iter >> c1 >> r.l_i >> c2 >> r.l_m >> c3 >> r.lr) || c1 != ',' || c2 != ',' ||
        c3 != ',')
      throw FormatError("loss csv: bad row in " + path);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace crds
