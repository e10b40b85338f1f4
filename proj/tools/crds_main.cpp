// Command-line front end: batch subcommands over the core library. Every
// subcommand prints a single-line JSON summary on stdout (logs on stderr) and
// exits 0 on success, 2 on usage/input errors, 1 on internal failures.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crds/dataset.hpp"
#include "crds/errors.hpp"
#include "crds/image_out.hpp"
#include "crds/ldr_ae.hpp"
#include "crds/media_io.hpp"
#include "crds/muna.hpp"
#include "crds/nn/params.hpp"
#include "crds/noise_model.hpp"
#include "crds/pdis_net.hpp"
#include "crds/rng.hpp"
#include "crds/toy_codec.hpp"
#include "crds/train_harness.hpp"

namespace {

namespace fs = std::filesystem;
using njson = nlohmann::json;
using ojson = nlohmann::ordered_json;

void emit(const ojson& j) { std::cout << j.dump() << "\n" << std::flush; }
void note(const std::string& s) { std::cerr << s << "\n"; }

std::string join(const std::string& dir, const std::string& rel) {
  return (fs::path(dir) / rel).string();
}

// Layering: an explicit flag beats the config file, which beats the default.
// Every flag registers here under its JSON key; snapshot() captures the
// effective values for the run record.
class ConfigLayer {
 public:
  template <typename T>
  CLI::Option* bind(CLI::Option* opt, const std::string& key, T& ref) {
    rows_.push_back(Row{key, opt, false,
                        [&ref](const njson& v) { ref = v.get<T>(); },
                        [&ref]() { return ojson(ref); }});
    return opt;
  }

  void apply(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw crds::IoError("config: cannot open " + path);
    njson j;
    try {
      in >> j;
    } catch (const njson::exception& e) {
      throw crds::FormatError("config: " + path + ": " + e.what());
    }
    if (!j.is_object()) throw crds::FormatError("config: " + path + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      Row* row = find(it.key());
      if (!row) {
        note("config: ignoring unknown key \"" + it.key() + "\"");
        continue;
      }
      if (row->opt->count() > 0) continue;
      try {
        row->set(it.value());
      } catch (const njson::exception& e) {
        throw crds::FormatError("config: key \"" + it.key() + "\": " + e.what());
      }
      row->from_file = true;
    }
  }

  // true when the value came from the command line or the config file
  bool given(const std::string& key) const {
    const Row* row = const_cast<ConfigLayer*>(this)->find(key);
    return row && (row->opt->count() > 0 || row->from_file);
  }

  ojson snapshot() const {
    ojson out;
    for (const Row& r : rows_) out[r.key] = r.get();
    return out;
  }

 private:
  struct Row {
    std::string key;
    CLI::Option* opt;
    bool from_file;
    std::function<void(const njson&)> set;
    std::function<ojson()> get;
  };
  Row* find(const std::string& k) {
    for (Row& r : rows_)
      if (r.key == k) return &r;
    return nullptr;
  }
  std::vector<Row> rows_;
};

void write_snapshot(const std::string& path, const std::string& command, const ojson& options,
                    const ojson& extra = ojson()) {
  ojson j;
  j["command"] = command;
  j["options"] = options;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw crds::IoError("cannot write run record " + path);
  out << j.dump() << "\n";
}

uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97f4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---- shared model plumbing ---------------------------------------------------

struct ModelOpts {
  int stages = 4;
  int channels = 64;
  int window = 3;
  int radius = 1;
  int heads = 4;
  int head_dim = 16;
  int fusion_hidden = 32;
  int rp_hidden = 32;
  int enc_blocks = 5;
  int dec_blocks = 2;
  int dec_channels = 32;
};

void add_model_flags(CLI::App* sc, ModelOpts& m, ConfigLayer& cl) {
  cl.bind(sc->add_option("--stages", m.stages, "denoising blocks (N)")->capture_default_str(),
          "stages", m.stages);
  cl.bind(sc->add_option("--channels", m.channels, "latent width")->capture_default_str(),
          "channels", m.channels);
  cl.bind(sc->add_option("--window", m.window, "attention window (odd)")->capture_default_str(),
          "window", m.window);
  cl.bind(sc->add_option("--radius", m.radius, "temporal radius")->capture_default_str(), "radius",
          m.radius);
  cl.bind(sc->add_option("--heads", m.heads, "attention heads")->capture_default_str(), "heads",
          m.heads);
  cl.bind(sc->add_option("--head-dim", m.head_dim, "channels per head")->capture_default_str(),
          "head_dim", m.head_dim);
  cl.bind(sc->add_option("--fusion-hidden", m.fusion_hidden, "fusion bottleneck width")
              ->capture_default_str(),
          "fusion_hidden", m.fusion_hidden);
  cl.bind(sc->add_option("--rp-hidden", m.rp_hidden, "propagation hidden width")
              ->capture_default_str(),
          "rp_hidden", m.rp_hidden);
  cl.bind(sc->add_option("--enc-blocks", m.enc_blocks, "encoder residual blocks")
              ->capture_default_str(),
          "enc_blocks", m.enc_blocks);
  cl.bind(sc->add_option("--dec-blocks", m.dec_blocks, "decoder residual blocks")
              ->capture_default_str(),
          "dec_blocks", m.dec_blocks);
  cl.bind(sc->add_option("--dec-channels", m.dec_channels, "decoder internal width")
              ->capture_default_str(),
          "dec_channels", m.dec_channels);
}

crds::CrdsConfig model_config(const ModelOpts& m, int in_channels) {
  crds::CrdsConfig cfg;
  cfg.stages = m.stages;
  cfg.channels = m.channels;
  cfg.muna.window = m.window;
  cfg.muna.temporal_radius = m.radius;
  cfg.muna.heads = m.heads;
  cfg.muna.head_dim = m.head_dim;
  cfg.fusion_hidden = m.fusion_hidden;
  cfg.rp_hidden = m.rp_hidden;
  cfg.ldrae.in_channels = in_channels;
  cfg.ldrae.channels = m.channels;
  cfg.ldrae.enc_blocks = m.enc_blocks;
  cfg.ldrae.dec_blocks = m.dec_blocks;
  cfg.ldrae.dec_channels = m.dec_channels;
  cfg.validate();
  return cfg;
}

crds::nn::ParamStore<float> load_weights(const std::string& prefix, const crds::CrdsConfig& cfg) {
  crds::nn::ParamStore<float> w;
  crds::Rng rng = crds::Rng::derive(0, 0);  // shapes only; the load overwrites every tensor
  crds::init_crds_params(w, cfg, rng);
  crds::nn::load_checkpoint(prefix, w, nullptr, crds::nn::LoadMode::kStrict);
  return w;
}

crds::TrainSet to_trainset(const std::vector<crds::ClipPair>& pairs) {
  crds::TrainSet set;
  for (const crds::ClipPair& p : pairs)
    set.push_back(crds::TrainClip{crds::to_frames(p.lq), crds::to_frames(p.gt), p.name});
  return set;
}

std::string default_sidecar(const std::string& path, const std::string& want_ext) {
  const std::string json_ext = ".json";
  if (path.size() > json_ext.size() &&
      path.compare(path.size() - json_ext.size(), json_ext.size(), json_ext) == 0)
    return path.substr(0, path.size() - json_ext.size()) + want_ext;
  return path + want_ext;
}

// ---- codec -------------------------------------------------------------------

struct CodecOpts {
  std::string input, output, meta_json, meta_blob, config;
  int qp = 37;
  int block = 8;
  int range = 8;
};

void run_codec(const CodecOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  const crds::RawClip in = crds::load_clip(o.input);

  crds::CodecConfig cc;
  cc.qp = o.qp;
  cc.block = o.block;
  cc.search_range = o.range;
  cc.validate();

  std::string stem = o.output;
  const std::string ext = ".crdsraw";
  if (stem.size() > ext.size() && stem.compare(stem.size() - ext.size(), ext.size(), ext) == 0)
    stem.resize(stem.size() - ext.size());
  const std::string mj = o.meta_json.empty() ? stem + ".meta.json" : o.meta_json;
  const std::string mb = o.meta_blob.empty() ? stem + ".meta.blob" : o.meta_blob;

  const crds::EncodeResult enc = crds::encode_clip(in, cc);
  crds::save_clip(enc.lq, o.output);
  crds::save_metadata(enc.meta, mj, mb);

  const std::vector<crds::Frame> gtf = crds::to_frames(in);
  const std::vector<crds::Frame> lqf = crds::to_frames(enc.lq);
  double mean_psnr = 0.0;
  for (size_t t = 0; t < gtf.size(); ++t) mean_psnr += crds::psnr(lqf[t], gtf[t]);
  mean_psnr /= static_cast<double>(gtf.size());

  emit(ojson{{"command", "codec"},
             {"input", o.input},
             {"output", o.output},
             {"qp", o.qp},
             {"frames", in.frame_count()},
             {"psnr", mean_psnr},
             {"meta_json", mj},
             {"meta_blob", mb}});
}

// ---- make-dataset ------------------------------------------------------------

struct MakeDatasetOpts {
  std::string out, src, config;
  crds::DatasetSpec spec;
};

void run_make_dataset(const MakeDatasetOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  if (o.out.empty()) throw crds::InvalidArgument("make-dataset: --out is required");

  std::vector<crds::RawClip> sources;
  if (!o.src.empty()) {
    std::vector<std::string> names;
    for (const auto& de : fs::directory_iterator(o.src))
      if (de.is_regular_file() && de.path().extension() == ".crdsraw")
        names.push_back(de.path().string());
    std::sort(names.begin(), names.end());
    if (names.empty())
      throw crds::InvalidArgument("make-dataset: no .crdsraw clips under " + o.src);
    for (const std::string& n : names) sources.push_back(crds::load_clip(n));
    note("make-dataset: compressing " + std::to_string(sources.size()) + " source clips");
  }

  const crds::DatasetManifest man =
      crds::build_dataset(o.out, o.spec, sources.empty() ? nullptr : &sources);

  emit(ojson{{"command", "make-dataset"},
             {"out", o.out},
             {"clips", man.spec.clips},
             {"frames", man.spec.frames},
             {"height", man.spec.height},
             {"width", man.spec.width},
             {"qp", man.spec.qp},
             {"seed", man.spec.seed},
             {"manifest", join(o.out, "manifest.json")}});
}

// ---- noise-stats ---------------------------------------------------------------

struct NoiseStatsOpts {
  std::string meta, blob, out = ".", config;
  int bins = 64;
};

void run_noise_stats(const NoiseStatsOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  const std::string blob = o.blob.empty() ? default_sidecar(o.meta, ".blob") : o.blob;
  const crds::CodecMetadata meta = crds::load_metadata(o.meta, blob);

  const std::vector<double> samples = crds::noise_samples(meta);
  const crds::UniformityStats st = crds::uniformity_stats(samples, meta.qstep);

  fs::create_directories(o.out);
  const std::string png = join(o.out, "noise_hist.png");
  crds::write_png(png,
                  crds::histogram_image(samples, -meta.qstep / 2, meta.qstep / 2, o.bins));

  emit(ojson{{"command", "noise-stats"},
             {"count", samples.size()},
             {"delta", meta.qstep},
             {"mean", st.mean},
             {"variance", st.variance},
             {"variance_expected", meta.qstep * meta.qstep / 12.0},
             {"max_abs", st.max_abs},
             {"ks_distance", st.ks_distance},
             {"histogram_png", png}});
}

// ---- pretrain ------------------------------------------------------------------

struct PretrainOpts {
  std::string data, out, config;
  int steps = 2500;
  int batch = 2;
  double lr = 1e-4;
  double eps = 0.25;
  uint64_t seed = 1;
  int patch = 48;
  int per_clip = 32;
  ModelOpts model;
};

void run_pretrain(const PretrainOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  if (o.data.empty() || o.out.empty())
    throw crds::InvalidArgument("pretrain: --data and --out are required");

  const std::vector<crds::ClipPair> pairs = crds::load_dataset(o.data);
  const crds::CrdsConfig cfg = model_config(o.model, pairs.front().gt.channels);

  std::vector<crds::PatchPair> patches;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const std::vector<crds::PatchPair> v = crds::sample_patches(
        pairs[i].lq, pairs[i].gt, o.patch, o.per_clip, mix64(o.seed ^ (0x70617463ull + i)));
    patches.insert(patches.end(), v.begin(), v.end());
  }
  note("pretrain: " + std::to_string(patches.size()) + " patches from " +
       std::to_string(pairs.size()) + " clips");

  crds::PretrainConfig pc;
  pc.steps = o.steps;
  pc.batch = o.batch;
  pc.lr = o.lr;
  pc.eps = o.eps;
  pc.seed = o.seed;
  pc.model = cfg.ldrae;

  fs::create_directories(o.out);
  write_snapshot(join(o.out, "run_config.json"), "pretrain", cl.snapshot());

  const crds::PretrainResult res = crds::pretrain(patches, crds::make_schedule(cfg.stages), pc);

  const std::string prefix = join(o.out, "ldrae");
  crds::nn::CheckpointExtra extra;
  extra.iteration = pc.steps;
  crds::nn::save_checkpoint(prefix, res.weights, nullptr, extra);

  const std::string csv = join(o.out, "pretrain_loss.csv");
  {
    std::ofstream f(csv, std::ios::binary);
    if (!f) throw crds::IoError("pretrain: cannot write " + csv);
    f << "step,loss\n" << std::setprecision(17);
    for (size_t i = 0; i < res.loss_trace.size(); ++i) f << i << "," << res.loss_trace[i] << "\n";
  }

  emit(ojson{{"command", "pretrain"},
             {"out", prefix},
             {"patches", patches.size()},
             {"steps", o.steps},
             {"final_loss", res.loss_trace.empty() ? ojson(nullptr) : ojson(res.loss_trace.back())},
             {"loss_csv", csv}});
}

// ---- train ---------------------------------------------------------------------

struct TrainOpts {
  std::string data, out, init, ckpt, preset = "desk", config;
  bool do_resume = false;
  int64_t stop_after = -1;
  // schedule fields; preset supplies any value not given explicitly
  int64_t iters = 0, interm_iters = 0, enc_freeze = 0, flow_freeze = 0, ckpt_interval = 0;
  double lr = 0, lr_flow = 0, lambda_i = 0, charb_eps = 0;
  int batch = 0, patch = 0, seq_frames = 0;
  uint64_t seed = 0;
  ModelOpts model;
};

crds::TrainConfig preset_by_name(const std::string& name) {
  if (name == "desk") return crds::desk_preset();
  if (name == "tiny") return crds::tiny_preset();
  if (name == "paper") return crds::paper_preset();
  throw crds::InvalidArgument("train: unknown preset \"" + name + "\" (desk, tiny, paper)");
}

void run_train(const TrainOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  if (o.data.empty() || o.out.empty())
    throw crds::InvalidArgument("train: --data and --out are required");

  const std::vector<crds::ClipPair> pairs = crds::load_dataset(o.data);
  const crds::TrainSet set = to_trainset(pairs);
  const crds::CrdsConfig cfg = model_config(o.model, pairs.front().gt.channels);

  crds::TrainConfig tc = preset_by_name(o.preset);
  if (cl.given("iters")) tc.total_iters = o.iters;
  if (cl.given("interm_iters")) tc.interm_iters = o.interm_iters;
  if (cl.given("enc_freeze_iters")) tc.encoder_freeze_iters = o.enc_freeze;
  if (cl.given("flow_freeze_iters")) tc.flow_freeze_iters = o.flow_freeze;
  if (cl.given("ckpt_interval")) tc.checkpoint_interval = o.ckpt_interval;
  if (cl.given("lr")) tc.lr_main = o.lr;
  if (cl.given("lr_flow")) tc.lr_flow = o.lr_flow;
  if (cl.given("lambda_i")) tc.lambda_i = o.lambda_i;
  if (cl.given("charbonnier_eps")) tc.charbonnier_eps = o.charb_eps;
  if (cl.given("batch")) tc.batch = o.batch;
  if (cl.given("patch")) tc.patch = o.patch;
  if (cl.given("seq_frames")) tc.seq_frames = o.seq_frames;
  if (cl.given("seed")) tc.seed = o.seed;
  tc.validate();

  fs::create_directories(o.out);
  ojson effective;
  effective["train_config"] = ojson::parse(crds::to_json(tc));
  write_snapshot(join(o.out, "run_config.json"), "train", cl.snapshot(), effective);

  note("train: " + std::to_string(set.size()) + " clips, " + std::to_string(tc.total_iters) +
       " iterations (preset " + o.preset + ")");
  crds::TrainResult res;
  if (o.do_resume) {
    const std::string prefix = o.ckpt.empty() ? join(o.out, "ckpt") : o.ckpt;
    res = crds::resume(set, prefix, tc, cfg, o.out, o.stop_after);
  } else {
    res = crds::train(set, o.init, tc, cfg, o.out, o.stop_after);
  }

  emit(ojson{{"command", "train"},
             {"out", o.out},
             {"iterations", res.iteration},
             {"ckpt", res.checkpoint_prefix},
             {"final_L_M", res.history.empty() ? ojson(nullptr) : ojson(res.history.back().l_m)},
             {"final_L_I", res.history.empty() ? ojson(nullptr) : ojson(res.history.back().l_i)},
             {"loss_csv", join(o.out, "loss.csv")}});
}

// ---- enhance -------------------------------------------------------------------

struct EnhanceOpts {
  std::string input, output, ckpt, config;
  ModelOpts model;
};

void run_enhance(const EnhanceOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  const crds::RawClip in = crds::load_clip(o.input);
  crds::CrdsConfig cfg = model_config(o.model, in.channels);
  cfg.keep_trace = false;

  crds::nn::ParamStore<float> wf;
  if (o.ckpt.empty()) {
    // fresh weights form an identity network: output == input
    crds::Rng rng = crds::Rng::derive(1, 0);
    crds::init_crds_params(wf, cfg, rng);
    note("enhance: no checkpoint given, running the identity-initialized network");
  } else {
    wf = load_weights(o.ckpt, cfg);
  }
  const crds::nn::ParamStore<double> w = wf.cast<double>();

  const crds::CrdsForward fwd = crds::crds_forward(crds::to_frames(in), w, cfg);
  crds::save_clip(crds::from_frames(fwd.enhanced, in.colorspace, in.fps), o.output);
  write_snapshot(o.output + ".run.json", "enhance", cl.snapshot());

  emit(ojson{{"command", "enhance"},
             {"input", o.input},
             {"output", o.output},
             {"frames", in.frame_count()},
             {"ckpt", o.ckpt.empty() ? ojson(nullptr) : ojson(o.ckpt)}});
}

// ---- eval ----------------------------------------------------------------------

struct EvalOpts {
  std::string data, ckpt, out, config;
  bool stage_breakdown = false;
  bool full_channel = false;
  ModelOpts model;
};

void run_eval(const EvalOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  if (o.data.empty() || o.ckpt.empty() || o.out.empty())
    throw crds::InvalidArgument("eval: --data, --ckpt, and --out are required");

  const std::vector<crds::ClipPair> pairs = crds::load_dataset(o.data);
  const crds::TrainSet set = to_trainset(pairs);
  const crds::CrdsConfig cfg = model_config(o.model, pairs.front().gt.channels);
  const crds::nn::ParamStore<float> wf = load_weights(o.ckpt, cfg);

  fs::create_directories(o.out);
  write_snapshot(join(o.out, "run_config.json"), "eval", cl.snapshot());

  crds::EvalOptions eo;
  eo.use_luma = !o.full_channel;
  eo.stage_breakdown = o.stage_breakdown;
  eo.csv_path = join(o.out, "per_frame.csv");
  const crds::EvalReport rep = crds::evaluate(set, wf, cfg, eo);

  const std::string js = crds::eval_to_json(rep);
  {
    std::ofstream f(join(o.out, "eval.json"), std::ios::binary);
    if (!f) throw crds::IoError("eval: cannot write " + join(o.out, "eval.json"));
    f << js << "\n";
  }

  ojson summary;
  summary["command"] = "eval";
  summary["out"] = o.out;
  summary["csv"] = eo.csv_path;
  const ojson parsed = ojson::parse(js);
  for (auto it = parsed.begin(); it != parsed.end(); ++it) summary[it.key()] = it.value();
  emit(summary);
}

// ---- inspect-mv ----------------------------------------------------------------

struct InspectMvOpts {
  std::string clip, ckpt, meta, blob, out = ".", config;
  int frame = 1;
  int stage = 1;
  int cell = 0;  // 0: use the codec block size
  double gain = 1.0;
  ModelOpts model;
};

void run_inspect_mv(const InspectMvOpts& o, ConfigLayer& cl) {
  cl.apply(o.config);
  const crds::RawClip clip = crds::load_clip(o.clip);
  const std::string blob = o.blob.empty() ? default_sidecar(o.meta, ".blob") : o.blob;
  const crds::CodecMetadata meta = crds::load_metadata(o.meta, blob);

  if (meta.height != clip.height || meta.width != clip.width ||
      meta.motions.size() != clip.frame_count())
    throw crds::InvalidArgument("inspect-mv: metadata does not describe this clip");
  if (o.frame < 0 || o.frame >= static_cast<int>(clip.frame_count()))
    throw crds::InvalidArgument("inspect-mv: --frame out of range");

  crds::CrdsConfig cfg = model_config(o.model, clip.channels);
  cfg.keep_trace = true;
  if (o.stage < 1 || o.stage > cfg.stages)
    throw crds::InvalidArgument("inspect-mv: --stage must be in 1..N");

  const crds::nn::ParamStore<float> wf = load_weights(o.ckpt, cfg);
  const crds::nn::ParamStore<double> w = wf.cast<double>();

  note("inspect-mv: tracing " + std::to_string(clip.frame_count()) + " frames");
  const crds::CrdsForward fwd = crds::crds_forward(crds::to_frames(clip), w, cfg);

  const int t = o.frame;
  const int ref = t > 0 ? t - 1 : (clip.frame_count() > 1 ? 1 : 0);
  const crds::LatentMap& h_t = fwd.trace.latents[o.stage][t];
  const crds::LatentMap& h_ref = fwd.trace.latents[o.stage][ref];
  const crds::FlowField flow = crds::estimate_flow(h_t, h_ref);
  const crds::AttentionResult att =
      crds::muna_me(h_t, h_ref, flow, w, cfg.muna, crds::stage_prefix(o.stage));
  const crds::Tensor<double> codec_mv = crds::motion_field(meta, static_cast<size_t>(t));

  fs::create_directories(o.out);
  const int cell = o.cell > 0 ? o.cell : meta.block;
  const std::string mv_png = join(o.out, "mv_maps.png");
  crds::write_png(mv_png, crds::hstack({crds::arrow_map(codec_mv, cell, o.gain),
                                        crds::arrow_map(att.mv, cell, o.gain)}));

  const crds::Frame cres = crds::residual_frame(meta, static_cast<size_t>(t));
  crds::Frame cres_mag = crds::Frame::zeros({1, meta.height, meta.width});
  for (int c = 0; c < meta.channels; ++c)
    for (int y = 0; y < meta.height; ++y)
      for (int x = 0; x < meta.width; ++x) cres_mag.at(0, y, x) += std::abs(cres.at(c, y, x));
  const std::string res_png = join(o.out, "residual_maps.png");
  crds::write_png(res_png, crds::hstack({crds::frame_to_image(cres_mag, true),
                                         crds::binarize_at_median(fwd.trace.resid[o.stage][t])}));

  // mean vectors over the full field, angular error where the codec moved
  double cdy = 0, cdx = 0, mdy = 0, mdx = 0;
  double ang_sum = 0;
  int64_t ang_n = 0;
  const int64_t npx = static_cast<int64_t>(meta.height) * meta.width;
  for (int y = 0; y < meta.height; ++y)
    for (int x = 0; x < meta.width; ++x) {
      const double uy = codec_mv.at(0, y, x), ux = codec_mv.at(1, y, x);
      const double vy = att.mv.at(0, y, x), vx = att.mv.at(1, y, x);
      cdy += uy, cdx += ux, mdy += vy, mdx += vx;
      const double un = std::hypot(uy, ux), vn = std::hypot(vy, vx);
      if (un >= 0.5 && vn >= 1e-9) {
        const double cosang = std::clamp((uy * vy + ux * vx) / (un * vn), -1.0, 1.0);
        ang_sum += std::acos(cosang) * (180.0 / std::acos(-1.0));
        ++ang_n;
      }
    }

  emit(ojson{{"command", "inspect-mv"},
             {"frame", t},
             {"reference", ref},
             {"stage", o.stage},
             {"codec_mean_mv", ojson::array({cdy / npx, cdx / npx})},
             {"muna_mean_mv", ojson::array({mdy / npx, mdx / npx})},
             {"mean_angular_error_deg", ang_n == 0 ? ojson(nullptr) : ojson(ang_sum / ang_n)},
             {"mv_png", mv_png},
             {"residual_png", res_png}});
}

void fail(const std::string& msg) {
  note("error: " + msg);
  emit(ojson{{"error", msg}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compression-aware video enhancement toolkit"};
  app.require_subcommand(1);

  CodecOpts co;
  ConfigLayer ccl;
  {
    CLI::App* sc = app.add_subcommand("codec", "compress a clip with the toy block codec");
    sc->add_option("input", co.input, "source .crdsraw clip")->required();
    sc->add_option("output", co.output, "compressed .crdsraw clip")->required();
    ccl.bind(sc->add_option("--qp", co.qp, "quantization parameter")->capture_default_str(), "qp",
             co.qp);
    ccl.bind(sc->add_option("--block", co.block, "block size")->capture_default_str(), "block",
             co.block);
    ccl.bind(sc->add_option("--range", co.range, "motion search radius")->capture_default_str(),
             "range", co.range);
    ccl.bind(sc->add_option("--meta-json", co.meta_json, "metadata sidecar path"), "meta_json",
             co.meta_json);
    ccl.bind(sc->add_option("--meta-blob", co.meta_blob, "coefficient blob path"), "meta_blob",
             co.meta_blob);
    sc->add_option("--config", co.config, "JSON config file");
    sc->callback([&] { run_codec(co, ccl); });
  }

  MakeDatasetOpts mo;
  ConfigLayer mcl;
  {
    CLI::App* sc = app.add_subcommand("make-dataset", "synthesize or compress a paired GT/LQ set");
    mcl.bind(sc->add_option("--out", mo.out, "dataset directory"), "out", mo.out);
    mcl.bind(sc->add_option("--src", mo.src, "directory of source .crdsraw clips"), "src", mo.src);
    mcl.bind(sc->add_option("--clips", mo.spec.clips, "clip count")->capture_default_str(),
             "clips", mo.spec.clips);
    mcl.bind(sc->add_option("--frames", mo.spec.frames, "frames per clip")->capture_default_str(),
             "frames", mo.spec.frames);
    mcl.bind(sc->add_option("--height", mo.spec.height, "frame height")->capture_default_str(),
             "height", mo.spec.height);
    mcl.bind(sc->add_option("--width", mo.spec.width, "frame width")->capture_default_str(),
             "width", mo.spec.width);
    mcl.bind(sc->add_option("--qp", mo.spec.qp, "quantization parameter")->capture_default_str(),
             "qp", mo.spec.qp);
    mcl.bind(sc->add_option("--block", mo.spec.block, "block size")->capture_default_str(),
             "block", mo.spec.block);
    mcl.bind(
        sc->add_option("--range", mo.spec.search_range, "motion search radius")
            ->capture_default_str(),
        "range", mo.spec.search_range);
    mcl.bind(sc->add_option("--seed", mo.spec.seed, "synthesis seed")->capture_default_str(),
             "seed", mo.spec.seed);
    mcl.bind(sc->add_option("--grain", mo.spec.grain, "synthesizer grain")->capture_default_str(),
             "grain", mo.spec.grain);
    sc->add_option("--config", mo.config, "JSON config file");
    sc->callback([&] { run_make_dataset(mo, mcl); });
  }

  NoiseStatsOpts no;
  ConfigLayer ncl;
  {
    CLI::App* sc =
        app.add_subcommand("noise-stats", "quantization-noise uniformity of stored metadata");
    sc->add_option("meta", no.meta, "metadata sidecar (.json)")->required();
    ncl.bind(sc->add_option("--blob", no.blob, "coefficient blob (defaults beside the json)"),
             "blob", no.blob);
    ncl.bind(sc->add_option("--out", no.out, "output directory")->capture_default_str(), "out",
             no.out);
    ncl.bind(sc->add_option("--bins", no.bins, "histogram bins")->capture_default_str(), "bins",
             no.bins);
    sc->add_option("--config", no.config, "JSON config file");
    sc->callback([&] { run_noise_stats(no, ncl); });
  }

  PretrainOpts po;
  ConfigLayer pcl;
  {
    CLI::App* sc = app.add_subcommand("pretrain", "pretrain the degradation auto-encoder");
    pcl.bind(sc->add_option("--data", po.data, "dataset directory"), "data", po.data);
    pcl.bind(sc->add_option("--out", po.out, "output directory"), "out", po.out);
    pcl.bind(sc->add_option("--steps", po.steps, "optimizer steps")->capture_default_str(),
             "steps", po.steps);
    pcl.bind(sc->add_option("--batch", po.batch, "patches per step")->capture_default_str(),
             "batch", po.batch);
    pcl.bind(sc->add_option("--lr", po.lr, "learning rate")->capture_default_str(), "lr", po.lr);
    pcl.bind(sc->add_option("--eps", po.eps, "loss weighting bias")->capture_default_str(), "eps",
             po.eps);
    pcl.bind(sc->add_option("--seed", po.seed, "run seed")->capture_default_str(), "seed",
             po.seed);
    pcl.bind(sc->add_option("--patch", po.patch, "patch size")->capture_default_str(), "patch",
             po.patch);
    pcl.bind(
        sc->add_option("--per-clip", po.per_clip, "patches sampled per clip")
            ->capture_default_str(),
        "per_clip", po.per_clip);
    add_model_flags(sc, po.model, pcl);
    sc->add_option("--config", po.config, "JSON config file");
    sc->callback([&] { run_pretrain(po, pcl); });
  }

  TrainOpts to;
  ConfigLayer tcl;
  {
    CLI::App* sc = app.add_subcommand("train", "train the denoising network");
    tcl.bind(sc->add_option("--data", to.data, "dataset directory"), "data", to.data);
    tcl.bind(sc->add_option("--out", to.out, "output directory"), "out", to.out);
    tcl.bind(sc->add_option("--init", to.init, "auto-encoder checkpoint prefix"), "init", to.init);
    tcl.bind(sc->add_option("--preset", to.preset, "schedule preset: desk, tiny, paper")
                 ->capture_default_str(),
             "preset", to.preset);
    tcl.bind(sc->add_flag("--resume", to.do_resume, "continue from the rolling checkpoint"),
             "resume", to.do_resume);
    tcl.bind(sc->add_option("--ckpt", to.ckpt, "checkpoint prefix to resume from"), "ckpt",
             to.ckpt);
    tcl.bind(sc->add_option("--stop-after", to.stop_after, "pause after this absolute iteration"),
             "stop_after", to.stop_after);
    tcl.bind(sc->add_option("--iters", to.iters, "total iterations"), "iters", to.iters);
    tcl.bind(sc->add_option("--interm-iters", to.interm_iters, "intermediate-supervision window"),
             "interm_iters", to.interm_iters);
    tcl.bind(sc->add_option("--enc-freeze", to.enc_freeze, "encoder freeze iterations"),
             "enc_freeze_iters", to.enc_freeze);
    tcl.bind(sc->add_option("--flow-freeze", to.flow_freeze, "flow freeze iterations"),
             "flow_freeze_iters", to.flow_freeze);
    tcl.bind(sc->add_option("--ckpt-interval", to.ckpt_interval, "checkpoint interval"),
             "ckpt_interval", to.ckpt_interval);
    tcl.bind(sc->add_option("--lr", to.lr, "main learning rate"), "lr", to.lr);
    tcl.bind(sc->add_option("--lr-flow", to.lr_flow, "flow learning rate"), "lr_flow",
             to.lr_flow);
    tcl.bind(sc->add_option("--lambda-i", to.lambda_i, "intermediate loss weight"), "lambda_i",
             to.lambda_i);
    tcl.bind(sc->add_option("--charb-eps", to.charb_eps, "charbonnier epsilon"),
             "charbonnier_eps", to.charb_eps);
    tcl.bind(sc->add_option("--batch", to.batch, "clips per iteration"), "batch", to.batch);
    tcl.bind(sc->add_option("--patch", to.patch, "training crop size"), "patch", to.patch);
    tcl.bind(sc->add_option("--seq-frames", to.seq_frames, "frames per sample"), "seq_frames",
             to.seq_frames);
    tcl.bind(sc->add_option("--seed", to.seed, "run seed"), "seed", to.seed);
    add_model_flags(sc, to.model, tcl);
    sc->add_option("--config", to.config, "JSON config file");
    sc->callback([&] { run_train(to, tcl); });
  }

  EnhanceOpts eo;
  ConfigLayer ecl;
  {
    CLI::App* sc = app.add_subcommand("enhance", "run the network over a compressed clip");
    sc->add_option("input", eo.input, "compressed .crdsraw clip")->required();
    sc->add_option("output", eo.output, "enhanced .crdsraw clip")->required();
    ecl.bind(sc->add_option("--ckpt", eo.ckpt, "checkpoint prefix (omit for identity weights)"),
             "ckpt", eo.ckpt);
    add_model_flags(sc, eo.model, ecl);
    sc->add_option("--config", eo.config, "JSON config file");
    sc->callback([&] { run_enhance(eo, ecl); });
  }

  EvalOpts vo;
  ConfigLayer vcl;
  {
    CLI::App* sc = app.add_subcommand("eval", "score a checkpoint against a paired dataset");
    vcl.bind(sc->add_option("--data", vo.data, "dataset directory"), "data", vo.data);
    vcl.bind(sc->add_option("--ckpt", vo.ckpt, "checkpoint prefix"), "ckpt", vo.ckpt);
    vcl.bind(sc->add_option("--out", vo.out, "output directory"), "out", vo.out);
    vcl.bind(sc->add_flag("--stage-breakdown", vo.stage_breakdown,
                          "also score every intermediate reconstruction"),
             "stage_breakdown", vo.stage_breakdown);
    vcl.bind(sc->add_flag("--full-channel", vo.full_channel, "score all channels, not the luma"),
             "full_channel", vo.full_channel);
    add_model_flags(sc, vo.model, vcl);
    sc->add_option("--config", vo.config, "JSON config file");
    sc->callback([&] { run_eval(vo, vcl); });
  }

  InspectMvOpts io;
  ConfigLayer icl;
  {
    CLI::App* sc = app.add_subcommand(
        "inspect-mv", "compare codec motion/residual side-info with the attention's view");
    sc->add_option("clip", io.clip, "compressed .crdsraw clip")->required();
    sc->add_option("ckpt", io.ckpt, "checkpoint prefix")->required();
    sc->add_option("meta", io.meta, "codec metadata sidecar (.json)")->required();
    icl.bind(sc->add_option("--blob", io.blob, "coefficient blob (defaults beside the json)"),
             "blob", io.blob);
    icl.bind(sc->add_option("--frame", io.frame, "frame to inspect")->capture_default_str(),
             "frame", io.frame);
    icl.bind(sc->add_option("--stage", io.stage, "denoising block to probe")
                 ->capture_default_str(),
             "stage", io.stage);
    icl.bind(sc->add_option("--out", io.out, "output directory")->capture_default_str(), "out",
             io.out);
    icl.bind(sc->add_option("--cell", io.cell, "arrow grid pitch (0: codec block)")
                 ->capture_default_str(),
             "cell", io.cell);
    icl.bind(sc->add_option("--gain", io.gain, "arrow length scale")->capture_default_str(),
             "gain", io.gain);
    add_model_flags(sc, io.model, icl);
    sc->add_option("--config", io.config, "JSON config file");
    sc->callback([&] { run_inspect_mv(io, icl); });
  }

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail(e.what());
    return 2;
  } catch (const crds::InvalidArgument& e) {
    fail(e.what());
    return 2;
  } catch (const crds::FormatError& e) {
    fail(e.what());
    return 2;
  } catch (const crds::CorruptionError& e) {
    fail(e.what());
    return 2;
  } catch (const crds::IoError& e) {
    fail(e.what());
    return 2;
  } catch (const std::exception& e) {
    fail(e.what());
    return 1;
  }
}
