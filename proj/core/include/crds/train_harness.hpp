#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crds/media_io.hpp"
#include "crds/noise_model.hpp"
#include "crds/nn/params.hpp"
#include "crds/pdis_net.hpp"

namespace crds {

// Knobs of the three-phase training schedule. Iteration i is in phase 1 while
// i < encoder_freeze_iters (auto-encoder weights pinned; flow additionally
// pinned while i < flow_freeze_iters), phase 2 until interm_iters (everything
// trainable, intermediate supervision still on), and phase 3 afterwards
// (enhancement loss only).
struct TrainConfig {
  int64_t total_iters = 6000;
  int64_t interm_iters = 3000;
  int64_t flow_freeze_iters = 100;
  int64_t encoder_freeze_iters = 400;
  double lr_main = 1e-4;
  double lr_flow = 2.5e-5;
  int batch = 2;
  int patch = 64;             // spatial crop, pixels
  uint64_t seed = 1;
  double lambda_i = 0.1;      // weight of the intermediate loss ("lambda_I")
  double charbonnier_eps = 1e-3;
  int seq_frames = 2;         // temporal extent of each training sample
  int64_t checkpoint_interval = 1000;

  void validate() const;
};

// Full desk-scale schedule (1/50 of the published one).
TrainConfig desk_preset();
// Same schedule with a smaller crop, sized so a full run plus evaluation fits
// the acceptance-time budget on one core.
TrainConfig tiny_preset();
// The published schedule; far beyond desk hardware, kept for reference runs.
TrainConfig paper_preset();

// Single-line JSON with a stable key order; round-trips exactly.
std::string to_json(const TrainConfig& tc);
TrainConfig train_config_from_json(const std::string& text);
// fnv1a-64 of to_json(tc) as fixed-width hex; stamped into checkpoints.
std::string config_hash(const TrainConfig& tc);

// ---- losses (data level) -----------------------------------------------------

// mean over elements of sqrt((a-b)^2 + eps^2); equals eps when a == b and
// tends to mean |a-b| as eps -> 0.
double charbonnier(const Tensor<double>& a, const Tensor<double>& b, double eps);

// Charbonnier pooled over all frames (grand mean over every element).
double main_loss(const std::vector<Frame>& enhanced, const std::vector<Frame>& gt, double eps);

// Sum over s = 1..N-1 and frames of the mean squared error between the
// stage-s reconstruction and its hybrid target; hybrids[s-1][t] is the target
// for stage s. Throws when the trace, schedule, or hybrid shapes disagree.
double intermediate_loss(const ForwardTrace& trace,
                         const std::vector<std::vector<Frame>>& hybrids,
                         const nn::ParamStore<double>& w, const CrdsConfig& cfg,
                         const NoiseSchedule& sched);

// ---- training ----------------------------------------------------------------

struct TrainClip {
  std::vector<Frame> lq;  // compressed frames in [0,1]
  std::vector<Frame> gt;  // pristine frames, same geometry
  std::string name;
};
using TrainSet = std::vector<TrainClip>;

struct TrainResult {
  nn::ParamStore<float> weights;
  std::vector<nn::LossRow> history;       // one row per completed iteration
  int64_t iteration = 0;                  // iterations completed
  std::string checkpoint_prefix;          // rolling checkpoint written under out_dir
};

// Train the full network. Auto-encoder weights are loaded from the checkpoint
// at ldrae_ckpt (subset load; pass "" to start the auto-encoder fresh), the
// rest initialise from tc.seed. The CRDS_SEED environment variable, when set,
// overrides tc.seed in both train and resume. Writes <out_dir>/ckpt.{bin,json}
// every checkpoint_interval iterations and <out_dir>/loss.csv alongside; a
// non-finite loss raises DivergenceError, leaving the last good checkpoint in
// place. stop_after (absolute iteration) pauses early; -1 runs to
// tc.total_iters. Learning rates follow cosine annealing over total_iters.
TrainResult train(const TrainSet& data, const std::string& ldrae_ckpt, const TrainConfig& tc,
                  const CrdsConfig& cfg, const std::string& out_dir, int64_t stop_after = -1,
                  const FlowEstimator& flow = nullptr);

// Continue from a rolling checkpoint written by train(). The config must hash
// to the checkpoint's stamp. Training a schedule in one go and in split
// train/resume runs produces bitwise-identical weights.
TrainResult resume(const TrainSet& data, const std::string& ckpt_prefix, const TrainConfig& tc,
                   const CrdsConfig& cfg, const std::string& out_dir, int64_t stop_after = -1,
                   const FlowEstimator& flow = nullptr);

// ---- evaluation --------------------------------------------------------------

struct EvalOptions {
  bool use_luma = true;
  bool stage_breakdown = false;  // also score every intermediate reconstruction
  std::string csv_path;          // per-frame CSV written when non-empty
};

struct ClipEval {
  std::string name;
  MetricsReport metrics;
  std::vector<double> stage_psnr;  // [s], s = 0..N-1, when stage_breakdown
};

struct EvalReport {
  std::vector<ClipEval> clips;
  double mean_delta_psnr = 0.0;
  double mean_delta_ssim = 0.0;
  double mean_psnr_compressed = 0.0;
  double mean_psnr_enhanced = 0.0;
  std::vector<double> mean_stage_psnr;  // clip means per stage, when stage_breakdown
};

// Enhance every clip with the given weights and aggregate quality deltas
// against the compressed input. Deterministic; identity weights give a delta
// of exactly zero.
EvalReport evaluate(const TrainSet& testset, const nn::ParamStore<float>& weights,
                    const CrdsConfig& cfg, const EvalOptions& opt = {},
                    const FlowEstimator& flow = nullptr);

std::string eval_to_json(const EvalReport& r);

// Loss trace serialisation: header "iter,L_I,L_M,lr", one row per iteration.
void write_loss_csv(const std::string& path, const std::vector<nn::LossRow>& history);
std::vector<nn::LossRow> read_loss_csv(const std::string& path);

}  // namespace crds
