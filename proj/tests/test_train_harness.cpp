#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crds/errors.hpp"
#include "crds/ldr_ae.hpp"
#include "crds/train_harness.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace {

crds::CrdsConfig micro_cfg(int stages = 2) {
  crds::CrdsConfig c;
  c.stages = stages;
  c.channels = 8;
  c.muna.window = 3;
  c.muna.temporal_radius = 1;
  c.muna.heads = 1;
  c.muna.head_dim = 8;
  c.fusion_hidden = 4;
  c.rp_hidden = 4;
  c.ldrae = crds::LdraeConfig{1, 8, 1, 0, 4};
  return c;
}

crds::TrainConfig micro_tc(int64_t total = 6) {
  crds::TrainConfig tc;
  tc.total_iters = total;
  tc.interm_iters = total / 2;
  tc.encoder_freeze_iters = std::min<int64_t>(2, total);
  tc.flow_freeze_iters = std::min<int64_t>(1, total);
  tc.lr_main = 1e-3;
  tc.lr_flow = 2.5e-4;
  tc.batch = 2;
  tc.patch = 8;
  tc.seq_frames = 2;
  tc.seed = 7;
  tc.checkpoint_interval = 2;
  return tc;
}

crds::TrainSet micro_set(uint64_t seed, int clips = 2, int frames = 4, int hw = 12) {
  crds::TrainSet out;
  crds::Rng rng(seed);
  for (int c = 0; c < clips; ++c) {
    crds::TrainClip clip;
    clip.name = "clip" + std::to_string(c);
    for (int t = 0; t < frames; ++t) {
      crds::Frame gt({1, hw, hw}), lq({1, hw, hw});
      for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) {
          const double base = 0.5 + 0.3 * std::sin(0.4 * y + 0.7 * x + 0.3 * t + c);
          gt.at(0, y, x) = std::clamp(base, 0.0, 1.0);
          lq.at(0, y, x) = std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0);
        }
      clip.gt.push_back(gt);
      clip.lq.push_back(lq);
    }
    out.push_back(clip);
  }
  return out;
}

bool stores_equal(const crds::nn::ParamStore<float>& a, const crds::nn::ParamStore<float>& b,
                  const std::string& prefix = "") {
  if (a.entries.size() != b.entries.size()) return false;
  for (size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].name != b.entries[i].name) return false;
    if (a.entries[i].name.rfind(prefix, 0) != 0) continue;
    if (a.entries[i].value.v != b.entries[i].value.v) return false;
  }
  return true;
}

bool histories_equal(const std::vector<crds::nn::LossRow>& a,
                     const std::vector<crds::nn::LossRow>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].iter != b[i].iter || a[i].l_i != b[i].l_i || a[i].l_m != b[i].l_m ||
        a[i].lr != b[i].lr)
      return false;
  return true;
}

}  // namespace

TEST_CASE("train config: validation bounds and presets") {
  CHECK_NOTHROW(crds::desk_preset().validate());
  CHECK_NOTHROW(crds::tiny_preset().validate());
  CHECK_NOTHROW(crds::paper_preset().validate());
  CHECK(crds::desk_preset().total_iters == 6000);
  CHECK(crds::desk_preset().interm_iters == 3000);
  CHECK(crds::paper_preset().total_iters == 300000);

  crds::TrainConfig tc;
  tc.interm_iters = tc.total_iters + 1;
  CHECK_THROWS_AS(tc.validate(), crds::InvalidArgument);
  tc = crds::TrainConfig{};
  tc.encoder_freeze_iters = tc.total_iters + 1;
  CHECK_THROWS_AS(tc.validate(), crds::InvalidArgument);
  tc = crds::TrainConfig{};
  tc.lr_main = 0.0;
  CHECK_THROWS_AS(tc.validate(), crds::InvalidArgument);
  tc = crds::TrainConfig{};
  tc.lr_flow = -1.0;
  CHECK_THROWS_AS(tc.validate(), crds::InvalidArgument);
  tc = crds::TrainConfig{};
  tc.patch = 4;
  CHECK_THROWS_AS(tc.validate(), crds::InvalidArgument);
  tc = crds::TrainConfig{};
  tc.charbonnier_eps = 0.0;
  CHECK_THROWS_AS(tc.validate(), crds::InvalidArgument);
  tc = crds::TrainConfig{};
  tc.checkpoint_interval = 0;
  CHECK_THROWS_AS(tc.validate(), crds::InvalidArgument);
}

TEST_CASE("train config: JSON round-trip is exact and hash covers every field") {
  crds::TrainConfig tc;
  tc.total_iters = 123456789012;
  tc.interm_iters = 345;
  tc.flow_freeze_iters = 12;
  tc.encoder_freeze_iters = 34;
  tc.lr_main = 1.2345678901234e-4;
  tc.lr_flow = 9.876543210987e-6;
  tc.batch = 3;
  tc.patch = 48;
  tc.seed = 0xDEADBEEFCAFEBABEull;
  tc.lambda_i = 0.12345;
  tc.charbonnier_eps = 2.5e-3;
  tc.seq_frames = 5;
  tc.checkpoint_interval = 77;

  const std::string text = crds::to_json(tc);
  CHECK(text.find("\"lambda_I\"") != std::string::npos);
  CHECK(text.find('\n') == std::string::npos);
  const crds::TrainConfig rt = crds::train_config_from_json(text);
  CHECK(rt.total_iters == tc.total_iters);
  CHECK(rt.interm_iters == tc.interm_iters);
  CHECK(rt.flow_freeze_iters == tc.flow_freeze_iters);
  CHECK(rt.encoder_freeze_iters == tc.encoder_freeze_iters);
  CHECK(rt.lr_main == tc.lr_main);
  CHECK(rt.lr_flow == tc.lr_flow);
  CHECK(rt.batch == tc.batch);
  CHECK(rt.patch == tc.patch);
  CHECK(rt.seed == tc.seed);
  CHECK(rt.lambda_i == tc.lambda_i);
  CHECK(rt.charbonnier_eps == tc.charbonnier_eps);
  CHECK(rt.seq_frames == tc.seq_frames);
  CHECK(rt.checkpoint_interval == tc.checkpoint_interval);
  CHECK(crds::to_json(rt) == text);

  // unknown keys are ignored; malformed input is rejected
  CHECK(crds::train_config_from_json("{\"batch\":9,\"qp\":37}").batch == 9);
  CHECK_THROWS_AS(crds::train_config_from_json("{nope"), crds::FormatError);
  CHECK_THROWS_AS(crds::train_config_from_json("[1,2]"), crds::FormatError);
  CHECK_THROWS_AS(crds::train_config_from_json("{\"batch\":\"two\"}"), crds::FormatError);

  const std::string base = crds::config_hash(crds::TrainConfig{});
  CHECK(base.size() == 16);
  const auto differs = [&](crds::TrainConfig m) { return crds::config_hash(m) != base; };
  crds::TrainConfig m;
  m.total_iters++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.interm_iters++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.flow_freeze_iters++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.encoder_freeze_iters++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.lr_main *= 2;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.lr_flow *= 2;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.batch++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.patch++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.seed++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.lambda_i += 0.5;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.charbonnier_eps *= 2;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.seq_frames++;
  CHECK(differs(m));
  m = crds::TrainConfig{};
  m.checkpoint_interval++;
  CHECK(differs(m));
}

TEST_CASE("losses: charbonnier pinned values and limits") {
  crds::Tensor<double> a({2, 3}), b({2, 3});
  for (int i = 0; i < 6; ++i) {
    a.v[i] = 0.1 * i;
    b.v[i] = 0.1 * i;
  }
  // identical inputs give exactly eps
  CHECK(crds::charbonnier(a, b, 1e-3) == 1e-3);
  CHECK(crds::charbonnier(a, b, 0.25) == 0.25);

  // |a-b| = 3e-3 everywhere with eps = 1e-3: sqrt(9e-6 + 1e-6)
  for (int i = 0; i < 6; ++i) b.v[i] += 3e-3;
  CHECK(crds::charbonnier(a, b, 1e-3) == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-12));
  CHECK(crds::charbonnier(a, b, 1e-3) == doctest::Approx(3.1623e-3).epsilon(1e-4));

  // eps -> 0 tends to the mean absolute difference
  crds::Rng rng(11);
  for (int i = 0; i < 6; ++i) b.v[i] = a.v[i] + 0.2 * rng.normal();
  double mad = 0.0;
  for (int i = 0; i < 6; ++i) mad += std::abs(a.v[i] - b.v[i]);
  mad /= 6.0;
  CHECK(crds::charbonnier(a, b, 1e-9) == doctest::Approx(mad).epsilon(1e-6));

  CHECK_THROWS_AS(crds::charbonnier(a, b, 0.0), crds::InvalidArgument);
  crds::Tensor<double> c({3, 2});
  CHECK_THROWS_AS(crds::charbonnier(a, c, 1e-3), crds::InvalidArgument);
}

TEST_CASE("losses: main_loss equals charbonnier and is convex along a segment") {
  crds::Rng rng(3);
  std::vector<crds::Frame> gt, dir;
  for (int t = 0; t < 3; ++t) {
    crds::Frame f({1, 4, 5}), d({1, 4, 5});
    for (auto& v : f.v) v = rng.uniform();
    for (auto& v : d.v) v = rng.normal();
    gt.push_back(f);
    dir.push_back(d);
  }
  // enhanced == gt gives exactly eps
  CHECK(crds::main_loss(gt, gt, 1e-3) == 1e-3);

  // equals charbonnier applied to the concatenation
  std::vector<crds::Frame> enh;
  for (int t = 0; t < 3; ++t) {
    crds::Frame f = gt[t];
    for (size_t i = 0; i < f.v.size(); ++i) f.v[i] += 0.1 * dir[t].v[i];
    enh.push_back(f);
  }
  crds::Tensor<double> ae({3, 20}), ag({3, 20});
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < 20; ++i) {
      ae.v[t * 20 + i] = enh[t].v[i];
      ag.v[t * 20 + i] = gt[t].v[i];
    }
  CHECK(crds::main_loss(enh, gt, 1e-3) ==
        doctest::Approx(crds::charbonnier(ae, ag, 1e-3)).epsilon(1e-15));

  // convex along gt + s*dir: midpoint never exceeds the chord
  const auto at = [&](double s) {
    std::vector<crds::Frame> e;
    for (int t = 0; t < 3; ++t) {
      crds::Frame f = gt[t];
      for (size_t i = 0; i < f.v.size(); ++i) f.v[i] += s * dir[t].v[i];
      e.push_back(f);
    }
    return crds::main_loss(e, gt, 1e-3);
  };
  for (double s1 : {-0.8, -0.1, 0.3})
    for (double s2 : {0.05, 0.6, 1.4}) {
      const double mid = at(0.5 * (s1 + s2));
      CHECK(mid <= 0.5 * (at(s1) + at(s2)) + 1e-12);
    }

  std::vector<crds::Frame> wrong(2, gt[0]);
  CHECK_THROWS_AS(crds::main_loss(wrong, gt, 1e-3), crds::InvalidArgument);
}

TEST_CASE("losses: intermediate_loss counts stages and matches a naive oracle") {
  const crds::CrdsConfig cfg = micro_cfg(/*stages=*/4);
  crds::nn::ParamStore<double> w;
  crds::Rng rng(21);
  crds::init_crds_params(w, cfg, rng);
  // perturb the zero-initialised corrections so the stages actually transform
  for (const char* name : {"dec.out.w", "s1.pv.w", "s1.bias", "s2.fuse.stem.w", "s3.rp.h.w"}) {
    auto& t = w.get(name);
    for (auto& v : t.v) v += 0.3 * rng.normal();
  }

  const crds::TrainSet set = micro_set(5, 1, 2, 10);
  const crds::CrdsForward fw = crds::crds_forward(set[0].lq, w, cfg);
  const crds::NoiseSchedule sched = crds::make_schedule(cfg.stages);

  std::vector<std::vector<crds::Frame>> hybrids;
  for (int s = 1; s < cfg.stages; ++s) {
    std::vector<crds::Frame> hs;
    for (size_t t = 0; t < set[0].lq.size(); ++t)
      hs.push_back(crds::hybrid_target(set[0].gt[t], set[0].lq[t], sched.alphas[s]));
    hybrids.push_back(hs);
  }
  CHECK(hybrids.size() == 3);  // N = 4 contributes exactly stages 1..3

  const double loss = crds::intermediate_loss(fw.trace, hybrids, w, cfg, sched);
  CHECK(loss > 0.0);

  // naive oracle: same quantities accumulated stage-last and pixel-first
  double oracle = 0.0;
  for (int s = cfg.stages - 1; s >= 1; --s) {
    const std::vector<crds::Frame> rec = crds::reconstruct_intermediate(fw.trace, s, w, cfg);
    for (size_t t = 0; t < rec.size(); ++t) {
      double acc = 0.0;
      for (size_t i = 0; i < rec[t].v.size(); ++i) {
        const double d = rec[t].v[i] - hybrids[s - 1][t].v[i];
        acc += d * d;
      }
      oracle += acc / static_cast<double>(rec[t].v.size());
    }
  }
  CHECK(loss == doctest::Approx(oracle).epsilon(1e-12));

  // hybrids equal to the reconstructions drive the loss to exactly zero
  std::vector<std::vector<crds::Frame>> perfect;
  for (int s = 1; s < cfg.stages; ++s)
    perfect.push_back(crds::reconstruct_intermediate(fw.trace, s, w, cfg));
  CHECK(crds::intermediate_loss(fw.trace, perfect, w, cfg, sched) == 0.0);

  // stage-count mismatches are rejected
  std::vector<std::vector<crds::Frame>> two(hybrids.begin(), hybrids.begin() + 2);
  CHECK_THROWS_AS(crds::intermediate_loss(fw.trace, two, w, cfg, sched), crds::InvalidArgument);
  std::vector<std::vector<crds::Frame>> four = hybrids;
  four.push_back(hybrids.back());
  CHECK_THROWS_AS(crds::intermediate_loss(fw.trace, four, w, cfg, sched), crds::InvalidArgument);
  CHECK_THROWS_AS(crds::intermediate_loss(fw.trace, hybrids, w, cfg, crds::make_schedule(3)),
                  crds::InvalidArgument);
  crds::ForwardTrace empty;
  CHECK_THROWS_AS(crds::intermediate_loss(empty, hybrids, w, cfg, sched), crds::InvalidArgument);
}

TEST_CASE("train: auto-encoder checkpoint seeds the ends and freezing pins their bytes") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(1);

  // an auto-encoder-only checkpoint with weights unrelated to the train seed
  crds::nn::ParamStore<float> ld;
  crds::Rng lrng(99);
  crds::init_ldrae_params(ld, cfg.ldrae, lrng);
  const std::string ld_prefix = testutil::tmp_path("th_ldrae_ckpt");
  crds::nn::save_checkpoint(ld_prefix, ld, nullptr, crds::nn::CheckpointExtra{});

  crds::TrainConfig tc = micro_tc(4);
  tc.encoder_freeze_iters = 4;  // frozen for the whole run
  const crds::TrainResult init =
      crds::train(data, ld_prefix, tc, cfg, testutil::tmp_path("th_freeze_init"), 0);
  const crds::TrainResult run =
      crds::train(data, ld_prefix, tc, cfg, testutil::tmp_path("th_freeze_run"));

  // subset load took effect: encoder and decoder match the checkpoint
  for (const auto& e : ld.entries) {
    CHECK(init.weights.get(e.name).v == e.value.v);
  }
  // frozen group is bitwise untouched; the rest moved
  CHECK(stores_equal(init.weights, run.weights, "enc."));
  CHECK(!stores_equal(init.weights, run.weights, "s1."));
  CHECK(!stores_equal(init.weights, run.weights, "dec."));

  // without freezing the encoder moves too
  crds::TrainConfig tc2 = micro_tc(4);
  tc2.encoder_freeze_iters = 0;
  tc2.flow_freeze_iters = 0;
  const crds::TrainResult run2 =
      crds::train(data, ld_prefix, tc2, cfg, testutil::tmp_path("th_freeze_run2"));
  CHECK(!stores_equal(init.weights, run2.weights, "enc."));
}

TEST_CASE("train: identical config and seed reproduce the loss trace bitwise") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(1);
  const crds::TrainConfig tc = micro_tc(6);

  const crds::TrainResult a = crds::train(data, "", tc, cfg, testutil::tmp_path("th_det_a"));
  const crds::TrainResult b = crds::train(data, "", tc, cfg, testutil::tmp_path("th_det_b"));
  CHECK(histories_equal(a.history, b.history));
  CHECK(stores_equal(a.weights, b.weights));
  CHECK(a.iteration == 6);
  REQUIRE(a.history.size() == 6);

  // intermediate supervision reports while active (iters 0..2) and then stops
  for (int i = 0; i < 3; ++i) CHECK(a.history[i].l_i > 0.0);
  for (int i = 3; i < 6; ++i) CHECK(a.history[i].l_i == 0.0);
  // cosine annealing: positive, decreasing main rate
  for (int i = 1; i < 6; ++i) {
    CHECK(a.history[i].lr > 0.0);
    CHECK(a.history[i].lr < a.history[i - 1].lr);
  }

  // a different seed yields a different trace
  crds::TrainConfig tc2 = tc;
  tc2.seed = 8;
  const crds::TrainResult c = crds::train(data, "", tc2, cfg, testutil::tmp_path("th_det_c"));
  CHECK(!histories_equal(a.history, c.history));
}

TEST_CASE("train: split train/resume matches the one-shot run bitwise") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(1);
  const crds::TrainConfig tc = micro_tc(6);

  const crds::TrainResult one = crds::train(data, "", tc, cfg, testutil::tmp_path("th_one"));

  const std::string dir_a = testutil::tmp_path("th_split_a");
  const crds::TrainResult part = crds::train(data, "", tc, cfg, dir_a, 3);
  CHECK(part.iteration == 3);
  const crds::TrainResult rest =
      crds::resume(data, part.checkpoint_prefix, tc, cfg, testutil::tmp_path("th_split_b"));
  CHECK(rest.iteration == 6);

  CHECK(stores_equal(one.weights, rest.weights));
  CHECK(histories_equal(one.history, rest.history));

  // resuming under a different config is rejected
  crds::TrainConfig other = tc;
  other.lr_main *= 2;
  CHECK_THROWS_AS(
      crds::resume(data, part.checkpoint_prefix, other, cfg, testutil::tmp_path("th_split_c")),
      crds::InvalidArgument);
}

TEST_CASE("train: the intermediate term is absent from the graph after interm_iters") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(1);
  crds::TrainConfig tc = micro_tc(4);
  tc.interm_iters = 0;  // entire run is phase 3

  crds::TrainConfig heavy = tc;
  heavy.lambda_i = 7.5;  // must be inert: the term may not exist at all

  const crds::TrainResult a = crds::train(data, "", tc, cfg, testutil::tmp_path("th_li_a"));
  const crds::TrainResult b = crds::train(data, "", heavy, cfg, testutil::tmp_path("th_li_b"));
  CHECK(stores_equal(a.weights, b.weights));
  CHECK(histories_equal(a.history, b.history));
  for (const auto& r : a.history) CHECK(r.l_i == 0.0);
}

TEST_CASE("train: CRDS_SEED overrides the configured seed") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(1);
  crds::TrainConfig tc = micro_tc(2);
  tc.seed = 7;

  setenv("CRDS_SEED", "4242", 1);
  const crds::TrainResult env_run = crds::train(data, "", tc, cfg, testutil::tmp_path("th_env_a"));
  unsetenv("CRDS_SEED");

  crds::TrainConfig tc2 = tc;
  tc2.seed = 4242;
  const crds::TrainResult direct =
      crds::train(data, "", tc2, cfg, testutil::tmp_path("th_env_b"));
  const crds::TrainResult plain = crds::train(data, "", tc, cfg, testutil::tmp_path("th_env_c"));

  CHECK(stores_equal(env_run.weights, direct.weights));
  CHECK(histories_equal(env_run.history, direct.history));
  CHECK(!histories_equal(env_run.history, plain.history));

  setenv("CRDS_SEED", "12x", 1);
  CHECK_THROWS_AS(crds::train(data, "", tc, cfg, testutil::tmp_path("th_env_d")),
                  crds::InvalidArgument);
  unsetenv("CRDS_SEED");
}

TEST_CASE("train: divergence aborts and leaves the last good checkpoint behind") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(1);
  crds::TrainConfig tc = micro_tc(10);
  tc.lr_main = 1e12;  // first update catapults the weights into overflow
  tc.checkpoint_interval = 100;

  const std::string dir = testutil::tmp_path("th_diverge");
  CHECK_THROWS_AS(crds::train(data, "", tc, cfg, dir), crds::DivergenceError);

  // the rolling checkpoint still holds the pre-training state
  crds::nn::ParamStore<float> store;
  crds::Rng rng(1);
  crds::init_crds_params(store, cfg, rng);
  const crds::nn::CheckpointExtra extra =
      crds::nn::load_checkpoint(dir + "/ckpt", store, nullptr, crds::nn::LoadMode::kStrict);
  CHECK(extra.iteration == 0);
  const crds::TrainResult init = crds::train(data, "", tc, cfg, testutil::tmp_path("th_div_b"), 0);
  CHECK(stores_equal(init.weights, store));
}

TEST_CASE("train: dataset validation rejects unusable clips") {
  const crds::CrdsConfig cfg = micro_cfg();
  const std::string dir = testutil::tmp_path("th_badset");
  crds::TrainConfig tc = micro_tc(2);

  CHECK_THROWS_AS(crds::train({}, "", tc, cfg, dir), crds::InvalidArgument);

  crds::TrainSet data = micro_set(1, 1, 4, 12);
  crds::TrainConfig big = tc;
  big.patch = 16;  // larger than the 12x12 clips
  CHECK_THROWS_AS(crds::train(data, "", big, cfg, dir), crds::InvalidArgument);

  crds::TrainConfig long_seq = tc;
  long_seq.seq_frames = 5;  // clips have 4 frames
  CHECK_THROWS_AS(crds::train(data, "", long_seq, cfg, dir), crds::InvalidArgument);

  crds::TrainSet uneven = data;
  uneven[0].gt.pop_back();
  CHECK_THROWS_AS(crds::train(uneven, "", tc, cfg, dir), crds::InvalidArgument);

  crds::TrainSet wrong_ch = data;
  for (auto& f : wrong_ch[0].lq) f = crds::Frame({2, 12, 12});
  for (auto& f : wrong_ch[0].gt) f = crds::Frame({2, 12, 12});
  CHECK_THROWS_AS(crds::train(wrong_ch, "", tc, cfg, dir), crds::InvalidArgument);
}

TEST_CASE("train: loss csv round-trips the recorded history") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(1);
  const crds::TrainConfig tc = micro_tc(4);
  const std::string dir = testutil::tmp_path("th_csv");

  const crds::TrainResult run = crds::train(data, "", tc, cfg, dir);
  const std::vector<crds::nn::LossRow> rows = crds::read_loss_csv(dir + "/loss.csv");
  CHECK(histories_equal(rows, run.history));

  // header line is mandatory
  const std::string bad = testutil::tmp_path("th_csv_bad.csv");
  std::ofstream(bad) << "iteration,a,b,c\n1,2,3,4\n";
  CHECK_THROWS_AS(crds::read_loss_csv(bad), crds::FormatError);
  CHECK_THROWS_AS(crds::read_loss_csv(testutil::tmp_path("th_csv_missing.csv")), crds::IoError);
}

TEST_CASE("evaluate: identity weights give exactly zero deltas") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(2, 2, 3, 12);

  crds::nn::ParamStore<float> w;
  crds::Rng rng(5);
  crds::init_crds_params(w, cfg, rng);

  crds::EvalOptions opt;
  opt.stage_breakdown = true;
  const crds::EvalReport rep = crds::evaluate(data, w, cfg, opt);
  REQUIRE(rep.clips.size() == 2);
  CHECK(rep.mean_delta_psnr == 0.0);
  CHECK(rep.mean_delta_ssim == 0.0);
  for (const auto& c : rep.clips) {
    CHECK(c.metrics.delta_psnr == 0.0);
    CHECK(c.metrics.delta_ssim == 0.0);
    CHECK(c.stage_psnr.size() == size_t(cfg.stages));
  }
  CHECK(rep.mean_stage_psnr.size() == size_t(cfg.stages));
  // identity network: every stage reconstruction equals the input
  for (int s = 1; s < cfg.stages; ++s)
    CHECK(rep.mean_stage_psnr[s] == rep.mean_stage_psnr[0]);
  CHECK(rep.mean_psnr_enhanced == rep.mean_psnr_compressed);

  // deterministic
  const crds::EvalReport rep2 = crds::evaluate(data, w, cfg, opt);
  CHECK(rep2.mean_delta_psnr == rep.mean_delta_psnr);
  CHECK(rep2.mean_psnr_enhanced == rep.mean_psnr_enhanced);

  crds::TrainSet broken = data;
  broken[0].gt.pop_back();
  CHECK_THROWS_AS(crds::evaluate(broken, w, cfg), crds::InvalidArgument);
  CHECK_THROWS_AS(crds::evaluate({}, w, cfg), crds::InvalidArgument);
}

TEST_CASE("evaluate: report matches an independent aggregation of its CSV") {
  const crds::CrdsConfig cfg = micro_cfg();
  const crds::TrainSet data = micro_set(4, 3, 3, 12);

  crds::nn::ParamStore<float> w;
  crds::Rng rng(6);
  crds::init_crds_params(w, cfg, rng);
  // non-identity output so the deltas are non-trivial
  for (auto& v : w.get("dec.out.w").v) v += 0.05f * static_cast<float>(rng.normal());
  for (auto& v : w.get("dec.out.b").v) v += 0.01f * static_cast<float>(rng.normal());

  crds::EvalOptions opt;
  opt.csv_path = testutil::tmp_path("th_eval.csv");
  const crds::EvalReport rep = crds::evaluate(data, w, cfg, opt);

  std::ifstream f(opt.csv_path);
  REQUIRE(f.good());
  std::string line;
  REQUIRE(std::getline(f, line));
  CHECK(line == "clip,frame,psnr,ssim,psnr_compressed,ssim_compressed");
  struct Acc {
    double pe = 0, se = 0, pc = 0, sc = 0;
    int n = 0;
  };
  std::map<std::string, Acc> by_clip;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name, frame, c3, c4, c5, c6;
    REQUIRE(std::getline(ss, name, ','));
    REQUIRE(std::getline(ss, frame, ','));
    REQUIRE(std::getline(ss, c3, ','));
    REQUIRE(std::getline(ss, c4, ','));
    REQUIRE(std::getline(ss, c5, ','));
    REQUIRE(std::getline(ss, c6));
    Acc& a = by_clip[name];
    a.pe += std::stod(c3);
    a.se += std::stod(c4);
    a.pc += std::stod(c5);
    a.sc += std::stod(c6);
    a.n++;
  }
  REQUIRE(by_clip.size() == data.size());
  double dp = 0, ds = 0, pe = 0, pc = 0;
  for (const auto& [name, a] : by_clip) {
    dp += (a.pe - a.pc) / a.n;
    ds += (a.se - a.sc) / a.n;
    pe += a.pe / a.n;
    pc += a.pc / a.n;
  }
  const double n = static_cast<double>(by_clip.size());
  CHECK(rep.mean_delta_psnr != 0.0);
  CHECK(rep.mean_delta_psnr == doctest::Approx(dp / n).epsilon(1e-12));
  CHECK(rep.mean_delta_ssim == doctest::Approx(ds / n).epsilon(1e-12));
  CHECK(rep.mean_psnr_enhanced == doctest::Approx(pe / n).epsilon(1e-12));
  CHECK(rep.mean_psnr_compressed == doctest::Approx(pc / n).epsilon(1e-12));

  // JSON summary parses and carries the same aggregates
  const std::string js = crds::eval_to_json(rep);
  CHECK(js.find("\"mean_delta_psnr\"") != std::string::npos);
  CHECK(js.find('\n') == std::string::npos);
}