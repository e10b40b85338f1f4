#include <doctest.h>

#include <cmath>

#include "crds/dataset.hpp"
#include "crds/errors.hpp"
#include "crds/noise_model.hpp"
#include "crds/rng.hpp"
#include "crds/toy_codec.hpp"
#include "test_util.hpp"

using namespace crds;
using testutil::random_frame;

TEST_CASE("schedule: N=4 ladder") {
  NoiseSchedule s = make_schedule(4);
  REQUIRE(s.alphas.size() == 5);
  CHECK(s.alphas[0] == 0.0);
  CHECK(s.alphas[1] == 0.25);
  CHECK(s.alphas[2] == 0.5);
  CHECK(s.alphas[3] == 0.75);
  CHECK(s.alphas[4] == 1.0);
  for (double b : s.betas) CHECK(b == 0.25);
}

TEST_CASE("schedule: N=1 ladder") {
  NoiseSchedule s = make_schedule(1);
  CHECK(s.alphas == std::vector<double>{0.0, 1.0});
  CHECK(s.betas == std::vector<double>{1.0});
}

TEST_CASE("schedule: betas sum to 1 for any N up to 64") {
  for (int n = 1; n <= 64; ++n) {
    NoiseSchedule s = make_schedule(n);
    double sum = 0.0;
    for (double b : s.betas) sum += b;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    CHECK_NOTHROW(s.validate());
  }
}

TEST_CASE("schedule: N=0 rejected") {
  CHECK_THROWS_AS(make_schedule(0), InvalidArgument);
}

TEST_CASE("hybrid: endpoints are bitwise exact") {
  Frame x = random_frame(1, 8, 8, 1);
  Frame xh = random_frame(1, 8, 8, 2);
  Frame h0 = hybrid_target(x, xh, 0.0);
  Frame h1 = hybrid_target(x, xh, 1.0);
  CHECK(h0.v == x.v);
  CHECK(h1.v == xh.v);
}

TEST_CASE("hybrid: pinned interior value") {
  Frame x = Frame::full({1, 4, 4}, 0.8);
  Frame xh = Frame::full({1, 4, 4}, 0.4);
  Frame h = hybrid_target(x, xh, 0.25);
  for (double v : h.v) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("hybrid: affine identity") {
  Frame x = random_frame(3, 8, 8, 3);
  Frame xh = random_frame(3, 8, 8, 4);
  for (double a : {0.1, 0.25, 0.5, 0.9}) {
    Frame h = hybrid_target(x, xh, a);
    for (size_t i = 0; i < x.v.size(); ++i)
      CHECK(h.v[i] - x.v[i] ==
            doctest::Approx(a * (xh.v[i] - x.v[i])).epsilon(1e-12));
  }
}

TEST_CASE("hybrid: out-of-range alpha and shape mismatch throw") {
  Frame x = Frame::zeros({1, 4, 4});
  CHECK_THROWS_AS(hybrid_target(x, x, -0.1), InvalidArgument);
  CHECK_THROWS_AS(hybrid_target(x, x, 1.1), InvalidArgument);
  Frame y = Frame::zeros({1, 4, 5});
  CHECK_THROWS_AS(hybrid_target(x, y, 0.5), InvalidArgument);
}

TEST_CASE("degrade: level 0 is the identity") {
  NoiseSchedule s = make_schedule(4);
  Frame x = random_frame(1, 8, 8, 7);
  Frame eta = random_frame(1, 8, 8, 8);
  Tensor<double> d0 = degrade(x, 0, eta, s);
  CHECK(d0.v == x.v);
}

TEST_CASE("degrade: full span equals eta") {
  NoiseSchedule s = make_schedule(4);
  Frame x = random_frame(1, 8, 8, 9);
  Frame eta = random_frame(1, 8, 8, 10);
  Tensor<double> dn = degrade(x, 4, eta, s);
  Tensor<double> d0 = degrade(x, 0, eta, s);
  for (size_t i = 0; i < x.v.size(); ++i)
    CHECK(dn.v[i] - d0.v[i] == doctest::Approx(eta.v[i]).epsilon(1e-12));
}

TEST_CASE("degrade: per-step increments telescope to eta") {
  for (int n : {1, 4, 13, 64}) {
    NoiseSchedule s = make_schedule(n);
    Frame x = random_frame(1, 6, 6, 20 + n);
    Frame eta = random_frame(1, 6, 6, 40 + n);
    Tensor<double> acc = Tensor<double>::zeros(x.dims);
    for (int lev = 1; lev <= n; ++lev) {
      Tensor<double> hi = degrade(x, lev, eta, s);
      Tensor<double> lo = degrade(x, lev - 1, eta, s);
      for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += hi.v[i] - lo.v[i];
    }
    for (size_t i = 0; i < acc.v.size(); ++i)
      CHECK(acc.v[i] == doctest::Approx(eta.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("degrade: level out of range throws") {
  NoiseSchedule s = make_schedule(4);
  Frame x = Frame::zeros({1, 4, 4});
  CHECK_THROWS_AS(degrade(x, 5, x, s), InvalidArgument);
  CHECK_THROWS_AS(degrade(x, -1, x, s), InvalidArgument);
}

TEST_CASE("code-space linearity: dct2 commutes with hybrid blending") {
  Rng rng(55);
  Tensor<double> x({8, 8}), xh({8, 8});
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  for (auto& v : xh.v) v = rng.uniform(-1.0, 1.0);
  for (double a : {0.25, 0.5, 0.75}) {
    Tensor<double> lhs = dct2(hybrid_target(x, xh, a));
    Tensor<double> rhs = hybrid_target(dct2(x), dct2(xh), a);
    for (size_t i = 0; i < lhs.v.size(); ++i)
      CHECK(lhs.v[i] == doctest::Approx(rhs.v[i]).epsilon(1e-9));
  }
}

TEST_CASE("uniformity: exact uniform draws score tiny ks") {
  Rng rng(606);
  const double delta = 45.254834;
  std::vector<double> samples(100000);
  for (auto& v : samples) v = rng.uniform(-delta / 2, delta / 2);
  UniformityStats st = uniformity_stats(samples, delta);
  CHECK(st.ks_distance < 0.01);
  CHECK(std::abs(st.mean) < 0.05 * delta);
  CHECK(st.variance == doctest::Approx(delta * delta / 12).epsilon(0.05));
  CHECK(st.max_abs <= delta / 2);
}

TEST_CASE("uniformity: all-zero samples degenerate to ks 0.5") {
  std::vector<double> zeros(100, 0.0);
  UniformityStats st = uniformity_stats(zeros, 4.0);
  CHECK(st.variance == 0.0);
  CHECK(st.ks_distance == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("uniformity: codec noise at qp 37 is near uniform") {
  SyntheticConfig scfg;
  scfg.frames = 6;
  scfg.height = 48;
  scfg.width = 48;
  scfg.seed = 123;
  scfg.grain = 0.30;
  RawClip gt = make_synthetic_clip(scfg);
  EncodeResult enc = encode_clip(gt, CodecConfig{});
  UniformityStats st = uniformity_stats(noise_samples(enc.meta), enc.meta.qstep);
  CHECK(st.ks_distance < 0.1);
  CHECK(std::abs(st.mean) < 0.05 * enc.meta.qstep);
  const double ref = enc.meta.qstep * enc.meta.qstep / 12.0;
  CHECK(st.variance > 0.8 * ref);
  CHECK(st.variance < 1.2 * ref);
}

TEST_CASE("uniformity: empty input throws") {
  CHECK_THROWS_AS(uniformity_stats({}, 1.0), InvalidArgument);
}
