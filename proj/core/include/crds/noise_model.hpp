#pragma once

#include <vector>

#include "crds/media_io.hpp"
#include "crds/tensor.hpp"

namespace crds {

// Degradation ladder alpha_0..alpha_N with per-step increments beta_s.
struct NoiseSchedule {
  int N = 0;
  std::vector<double> alphas;  // size N+1, alpha_0 = 0, alpha_N = 1
  std::vector<double> betas;   // size N, beta_s = alpha_s - alpha_{s-1}

  void validate() const;
};

// Uniform ladder alpha_s = s/N.
NoiseSchedule make_schedule(int n);

// alpha*xhat + (1-alpha)*x, with exact endpoints at alpha 0 and 1.
Frame hybrid_target(const Frame& x, const Frame& xhat, double alpha);

// x_c + alpha_s * eta on coefficient arrays.
Tensor<double> degrade(const Tensor<double>& x_c, int s,
                       const Tensor<double>& eta, const NoiseSchedule& sched);

struct UniformityStats {
  double mean = 0.0;
  double variance = 0.0;
  double max_abs = 0.0;
  double ks_distance = 0.0;  // against Uniform(-delta/2, delta/2)
};

UniformityStats uniformity_stats(const std::vector<double>& samples,
                                 double delta);

}  // namespace crds
