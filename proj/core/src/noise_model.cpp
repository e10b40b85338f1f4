#include "crds/noise_model.hpp"

#include <algorithm>
#include <cmath>

#include "crds/errors.hpp"

namespace crds {

void NoiseSchedule::validate() const {
  if (N < 1) throw InvalidArgument("schedule needs N >= 1");
  if (alphas.size() != static_cast<size_t>(N) + 1 ||
      betas.size() != static_cast<size_t>(N))
    throw InvalidArgument("schedule level count mismatch");
  if (alphas.front() != 0.0 || alphas.back() != 1.0)
    throw InvalidArgument("schedule must run from 0 to 1");
  for (int s = 1; s <= N; ++s) {
    if (alphas[s] <= alphas[s - 1])
      throw InvalidArgument("schedule alphas must be strictly increasing");
    if (std::abs(betas[s - 1] - (alphas[s] - alphas[s - 1])) > 1e-12)
      throw InvalidArgument("betas must be the alpha increments");
  }
}

NoiseSchedule make_schedule(int n) {
  if (n < 1) throw InvalidArgument("make_schedule: N must be >= 1");
  NoiseSchedule sched;
  sched.N = n;
  sched.alphas.resize(n + 1);
  sched.betas.resize(n);
  for (int s = 0; s <= n; ++s)
    sched.alphas[s] = static_cast<double>(s) / static_cast<double>(n);
  sched.alphas[n] = 1.0;
  for (int s = 1; s <= n; ++s)
    sched.betas[s - 1] = sched.alphas[s] - sched.alphas[s - 1];
  sched.validate();
  return sched;
}

Frame hybrid_target(const Frame& x, const Frame& xhat, double alpha) {
  require_same_shape(x, xhat, "hybrid_target");
  if (alpha < 0.0 || alpha > 1.0)
    throw InvalidArgument("hybrid_target: alpha outside [0,1]");
  if (alpha == 0.0) return x;
  if (alpha == 1.0) return xhat;
  Frame out = x;
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = alpha * xhat.v[i] + (1.0 - alpha) * x.v[i];
  return out;
}

Tensor<double> degrade(const Tensor<double>& x_c, int s,
                       const Tensor<double>& eta, const NoiseSchedule& sched) {
  sched.validate();
  require_same_shape(x_c, eta, "degrade");
  if (s < 0 || s > sched.N) throw InvalidArgument("degrade: level out of range");
  if (s == 0) return x_c;
  const double a = sched.alphas[s];
  Tensor<double> out = x_c;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += a * eta.v[i];
  return out;
}

UniformityStats uniformity_stats(const std::vector<double>& samples,
                                 double delta) {
  if (samples.empty()) throw InvalidArgument("uniformity_stats: no samples");
  if (delta <= 0.0) throw InvalidArgument("uniformity_stats: delta must be > 0");

  UniformityStats st;
  for (double v : samples) {
    st.mean += v;
    st.max_abs = std::max(st.max_abs, std::abs(v));
  }
  const double n = static_cast<double>(samples.size());
  st.mean /= n;
  for (double v : samples) st.variance += (v - st.mean) * (v - st.mean);
  st.variance /= n;

  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  auto cdf = [&](double x) {
    return std::clamp((x + delta / 2) / delta, 0.0, 1.0);
  };
  double d = 0.0;
  for (size_t i = 0; i < sorted.size(); ++i) {
    const double f = cdf(sorted[i]);
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    d = std::max(d, std::abs(static_cast<double>(i) / n - f));
  }
  st.ks_distance = d;
  return st;
}

}  // namespace crds
