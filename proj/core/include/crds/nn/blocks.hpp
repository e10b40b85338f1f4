#pragma once

#include <string>

#include "crds/nn/graph.hpp"
#include "crds/nn/params.hpp"

namespace crds::nn {

inline constexpr double kLreluSlope = 0.1;

template <typename T>
int conv(Graph<T>& g, const MountedStore<T>& p, const std::string& prefix, int x) {
  return g.conv2d(x, p.id(prefix + ".w"), p.id(prefix + ".b"));
}

template <typename T>
int conv_lrelu(Graph<T>& g, const MountedStore<T>& p, const std::string& prefix, int x) {
  return g.leaky_relu(conv(g, p, prefix, x), static_cast<T>(kLreluSlope));
}

// x + c2(lrelu(c1(x))); works for symmetric and bottleneck widths.
template <typename T>
int res_block(Graph<T>& g, const MountedStore<T>& p, const std::string& prefix, int x) {
  return g.add(x, conv(g, p, prefix + ".c2", conv_lrelu(g, p, prefix + ".c1", x)));
}

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& prefix, int cout, int cin, int k, Rng& rng,
              const std::string& group, bool zero = false) {
  store.add(prefix + ".w",
            zero ? Tensor<T>::zeros({cout, cin, k, k}) : he_conv<T>({cout, cin, k, k}, rng),
            group);
  store.add(prefix + ".b", Tensor<T>::zeros({cout}), group);
}

// zero_c2 leaves the block an exact identity at initialization.
template <typename T>
void add_res_block(ParamStore<T>& store, const std::string& prefix, int ch, int hidden, Rng& rng,
                   const std::string& group, bool zero_c2 = false) {
  add_conv(store, prefix + ".c1", hidden, ch, 3, rng, group);
  add_conv(store, prefix + ".c2", ch, hidden, 3, rng, group, zero_c2);
}

}  // namespace crds::nn
