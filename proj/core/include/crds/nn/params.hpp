#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crds/nn/graph.hpp"
#include "crds/rng.hpp"
#include "crds/tensor.hpp"

namespace crds::nn {

// Named, ordered collection of trainable tensors. Order is the manifest
// order of checkpoints, so it must be construction-deterministic.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor<T> value;
    std::string group;  // optimizer/freeze group: "encoder", "flow", "main"
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, int> index;

  Tensor<T>& add(const std::string& name, Tensor<T> init, const std::string& group = "main") {
    if (index.count(name)) throw InvalidArgument("ParamStore: duplicate name " + name);
    index.emplace(name, static_cast<int>(entries.size()));
    entries.push_back(Entry{name, std::move(init), group});
    return entries.back().value;
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw InvalidArgument("ParamStore: unknown name " + name);
    return entries[it->second].value;
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  int64_t param_count(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& e : entries)
      if (e.name.rfind(prefix, 0) == 0) n += e.value.numel();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries) out.add(e.name, e.value.template cast<U>(), e.group);
    return out;
  }
};

// He-style normal init for convolutions feeding leaky ReLUs
// (fan_in = Cin*kh*kw), optionally damped.
template <typename T>
Tensor<T> he_conv(std::vector<int> dims, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(dims));
  double fan_in = 1.0;
  for (size_t i = 1; i < t.dims.size(); ++i) fan_in *= t.dims[i];
  const double sigma = scale * std::sqrt(2.0 / fan_in);
  for (auto& x : t.v) x = static_cast<T>(sigma * rng.normal());
  return t;
}

// Params of the mounted store become graph inputs once per tape; module
// forward builders look nodes up by name.
template <typename T>
struct MountedStore {
  Graph<T>* g = nullptr;
  std::unordered_map<std::string, int> node;

  int id(const std::string& name) const {
    auto it = node.find(name);
    if (it == node.end()) throw InvalidArgument("MountedStore: unknown param " + name);
    return it->second;
  }
};

template <typename T>
MountedStore<T> mount(Graph<T>& g, const ParamStore<T>& store,
                      const std::function<bool(const typename ParamStore<T>::Entry&)>& trainable =
                          [](const typename ParamStore<T>::Entry&) { return true; }) {
  MountedStore<T> m;
  m.g = &g;
  for (const auto& e : store.entries)
    m.node.emplace(e.name, g.input(e.value, trainable(e)));
  return m;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-parameter step counters so tensors that sit frozen for a
// while start with fresh bias correction when they unfreeze.
template <typename T>
struct Adam {
  AdamConfig cfg;
  std::vector<Tensor<T>> m, v;
  std::vector<int64_t> steps;

  void init(const ParamStore<T>& store) {
    m.clear();
    v.clear();
    steps.assign(store.entries.size(), 0);
    for (const auto& e : store.entries) {
      m.push_back(Tensor<T>::zeros(e.value.dims));
      v.push_back(Tensor<T>::zeros(e.value.dims));
    }
  }

  void step_param(ParamStore<T>& store, int idx, const Tensor<T>& grad, double lr) {
    Tensor<T>& p = store.entries[idx].value;
    require_same_shape(p, grad, "Adam grad");
    Tensor<T>& mi = m[idx];
    Tensor<T>& vi = v[idx];
    const int64_t t = ++steps[idx];
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(t))));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(t))));
    const T a = static_cast<T>(lr);
    const T eps = static_cast<T>(cfg.eps);
    for (size_t i = 0; i < p.v.size(); ++i) {
      const T gi = grad[i];
      mi[i] = b1 * mi[i] + (T(1) - b1) * gi;
      vi[i] = b2 * vi[i] + (T(1) - b2) * gi * gi;
      p[i] -= a * (mi[i] * c1) / (std::sqrt(vi[i] * c2) + eps);
    }
  }
};

// One row of the training loss trace.
struct LossRow {
  int64_t iter = 0;
  double l_i = 0.0;
  double l_m = 0.0;
  double lr = 0.0;
};

struct CheckpointExtra {
  int64_t iteration = 0;
  std::string config_hash;
  std::vector<LossRow> loss_history;
};

enum class LoadMode {
  kStrict,  // file tensors and store tensors must be the same set
  kSubset,  // every file tensor must exist in the store; extras in the store keep their values
};

// Checkpoint = <prefix>.bin (raw little-endian f32 blob) + <prefix>.json
// (manifest: name/shape/dtype/offset per tensor, iteration, config hash,
// loss history, optimizer step counts). Writes are tmp-then-rename.
void save_checkpoint(const std::string& prefix, const ParamStore<float>& params,
                     const Adam<float>* opt, const CheckpointExtra& extra);
CheckpointExtra load_checkpoint(const std::string& prefix, ParamStore<float>& params,
                                Adam<float>* opt, LoadMode mode);

uint64_t fnv1a64(const std::string& s);

}  // namespace crds::nn
