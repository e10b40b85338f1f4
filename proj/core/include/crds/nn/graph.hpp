#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "crds/errors.hpp"
#include "crds/tensor.hpp"

namespace crds::nn {

// Extra forward products of windowed_attention, for callers that want to
// inspect the attention rather than just differentiate through it.
struct AttnArtifacts {
  // (heads, H*W, k) pre-scaling logits q·k + bias.
  Tensor<double> logits;
  // (2, H, W) combined motion vectors: flow + head-averaged soft-argmax offset.
  Tensor<double> mv;
};

// Reverse-mode tape. Node ids are indices into the tape; every op only
// references earlier nodes, so creation order is a topological order and
// backward() is a single reverse sweep. Templated on the scalar so the same
// network code runs in float for training and double for finite-difference
// gradient checks.
template <typename T>
class Graph {
 public:
  using Tn = Tensor<T>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  // When disabled, ops skip backward closures and saved intermediates;
  // forward values are unchanged. Used for inference passes.
  void set_grad_enabled(bool e) { grad_enabled_ = e; }
  bool grad_enabled() const { return grad_enabled_; }

  int input(Tn v, bool needs_grad = false) {
    return push(std::move(v), needs_grad && grad_enabled_, nullptr);
  }

  const Tn& val(int id) const { return nodes_[id].val; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // Valid after backward(); zero tensor if the node was never reached.
  const Tn& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tn::zeros(n.val.dims);
    return n.grad;
  }

  size_t size() const { return nodes_.size(); }

  // y = conv(x, w) + b. Stride 1, zero "same" padding; w is (Cout,Cin,kh,kw)
  // with kh,kw odd, b is (Cout). 1x1 kernels skip the im2col copy entirely.
  int conv2d(int x, int w, int b) {
    const Tn& xv = nodes_[x].val;
    const Tn& wv = nodes_[w].val;
    const Tn& bv = nodes_[b].val;
    if (xv.dims.size() != 3 || wv.dims.size() != 4)
      throw InvalidArgument("conv2d: x must be (C,H,W), w (Cout,Cin,kh,kw)");
    const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != cin) throw InvalidArgument("conv2d: channel mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw InvalidArgument("conv2d: even kernel");
    if (bv.dims.size() != 1 || bv.dim(0) != cout)
      throw InvalidArgument("conv2d: bias must be (Cout)");

    const int hw = h * wd;
    const int krows = cin * kh * kw;
    Tn out({cout, h, wd});
    CMapM wm(wv.data(), cout, krows);

    Tn cols;  // only materialized for k>1
    if (kh == 1 && kw == 1) {
      CMapM xm(xv.data(), cin, hw);
      MapM(out.data(), cout, hw).noalias() = wm * xm;
    } else {
      cols = im2col(xv, kh, kw);
      CMapM cm(cols.data(), krows, hw);
      MapM(out.data(), cout, hw).noalias() = wm * cm;
    }
    T* od = out.data();
    for (int c = 0; c < cout; ++c) {
      const T bc = bv[c];
      for (int i = 0; i < hw; ++i) od[c * hw + i] += bc;
    }

    bool needs = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    if (!grad_enabled_ || !needs) return push(std::move(out), false, nullptr);

    auto back = [x, w, b, cin, h, wd, cout, kh, kw, cols = std::move(cols)](Graph& g, int self) {
      const Tn& gy = g.nodes_[self].grad;
      const int hw = h * wd;
      const int krows = cin * kh * kw;
      CMapM gym(gy.data(), cout, hw);
      if (g.nodes_[b].needs_grad) {
        Tn& gb = g.gref(b);
        for (int c = 0; c < cout; ++c) {
          T s = 0;
          for (int i = 0; i < hw; ++i) s += gy[static_cast<size_t>(c) * hw + i];
          gb[c] += s;
        }
      }
      if (g.nodes_[w].needs_grad) {
        MapM gwm(g.gref(w).data(), cout, krows);
        if (kh == 1 && kw == 1) {
          CMapM xm(g.nodes_[x].val.data(), cin, hw);
          gwm.noalias() += gym * xm.transpose();
        } else {
          CMapM cm(cols.data(), krows, hw);
          gwm.noalias() += gym * cm.transpose();
        }
      }
      if (g.nodes_[x].needs_grad) {
        CMapM wm(g.nodes_[w].val.data(), cout, krows);
        if (kh == 1 && kw == 1) {
          MapM gxm(g.gref(x).data(), cin, hw);
          gxm.noalias() += wm.transpose() * gym;
        } else {
          Tn dcols({krows, hw});
          MapM(dcols.data(), krows, hw).noalias() = wm.transpose() * gym;
          col2im_add(dcols, kh, kw, g.gref(x));
        }
      }
    };
    return push(std::move(out), true, std::move(back));
  }

  int leaky_relu(int x, T slope) {
    const Tn& xv = nodes_[x].val;
    Tn out(xv.dims);
    for (size_t i = 0; i < xv.v.size(); ++i)
      out[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
    if (!wants(x)) return push(std::move(out), false, nullptr);
    auto back = [x, slope](Graph& g, int self) {
      const Tn& gy = g.nodes_[self].grad;
      const Tn& xv = g.nodes_[x].val;
      Tn& gx = g.gref(x);
      for (size_t i = 0; i < gy.v.size(); ++i)
        gx[i] += xv[i] > T(0) ? gy[i] : slope * gy[i];
    };
    return push(std::move(out), true, std::move(back));
  }

  int add(int a, int b) { return binary(a, b, /*sign_b=*/T(1)); }
  int sub(int a, int b) { return binary(a, b, /*sign_b=*/T(-1)); }

  int scale(int a, T s) {
    const Tn& av = nodes_[a].val;
    Tn out(av.dims);
    for (size_t i = 0; i < av.v.size(); ++i) out[i] = av[i] * s;
    if (!wants(a)) return push(std::move(out), false, nullptr);
    auto back = [a, s](Graph& g, int self) {
      const Tn& gy = g.nodes_[self].grad;
      Tn& ga = g.gref(a);
      for (size_t i = 0; i < gy.v.size(); ++i) ga[i] += gy[i] * s;
    };
    return push(std::move(out), true, std::move(back));
  }

  int add_const(int a, const Tn& c) {
    const Tn& av = nodes_[a].val;
    require_same_shape(av, c, "add_const");
    Tn out(av.dims);
    for (size_t i = 0; i < av.v.size(); ++i) out[i] = av[i] + c[i];
    if (!wants(a)) return push(std::move(out), false, nullptr);
    auto back = [a](Graph& g, int self) {
      const Tn& gy = g.nodes_[self].grad;
      Tn& ga = g.gref(a);
      for (size_t i = 0; i < gy.v.size(); ++i) ga[i] += gy[i];
    };
    return push(std::move(out), true, std::move(back));
  }

  int concat_ch(const std::vector<int>& xs) {
    if (xs.empty()) throw InvalidArgument("concat_ch: empty input");
    const Tn& first = nodes_[xs[0]].val;
    if (first.dims.size() != 3) throw InvalidArgument("concat_ch: want (C,H,W)");
    const int h = first.dim(1), wd = first.dim(2);
    int ctot = 0;
    bool needs = false;
    for (int id : xs) {
      const Tn& v = nodes_[id].val;
      if (v.dims.size() != 3 || v.dim(1) != h || v.dim(2) != wd)
        throw InvalidArgument("concat_ch: spatial mismatch");
      ctot += v.dim(0);
      needs = needs || nodes_[id].needs_grad;
    }
    Tn out({ctot, h, wd});
    size_t off = 0;
    for (int id : xs) {
      const Tn& v = nodes_[id].val;
      std::copy(v.v.begin(), v.v.end(), out.v.begin() + off);
      off += v.v.size();
    }
    if (!grad_enabled_ || !needs) return push(std::move(out), false, nullptr);
    auto back = [xs](Graph& g, int self) {
      const Tn& gy = g.nodes_[self].grad;
      size_t off = 0;
      for (int id : xs) {
        const size_t n = g.nodes_[id].val.v.size();
        if (g.nodes_[id].needs_grad) {
          Tn& gx = g.gref(id);
          for (size_t i = 0; i < n; ++i) gx[i] += gy[off + i];
        }
        off += n;
      }
    };
    return push(std::move(out), true, std::move(back));
  }

  // mean((x - target)^2), scalar output.
  int mse_to_const(int x, Tn target) {
    const Tn& xv = nodes_[x].val;
    require_same_shape(xv, target, "mse_to_const");
    const T invn = T(1) / static_cast<T>(xv.v.size());
    T acc = 0;
    for (size_t i = 0; i < xv.v.size(); ++i) {
      const T d = xv[i] - target[i];
      acc += d * d;
    }
    Tn out = Tn::scalar(acc * invn);
    if (!wants(x)) return push(std::move(out), false, nullptr);
    auto back = [x, invn, target = std::move(target)](Graph& g, int self) {
      const T gy = g.nodes_[self].grad[0];
      const Tn& xv = g.nodes_[x].val;
      Tn& gx = g.gref(x);
      const T k = gy * T(2) * invn;
      for (size_t i = 0; i < xv.v.size(); ++i) gx[i] += k * (xv[i] - target[i]);
    };
    return push(std::move(out), true, std::move(back));
  }

  // mean(sqrt((x - target)^2 + eps^2)), scalar output.
  int charbonnier_to_const(int x, Tn target, T eps) {
    const Tn& xv = nodes_[x].val;
    require_same_shape(xv, target, "charbonnier_to_const");
    if (!(eps > T(0))) throw InvalidArgument("charbonnier_to_const: eps must be > 0");
    const T invn = T(1) / static_cast<T>(xv.v.size());
    const T e2 = eps * eps;
    T acc = 0;
    for (size_t i = 0; i < xv.v.size(); ++i) {
      const T d = xv[i] - target[i];
      acc += std::sqrt(d * d + e2);
    }
    Tn out = Tn::scalar(acc * invn);
    if (!wants(x)) return push(std::move(out), false, nullptr);
    auto back = [x, invn, e2, target = std::move(target)](Graph& g, int self) {
      const T gy = g.nodes_[self].grad[0];
      const Tn& xv = g.nodes_[x].val;
      Tn& gx = g.gref(x);
      const T k = gy * invn;
      for (size_t i = 0; i < xv.v.size(); ++i) {
        const T d = xv[i] - target[i];
        gx[i] += k * d / std::sqrt(d * d + e2);
      }
    };
    return push(std::move(out), true, std::move(back));
  }

  int sum_scalars(const std::vector<int>& xs) {
    if (xs.empty()) throw InvalidArgument("sum_scalars: empty input");
    T acc = 0;
    bool needs = false;
    for (int id : xs) {
      const Tn& v = nodes_[id].val;
      if (v.v.size() != 1) throw InvalidArgument("sum_scalars: non-scalar input");
      acc += v[0];
      needs = needs || nodes_[id].needs_grad;
    }
    Tn out = Tn::scalar(acc);
    if (!grad_enabled_ || !needs) return push(std::move(out), false, nullptr);
    auto back = [xs](Graph& g, int self) {
      const T gy = g.nodes_[self].grad[0];
      for (int id : xs)
        if (g.nodes_[id].needs_grad) g.gref(id)[0] += gy;
    };
    return push(std::move(out), true, std::move(back));
  }

  // Flow-guided windowed attention over one reference map, fused into a
  // single tape node. q,k,v are (C,H,W) with C = heads*d; bias is
  // (heads, (2*window-1)^2) indexed by the neighbor's offset from the
  // flow-shifted (frame-clamped) center; flow is a constant (2,H,W) field of
  // (dy,dx). The w x w window is anchored at the flow-shifted center and
  // slid back inside the frame at borders, so every query attends to exactly
  // window^2 in-bounds neighbors. Output is the per-head weighted average of
  // values, heads reassembled into the (C,H,W) layout. Softmax uses
  // logits/sqrt(d). Optionally reports raw logits and soft-argmax motion
  // vectors (mv = flow + mean over heads of sum_j a_j * delta_j, delta_j the
  // neighbor offset from the window center).
  int windowed_attention(int q, int k, int v, int bias, const Tensor<double>& flow,
                         int window, int heads, AttnArtifacts* art = nullptr) {
    const Tn& qv = nodes_[q].val;
    const Tn& kv = nodes_[k].val;
    const Tn& vv = nodes_[v].val;
    const Tn& bv = nodes_[bias].val;
    if (qv.dims.size() != 3) throw InvalidArgument("windowed_attention: q must be (C,H,W)");
    require_same_shape(qv, kv, "windowed_attention q/k");
    require_same_shape(qv, vv, "windowed_attention q/v");
    const int c = qv.dim(0), h = qv.dim(1), wd = qv.dim(2);
    if (window < 1 || window % 2 == 0) throw InvalidArgument("windowed_attention: window must be odd");
    if (window > h || window > wd)
      throw InvalidArgument("windowed_attention: window exceeds frame");
    if (heads < 1 || c % heads != 0) throw InvalidArgument("windowed_attention: heads must divide channels");
    const int d = c / heads;
    const int span = 2 * window - 1;
    if (bv.dims.size() != 2 || bv.dim(0) != heads || bv.dim(1) != span * span)
      throw InvalidArgument("windowed_attention: bias must be (heads,(2w-1)^2)");
    if (flow.dims.size() != 3 || flow.dim(0) != 2 || flow.dim(1) != h || flow.dim(2) != wd)
      throw InvalidArgument("windowed_attention: flow must be (2,H,W)");
    for (double f : flow.v)
      if (!std::isfinite(f)) throw InvalidArgument("windowed_attention: non-finite flow");

    const int hw = h * wd;
    const int kk = window * window;
    const int r = (window - 1) / 2;
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

    Tn out({c, h, wd});
    Tn weights({heads, hw, kk});  // softmax, saved for backward
    if (art) {
      art->logits = Tensor<double>({heads, hw, kk});
      art->mv = Tensor<double>({2, h, wd});
    }

    std::vector<T> z(kk);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) {
        const int i = y * wd + x;
        int oy, ox, cy, cx;
        window_geometry(flow, y, x, h, wd, window, oy, ox, cy, cx);
        double vec_y = 0.0, vec_x = 0.0;
        for (int hd = 0; hd < heads; ++hd) {
          const int c0 = hd * d;
          T zmax = -std::numeric_limits<T>::infinity();
          for (int j = 0; j < kk; ++j) {
            const int ny = oy + j / window, nx = ox + j % window;
            T dot = 0;
            for (int cc = c0; cc < c0 + d; ++cc)
              dot += qv.at(cc, y, x) * kv.at(cc, ny, nx);
            const int bidx = (ny - cy + window - 1) * span + (nx - cx + window - 1);
            const T logit = dot + bv[static_cast<size_t>(hd) * span * span + bidx];
            if (art) art->logits[(static_cast<size_t>(hd) * hw + i) * kk + j] = logit;
            z[j] = logit * inv_sqrt_d;
            if (z[j] > zmax) zmax = z[j];
          }
          T zsum = 0;
          for (int j = 0; j < kk; ++j) {
            z[j] = std::exp(z[j] - zmax);
            zsum += z[j];
          }
          T* wout = weights.data() + (static_cast<size_t>(hd) * hw + i) * kk;
          for (int j = 0; j < kk; ++j) wout[j] = z[j] / zsum;
          for (int cc = c0; cc < c0 + d; ++cc) {
            T acc = 0;
            for (int j = 0; j < kk; ++j)
              acc += wout[j] * vv.at(cc, oy + j / window, ox + j % window);
            out.at(cc, y, x) = acc;
          }
          if (art) {
            for (int j = 0; j < kk; ++j) {
              vec_y += static_cast<double>(wout[j]) * (j / window - r);
              vec_x += static_cast<double>(wout[j]) * (j % window - r);
            }
          }
        }
        if (art) {
          art->mv.at(0, y, x) = flow.at(0, y, x) + vec_y / heads;
          art->mv.at(1, y, x) = flow.at(1, y, x) + vec_x / heads;
        }
      }
    }

    bool needs = nodes_[q].needs_grad || nodes_[k].needs_grad ||
                 nodes_[v].needs_grad || nodes_[bias].needs_grad;
    if (!grad_enabled_ || !needs) return push(std::move(out), false, nullptr);

    auto back = [q, k, v, bias, flow, window, heads, d, h, wd, inv_sqrt_d,
                 weights = std::move(weights)](Graph& g, int self) {
      const Tn& gy = g.nodes_[self].grad;
      const Tn& qv = g.nodes_[q].val;
      const Tn& kv = g.nodes_[k].val;
      const Tn& vv = g.nodes_[v].val;
      const int hw = h * wd;
      const int kk = window * window;
      const int span = 2 * window - 1;
      const bool nq = g.nodes_[q].needs_grad, nk = g.nodes_[k].needs_grad;
      const bool nv = g.nodes_[v].needs_grad, nb = g.nodes_[bias].needs_grad;
      Tn* gq = nq ? &g.gref(q) : nullptr;
      Tn* gk = nk ? &g.gref(k) : nullptr;
      Tn* gv = nv ? &g.gref(v) : nullptr;
      Tn* gb = nb ? &g.gref(bias) : nullptr;
      std::vector<T> t(kk), dlogit(kk);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < wd; ++x) {
          const int i = y * wd + x;
          int oy, ox, cy, cx;
          window_geometry(flow, y, x, h, wd, window, oy, ox, cy, cx);
          for (int hd = 0; hd < heads; ++hd) {
            const int c0 = hd * d;
            const T* a = weights.data() + (static_cast<size_t>(hd) * hw + i) * kk;
            // t_j = <dH(i), V(n_j)> restricted to this head's channels.
            T s = 0;
            for (int j = 0; j < kk; ++j) {
              const int ny = oy + j / window, nx = ox + j % window;
              T dot = 0;
              for (int cc = c0; cc < c0 + d; ++cc)
                dot += gy.at(cc, y, x) * vv.at(cc, ny, nx);
              t[j] = dot;
              s += a[j] * dot;
            }
            for (int j = 0; j < kk; ++j) {
              const int ny = oy + j / window, nx = ox + j % window;
              if (nv) {
                for (int cc = c0; cc < c0 + d; ++cc)
                  gv->at(cc, ny, nx) += a[j] * gy.at(cc, y, x);
              }
              const T dl = a[j] * (t[j] - s) * inv_sqrt_d;
              dlogit[j] = dl;
              if (nb) {
                const int bidx = (ny - cy + window - 1) * span + (nx - cx + window - 1);
                (*gb)[static_cast<size_t>(hd) * span * span + bidx] += dl;
              }
              if (nk) {
                for (int cc = c0; cc < c0 + d; ++cc)
                  gk->at(cc, ny, nx) += dl * qv.at(cc, y, x);
              }
            }
            if (nq) {
              for (int cc = c0; cc < c0 + d; ++cc) {
                T acc = 0;
                for (int j = 0; j < kk; ++j)
                  acc += dlogit[j] * kv.at(cc, oy + j / window, ox + j % window);
                gq->at(cc, y, x) += acc;
              }
            }
          }
        }
      }
    };
    return push(std::move(out), true, std::move(back));
  }

  void backward(int loss) {
    Node& ln = nodes_[loss];
    if (ln.val.v.size() != 1) throw InvalidArgument("backward: loss must be scalar");
    if (!ln.needs_grad) throw InvalidArgument("backward: loss does not depend on any trainable input");
    ln.grad = Tn::scalar(T(1));
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.back && !n.grad.empty()) n.back(*this, id);
    }
  }

  // Attention window geometry for one query: the flow-shifted center is
  // clamped into the frame (keeps the bias index within (2w-1)^2 even for
  // wild flow), then the window origin is slid back in bounds. Shared with
  // the non-graph attention helpers so both paths agree exactly.
  static void window_geometry(const Tensor<double>& flow, int y, int x, int h,
                              int wd, int window, int& oy, int& ox, int& cy, int& cx) {
    const int r = (window - 1) / 2;
    cy = y + static_cast<int>(std::lround(flow.at(0, y, x)));
    cx = x + static_cast<int>(std::lround(flow.at(1, y, x)));
    cy = std::min(std::max(cy, 0), h - 1);
    cx = std::min(std::max(cx, 0), wd - 1);
    oy = std::min(std::max(cy - r, 0), h - window);
    ox = std::min(std::max(cx - r, 0), wd - window);
  }

 private:
  struct Node {
    Tn val;
    Tn grad;
    bool needs_grad = false;
    std::function<void(Graph&, int)> back;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;

  bool wants(int id) const { return grad_enabled_ && nodes_[id].needs_grad; }

  int push(Tn val, bool needs, std::function<void(Graph&, int)> back) {
    nodes_.push_back(Node{std::move(val), Tn(), needs, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Tn& gref(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tn::zeros(n.val.dims);
    return n.grad;
  }

  int binary(int a, int b, T sign_b) {
    const Tn& av = nodes_[a].val;
    const Tn& bv = nodes_[b].val;
    require_same_shape(av, bv, "elementwise op");
    Tn out(av.dims);
    for (size_t i = 0; i < av.v.size(); ++i) out[i] = av[i] + sign_b * bv[i];
    bool needs = nodes_[a].needs_grad || nodes_[b].needs_grad;
    if (!grad_enabled_ || !needs) return push(std::move(out), false, nullptr);
    auto back = [a, b, sign_b](Graph& g, int self) {
      const Tn& gy = g.nodes_[self].grad;
      if (g.nodes_[a].needs_grad) {
        Tn& ga = g.gref(a);
        for (size_t i = 0; i < gy.v.size(); ++i) ga[i] += gy[i];
      }
      if (g.nodes_[b].needs_grad) {
        Tn& gb = g.gref(b);
        for (size_t i = 0; i < gy.v.size(); ++i) gb[i] += sign_b * gy[i];
      }
    };
    return push(std::move(out), true, std::move(back));
  }

  // (Cin*kh*kw, H*W) patch matrix with zero padding, row-major.
  static Tn im2col(const Tn& x, int kh, int kw) {
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int py = kh / 2, px = kw / 2;
    Tn cols({cin * kh * kw, h * wd});
    T* cd = cols.data();
    for (int ci = 0; ci < cin; ++ci) {
      const T* xp = x.data() + static_cast<size_t>(ci) * h * wd;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          T* row = cd + (static_cast<size_t>(ci) * kh * kw + ky * kw + kx) *
                            static_cast<size_t>(h) * wd;
          const int dy = ky - py, dx = kx - px;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            T* dst = row + static_cast<size_t>(y) * wd;
            if (sy < 0 || sy >= h) {
              std::fill(dst, dst + wd, T(0));
              continue;
            }
            const T* src = xp + static_cast<size_t>(sy) * wd;
            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
            if (x0 > 0) std::fill(dst, dst + x0, T(0));
            if (x1 > x0) std::copy(src + x0 + dx, src + x1 + dx, dst + x0);
            if (x1 < wd) std::fill(dst + std::max(x0, x1), dst + wd, T(0));
          }
        }
      }
    }
    return cols;
  }

  // Scatter-add of the patch-matrix gradient back onto the input gradient.
  static void col2im_add(const Tn& dcols, int kh, int kw, Tn& gx) {
    const int cin = gx.dim(0), h = gx.dim(1), wd = gx.dim(2);
    const int py = kh / 2, px = kw / 2;
    const T* cd = dcols.data();
    for (int ci = 0; ci < cin; ++ci) {
      T* gp = gx.data() + static_cast<size_t>(ci) * h * wd;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const T* row = cd + (static_cast<size_t>(ci) * kh * kw + ky * kw + kx) *
                                  static_cast<size_t>(h) * wd;
          const int dy = ky - py, dx = kx - px;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const T* src = row + static_cast<size_t>(y) * wd;
            T* dst = gp + static_cast<size_t>(sy) * wd;
            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
            for (int xx = x0; xx < x1; ++xx) dst[xx + dx] += src[xx];
          }
        }
      }
    }
  }
};

}  // namespace crds::nn
