// Copyright 2026 The Matchmap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <vector>

#include "matchmap/gemm.hpp"
#include "matchmap/graph.hpp"
#include "matchmap/tensor.hpp"

// Neural-net operations. Each op is a plain kernel pair (fwd/bwd) plus a
// graph node wrapping it, so the evaluation path and the training path
// run the identical arithmetic.

namespace mm {

enum class Pad { same, valid };

// ---------------------------------------------------------------------------
// conv2d

struct Conv2dGeom {
  int64_t B, C, H, W;       // input
  int64_t Cout, kh, kw;     // kernel
  int64_t sh, sw;           // strides
  int64_t pt, pl;           // top/left zero padding
  int64_t Hp, Wp;           // output spatial extents
  bool batched;             // rank-4 input
};

inline Conv2dGeom conv2d_geom(const Shape& xs, const Shape& ws, int64_t sh,
                              int64_t sw, Pad ph, Pad pw) {
  check(xs.size() == 3 || xs.size() == 4, "conv2d: input rank must be 3 or 4, got ",
        shape_str(xs));
  check(ws.size() == 4, "conv2d: kernel must be rank 4, got ", shape_str(ws));
  check(sh >= 1 && sw >= 1, "conv2d: strides must be positive");
  Conv2dGeom g;
  g.batched = xs.size() == 4;
  g.B = g.batched ? xs[0] : 1;
  g.C = xs[g.batched ? 1 : 0];
  g.H = xs[g.batched ? 2 : 1];
  g.W = xs[g.batched ? 3 : 2];
  g.Cout = ws[0];
  g.kh = ws[2];
  g.kw = ws[3];
  check(ws[1] == g.C, "conv2d: input has ", g.C, " channels but kernel expects ",
        ws[1], " (input ", shape_str(xs), ", kernel ", shape_str(ws), ")");
  g.sh = sh;
  g.sw = sw;
  if (ph == Pad::same) {
    g.Hp = ceil_div(g.H, sh);
    int64_t total = std::max<int64_t>((g.Hp - 1) * sh + g.kh - g.H, 0);
    g.pt = total / 2;
  } else {
    check(g.H >= g.kh, "conv2d: height ", g.H, " smaller than kernel ", g.kh,
          " with valid padding");
    g.Hp = (g.H - g.kh) / sh + 1;
    g.pt = 0;
  }
  if (pw == Pad::same) {
    g.Wp = ceil_div(g.W, sw);
    int64_t total = std::max<int64_t>((g.Wp - 1) * sw + g.kw - g.W, 0);
    g.pl = total / 2;
  } else {
    check(g.W >= g.kw, "conv2d: width ", g.W, " smaller than kernel ", g.kw,
          " with valid padding");
    g.Wp = (g.W - g.kw) / sw + 1;
    g.pl = 0;
  }
  return g;
}

namespace detail {

// Unfold one image (C,H,W) into columns [C*kh*kw, Hp*Wp].
template <typename T>
void im2col(const T* x, const Conv2dGeom& g, T* col) {
  const int64_t N = g.Hp * g.Wp;
  for (int64_t c = 0; c < g.C; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        T* dst = col + ((c * g.kh + i) * g.kw + j) * N;
        for (int64_t y = 0; y < g.Hp; ++y) {
          const int64_t sy = y * g.sh - g.pt + i;
          T* row = dst + y * g.Wp;
          if (sy < 0 || sy >= g.H) {
            std::memset(row, 0, size_t(g.Wp) * sizeof(T));
            continue;
          }
          const T* src = x + (c * g.H + sy) * g.W;
          if (g.sw == 1) {
            const int64_t x0 = std::max<int64_t>(0, g.pl - j);
            const int64_t x1 = std::min<int64_t>(g.Wp - 1, g.W - 1 + g.pl - j);
            if (x0 > 0) std::memset(row, 0, size_t(x0) * sizeof(T));
            if (x1 >= x0)
              std::memcpy(row + x0, src + x0 - g.pl + j,
                          size_t(x1 - x0 + 1) * sizeof(T));
            if (x1 + 1 < g.Wp)
              std::memset(row + x1 + 1, 0, size_t(g.Wp - x1 - 1) * sizeof(T));
          } else {
            for (int64_t xo = 0; xo < g.Wp; ++xo) {
              const int64_t sx = xo * g.sw - g.pl + j;
              row[xo] = (sx >= 0 && sx < g.W) ? src[sx] : T(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add of column gradients back onto one image gradient.
template <typename T>
void col2im_add(const T* col, const Conv2dGeom& g, T* gx) {
  const int64_t N = g.Hp * g.Wp;
  for (int64_t c = 0; c < g.C; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const T* src = col + ((c * g.kh + i) * g.kw + j) * N;
        for (int64_t y = 0; y < g.Hp; ++y) {
          const int64_t sy = y * g.sh - g.pt + i;
          if (sy < 0 || sy >= g.H) continue;
          T* dstrow = gx + (c * g.H + sy) * g.W;
          const T* srow = src + y * g.Wp;
          for (int64_t xo = 0; xo < g.Wp; ++xo) {
            const int64_t sx = xo * g.sw - g.pl + j;
            if (sx >= 0 && sx < g.W) dstrow[sx] += srow[xo];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     int64_t sh, int64_t sw, Pad ph, Pad pw) {
  const Conv2dGeom g = conv2d_geom(x.shape(), w.shape(), sh, sw, ph, pw);
  check(b.rank() == 1 && b.extent(0) == g.Cout, "conv2d: bias shape ",
        shape_str(b.shape()), " does not match ", g.Cout, " output channels");
  Shape os = g.batched ? Shape{g.B, g.Cout, g.Hp, g.Wp}
                       : Shape{g.Cout, g.Hp, g.Wp};
  Tensor<T> out(os);
  const int64_t K = g.C * g.kh * g.kw;
  const int64_t N = g.Hp * g.Wp;
  std::vector<T> col(size_t(K * N));
  const int64_t xstep = g.C * g.H * g.W;
  const int64_t ostep = g.Cout * N;
  for (int64_t bi = 0; bi < g.B; ++bi) {
    detail::im2col(x.data() + bi * xstep, g, col.data());
    T* o = out.data() + bi * ostep;
    gemm_nn(g.Cout, N, K, w.data(), K, col.data(), N, o, N);
    for (int64_t co = 0; co < g.Cout; ++co) {
      const T bias = b.at_flat(co);
      T* row = o + co * N;
      for (int64_t n = 0; n < N; ++n) row[n] += bias;
    }
  }
  return out;
}

template <typename T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, int64_t sh, int64_t sw,
                Pad ph, Pad pw, const Tensor<T>& gout, Tensor<T>* gx,
                Tensor<T>* gw, Tensor<T>* gb) {
  const Conv2dGeom g = conv2d_geom(x.shape(), w.shape(), sh, sw, ph, pw);
  const int64_t K = g.C * g.kh * g.kw;
  const int64_t N = g.Hp * g.Wp;
  std::vector<T> col(size_t(K * N));
  std::vector<T> dcol(size_t(K * N));
  const int64_t xstep = g.C * g.H * g.W;
  const int64_t ostep = g.Cout * N;
  for (int64_t bi = 0; bi < g.B; ++bi) {
    const T* go = gout.data() + bi * ostep;
    if (gb) {
      for (int64_t co = 0; co < g.Cout; ++co) {
        double s = 0;
        const T* row = go + co * N;
        for (int64_t n = 0; n < N; ++n) s += double(row[n]);
        gb->at_flat(co) += T(s);
      }
    }
    if (gw) {
      detail::im2col(x.data() + bi * xstep, g, col.data());
      gemm_nt(g.Cout, K, N, go, N, col.data(), N, gw->data(), K, true);
    }
    if (gx) {
      gemm_tn(K, N, g.Cout, w.data(), K, go, N, dcol.data(), N, false);
      detail::col2im_add(dcol.data(), g, gx->data() + bi * xstep);
    }
  }
}

// ---------------------------------------------------------------------------
// max pooling

// Pools the last axis with left-aligned windows [t*s, t*s + w) clipped to
// the input; output length is ceil(T/s). argmax records flat input
// indices (first maximal element per window).
template <typename T>
Tensor<T> maxpool1d_fwd(const Tensor<T>& x, int64_t w, int64_t s,
                        std::vector<int64_t>* argmax) {
  check(w >= 1 && s >= 1, "maxpool1d: width and stride must be positive");
  const int64_t Tn = x.extent(x.rank() - 1);
  const int64_t rows = x.numel() / Tn;
  const int64_t To = ceil_div(Tn, s);
  Shape os = x.shape();
  os.back() = To;
  Tensor<T> out(os);
  if (argmax) argmax->assign(size_t(rows * To), 0);
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * Tn;
    T* dst = out.data() + r * To;
    for (int64_t t = 0; t < To; ++t) {
      const int64_t lo = t * s;
      const int64_t hi = std::min(lo + w, Tn);
      int64_t best = lo;
      T bv = src[lo];
      for (int64_t u = lo + 1; u < hi; ++u) {
        if (src[u] > bv) {
          bv = src[u];
          best = u;
        }
      }
      dst[t] = bv;
      if (argmax) (*argmax)[size_t(r * To + t)] = r * Tn + best;
    }
  }
  return out;
}

template <typename T>
void maxpool1d_bwd(const std::vector<int64_t>& argmax, const Tensor<T>& gout,
                   Tensor<T>* gx) {
  for (int64_t i = 0; i < gout.numel(); ++i)
    gx->at_flat(argmax[size_t(i)]) += gout.at_flat(i);
}

// Pools the last two axes with left-aligned square windows.
template <typename T>
Tensor<T> maxpool2d_fwd(const Tensor<T>& x, int64_t w, int64_t s,
                        std::vector<int64_t>* argmax) {
  check(w >= 1 && s >= 1, "maxpool2d: width and stride must be positive");
  check(x.rank() >= 2, "maxpool2d: input rank must be >= 2");
  const int64_t W = x.extent(x.rank() - 1);
  const int64_t H = x.extent(x.rank() - 2);
  const int64_t planes = x.numel() / (H * W);
  const int64_t Ho = ceil_div(H, s), Wo = ceil_div(W, s);
  Shape os = x.shape();
  os[os.size() - 2] = Ho;
  os.back() = Wo;
  Tensor<T> out(os);
  if (argmax) argmax->assign(size_t(planes * Ho * Wo), 0);
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * H * W;
    T* dst = out.data() + p * Ho * Wo;
    for (int64_t yo = 0; yo < Ho; ++yo) {
      const int64_t y0 = yo * s, y1 = std::min(y0 + w, H);
      for (int64_t xo = 0; xo < Wo; ++xo) {
        const int64_t x0 = xo * s, x1 = std::min(x0 + w, W);
        int64_t best = y0 * W + x0;
        T bv = src[best];
        for (int64_t y = y0; y < y1; ++y) {
          for (int64_t x2 = x0; x2 < x1; ++x2) {
            const int64_t idx = y * W + x2;
            if (src[idx] > bv) {
              bv = src[idx];
              best = idx;
            }
          }
        }
        dst[yo * Wo + xo] = bv;
        if (argmax) (*argmax)[size_t(p * Ho * Wo + yo * Wo + xo)] =
            p * H * W + best;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
Tensor<T> relu_fwd(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    out.at_flat(i) = x.at_flat(i) > T(0) ? x.at_flat(i) : T(0);
  return out;
}

// ---------------------------------------------------------------------------
// batch norm

template <typename T>
struct BnCache {
  std::vector<double> mean, invstd;
};

// Normalizes over every non-channel axis of a (B, C, ...) tensor. In
// training mode the batch must have B >= 2 and running stats are updated
// as r <- (1 - momentum) * r + momentum * batch_stat with the biased
// variance; eval mode applies the running stats elementwise.
template <typename T>
Tensor<T> batchnorm_fwd(const Tensor<T>& x, const Tensor<T>& gamma,
                        const Tensor<T>& beta, bool train, Tensor<T>* rmean,
                        Tensor<T>* rvar, double eps, double momentum,
                        std::type_identity_t<BnCache<T>*> cache) {
  check(x.rank() >= 2, "batchnorm: input rank must be >= 2, got ",
        shape_str(x.shape()));
  const int64_t B = x.extent(0), C = x.extent(1);
  const int64_t inner = x.numel() / (B * C);
  check(gamma.numel() == C && beta.numel() == C,
        "batchnorm: gamma/beta must have ", C, " elements");
  check(rmean && rvar && rmean->numel() == C && rvar->numel() == C,
        "batchnorm: running stats must have ", C, " elements");
  Tensor<T> out(x.shape());
  std::vector<double> mean(static_cast<size_t>(C));
  std::vector<double> invstd(static_cast<size_t>(C));
  if (train) {
    check(B >= 2, "batchnorm: training batch must have B >= 2, got ", B);
    const double m = double(B * inner);
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (int64_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) s += double(p[i]);
      }
      const double mu = s / m;
      double v = 0;
      for (int64_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) {
          const double d = double(p[i]) - mu;
          v += d * d;
        }
      }
      v /= m;
      mean[size_t(c)] = mu;
      invstd[size_t(c)] = 1.0 / std::sqrt(v + eps);
      rmean->at_flat(c) =
          T((1.0 - momentum) * double(rmean->at_flat(c)) + momentum * mu);
      rvar->at_flat(c) =
          T((1.0 - momentum) * double(rvar->at_flat(c)) + momentum * v);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[size_t(c)] = double(rmean->at_flat(c));
      invstd[size_t(c)] = 1.0 / std::sqrt(double(rvar->at_flat(c)) + eps);
    }
  }
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + (b * C + c) * inner;
      T* o = out.data() + (b * C + c) * inner;
      const T g = gamma.at_flat(c), bt = beta.at_flat(c);
      const T mu = T(mean[size_t(c)]), is = T(invstd[size_t(c)]);
      for (int64_t i = 0; i < inner; ++i) o[i] = g * (p[i] - mu) * is + bt;
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->invstd = std::move(invstd);
  }
  return out;
}

template <typename T>
void batchnorm_bwd(const Tensor<T>& x, const Tensor<T>& gamma, bool train,
                   const BnCache<T>& cache, const Tensor<T>& gout,
                   Tensor<T>* gx, Tensor<T>* ggamma, Tensor<T>* gbeta) {
  const int64_t B = x.extent(0), C = x.extent(1);
  const int64_t inner = x.numel() / (B * C);
  const double m = double(B * inner);
  for (int64_t c = 0; c < C; ++c) {
    const double mu = cache.mean[size_t(c)];
    const double is = cache.invstd[size_t(c)];
    const double g = double(gamma.at_flat(c));
    double sum_g = 0, sum_gx = 0;
    for (int64_t b = 0; b < B; ++b) {
      const T* xp = x.data() + (b * C + c) * inner;
      const T* gp = gout.data() + (b * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        sum_g += double(gp[i]);
        sum_gx += double(gp[i]) * ((double(xp[i]) - mu) * is);
      }
    }
    if (gbeta) gbeta->at_flat(c) += T(sum_g);
    if (ggamma) ggamma->at_flat(c) += T(sum_gx);
    if (!gx) continue;
    for (int64_t b = 0; b < B; ++b) {
      const T* xp = x.data() + (b * C + c) * inner;
      const T* gp = gout.data() + (b * C + c) * inner;
      T* dp = gx->data() + (b * C + c) * inner;
      if (train) {
        for (int64_t i = 0; i < inner; ++i) {
          const double xhat = (double(xp[i]) - mu) * is;
          dp[i] += T(g * is *
                     (double(gp[i]) - sum_g / m - xhat * (sum_gx / m)));
        }
      } else {
        for (int64_t i = 0; i < inner; ++i) dp[i] += T(g * is * double(gp[i]));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// graph nodes

namespace nodes {

template <typename T>
class Conv2d : public NodeBase<T> {
 public:
  Conv2d(int64_t sh, int64_t sw, Pad ph, Pad pw)
      : sh_(sh), sw_(sw), ph_(ph), pw_(pw) {}
  void backprop(Graph<T>& g) override {
    const Tensor<T>& x = g.value(Var{this->ins[0]});
    const Tensor<T>& w = g.value(Var{this->ins[1]});
    conv2d_bwd(x, w, sh_, sw_, ph_, pw_, this->grad, &g.grad(Var{this->ins[0]}),
               &g.grad(Var{this->ins[1]}), &g.grad(Var{this->ins[2]}));
  }
  int64_t sh_, sw_;
  Pad ph_, pw_;
};

template <typename T>
class Relu : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    const Tensor<T>& x = g.value(Var{this->ins[0]});
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    for (int64_t i = 0; i < x.numel(); ++i)
      if (x.at_flat(i) > T(0)) gx.at_flat(i) += this->grad.at_flat(i);
  }
};

template <typename T>
class MaxPool1d : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    maxpool1d_bwd(argmax, this->grad, &g.grad(Var{this->ins[0]}));
  }
  std::vector<int64_t> argmax;
};

template <typename T>
class MaxPool2d : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    maxpool1d_bwd(argmax, this->grad, &g.grad(Var{this->ins[0]}));
  }
  std::vector<int64_t> argmax;
};

template <typename T>
class BatchNorm : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    batchnorm_bwd(g.value(Var{this->ins[0]}), g.value(Var{this->ins[1]}),
                  train, cache, this->grad, &g.grad(Var{this->ins[0]}),
                  &g.grad(Var{this->ins[1]}), &g.grad(Var{this->ins[2]}));
  }
  bool train = true;
  BnCache<T> cache;
};

template <typename T>
class MaskTime : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    const Tensor<T>& go = this->grad;
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const int64_t B = go.extent(0);
    const int64_t Tn = go.extent(go.rank() - 1);
    const int64_t rows = go.numel() / (B * Tn);
    for (int64_t b = 0; b < B; ++b) {
      const int64_t len = std::min(lengths[size_t(b)], Tn);
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = (b * rows + r) * Tn;
        for (int64_t t = 0; t < len; ++t)
          gx.at_flat(base + t) += go.at_flat(base + t);
      }
    }
  }
  std::vector<int64_t> lengths;
};

template <typename T>
class SliceTime : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    const Tensor<T>& x = g.value(Var{this->ins[0]});
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const int64_t C = x.extent(1), Tn = x.extent(3);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < len; ++t)
        gx.at_flat(((b * C + c) * 1 + 0) * Tn + t) += this->grad.at_flat(c * len + t);
  }
  int64_t b = 0, len = 0;
};

template <typename T>
class SliceBatch : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const int64_t n = this->out.numel();
    for (int64_t i = 0; i < n; ++i)
      gx.at_flat(b * n + i) += this->grad.at_flat(i);
  }
  int64_t b = 0;
};

template <typename T>
class Matchmap : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    const Tensor<T>& img = g.value(Var{this->ins[0]});
    const Tensor<T>& aud = g.value(Var{this->ins[1]});
    const int64_t D = img.extent(0);
    const int64_t RC = img.numel() / D;
    const int64_t Tn = aud.extent(1);
    gemm_nt(D, RC, Tn, aud.data(), Tn, this->grad.data(), Tn,
            g.grad(Var{this->ins[0]}).data(), RC, true);
    gemm_nn(D, Tn, RC, img.data(), RC, this->grad.data(), Tn,
            g.grad(Var{this->ins[1]}).data(), Tn, true);
  }
};

// Mean over every cell.
template <typename T>
class Sisa : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const T go = this->grad.at_flat(0) / T(gx.numel());
    for (int64_t i = 0; i < gx.numel(); ++i) gx.at_flat(i) += go;
  }
};

// Mean over t of the spatial max; argmax holds one flat index per frame.
template <typename T>
class Misa : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const T go = this->grad.at_flat(0) / T(argmax.size());
    for (int64_t idx : argmax) gx.at_flat(idx) += go;
  }
  std::vector<int64_t> argmax;
};

// Mean over cells of the temporal max.
template <typename T>
class Sima : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const T go = this->grad.at_flat(0) / T(argmax.size());
    for (int64_t idx : argmax) gx.at_flat(idx) += go;
  }
  std::vector<int64_t> argmax;
};

template <typename T>
class Add : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    for (int k = 0; k < 2; ++k) {
      Tensor<T>& gx = g.grad(Var{this->ins[size_t(k)]});
      for (int64_t i = 0; i < gx.numel(); ++i)
        gx.at_flat(i) += this->grad.at_flat(i);
    }
  }
};

template <typename T>
class Sub : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& ga = g.grad(Var{this->ins[0]});
    Tensor<T>& gb = g.grad(Var{this->ins[1]});
    for (int64_t i = 0; i < ga.numel(); ++i) {
      ga.at_flat(i) += this->grad.at_flat(i);
      gb.at_flat(i) -= this->grad.at_flat(i);
    }
  }
};

template <typename T>
class Mul : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    const Tensor<T>& a = g.value(Var{this->ins[0]});
    const Tensor<T>& b = g.value(Var{this->ins[1]});
    Tensor<T>& ga = g.grad(Var{this->ins[0]});
    Tensor<T>& gb = g.grad(Var{this->ins[1]});
    for (int64_t i = 0; i < a.numel(); ++i) {
      ga.at_flat(i) += this->grad.at_flat(i) * b.at_flat(i);
      gb.at_flat(i) += this->grad.at_flat(i) * a.at_flat(i);
    }
  }
};

template <typename T>
class Affine : public NodeBase<T> {  // y = scale * x + shift
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    for (int64_t i = 0; i < gx.numel(); ++i)
      gx.at_flat(i) += this->grad.at_flat(i) * scale;
  }
  T scale = T(1);
};

template <typename T>
class SumVars : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    for (int32_t in : this->ins) {
      Tensor<T>& gx = g.grad(Var{in});
      for (int64_t i = 0; i < gx.numel(); ++i)
        gx.at_flat(i) += this->grad.at_flat(i);
    }
  }
};

// Sum of every element, scalar output.
template <typename T>
class ReduceSum : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const T go = this->grad.at_flat(0);
    for (int64_t i = 0; i < gx.numel(); ++i) gx.at_flat(i) += go;
  }
};

template <typename T>
class Matmul : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    const Tensor<T>& a = g.value(Var{this->ins[0]});
    const Tensor<T>& b = g.value(Var{this->ins[1]});
    const int64_t M = a.extent(0), K = a.extent(1), N = b.extent(1);
    gemm_nt(M, K, N, this->grad.data(), N, b.data(), N,
            g.grad(Var{this->ins[0]}).data(), K, true);
    gemm_tn(K, N, M, a.data(), K, this->grad.data(), N,
            g.grad(Var{this->ins[1]}).data(), N, true);
  }
};

// Mean over all axes but the first.
template <typename T>
class GlobalAvgPool : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const int64_t C = gx.extent(0);
    const int64_t inner = gx.numel() / C;
    for (int64_t c = 0; c < C; ++c) {
      const T go = this->grad.at_flat(c) / T(inner);
      T* p = gx.data() + c * inner;
      for (int64_t i = 0; i < inner; ++i) p[i] += go;
    }
  }
};

// Windowed mean over the last axis; partial windows average their
// in-range cells only.
template <typename T>
class AvgPool1d : public NodeBase<T> {
 public:
  void backprop(Graph<T>& g) override {
    Tensor<T>& gx = g.grad(Var{this->ins[0]});
    const int64_t Tn = gx.extent(gx.rank() - 1);
    const int64_t To = this->out.extent(this->out.rank() - 1);
    const int64_t rows = gx.numel() / Tn;
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t t = 0; t < To; ++t) {
        const int64_t lo = t * stride;
        const int64_t hi = std::min(lo + width, Tn);
        const T go = this->grad.at_flat(r * To + t) / T(hi - lo);
        for (int64_t u = lo; u < hi; ++u) gx.at_flat(r * Tn + u) += go;
      }
    }
  }
  int64_t width = 1, stride = 1;
};

}  // namespace nodes

// ---------------------------------------------------------------------------
// builders

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int64_t sh, int64_t sw, Pad ph,
           Pad pw) {
  auto node = std::make_unique<nodes::Conv2d<T>>(sh, sw, ph, pw);
  node->out = conv2d_fwd(g.value(x), g.value(w), g.value(b), sh, sw, ph, pw);
  node->ins = {x.id, w.id, b.id};
  return g.append(std::move(node));
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int64_t stride = 1,
           Pad pad = Pad::same) {
  return conv2d(g, x, w, b, stride, stride, pad, pad);
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  auto node = std::make_unique<nodes::Relu<T>>();
  node->out = relu_fwd(g.value(x));
  node->ins = {x.id};
  return g.append(std::move(node));
}

template <typename T>
Var maxpool1d(Graph<T>& g, Var x, int64_t w, int64_t s) {
  auto node = std::make_unique<nodes::MaxPool1d<T>>();
  node->out = maxpool1d_fwd(g.value(x), w, s, &node->argmax);
  node->ins = {x.id};
  return g.append(std::move(node));
}

template <typename T>
Var maxpool2d(Graph<T>& g, Var x, int64_t w, int64_t s) {
  auto node = std::make_unique<nodes::MaxPool2d<T>>();
  node->out = maxpool2d_fwd(g.value(x), w, s, &node->argmax);
  node->ins = {x.id};
  return g.append(std::move(node));
}

template <typename T>
Var batchnorm(Graph<T>& g, Var x, Var gamma, Var beta, bool train,
              Tensor<T>* rmean, Tensor<T>* rvar, double eps = 1e-5,
              double momentum = 0.1) {
  auto node = std::make_unique<nodes::BatchNorm<T>>();
  node->train = train;
  node->out = batchnorm_fwd(g.value(x), g.value(gamma), g.value(beta), train,
                            rmean, rvar, eps, momentum, &node->cache);
  node->ins = {x.id, gamma.id, beta.id};
  return g.append(std::move(node));
}

// Zeroes all frames at positions >= lengths[b] along the last axis.
template <typename T>
Var mask_time(Graph<T>& g, Var x, std::vector<int64_t> lengths) {
  const Tensor<T>& xv = g.value(x);
  check(xv.rank() >= 2, "mask_time: input rank must be >= 2");
  const int64_t B = xv.extent(0);
  check(int64_t(lengths.size()) == B, "mask_time: ", lengths.size(),
        " lengths for batch of ", B);
  auto node = std::make_unique<nodes::MaskTime<T>>();
  const int64_t Tn = xv.extent(xv.rank() - 1);
  const int64_t rows = xv.numel() / (B * Tn);
  Tensor<T> out(xv.shape());
  for (int64_t b = 0; b < B; ++b) {
    check(lengths[size_t(b)] >= 1, "mask_time: non-positive length for item ",
          b);
    const int64_t len = std::min(lengths[size_t(b)], Tn);
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = (b * rows + r) * Tn;
      for (int64_t t = 0; t < len; ++t)
        out.at_flat(base + t) = xv.at_flat(base + t);
    }
  }
  node->out = std::move(out);
  node->lengths = std::move(lengths);
  node->ins = {x.id};
  return g.append(std::move(node));
}

// Extracts sample b of a (B, C, 1, T) batch as a (C, len) map.
template <typename T>
Var slice_time(Graph<T>& g, Var x, int64_t b, int64_t len) {
  const Tensor<T>& xv = g.value(x);
  check(xv.rank() == 4 && xv.extent(2) == 1,
        "slice_time: input must be (B, C, 1, T), got ", shape_str(xv.shape()));
  const int64_t B = xv.extent(0), C = xv.extent(1), Tn = xv.extent(3);
  check(b >= 0 && b < B, "slice_time: sample ", b, " out of batch of ", B);
  check(len >= 1 && len <= Tn, "slice_time: length ", len, " out of range [1, ",
        Tn, "]");
  auto node = std::make_unique<nodes::SliceTime<T>>();
  node->b = b;
  node->len = len;
  Tensor<T> out({C, len});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t t = 0; t < len; ++t)
      out.at_flat(c * len + t) = xv.at_flat(((b * C + c) * 1) * Tn + t);
  node->out = std::move(out);
  node->ins = {x.id};
  return g.append(std::move(node));
}

// Extracts sample b of a batched (B, ...) tensor, dropping the batch axis.
template <typename T>
Var slice_batch(Graph<T>& g, Var x, int64_t b) {
  const Tensor<T>& xv = g.value(x);
  check(xv.rank() >= 2, "slice_batch: input must be batched, got ",
        shape_str(xv.shape()));
  const int64_t B = xv.extent(0);
  check(b >= 0 && b < B, "slice_batch: sample ", b, " out of batch of ", B);
  auto node = std::make_unique<nodes::SliceBatch<T>>();
  node->b = b;
  Shape inner(xv.shape().begin() + 1, xv.shape().end());
  Tensor<T> out(inner);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.at_flat(i) = xv.at_flat(b * n + i);
  node->out = std::move(out);
  node->ins = {x.id};
  return g.append(std::move(node));
}

// M[r, c, t] = sum_d I[d, r, c] * A[d, t].
template <typename T>
Tensor<T> matchmap_fwd(const Tensor<T>& img, const Tensor<T>& aud) {
  check(img.rank() == 3, "matchmap: image map must be (D, R, C), got ",
        shape_str(img.shape()));
  check(aud.rank() == 2, "matchmap: audio map must be (D, T), got ",
        shape_str(aud.shape()));
  check(img.extent(0) == aud.extent(0), "matchmap: embedding dims differ, ",
        img.extent(0), " vs ", aud.extent(0));
  const int64_t D = img.extent(0), R = img.extent(1), C = img.extent(2);
  const int64_t Tn = aud.extent(1);
  Tensor<T> m({R, C, Tn});
  gemm_tn(R * C, Tn, D, img.data(), R * C, aud.data(), Tn, m.data(), Tn);
  return m;
}

template <typename T>
Var matchmap(Graph<T>& g, Var img, Var aud) {
  auto node = std::make_unique<nodes::Matchmap<T>>();
  node->out = matchmap_fwd(g.value(img), g.value(aud));
  node->ins = {img.id, aud.id};
  return g.append(std::move(node));
}

template <typename T>
T sisa_value(const Tensor<T>& m) {
  double s = 0;
  for (int64_t i = 0; i < m.numel(); ++i) s += double(m.at_flat(i));
  return T(s / double(m.numel()));
}

template <typename T>
T misa_value(const Tensor<T>& m, std::vector<int64_t>* argmax = nullptr) {
  check(m.rank() == 3, "misa: matchmap must be (R, C, T)");
  const int64_t R = m.extent(0), C = m.extent(1), Tn = m.extent(2);
  if (argmax) argmax->assign(size_t(Tn), 0);
  double s = 0;
  for (int64_t t = 0; t < Tn; ++t) {
    int64_t best = t;
    T bv = m.at_flat(t);
    for (int64_t rc = 1; rc < R * C; ++rc) {
      const T v = m.at_flat(rc * Tn + t);
      if (v > bv) {
        bv = v;
        best = rc * Tn + t;
      }
    }
    s += double(bv);
    if (argmax) (*argmax)[size_t(t)] = best;
  }
  return T(s / double(Tn));
}

template <typename T>
T sima_value(const Tensor<T>& m, std::vector<int64_t>* argmax = nullptr) {
  check(m.rank() == 3, "sima: matchmap must be (R, C, T)");
  const int64_t R = m.extent(0), C = m.extent(1), Tn = m.extent(2);
  if (argmax) argmax->assign(size_t(R * C), 0);
  double s = 0;
  for (int64_t rc = 0; rc < R * C; ++rc) {
    int64_t best = rc * Tn;
    T bv = m.at_flat(best);
    for (int64_t t = 1; t < Tn; ++t) {
      const T v = m.at_flat(rc * Tn + t);
      if (v > bv) {
        bv = v;
        best = rc * Tn + t;
      }
    }
    s += double(bv);
    if (argmax) (*argmax)[size_t(rc)] = best;
  }
  return T(s / double(R * C));
}

template <typename T>
Var sisa(Graph<T>& g, Var m) {
  auto node = std::make_unique<nodes::Sisa<T>>();
  node->out = Tensor<T>({1});
  node->out.at_flat(0) = sisa_value(g.value(m));
  node->ins = {m.id};
  return g.append(std::move(node));
}

template <typename T>
Var misa(Graph<T>& g, Var m) {
  auto node = std::make_unique<nodes::Misa<T>>();
  node->out = Tensor<T>({1});
  node->out.at_flat(0) = misa_value(g.value(m), &node->argmax);
  node->ins = {m.id};
  return g.append(std::move(node));
}

template <typename T>
Var sima(Graph<T>& g, Var m) {
  auto node = std::make_unique<nodes::Sima<T>>();
  node->out = Tensor<T>({1});
  node->out.at_flat(0) = sima_value(g.value(m), &node->argmax);
  node->ins = {m.id};
  return g.append(std::move(node));
}

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* opname) {
  check(a.same_shape(b), opname, ": shape mismatch ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  detail::check_same_shape(g.value(a), g.value(b), "add");
  auto node = std::make_unique<nodes::Add<T>>();
  node->out = Tensor<T>(g.value(a).shape());
  for (int64_t i = 0; i < node->out.numel(); ++i)
    node->out.at_flat(i) = g.value(a).at_flat(i) + g.value(b).at_flat(i);
  node->ins = {a.id, b.id};
  return g.append(std::move(node));
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  detail::check_same_shape(g.value(a), g.value(b), "sub");
  auto node = std::make_unique<nodes::Sub<T>>();
  node->out = Tensor<T>(g.value(a).shape());
  for (int64_t i = 0; i < node->out.numel(); ++i)
    node->out.at_flat(i) = g.value(a).at_flat(i) - g.value(b).at_flat(i);
  node->ins = {a.id, b.id};
  return g.append(std::move(node));
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  detail::check_same_shape(g.value(a), g.value(b), "mul");
  auto node = std::make_unique<nodes::Mul<T>>();
  node->out = Tensor<T>(g.value(a).shape());
  for (int64_t i = 0; i < node->out.numel(); ++i)
    node->out.at_flat(i) = g.value(a).at_flat(i) * g.value(b).at_flat(i);
  node->ins = {a.id, b.id};
  return g.append(std::move(node));
}

template <typename T>
Var affine(Graph<T>& g, Var x, T scale, T shift) {
  auto node = std::make_unique<nodes::Affine<T>>();
  node->scale = scale;
  node->out = Tensor<T>(g.value(x).shape());
  for (int64_t i = 0; i < node->out.numel(); ++i)
    node->out.at_flat(i) = scale * g.value(x).at_flat(i) + shift;
  node->ins = {x.id};
  return g.append(std::move(node));
}

template <typename T>
Var scale(Graph<T>& g, Var x, T s) {
  return affine(g, x, s, T(0));
}

template <typename T>
Var shift(Graph<T>& g, Var x, T s) {
  return affine(g, x, T(1), s);
}

template <typename T>
Var sum_vars(Graph<T>& g, const std::vector<Var>& xs) {
  check(!xs.empty(), "sum_vars: empty input list");
  auto node = std::make_unique<nodes::SumVars<T>>();
  node->out = Tensor<T>(g.value(xs[0]).shape());
  for (Var x : xs) {
    detail::check_same_shape(g.value(xs[0]), g.value(x), "sum_vars");
    for (int64_t i = 0; i < node->out.numel(); ++i)
      node->out.at_flat(i) += g.value(x).at_flat(i);
    node->ins.push_back(x.id);
  }
  return g.append(std::move(node));
}

template <typename T>
Var reduce_sum(Graph<T>& g, Var x) {
  auto node = std::make_unique<nodes::ReduceSum<T>>();
  node->out = Tensor<T>({1});
  double s = 0;
  for (int64_t i = 0; i < g.value(x).numel(); ++i)
    s += double(g.value(x).at_flat(i));
  node->out.at_flat(0) = T(s);
  node->ins = {x.id};
  return g.append(std::move(node));
}

template <typename T>
Var reduce_mean(Graph<T>& g, Var x) {
  const int64_t n = g.value(x).numel();
  Var s = reduce_sum(g, x);
  return scale(g, s, T(1) / T(n));
}

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  check(av.rank() == 2 && bv.rank() == 2, "matmul: inputs must be rank 2");
  check(av.extent(1) == bv.extent(0), "matmul: inner dims differ, ",
        shape_str(av.shape()), " vs ", shape_str(bv.shape()));
  auto node = std::make_unique<nodes::Matmul<T>>();
  node->out = Tensor<T>({av.extent(0), bv.extent(1)});
  gemm_nn(av.extent(0), bv.extent(1), av.extent(1), av.data(), av.extent(1),
          bv.data(), bv.extent(1), node->out.data(), bv.extent(1));
  node->ins = {a.id, b.id};
  return g.append(std::move(node));
}

template <typename T>
Var global_avgpool(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  check(xv.rank() >= 2, "global_avgpool: input rank must be >= 2");
  auto node = std::make_unique<nodes::GlobalAvgPool<T>>();
  const int64_t C = xv.extent(0);
  const int64_t inner = xv.numel() / C;
  node->out = Tensor<T>({C});
  for (int64_t c = 0; c < C; ++c) {
    double s = 0;
    const T* p = xv.data() + c * inner;
    for (int64_t i = 0; i < inner; ++i) s += double(p[i]);
    node->out.at_flat(c) = T(s / double(inner));
  }
  node->ins = {x.id};
  return g.append(std::move(node));
}

template <typename T>
Var avgpool1d(Graph<T>& g, Var x, int64_t w, int64_t s) {
  check(w >= 1 && s >= 1, "avgpool1d: width and stride must be positive");
  const Tensor<T>& xv = g.value(x);
  auto node = std::make_unique<nodes::AvgPool1d<T>>();
  node->width = w;
  node->stride = s;
  const int64_t Tn = xv.extent(xv.rank() - 1);
  const int64_t rows = xv.numel() / Tn;
  const int64_t To = ceil_div(Tn, s);
  Shape os = xv.shape();
  os.back() = To;
  Tensor<T> out(os);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t t = 0; t < To; ++t) {
      const int64_t lo = t * s;
      const int64_t hi = std::min(lo + w, Tn);
      double acc = 0;
      for (int64_t u = lo; u < hi; ++u) acc += double(xv.at_flat(r * Tn + u));
      out.at_flat(r * To + t) = T(acc / double(hi - lo));
    }
  }
  node->out = std::move(out);
  node->ins = {x.id};
  return g.append(std::move(node));
}

}  // namespace mm
