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

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "matchmap/tensor.hpp"

// Independent, deliberately naive oracles used to verify the optimized
// library kernels, plus finite-difference machinery.

namespace mmtest {

inline double rel_err(double a, double b, double floor = 1e-12) {
  const double d = std::fabs(a - b);
  const double s = std::max({std::fabs(a), std::fabs(b), floor});
  return d / s;
}

// Central finite differences of f at x.
inline std::vector<double> fd_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double eps) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + eps;
    const double fp = f(x);
    x[i] = x0 - eps;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Plain triple-loop matrix product, double accumulation.
inline std::vector<double> naive_matmul(int64_t M, int64_t N, int64_t K,
                                        const std::vector<double>& A,
                                        const std::vector<double>& B) {
  std::vector<double> C(size_t(M * N), 0.0);
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      double s = 0;
      for (int64_t k = 0; k < K; ++k)
        s += A[size_t(i * K + k)] * B[size_t(k * N + j)];
      C[size_t(i * N + j)] = s;
    }
  return C;
}

// Nested-loop cross-correlation with zero padding, matching the
// ceil(n/stride) "same" geometry or valid geometry.
inline mm::Tensor<double> naive_conv2d(const mm::Tensor<double>& x,
                                       const mm::Tensor<double>& w,
                                       const mm::Tensor<double>& b, int64_t sh,
                                       int64_t sw, bool same_h, bool same_w) {
  const int64_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
  const int64_t Cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  int64_t Hp, Wp, pt, pl;
  if (same_h) {
    Hp = (H + sh - 1) / sh;
    pt = std::max<int64_t>((Hp - 1) * sh + kh - H, 0) / 2;
  } else {
    Hp = (H - kh) / sh + 1;
    pt = 0;
  }
  if (same_w) {
    Wp = (W + sw - 1) / sw;
    pl = std::max<int64_t>((Wp - 1) * sw + kw - W, 0) / 2;
  } else {
    Wp = (W - kw) / sw + 1;
    pl = 0;
  }
  mm::Tensor<double> out({Cout, Hp, Wp});
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t y = 0; y < Hp; ++y)
      for (int64_t xo = 0; xo < Wp; ++xo) {
        double s = b.at_flat(co);
        for (int64_t c = 0; c < C; ++c)
          for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
              const int64_t sy = y * sh - pt + i;
              const int64_t sx = xo * sw - pl + j;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              s += x(c, sy, sx) * w(co, c, i, j);
            }
        out(co, y, xo) = s;
      }
  return out;
}

// Scratch directory unique to this process, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter_++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

}  // namespace mmtest
