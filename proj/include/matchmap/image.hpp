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
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "matchmap/tensor.hpp"

// RGB images travel as float tensors (3, H, W) with values in [0, 1];
// files use binary PPM (P6) and PGM (P5) with maxval 255.

namespace mm {

namespace detail {

// Reads one whitespace-delimited ASCII integer token. Comments are not
// part of the accepted grammar.
inline int64_t pnm_int(std::istream& is, const char* what) {
  int ch = is.get();
  while (ch != EOF && std::isspace(ch)) ch = is.get();
  check(ch != EOF && std::isdigit(ch), "pnm read: bad ", what);
  int64_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    check(v <= (int64_t(1) << 32), "pnm read: ", what, " out of range");
    ch = is.get();
  }
  check(ch == EOF || std::isspace(ch), "pnm read: bad ", what);
  if (ch != EOF) is.unget();
  return v;
}

inline uint8_t quantize_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return uint8_t(std::lround(c * 255.0f));
}

}  // namespace detail

inline void save_ppm(const std::string& path, const Tensor<float>& img) {
  check(img.rank() == 3 && img.extent(0) == 3,
        "ppm write: image must be (3, H, W), got ", shape_str(img.shape()));
  const int64_t H = img.extent(1), W = img.extent(2);
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "ppm write: cannot open ", path);
  os << "P6\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(size_t(W) * 3);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[size_t(x * 3 + c)] = detail::quantize_byte(img(c, y, x));
    os.write(reinterpret_cast<const char*>(row.data()),
             std::streamsize(row.size()));
  }
  check(bool(os), "ppm write: stream failure on ", path);
}

inline Tensor<float> load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "ppm read: cannot open ", path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  check(m0 == 'P' && m1 == '6', "ppm read: bad magic in ", path);
  const int64_t W = detail::pnm_int(is, "width");
  const int64_t H = detail::pnm_int(is, "height");
  const int64_t maxval = detail::pnm_int(is, "maxval");
  check(W >= 1 && H >= 1, "ppm read: empty image in ", path);
  check(maxval == 255, "ppm read: unsupported maxval ", maxval);
  const int sep = is.get();
  check(sep != EOF && std::isspace(sep), "ppm read: bad header separator");
  std::vector<uint8_t> bytes(size_t(W) * size_t(H) * 3);
  is.read(reinterpret_cast<char*>(bytes.data()),
          std::streamsize(bytes.size()));
  check(is.gcount() == std::streamsize(bytes.size()),
        "ppm read: truncated payload in ", path);
  is.peek();
  check(is.eof(), "ppm read: trailing bytes in ", path);
  Tensor<float> img({3, H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img(c, y, x) = float(bytes[size_t((y * W + x) * 3 + c)]) / 255.0f;
  return img;
}

// Grayscale (H, W) in [0, 1].
inline void save_pgm(const std::string& path, const Tensor<float>& img) {
  check(img.rank() == 2, "pgm write: image must be (H, W), got ",
        shape_str(img.shape()));
  const int64_t H = img.extent(0), W = img.extent(1);
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "pgm write: cannot open ", path);
  os << "P5\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(W));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      row[size_t(x)] = detail::quantize_byte(img(y, x));
    os.write(reinterpret_cast<const char*>(row.data()),
             std::streamsize(row.size()));
  }
  check(bool(os), "pgm write: stream failure on ", path);
}

inline Tensor<float> load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "pgm read: cannot open ", path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  check(m0 == 'P' && m1 == '5', "pgm read: bad magic in ", path);
  const int64_t W = detail::pnm_int(is, "width");
  const int64_t H = detail::pnm_int(is, "height");
  const int64_t maxval = detail::pnm_int(is, "maxval");
  check(W >= 1 && H >= 1, "pgm read: empty image in ", path);
  check(maxval == 255, "pgm read: unsupported maxval ", maxval);
  const int sep = is.get();
  check(sep != EOF && std::isspace(sep), "pgm read: bad header separator");
  std::vector<uint8_t> bytes(size_t(W) * size_t(H));
  is.read(reinterpret_cast<char*>(bytes.data()),
          std::streamsize(bytes.size()));
  check(is.gcount() == std::streamsize(bytes.size()),
        "pgm read: truncated payload in ", path);
  is.peek();
  check(is.eof(), "pgm read: trailing bytes in ", path);
  Tensor<float> img({H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      img(y, x) = float(bytes[size_t(y * W + x)]) / 255.0f;
  return img;
}

// ---------------------------------------------------------------------------
// geometry

// Bilinear resample with half-pixel centers; channels resampled
// independently.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& img, int64_t Ho, int64_t Wo) {
  check(img.rank() == 3, "resize: image must be (C, H, W), got ",
        shape_str(img.shape()));
  check(Ho >= 1 && Wo >= 1, "resize: bad target size");
  const int64_t C = img.extent(0), H = img.extent(1), W = img.extent(2);
  Tensor<T> out({C, Ho, Wo});
  for (int64_t y = 0; y < Ho; ++y) {
    // Half-pixel centers; coordinates clamp to the border before splitting
    // so edge pixels replicate the border row instead of extrapolating.
    const double sy = std::clamp(
        (double(y) + 0.5) * double(H) / double(Ho) - 0.5, 0.0, double(H - 1));
    const int64_t y0 = int64_t(std::floor(sy));
    const int64_t y1 = std::min(y0 + 1, H - 1);
    const double wy = sy - double(y0);
    for (int64_t x = 0; x < Wo; ++x) {
      const double sx = std::clamp(
          (double(x) + 0.5) * double(W) / double(Wo) - 0.5, 0.0, double(W - 1));
      const int64_t x0 = int64_t(std::floor(sx));
      const int64_t x1 = std::min(x0 + 1, W - 1);
      const double wx = sx - double(x0);
      for (int64_t c = 0; c < C; ++c) {
        const double v00 = double(img(c, y0, x0));
        const double v01 = double(img(c, y0, x1));
        const double v10 = double(img(c, y1, x0));
        const double v11 = double(img(c, y1, x1));
        const double top = v00 + (v01 - v00) * wx;
        const double bot = v10 + (v11 - v10) * wx;
        out(c, y, x) = T(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

// Scales so the smaller image side equals `side`.
template <typename T>
Tensor<T> resize_smallest_side(const Tensor<T>& img, int64_t side) {
  check(img.rank() == 3, "resize: image must be (C, H, W)");
  const int64_t H = img.extent(1), W = img.extent(2);
  if (H <= W) {
    const int64_t Wo =
        std::max<int64_t>(1, int64_t(std::llround(double(W) * double(side) / double(H))));
    return bilinear_resize(img, side, Wo);
  }
  const int64_t Ho =
      std::max<int64_t>(1, int64_t(std::llround(double(H) * double(side) / double(W))));
  return bilinear_resize(img, Ho, side);
}

template <typename T>
Tensor<T> center_crop(const Tensor<T>& img, int64_t size) {
  check(img.rank() == 3, "crop: image must be (C, H, W)");
  const int64_t C = img.extent(0), H = img.extent(1), W = img.extent(2);
  check(size >= 1 && size <= H && size <= W, "crop: size ", size,
        " does not fit in ", shape_str(img.shape()));
  const int64_t y0 = (H - size) / 2;
  const int64_t x0 = (W - size) / 2;
  Tensor<T> out({C, size, size});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x)
        out(c, y, x) = img(c, y0 + y, x0 + x);
  return out;
}

// ---------------------------------------------------------------------------
// standardization

struct ImageStats {
  double mean[3] = {0.0, 0.0, 0.0};
  double stdev[3] = {1.0, 1.0, 1.0};
};

// Per-channel mean and standard deviation over a set of images.
inline ImageStats compute_image_stats(
    const std::vector<const Tensor<float>*>& images) {
  check(!images.empty(), "stats: empty image set");
  double sum[3] = {0, 0, 0}, sum2[3] = {0, 0, 0};
  int64_t count = 0;
  for (const Tensor<float>* img : images) {
    check(img->rank() == 3 && img->extent(0) == 3,
          "stats: images must be (3, H, W)");
    const int64_t inner = img->extent(1) * img->extent(2);
    for (int64_t c = 0; c < 3; ++c) {
      const float* p = img->data() + c * inner;
      for (int64_t i = 0; i < inner; ++i) {
        sum[c] += double(p[i]);
        sum2[c] += double(p[i]) * double(p[i]);
      }
    }
    count += inner;
  }
  ImageStats s;
  for (int64_t c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / double(count);
    const double var = sum2[c] / double(count) - s.mean[c] * s.mean[c];
    s.stdev[c] = std::sqrt(std::max(var, 1e-12));
  }
  return s;
}

inline Tensor<float> standardize(const Tensor<float>& img,
                                 const ImageStats& stats) {
  check(img.rank() == 3 && img.extent(0) == 3,
        "standardize: image must be (3, H, W)");
  Tensor<float> out(img.shape());
  const int64_t inner = img.extent(1) * img.extent(2);
  for (int64_t c = 0; c < 3; ++c) {
    const float m = float(stats.mean[c]);
    const float is = float(1.0 / stats.stdev[c]);
    const float* p = img.data() + c * inner;
    float* o = out.data() + c * inner;
    for (int64_t i = 0; i < inner; ++i) o[i] = (p[i] - m) * is;
  }
  return out;
}

// h in [0, 360), s and v in [0, 1].
inline void hsv_to_rgb(double h, double s, double v, float* r, float* g,
                       float* b) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double rr = 0, gg = 0, bb = 0;
  if (hp < 1) {
    rr = c, gg = x;
  } else if (hp < 2) {
    rr = x, gg = c;
  } else if (hp < 3) {
    gg = c, bb = x;
  } else if (hp < 4) {
    gg = x, bb = c;
  } else if (hp < 5) {
    rr = x, bb = c;
  } else {
    rr = c, bb = x;
  }
  const double m = v - c;
  *r = float(rr + m);
  *g = float(gg + m);
  *b = float(bb + m);
}

}  // namespace mm
