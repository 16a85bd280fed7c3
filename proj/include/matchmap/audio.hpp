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

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "matchmap/tensor.hpp"

// Log-mel spectrogram front end:
//   waveform -> DC removal -> pre-emphasis -> 25 ms Hamming frames every
//   10 ms -> zero-pad to the next power of two -> |DFT|^2 half spectrum
//   -> triangular mel filter bank -> ln(max(E, 1e-10)).
//
// One second at 16 kHz yields 98 frames of 40 bands.

namespace mm {

struct Waveform {
  int64_t sample_rate = 16000;
  std::vector<double> samples;

  double duration() const {
    return double(samples.size()) / double(sample_rate);
  }
};

// ---------------------------------------------------------------------------
// WAV i/o (canonical 44-byte PCM16 mono header only)

namespace detail {
inline void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u16(std::ostream& os, uint16_t v) {
  os.write(reinterpret_cast<const char*>(&v), 2);
}
inline uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  check(is.gcount() == 4, "wav read: truncated ", what);
  return v;
}
inline uint16_t get_u16(std::istream& is, const char* what) {
  uint16_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 2);
  check(is.gcount() == 2, "wav read: truncated ", what);
  return v;
}
inline void expect_tag(std::istream& is, const char* tag) {
  char buf[4];
  is.read(buf, 4);
  check(is.gcount() == 4 && std::memcmp(buf, tag, 4) == 0,
        "wav read: missing '", tag, "' chunk");
}
}  // namespace detail

// Samples are clamped to [-1, 1] and quantized to PCM16.
inline void save_wav(const std::string& path, const Waveform& w) {
  check(w.sample_rate > 0, "wav write: bad sample rate");
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "wav write: cannot open ", path);
  const uint32_t n = uint32_t(w.samples.size());
  const uint32_t data_bytes = n * 2;
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);  // PCM
  detail::put_u16(os, 1);  // mono
  detail::put_u32(os, uint32_t(w.sample_rate));
  detail::put_u32(os, uint32_t(w.sample_rate) * 2);
  detail::put_u16(os, 2);   // block align
  detail::put_u16(os, 16);  // bits per sample
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  for (double s : w.samples) {
    double c = std::min(1.0, std::max(-1.0, s));
    int32_t q = int32_t(std::lround(c * 32767.0));
    int16_t v = int16_t(q);
    os.write(reinterpret_cast<const char*>(&v), 2);
  }
  check(bool(os), "wav write: stream failure on ", path);
}

inline Waveform load_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "wav read: cannot open ", path);
  detail::expect_tag(is, "RIFF");
  detail::get_u32(is, "riff size");
  detail::expect_tag(is, "WAVE");
  detail::expect_tag(is, "fmt ");
  check(detail::get_u32(is, "fmt size") == 16, "wav read: non-canonical fmt chunk");
  check(detail::get_u16(is, "format") == 1, "wav read: not PCM");
  check(detail::get_u16(is, "channels") == 1, "wav read: not mono");
  Waveform w;
  w.sample_rate = detail::get_u32(is, "sample rate");
  check(w.sample_rate > 0, "wav read: bad sample rate");
  detail::get_u32(is, "byte rate");
  detail::get_u16(is, "block align");
  check(detail::get_u16(is, "bits per sample") == 16, "wav read: not 16-bit");
  detail::expect_tag(is, "data");
  const uint32_t data_bytes = detail::get_u32(is, "data size");
  check(data_bytes % 2 == 0, "wav read: odd data size");
  w.samples.resize(data_bytes / 2);
  for (size_t i = 0; i < w.samples.size(); ++i) {
    int16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    check(is.gcount() == 2, "wav read: truncated samples");
    w.samples[i] = double(v) / 32768.0;
  }
  return w;
}

// ---------------------------------------------------------------------------
// DSP stages

inline std::vector<double> dc_remove(const std::vector<double>& x) {
  double mean = 0;
  for (double v : x) mean += v;
  if (!x.empty()) mean /= double(x.size());
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] - mean;
  return y;
}

// y[n] = x[n] - alpha * x[n-1], y[0] = x[0].
inline std::vector<double> preemphasis(const std::vector<double>& x,
                                       double alpha = 0.97) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  y[0] = x[0];
  for (size_t i = 1; i < x.size(); ++i) y[i] = x[i] - alpha * x[i - 1];
  return y;
}

// w[n] = 0.54 - 0.46 cos(2 pi n / (N - 1)).
inline std::vector<double> hamming_window(int64_t n) {
  check(n >= 2, "hamming: window length must be >= 2");
  std::vector<double> w(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    w[size_t(i)] =
        0.54 - 0.46 * std::cos(2.0 * M_PI * double(i) / double(n - 1));
  return w;
}

// Frame count for a signal of length n: 1 + floor((n - win) / shift);
// signals shorter than one window are rejected.
inline int64_t frame_count(int64_t n, int64_t win, int64_t shift) {
  check(n >= win, "frame: signal of ", n, " samples shorter than window ", win);
  return 1 + (n - win) / shift;
}

// Returns (frames, win) windowed frames.
inline std::vector<std::vector<double>> frame_and_window(
    const std::vector<double>& x, int64_t win, int64_t shift) {
  check(win >= 2 && shift >= 1, "frame: bad window/shift");
  const int64_t nf = frame_count(int64_t(x.size()), win, shift);
  const std::vector<double> w = hamming_window(win);
  std::vector<std::vector<double>> frames(static_cast<size_t>(nf));
  for (int64_t f = 0; f < nf; ++f) {
    frames[size_t(f)].resize(size_t(win));
    const double* src = x.data() + f * shift;
    for (int64_t i = 0; i < win; ++i)
      frames[size_t(f)][size_t(i)] = src[i] * w[size_t(i)];
  }
  return frames;
}

// In-place radix-2 Cooley-Tukey FFT; n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  check(n >= 1 && (n & (n - 1)) == 0, "fft: length ", n,
        " is not a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / double(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// |DFT|^2 of a frame zero-padded to nfft, bins 0..nfft/2.
inline std::vector<double> power_spectrum(const std::vector<double>& frame,
                                          int64_t nfft) {
  check(nfft >= int64_t(frame.size()), "power_spectrum: nfft ", nfft,
        " shorter than frame ", frame.size());
  std::vector<std::complex<double>> a(size_t(nfft), {0.0, 0.0});
  for (size_t i = 0; i < frame.size(); ++i) a[i] = {frame[i], 0.0};
  fft_radix2(a);
  std::vector<double> p(size_t(nfft / 2 + 1));
  for (size_t i = 0; i < p.size(); ++i) p[i] = std::norm(a[i]);
  return p;
}

// ---------------------------------------------------------------------------
// mel filter bank

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

// Triangular filters on a mel-spaced grid from 0 Hz to Nyquist.
// Returns (nbands, nfft/2 + 1) weights.
inline Tensor<double> mel_filterbank(int64_t nbands, int64_t nfft,
                                     int64_t sample_rate) {
  check(nbands >= 1, "mel: band count must be positive");
  const double nyquist = double(sample_rate) / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(size_t(nbands + 2));
  for (int64_t i = 0; i < nbands + 2; ++i)
    edges[size_t(i)] = mel_to_hz(mel_max * double(i) / double(nbands + 1));
  const int64_t nbins = nfft / 2 + 1;
  Tensor<double> fb({nbands, nbins});
  for (int64_t b = 0; b < nbands; ++b) {
    const double lo = edges[size_t(b)], c = edges[size_t(b + 1)],
                 hi = edges[size_t(b + 2)];
    for (int64_t k = 0; k < nbins; ++k) {
      const double f = double(k) * double(sample_rate) / double(nfft);
      double w = 0;
      if (f > lo && f < c)
        w = (f - lo) / (c - lo);
      else if (f == c)
        w = 1.0;
      else if (f > c && f < hi)
        w = (hi - f) / (hi - c);
      fb(b, k) = w;
    }
  }
  return fb;
}

// Center frequencies (Hz) of the triangular filters.
inline std::vector<double> mel_band_centers(int64_t nbands,
                                            int64_t sample_rate) {
  const double mel_max = hz_to_mel(double(sample_rate) / 2.0);
  std::vector<double> centers(static_cast<size_t>(nbands));
  for (int64_t b = 0; b < nbands; ++b)
    centers[size_t(b)] = mel_to_hz(mel_max * double(b + 1) / double(nbands + 1));
  return centers;
}

// ---------------------------------------------------------------------------
// full pipeline

struct LogmelConfig {
  int64_t sample_rate = 16000;
  double window_ms = 25.0;
  double shift_ms = 10.0;
  int64_t nbands = 40;
  double preemph = 0.97;
  double floor_energy = 1e-10;

  int64_t window_samples() const {
    return int64_t(std::llround(window_ms * double(sample_rate) / 1000.0));
  }
  int64_t shift_samples() const {
    return int64_t(std::llround(shift_ms * double(sample_rate) / 1000.0));
  }
  int64_t nfft() const { return next_pow2(window_samples()); }
  double frame_rate() const { return 1000.0 / shift_ms; }
};

// (frames, bands) log-mel spectrogram.
inline Tensor<float> logmel(const Waveform& wav, const LogmelConfig& cfg) {
  check(wav.sample_rate == cfg.sample_rate, "logmel: waveform at ",
        wav.sample_rate, " Hz but config expects ", cfg.sample_rate);
  const int64_t win = cfg.window_samples();
  const int64_t shift = cfg.shift_samples();
  const int64_t nfft = cfg.nfft();
  const std::vector<double> pre = preemphasis(dc_remove(wav.samples), cfg.preemph);
  const auto frames = frame_and_window(pre, win, shift);
  const Tensor<double> fb = mel_filterbank(cfg.nbands, nfft, cfg.sample_rate);
  const int64_t nbins = nfft / 2 + 1;
  Tensor<float> out({int64_t(frames.size()), cfg.nbands});
  for (size_t f = 0; f < frames.size(); ++f) {
    const std::vector<double> p = power_spectrum(frames[f], nfft);
    for (int64_t b = 0; b < cfg.nbands; ++b) {
      double e = 0;
      const double* w = fb.data() + b * nbins;
      for (int64_t k = 0; k < nbins; ++k) e += w[k] * p[size_t(k)];
      out(int64_t(f), b) = float(std::log(std::max(e, cfg.floor_energy)));
    }
  }
  return out;
}

}  // namespace mm
