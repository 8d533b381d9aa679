// src/features.cpp
//
// Copyright 2026  The pmsspeech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "pmsspeech/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace pms {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Triangular mel filterbank over the one-sided spectrum (HTK mel scale).
Mat mel_filterbank(int num_bins, Index nfft, double sample_rate) {
  const Index num_freq = nfft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(num_bins) + 2);
  for (int i = 0; i < num_bins + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (num_bins + 1));
  Mat fb = Mat::Zero(num_freq, num_bins);
  for (Index k = 0; k < num_freq; ++k) {
    const double freq = static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
    for (int b = 0; b < num_bins; ++b) {
      const double lo = edges[static_cast<std::size_t>(b)];
      const double mid = edges[static_cast<std::size_t>(b) + 1];
      const double hi = edges[static_cast<std::size_t>(b) + 2];
      if (freq >= lo && freq <= mid && mid > lo) {
        fb(k, b) = (freq - lo) / (mid - lo);
      } else if (freq > mid && freq < hi && hi > mid) {
        fb(k, b) = (hi - freq) / (hi - mid);
      }
    }
  }
  return fb;
}

// Orthonormal DCT-II, truncated to num_ceps rows.
Mat dct_matrix(int num_ceps, int num_bins) {
  Mat d(num_ceps, num_bins);
  const double norm0 = std::sqrt(1.0 / num_bins);
  const double norm = std::sqrt(2.0 / num_bins);
  for (int j = 0; j < num_ceps; ++j)
    for (int n = 0; n < num_bins; ++n)
      d(j, n) = (j == 0 ? norm0 : norm) *
                std::cos(M_PI * j * (2.0 * n + 1.0) / (2.0 * num_bins));
  return d;
}

}  // namespace

Mat compute_deltas(const Mat& x, int window) {
  if (window < 1) throw ValidationError("compute_deltas: window must be >= 1");
  const Index t_len = x.rows();
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;
  Mat d = Mat::Zero(t_len, x.cols());
  for (Index t = 0; t < t_len; ++t) {
    for (int n = 1; n <= window; ++n) {
      const Index ahead = std::min<Index>(t + n, t_len - 1);
      const Index behind = std::max<Index>(t - n, 0);
      d.row(t) += n * (x.row(ahead) - x.row(behind));
    }
  }
  return d / denom;
}

FeatureSequence mfcc39(const Waveform& w, const MfccOptions& opts) {
  if (w.sample_rate <= 0) throw ValidationError("mfcc39: non-positive sample rate");
  if (opts.window_ms < opts.hop_ms)
    throw ValidationError("mfcc39: window must be at least one hop long");
  const Index win = static_cast<Index>(std::lround(opts.window_ms * w.sample_rate / 1000.0));
  const Index hop = static_cast<Index>(std::lround(opts.hop_ms * w.sample_rate / 1000.0));
  const Index num_samples = w.samples.size();
  if (num_samples < win)
    throw ValidationError("mfcc39: waveform of " + std::to_string(num_samples) +
                          " samples is shorter than one " + std::to_string(win) +
                          "-sample window");
  const Index t_len = 1 + (num_samples - win) / hop;

  Vec emphasized(num_samples);
  emphasized(0) = w.samples(0) - opts.preemphasis * w.samples(0);
  for (Index i = 1; i < num_samples; ++i)
    emphasized(i) = w.samples(i) - opts.preemphasis * w.samples(i - 1);

  Vec window(win);
  for (Index n = 0; n < win; ++n)
    window(n) = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / static_cast<double>(win - 1));

  Mat framed(t_len, win);
  for (Index t = 0; t < t_len; ++t)
    framed.row(t) = emphasized.segment(t * hop, win).cwiseProduct(window).transpose();

  // Power spectrum via explicit DFT bases; the window is zero-padded to the
  // next power of two implicitly (basis covers only the first `win` samples).
  const Index nfft = next_pow2(win);
  const Index num_freq = nfft / 2 + 1;
  Mat basis_re(win, num_freq), basis_im(win, num_freq);
  for (Index n = 0; n < win; ++n) {
    for (Index k = 0; k < num_freq; ++k) {
      const double angle = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(n) /
                           static_cast<double>(nfft);
      basis_re(n, k) = std::cos(angle);
      basis_im(n, k) = std::sin(angle);
    }
  }
  const Mat fb = mel_filterbank(opts.num_mel_bins, nfft, w.sample_rate);
  const Mat dct = dct_matrix(opts.num_ceps, opts.num_mel_bins);

  // Each frame runs through the whole spectral chain on its own so features
  // are a pure function of that frame's samples (frame-shift invariance is
  // then exact).
  Mat cepstra(t_len, opts.num_ceps);
  for (Index t = 0; t < t_len; ++t) {
    const Mat re = framed.row(t) * basis_re;
    const Mat im = framed.row(t) * basis_im;
    const Mat power = re.cwiseProduct(re) + im.cwiseProduct(im);
    const Mat mel = (power * fb).cwiseMax(1e-10).array().log().matrix();
    cepstra.row(t) = mel * dct.transpose();
  }

  const Mat delta = compute_deltas(cepstra, opts.delta_window);
  const Mat delta2 = compute_deltas(delta, opts.delta_window);

  FeatureSequence out;
  out.frames.resize(t_len, 3 * opts.num_ceps);
  out.frames << cepstra, delta, delta2;
  out.frame_rate = 1000.0 / opts.hop_ms;
  out.source = kSourceMfcc;
  return out;
}

FeatureSequence utterance_normalize(const FeatureSequence& f) {
  if (f.frames.rows() < 2)
    throw ValidationError("utterance_normalize: need at least 2 frames, got " +
                          std::to_string(f.frames.rows()));
  FeatureSequence out = f;
  const Index t_len = f.frames.rows();
  for (Index d = 0; d < f.frames.cols(); ++d) {
    const double mean = f.frames.col(d).mean();
    const double var =
        (f.frames.col(d).array() - mean).square().sum() / static_cast<double>(t_len);
    const double inv_std = 1.0 / std::sqrt(std::max(var, 1e-8));
    out.frames.col(d) = (f.frames.col(d).array() - mean) * inv_std;
  }
  return out;
}

namespace {

template <typename T>
T read_le(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void write_pmsf_stream(std::ostream& out, const Mat& m, std::uint8_t tag) {
  out.write("PMSF", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  write_le<std::uint8_t>(out, tag);
  // Mat is row-major, so the buffer is already in file order.
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

Mat read_pmsf_stream(std::istream& in, std::uint8_t* tag) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PMSF", 4) != 0)
    throw ValidationError("bad PMSF magic");
  const std::uint32_t rows = read_le<std::uint32_t>(in);
  const std::uint32_t cols = read_le<std::uint32_t>(in);
  const std::uint8_t t = read_le<std::uint8_t>(in);
  if (tag) *tag = t;
  Mat m(static_cast<Index>(rows), static_cast<Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!in) throw ValidationError("truncated PMSF payload");
  return m;
}

void write_pmsf(const std::string& path, const FeatureSequence& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write PMSF file: " + path);
  write_pmsf_stream(out, f.frames, f.source);
  if (!out) throw StageError("short write to PMSF file: " + path);
}

FeatureSequence read_pmsf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open PMSF file: " + path);
  FeatureSequence f;
  f.frames = read_pmsf_stream(in, &f.source);
  f.frame_rate = 0.0;
  return f;
}

}  // namespace pms
