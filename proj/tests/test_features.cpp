// tests/test_features.cpp
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>

#include "pmsspeech/features.hpp"
#include "pmsspeech/rng.hpp"
#include "pmsspeech/wave.hpp"

using namespace pms;

namespace {

Waveform sine_wave(double freq_hz, double seconds, int rate = 16000) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<Index>(seconds * rate);
  w.samples.resize(n);
  for (Index i = 0; i < n; ++i)
    w.samples(i) = 0.6 * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(i) / rate);
  return w;
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/pmsspeech_test_") + name;
}

}  // namespace

TEST_CASE("wav round trip within 16-bit quantization") {
  Waveform w = sine_wave(440.0, 0.05);
  const std::string path = temp_path("roundtrip.wav");
  write_wav16(path, w);
  Waveform back = read_wav(path);
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK(back.sample_rate == 16000);
  CHECK((back.samples - w.samples).cwiseAbs().maxCoeff() < 1.0 / 32768.0 + 1e-9);
  std::remove(path.c_str());
}

TEST_CASE("pmsw round trip and read_audio dispatch") {
  Waveform w = sine_wave(220.0, 0.02, 8000);
  const std::string path = temp_path("roundtrip.pmsw");
  write_pmsw(path, w);
  Waveform back = read_audio(path);
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK(back.sample_rate == 8000);
  CHECK((back.samples - w.samples).cwiseAbs().maxCoeff() < 1e-6);
  std::remove(path.c_str());
}

TEST_CASE("pmsf round trip is bit-exact") {
  Rng rng(5);
  FeatureSequence f;
  f.frames = rng.uniform_matrix(17, 39, -3.0, 3.0);
  f.source = kSourceMfcc;
  const std::string path = temp_path("feat.pmsf");
  write_pmsf(path, f);
  FeatureSequence back = read_pmsf(path);
  REQUIRE(back.frames.rows() == 17);
  REQUIRE(back.frames.cols() == 39);
  CHECK(back.source == kSourceMfcc);
  CHECK(std::memcmp(back.frames.data(), f.frames.data(), sizeof(double) * 17 * 39) == 0);
  std::remove(path.c_str());
}

TEST_CASE("mfcc dimensionality and frame count") {
  Waveform w = sine_wave(300.0, 1.0);
  REQUIRE(w.samples.size() == 16000);
  FeatureSequence f = mfcc39(w);
  CHECK(f.frames.cols() == 39);
  // T = 1 + floor((16000 - 400) / 160)
  CHECK(f.frames.rows() == 98);
  CHECK(f.frame_rate == doctest::Approx(100.0));
  CHECK(f.frames.allFinite());
}

TEST_CASE("mfcc rejects too-short waveforms") {
  Waveform w;
  w.samples = Vec::Zero(100);
  w.sample_rate = 16000;
  CHECK_THROWS_AS(mfcc39(w), ValidationError);
}

TEST_CASE("mfcc is deterministic") {
  Waveform w = sine_wave(523.0, 0.3);
  FeatureSequence a = mfcc39(w);
  FeatureSequence b = mfcc39(w);
  CHECK(std::memcmp(a.frames.data(), b.frames.data(),
                    sizeof(double) * static_cast<std::size_t>(a.frames.size())) == 0);
}

TEST_CASE("deltas of a constant sequence are exactly zero") {
  Mat constant = Mat::Constant(12, 13, 0.73);
  Mat d = compute_deltas(constant, 2);
  CHECK(d.cwiseAbs().maxCoeff() == 0.0);
  Mat dd = compute_deltas(d, 2);
  CHECK(dd.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shifting a periodic waveform by one hop shifts interior frames by one") {
  // 100 Hz at 16 kHz has a 160-sample period, equal to the default hop.
  Waveform x = sine_wave(100.0, 0.5);
  Waveform y;
  y.sample_rate = x.sample_rate;
  y.samples = x.samples.segment(160, x.samples.size() - 160).eval();
  FeatureSequence fx = mfcc39(x);
  FeatureSequence fy = mfcc39(y);
  // The delta-delta stack reaches +/-4 frames and frame 0 of the shifted
  // signal sees a different pre-emphasis start, so compare frames whose whole
  // regression context lies strictly inside both sequences.
  for (Index t = 5; t + 5 < fy.frames.rows(); ++t)
    CHECK(std::memcmp(fy.frames.row(t).data(), fx.frames.row(t + 1).data(),
                      sizeof(double) * 39) == 0);
}

TEST_CASE("utterance normalization hand case and degenerate variance") {
  FeatureSequence f;
  f.frames.resize(2, 2);
  f.frames << 1.0, 5.0, 3.0, 5.0;
  FeatureSequence n = utterance_normalize(f);
  // Column 0: mean 2, population std 1 -> [-1, 1].
  CHECK(n.frames(0, 0) == doctest::Approx(-1.0));
  CHECK(n.frames(1, 0) == doctest::Approx(1.0));
  // Column 1 is constant: variance floor path yields zeros.
  CHECK(n.frames(0, 1) == 0.0);
  CHECK(n.frames(1, 1) == 0.0);
}

TEST_CASE("utterance normalization is idempotent") {
  Rng rng(9);
  FeatureSequence f;
  f.frames = rng.uniform_matrix(50, 8, -2.0, 2.0);
  FeatureSequence once = utterance_normalize(f);
  FeatureSequence twice = utterance_normalize(once);
  CHECK((twice.frames - once.frames).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("utterance normalization needs at least two frames") {
  FeatureSequence f;
  f.frames = Mat::Ones(1, 4);
  CHECK_THROWS_AS(utterance_normalize(f), ValidationError);
}
