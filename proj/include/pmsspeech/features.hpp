// include/pmsspeech/features.hpp
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

#ifndef PMSSPEECH_FEATURES_HPP_
#define PMSSPEECH_FEATURES_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>

#include "pmsspeech/types.hpp"
#include "pmsspeech/wave.hpp"

namespace pms {

// Source tag values: 0 means MFCC, k > 0 means encoder layer k, 255 is a raw
// parameter matrix inside a checkpoint.
constexpr std::uint8_t kSourceMfcc = 0;
constexpr std::uint8_t kSourceRaw = 255;

struct FeatureSequence {
  Mat frames;              // T x D
  double frame_rate = 0.0; // frames per second; 0 when unknown (e.g. from disk)
  std::uint8_t source = kSourceMfcc;
};

struct MfccOptions {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  double preemphasis = 0.97;
  int num_mel_bins = 26;
  int num_ceps = 13;       // c0..c12, c0 doubling as the energy coefficient
  int delta_window = 2;    // +/- frames in the delta regression
};

// 13 cepstra plus first- and second-order deltas, D = 39.
FeatureSequence mfcc39(const Waveform& w, const MfccOptions& opts = {});

// Per-dimension zero mean / unit variance over the utterance, variance floor
// 1e-8.  Requires T >= 2.
FeatureSequence utterance_normalize(const FeatureSequence& f);

// Standard +/-window regression deltas with edge replication; exposed for
// direct testing.
Mat compute_deltas(const Mat& x, int window);

// PMSF binary matrix container: magic "PMSF", u32 T, u32 D, u8 source tag,
// then row-major 64-bit floats.
void write_pmsf(const std::string& path, const FeatureSequence& f);
FeatureSequence read_pmsf(const std::string& path);
void write_pmsf_stream(std::ostream& out, const Mat& m, std::uint8_t tag);
Mat read_pmsf_stream(std::istream& in, std::uint8_t* tag);

}  // namespace pms

#endif  // PMSSPEECH_FEATURES_HPP_
