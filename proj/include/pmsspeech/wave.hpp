// include/pmsspeech/wave.hpp
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

#ifndef PMSSPEECH_WAVE_HPP_
#define PMSSPEECH_WAVE_HPP_

#include <string>

#include "pmsspeech/types.hpp"

namespace pms {

struct Waveform {
  Vec samples;            // mono, nominally in [-1, 1]
  int sample_rate = 16000;
};

// Single-channel RIFF/WAVE, PCM 16-bit or IEEE float 32-bit.
Waveform read_wav(const std::string& path);
void write_wav16(const std::string& path, const Waveform& w);

// Raw-float fallback: 12-byte header (magic "PMSW", u32 sample rate,
// u32 sample count) followed by little-endian 32-bit floats.
Waveform read_pmsw(const std::string& path);
void write_pmsw(const std::string& path, const Waveform& w);

// Dispatches on file magic ("RIFF" vs "PMSW").
Waveform read_audio(const std::string& path);

}  // namespace pms

#endif  // PMSSPEECH_WAVE_HPP_
