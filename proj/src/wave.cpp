// src/wave.cpp
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

#include "pmsspeech/wave.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace pms {

namespace {

// All on-disk formats are little-endian; so is every target this builds on.

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

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open audio file: " + path);
  return in;
}

void validate(const Waveform& w, const std::string& path) {
  if (w.samples.size() == 0) throw ValidationError("empty waveform: " + path);
  if (w.sample_rate <= 0)
    throw ValidationError("non-positive sample rate in " + path);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in = open_for_read(path);
  char riff[4], wave[4];
  in.read(riff, 4);
  read_le<std::uint32_t>(in);  // overall size, unused
  in.read(wave, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    throw ValidationError("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<char> data;
  bool have_fmt = false, have_data = false;
  while (in && !(have_fmt && have_data)) {
    char id[4];
    in.read(id, 4);
    const std::uint32_t size = read_le<std::uint32_t>(in);
    if (!in) break;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_le<std::uint16_t>(in);
      channels = read_le<std::uint16_t>(in);
      rate = read_le<std::uint32_t>(in);
      read_le<std::uint32_t>(in);  // byte rate
      read_le<std::uint16_t>(in);  // block align
      bits = read_le<std::uint16_t>(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      have_data = true;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data)
    throw ValidationError("WAV file missing fmt or data chunk: " + path);
  if (channels != 1)
    throw ValidationError("expected single-channel audio, got " +
                          std::to_string(channels) + " channels: " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const std::size_t n = data.size() / 2;
    w.samples.resize(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t s;
      std::memcpy(&s, data.data() + 2 * i, 2);
      w.samples(static_cast<Index>(i)) = static_cast<double>(s) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data.size() / 4;
    w.samples.resize(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      float s;
      std::memcpy(&s, data.data() + 4 * i, 4);
      w.samples(static_cast<Index>(i)) = static_cast<double>(s);
    }
  } else {
    throw ValidationError("unsupported WAV encoding (format " + std::to_string(format) +
                          ", " + std::to_string(bits) + " bits): " + path);
  }
  validate(w, path);
  return w;
}

void write_wav16(const std::string& path, const Waveform& w) {
  validate(w, path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write WAV file: " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_bytes = 2 * n;
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);  // PCM
  write_le<std::uint16_t>(out, 1);  // mono
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_bytes);
  for (Index i = 0; i < w.samples.size(); ++i) {
    const long q = std::lrint(std::clamp(w.samples(i), -1.0, 1.0) * 32768.0);
    write_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp<long>(q, -32768, 32767)));
  }
  if (!out) throw StageError("short write to WAV file: " + path);
}

Waveform read_pmsw(const std::string& path) {
  std::ifstream in = open_for_read(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PMSW", 4) != 0)
    throw ValidationError("bad PMSW magic in " + path);
  const std::uint32_t rate = read_le<std::uint32_t>(in);
  const std::uint32_t count = read_le<std::uint32_t>(in);
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(static_cast<Index>(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const float s = read_le<float>(in);
    w.samples(static_cast<Index>(i)) = static_cast<double>(s);
  }
  if (!in) throw ValidationError("truncated PMSW file: " + path);
  validate(w, path);
  return w;
}

void write_pmsw(const std::string& path, const Waveform& w) {
  validate(w, path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write PMSW file: " + path);
  out.write("PMSW", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.samples.size()));
  for (Index i = 0; i < w.samples.size(); ++i)
    write_le<float>(out, static_cast<float>(w.samples(i)));
  if (!out) throw StageError("short write to PMSW file: " + path);
}

Waveform read_audio(const std::string& path) {
  std::ifstream in = open_for_read(path);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  in.close();
  if (std::memcmp(magic, "RIFF", 4) == 0) return read_wav(path);
  if (std::memcmp(magic, "PMSW", 4) == 0) return read_pmsw(path);
  throw ValidationError("unrecognized audio container in " + path);
}

}  // namespace pms
