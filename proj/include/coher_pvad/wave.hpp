// Copyright 2026 The coher-pvad Authors.
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
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "coher_pvad/binary_io.hpp"
#include "coher_pvad/error.hpp"

namespace coher_pvad {

inline constexpr int kSampleRate = 16000;

/// Multichannel time-domain signal, one sample vector per microphone.
struct WaveBuffer {
  std::vector<std::vector<double>> channels;
  int sample_rate = kSampleRate;

  WaveBuffer() = default;
  WaveBuffer(std::size_t num_channels, std::size_t num_samples, int rate = kSampleRate)
      : channels(num_channels, std::vector<double>(num_samples, 0.0)), sample_rate(rate) {}

  static WaveBuffer mono(std::vector<double> samples, int rate = kSampleRate) {
    WaveBuffer w;
    w.channels.push_back(std::move(samples));
    w.sample_rate = rate;
    return w;
  }

  std::size_t num_channels() const { return channels.size(); }
  std::size_t num_samples() const { return channels.empty() ? 0 : channels.front().size(); }

  /// Throws unless the buffer is non-empty, rectangular and finite.
  void validate() const {
    require(!channels.empty(), "wave buffer has no channels");
    require(sample_rate > 0, "wave buffer sample rate must be positive");
    for (const auto& ch : channels) {
      require(ch.size() == channels.front().size(), "wave channels differ in length");
      for (double s : ch) require(std::isfinite(s), "wave buffer contains non-finite samples");
    }
  }

  /// Single-channel view of channel `m` (copy).
  WaveBuffer channel(std::size_t m) const {
    require(m < channels.size(), "channel index out of range");
    return mono(channels[m], sample_rate);
  }
};

namespace wav {

namespace detail {
inline std::uint16_t le16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}
inline std::uint32_t le32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
}  // namespace detail

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

/// Parses a RIFF/WAVE image holding 16-bit PCM or 32-bit float samples.
inline WaveBuffer decode(const std::vector<char>& bytes, const std::string& origin = "wav") {
  using detail::le16;
  using detail::le32;
  const auto fail = [&](const std::string& why) { throw Error(origin + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, num_channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    std::size_t len = le32(id + 4);
    const std::size_t body = pos + 8;
    if (len > bytes.size() - body) {
      if (std::memcmp(id, "data", 4) == 0) {
        len = bytes.size() - body;  // tolerate streamed writers that leave size unset
      } else {
        fail("truncated chunk");
      }
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) fail("fmt chunk too short");
      const char* f = bytes.data() + body;
      format = le16(f);
      num_channels = le16(f + 2);
      rate = le32(f + 4);
      bits = le16(f + 14);
      if (format == kFormatExtensible) {
        if (len < 40) fail("extensible fmt chunk too short");
        format = le16(f + 24);
      }
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (num_channels == 0) fail("missing fmt chunk");
  if (data == nullptr) fail("missing data chunk");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
         " bits); expected 16-bit PCM or 32-bit IEEE float");
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    fail("sample rate " + std::to_string(rate) + " Hz unsupported; expected 16000 Hz");
  }
  if (num_channels > 8) fail("more than 8 channels");
  const std::size_t frame_bytes = static_cast<std::size_t>(num_channels) * (bits / 8);
  const std::size_t frames = data_len / frame_bytes;
  WaveBuffer out(num_channels, frames, static_cast<int>(rate));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t m = 0; m < num_channels; ++m) {
      const char* p = data + i * frame_bytes + m * (bits / 8);
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        out.channels[m][i] = static_cast<double>(s) / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        out.channels[m][i] = static_cast<double>(s);
      }
    }
  }
  out.validate();
  return out;
}

inline WaveBuffer read(const std::filesystem::path& path) {
  return decode(io::read_file(path), path.string());
}

/// Serializes as interleaved 32-bit IEEE float.
inline std::vector<char> encode_float(const WaveBuffer& wave) {
  wave.validate();
  const auto nch = static_cast<std::uint32_t>(wave.num_channels());
  const auto frames = static_cast<std::uint32_t>(wave.num_samples());
  const std::uint32_t data_len = frames * nch * 4;
  io::ByteWriter w;
  w.magic("RIFF");
  w.u32(4 + (8 + 16) + (8 + data_len));
  w.magic("WAVE");
  w.magic("fmt ");
  w.u32(16);
  const std::uint16_t fmt = kFormatFloat, channels16 = static_cast<std::uint16_t>(nch),
                      align = static_cast<std::uint16_t>(nch * 4), bits = 32;
  w.raw(&fmt, 2);
  w.raw(&channels16, 2);
  w.u32(static_cast<std::uint32_t>(wave.sample_rate));
  w.u32(static_cast<std::uint32_t>(wave.sample_rate) * nch * 4);
  w.raw(&align, 2);
  w.raw(&bits, 2);
  w.magic("data");
  w.u32(data_len);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t m = 0; m < nch; ++m) w.f32(static_cast<float>(wave.channels[m][i]));
  }
  return w.bytes();
}

/// Serializes as interleaved 16-bit PCM (clipped to [-1, 1)).
inline std::vector<char> encode_pcm16(const WaveBuffer& wave) {
  wave.validate();
  const auto nch = static_cast<std::uint32_t>(wave.num_channels());
  const auto frames = static_cast<std::uint32_t>(wave.num_samples());
  const std::uint32_t data_len = frames * nch * 2;
  io::ByteWriter w;
  w.magic("RIFF");
  w.u32(4 + (8 + 16) + (8 + data_len));
  w.magic("WAVE");
  w.magic("fmt ");
  w.u32(16);
  const std::uint16_t fmt = kFormatPcm, channels16 = static_cast<std::uint16_t>(nch),
                      align = static_cast<std::uint16_t>(nch * 2), bits = 16;
  w.raw(&fmt, 2);
  w.raw(&channels16, 2);
  w.u32(static_cast<std::uint32_t>(wave.sample_rate));
  w.u32(static_cast<std::uint32_t>(wave.sample_rate) * nch * 2);
  w.raw(&align, 2);
  w.raw(&bits, 2);
  w.magic("data");
  w.u32(data_len);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t m = 0; m < nch; ++m) {
      const double x = std::clamp(wave.channels[m][i], -1.0, 32767.0 / 32768.0);
      const auto s = static_cast<std::int16_t>(std::lround(x * 32768.0));
      w.raw(&s, 2);
    }
  }
  return w.bytes();
}

inline void write_float(const std::filesystem::path& path, const WaveBuffer& wave) {
  io::write_file_atomic(path, encode_float(wave));
}

}  // namespace wav
}  // namespace coher_pvad
