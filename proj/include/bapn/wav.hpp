#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bapn/audio.hpp"
#include "bapn/error.hpp"

namespace bapn {

/// Multichannel clip as stored on disk: 32-bit float WAV, interleaved.
struct WavClip {
  double sample_rate = 0.0;
  std::vector<std::vector<double>> channels;

  size_t frames() const { return channels.empty() ? 0 : channels[0].size(); }
};

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  s.append(b, 4);
}

inline void put_u16(std::string& s, uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  s.append(b, 2);
}

inline uint32_t get_u32(const char* p) {
  return uint32_t(uint8_t(p[0])) | uint32_t(uint8_t(p[1])) << 8 | uint32_t(uint8_t(p[2])) << 16 |
         uint32_t(uint8_t(p[3])) << 24;
}

inline uint16_t get_u16(const char* p) { return uint16_t(uint8_t(p[0])) | uint16_t(uint8_t(p[1])) << 8; }

}  // namespace detail

inline void write_wav(const std::string& path, const WavClip& clip) {
  require(!clip.channels.empty(), ErrorCode::BadAudioFormat, "no channels to write");
  require(clip.sample_rate > 0, ErrorCode::BadAudioFormat, "sample rate must be positive");
  size_t frames = clip.channels[0].size();
  for (const auto& ch : clip.channels)
    require(ch.size() == frames, ErrorCode::ShapeMismatch, "channel lengths differ");

  uint16_t nch = static_cast<uint16_t>(clip.channels.size());
  uint32_t sr = static_cast<uint32_t>(clip.sample_rate);
  uint32_t data_bytes = static_cast<uint32_t>(frames * nch * 4);

  std::string buf;
  buf.reserve(60 + data_bytes);
  buf.append("RIFF");
  detail::put_u32(buf, 4 + 24 + 12 + 8 + data_bytes);
  buf.append("WAVE");
  buf.append("fmt ");
  detail::put_u32(buf, 16);
  detail::put_u16(buf, 3);  // IEEE float
  detail::put_u16(buf, nch);
  detail::put_u32(buf, sr);
  detail::put_u32(buf, sr * nch * 4);
  detail::put_u16(buf, uint16_t(nch * 4));
  detail::put_u16(buf, 32);
  buf.append("fact");
  detail::put_u32(buf, 4);
  detail::put_u32(buf, static_cast<uint32_t>(frames));
  buf.append("data");
  detail::put_u32(buf, data_bytes);

  std::vector<float> inter(frames * nch);
  for (size_t t = 0; t < frames; ++t)
    for (size_t c = 0; c < nch; ++c) inter[t * nch + c] = static_cast<float>(clip.channels[c][t]);
  buf.append(reinterpret_cast<const char*>(inter.data()), data_bytes);

  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::IoFailure, "cannot open " + path + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(f.good(), ErrorCode::IoFailure, "short write to " + path);
}

inline WavClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::DataMissing, "cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(buf.size() >= 44, ErrorCode::BadAudioFormat, path + ": truncated header");
  require(buf.compare(0, 4, "RIFF") == 0 && buf.compare(8, 4, "WAVE") == 0, ErrorCode::BadAudioFormat,
          path + ": not a RIFF/WAVE file");

  uint16_t format = 0, nch = 0, bits = 0;
  uint32_t sr = 0;
  const char* data = nullptr;
  uint32_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    std::string id = buf.substr(pos, 4);
    uint32_t len = detail::get_u32(buf.data() + pos + 4);
    pos += 8;
    if (pos + len > buf.size()) len = static_cast<uint32_t>(buf.size() - pos);
    if (id == "fmt ") {
      require(len >= 16, ErrorCode::BadAudioFormat, path + ": short fmt chunk");
      format = detail::get_u16(buf.data() + pos);
      nch = detail::get_u16(buf.data() + pos + 2);
      sr = detail::get_u32(buf.data() + pos + 4);
      bits = detail::get_u16(buf.data() + pos + 14);
    } else if (id == "data") {
      data = buf.data() + pos;
      data_len = len;
    }
    pos += len + (len & 1);
  }

  require(format == 3 && bits == 32, ErrorCode::BadAudioFormat,
          path + ": expected 32-bit float samples");
  require(nch >= 1 && sr > 0 && data != nullptr, ErrorCode::BadAudioFormat, path + ": malformed WAV");

  size_t frames = data_len / (size_t(nch) * 4);
  WavClip clip;
  clip.sample_rate = sr;
  clip.channels.assign(nch, std::vector<double>(frames));
  for (size_t t = 0; t < frames; ++t)
    for (size_t c = 0; c < nch; ++c) {
      float v;
      std::memcpy(&v, data + (t * nch + c) * 4, 4);
      clip.channels[c][t] = v;
    }
  return clip;
}

inline Waveform wav_channel(const WavClip& clip, size_t c) {
  require(c < clip.channels.size(), ErrorCode::ShapeMismatch, "channel index out of range");
  return Waveform{clip.channels[c], clip.sample_rate};
}

}  // namespace bapn
