#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bapn/dsp.hpp"
#include "bapn/error.hpp"
#include "bapn/scene.hpp"

namespace bapn {

/// Binary PGM (P5), maxval 255. Label grids store class ids directly;
/// masks store 0/255 for viewability.
inline void write_pgm(const std::string& path, const LabelGrid& g) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::IoFailure, "cannot open " + path + " for writing");
  f << "P5\n" << g.w << " " << g.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(g.cells.data()), static_cast<std::streamsize>(g.cells.size()));
  require(f.good(), ErrorCode::IoFailure, "short write to " + path);
}

inline LabelGrid read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::DataMissing, "cannot open " + path);
  std::string magic;
  f >> magic;
  require(magic == "P5", ErrorCode::IoFailure, path + ": not a binary PGM");
  auto next_int = [&]() {
    int v;
    f >> std::ws;
    while (f.peek() == '#') f.ignore(1 << 20, '\n'), f >> std::ws;
    f >> v;
    return v;
  };
  int w = next_int(), h = next_int(), maxval = next_int();
  require(w > 0 && h > 0 && maxval > 0 && maxval <= 255, ErrorCode::IoFailure,
          path + ": unsupported PGM header");
  f.get();  // single whitespace after maxval
  LabelGrid g{h, w, std::vector<uint8_t>(size_t(h) * w)};
  f.read(reinterpret_cast<char*>(g.cells.data()), static_cast<std::streamsize>(g.cells.size()));
  require(f.gcount() == static_cast<std::streamsize>(g.cells.size()), ErrorCode::IoFailure,
          path + ": truncated pixel data");
  return g;
}

/// Raw little-endian float32 raster, row-major, no header; shape comes
/// from the caller (it is fixed by the dataset manifest).
inline void write_f32_raster(const std::string& path, const std::vector<double>& cells) {
  std::vector<float> data(cells.begin(), cells.end());
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::IoFailure, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  require(f.good(), ErrorCode::IoFailure, "short write to " + path);
}

inline std::vector<double> read_f32_raster(const std::string& path, size_t expected) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::DataMissing, "cannot open " + path);
  std::vector<float> data(expected);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expected * 4));
  require(f.gcount() == static_cast<std::streamsize>(expected * 4), ErrorCode::IoFailure,
          path + ": expected " + std::to_string(expected) + " float32 values");
  return std::vector<double>(data.begin(), data.end());
}

inline DepthGrid read_depth_raster(const std::string& path, int h, int w) {
  return DepthGrid{h, w, read_f32_raster(path, size_t(h) * w)};
}

/// Spectrogram cache: interleaved (real, imag) float32 pairs row-major
/// [freq][frame], with shape and framing in a JSON sidecar at <path>.json.
inline void save_spectrogram_cache(const std::string& path, const Spectrogram& s) {
  std::vector<float> data(s.bins.size() * 2);
  for (size_t i = 0; i < s.bins.size(); ++i) {
    data[2 * i] = static_cast<float>(s.bins[i].real());
    data[2 * i + 1] = static_cast<float>(s.bins[i].imag());
  }
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::IoFailure, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  require(f.good(), ErrorCode::IoFailure, "short write to " + path);

  std::ofstream j(path + ".json");
  require(j.good(), ErrorCode::IoFailure, "cannot open " + path + ".json for writing");
  j << "{\"freq_bins\": " << s.freq_bins << ", \"frames\": " << s.frames
    << ", \"window\": " << s.window << ", \"hop\": " << s.hop
    << ", \"sample_rate\": " << s.sample_rate << "}\n";
}

inline Spectrogram load_spectrogram_cache(const std::string& path) {
  std::ifstream j(path + ".json");
  require(j.good(), ErrorCode::DataMissing, "cannot open " + path + ".json");
  nlohmann::json hdr;
  try {
    j >> hdr;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoFailure, path + ".json: " + e.what());
  }
  Spectrogram s;
  s.freq_bins = hdr.at("freq_bins").get<int>();
  s.frames = hdr.at("frames").get<int>();
  s.window = hdr.at("window").get<int>();
  s.hop = hdr.at("hop").get<int>();
  s.sample_rate = hdr.at("sample_rate").get<double>();
  require(s.freq_bins > 0 && s.frames > 0, ErrorCode::IoFailure, path + ": bad cached shape");

  size_t n = size_t(s.freq_bins) * s.frames;
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::DataMissing, "cannot open " + path);
  std::vector<float> data(n * 2);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 8));
  require(f.gcount() == static_cast<std::streamsize>(n * 8), ErrorCode::IoFailure,
          path + ": truncated spectrogram data");
  s.bins.resize(n);
  for (size_t i = 0; i < n; ++i) s.bins[i] = {double(data[2 * i]), double(data[2 * i + 1])};
  return s;
}

}  // namespace bapn
