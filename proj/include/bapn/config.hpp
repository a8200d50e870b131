#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bapn/error.hpp"

namespace bapn {

/// Flat key = value configuration. Every key is declared once in the
/// schema below with its default and a one-line description; parsing,
/// overrides, the help text and the config hash all derive from it, so
/// none of them can drift apart.
class Config {
 public:
  struct Entry {
    std::string value;
    std::string doc;
  };

  Config() : entries_(schema()) {}

  static const std::map<std::string, Entry>& schema() {
    static const std::map<std::string, Entry> s = {
        {"data.root", {"", "dataset directory (created by gen, read by train/eval)"}},
        {"data.scenes", {"64", "total number of scenes to generate"}},
        {"data.seed", {"1234", "master seed for scene sampling"}},
        {"data.frac_val", {"0.1", "fraction of scenes in the val split"}},
        {"data.frac_test", {"0.1", "fraction of scenes in the test split"}},
        {"data.sample_rate", {"16000", "audio sample rate in Hz"}},
        {"data.duration", {"2.0", "clip length in seconds"}},
        {"data.ambient", {"0.003", "ambient noise RMS per ear"}},
        {"data.sources_min", {"1", "minimum sources per scene"}},
        {"data.sources_max", {"2", "maximum sources per scene"}},
        {"data.dist_min", {"2.0", "minimum source distance in meters"}},
        {"data.dist_max", {"15.0", "maximum source distance in meters"}},
        {"data.min_sep_deg", {"15.0", "minimum azimuth separation between sources"}},
        {"data.grid_h", {"32", "label/depth grid rows"}},
        {"data.grid_w", {"64", "label/depth grid columns"}},
        {"data.far_depth", {"50.0", "depth assigned to background cells, meters"}},
        {"rig.ear_separation", {"0.18", "ear separation in meters"}},
        {"rig.speed_of_sound", {"343.0", "speed of sound in m/s"}},
        {"dsp.window", {"512", "analysis window length in samples"}},
        {"dsp.hop", {"160", "hop length in samples"}},
        {"dsp.target_rms", {"0.1", "per-channel RMS after dataset-level normalization"}},
        {"model.base_channels", {"32", "channels of the first encoder conv"}},
        {"model.aspp_filters", {"64", "filters per spatial-pyramid branch"}},
        {"model.dilations", {"6,12,18", "spatial-pyramid dilation rates"}},
        {"model.dilation_scale", {"1.0", "scale on dilation rates (use <1 for tiny inputs)"}},
        {"model.fuse_channels", {"192", "channels after the pyramid fuse conv"}},
        {"model.dec_hidden", {"64", "hidden width of the grid decoder convs"}},
        {"model.s3r_widths", {"64,32,16,8,8", "channel widths of the five upsampling convs"}},
        {"model.init_seed", {"7", "weight initialization seed"}},
        {"train.tasks", {"semantic", "comma list from: semantic, depth, s3r"}},
        {"train.input", {"pair0", "input channels: mono, pair0/90/180/270, pairs2, pairs4"}},
        {"train.output_pairs", {"90,180,270", "rotation targets predicted by the s3r head"}},
        {"train.seed", {"1", "training run seed (shuffling)"}},
        {"train.epochs", {"10", "number of epochs"}},
        {"train.lr", {"0.00001", "Adam learning rate"}},
        {"train.batch", {"2", "scenes per optimization step"}},
        {"train.lambda1", {"0.2", "weight of the depth loss"}},
        {"train.lambda2", {"0.2", "weight of the rotation-prediction loss"}},
        {"train.early_stop", {"0", "stop after N epochs without val improvement (0 = off)"}},
        {"train.max_steps", {"0", "cap on total optimization steps (0 = no cap)"}},
        {"eval.split", {"test", "dataset split evaluated by eval"}},
        {"eval.checkpoint", {"", "checkpoint read by eval and infer-s3r"}},
        {"infer.input", {"", "stereo WAV fed to infer-s3r"}},
        {"selftest.checkpoint", {"", "optional checkpoint whose integrity selftest verifies"}},
        {"ablate.cells", {"mono,pair0", "comma list of ablation cells"}},
        {"ablate.seeds", {"1,2,3", "comma list of seeds per cell"}},
        {"labels.targets", {"car,motorcycle,train", "class names treated as sound sources"}},
        {"labels.stack", {"", "directory of P5 label frames forming one stack"}},
        {"labels.table", {"", "JSON class table {id: name}; empty uses the built-in table"}},
    };
    return s;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    require(it != entries_.end(), ErrorCode::BadConfig, "unknown config key '" + key + "'");
    it->second.value = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    require(it != entries_.end(), ErrorCode::BadConfig, "unknown config key '" + key + "'");
    return it->second.value;
  }

  int get_int(const std::string& key) const {
    try {
      size_t used = 0;
      int v = std::stoi(get(key), &used);
      require(used == get(key).size(), ErrorCode::BadConfig, key + ": trailing characters");
      return v;
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrorCode::BadConfig, key + ": '" + get(key) + "' is not an integer");
    }
  }

  double get_double(const std::string& key) const {
    try {
      size_t used = 0;
      double v = std::stod(get(key), &used);
      require(used == get(key).size(), ErrorCode::BadConfig, key + ": trailing characters");
      return v;
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrorCode::BadConfig, key + ": '" + get(key) + "' is not a number");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorCode::BadConfig, key + ": '" + v + "' is not a boolean");
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const std::string& tok : split_list(get(key))) {
      try {
        out.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        fail(ErrorCode::BadConfig, key + ": '" + tok + "' is not an integer");
      }
    }
    return out;
  }

  std::vector<std::string> get_list(const std::string& key) const { return split_list(get(key)); }

  /// Parse `key = value` lines; '#' starts a comment, blank lines ignored.
  void load_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorCode::DataMissing, "cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      apply_line(line, path + ":" + std::to_string(lineno));
    }
  }

  /// Apply a single "key=value" override (the CLI's --set).
  void apply_override(const std::string& kv) {
    size_t eq = kv.find('=');
    require(eq != std::string::npos, ErrorCode::BadConfig, "override '" + kv + "' is not key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  /// Canonical text form: sorted key = value lines.
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, e] : entries_) os << k << " = " << e.value << "\n";
    return os.str();
  }

  /// FNV-1a over the canonical text, as 16 hex digits. Identifies the
  /// exact configuration in manifests and run records.
  std::string hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (char c : to_text()) {
      h ^= static_cast<uint8_t>(c);
      h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex;
    for (int i = 15; i >= 0; --i) os << ((h >> (4 * i)) & 0xf);
    return os.str();
  }

  static std::string help_text() {
    std::ostringstream os;
    os << "Config keys (key = default): \n";
    for (const auto& [k, e] : schema()) {
      os << "  " << k;
      for (size_t i = k.size(); i < 24; ++i) os << ' ';
      os << "= " << (e.value.empty() ? "\"\"" : e.value);
      std::string v = e.value.empty() ? "\"\"" : e.value;
      for (size_t i = v.size(); i < 16; ++i) os << ' ';
      os << "  " << e.doc << "\n";
    }
    return os.str();
  }

  static std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream is(csv);
    while (std::getline(is, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(tok);
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  void apply_line(const std::string& raw, const std::string& where) {
    std::string line = raw;
    size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) return;
    size_t eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::BadConfig, where + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace bapn
