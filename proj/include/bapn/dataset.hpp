#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bapn/config.hpp"
#include "bapn/error.hpp"
#include "bapn/grid_io.hpp"
#include "bapn/scene.hpp"
#include "bapn/wav.hpp"

namespace bapn {

struct DataConfig {
  std::string root;
  int scenes = 64;
  uint64_t seed = 1234;
  double frac_val = 0.1;
  double frac_test = 0.1;
  int sample_rate = 16000;
  double duration = 2.0;
  double ambient = 0.003;
  int sources_min = 1;
  int sources_max = 2;
  double dist_min = 2.0;
  double dist_max = 15.0;
  double min_sep_deg = 15.0;
  int grid_h = 32;
  int grid_w = 64;
  double far_depth = 50.0;

  void validate() const {
    require(scenes >= 1, ErrorCode::BadConfig, "need at least one scene");
    require(frac_val >= 0 && frac_test >= 0 && frac_val + frac_test < 1.0, ErrorCode::BadConfig,
            "split fractions must leave room for training data");
    require(sample_rate > 0 && duration > 0, ErrorCode::BadConfig, "bad clip format");
    require(sources_min >= 0 && sources_max >= sources_min && sources_max <= 4,
            ErrorCode::BadConfig, "source count range must sit in 0..4");
    require(dist_min >= 2.0 && dist_max >= dist_min && dist_max <= 50.0, ErrorCode::BadConfig,
            "distance range must sit in [2, 50]");
    require(far_depth > dist_max, ErrorCode::BadConfig, "far_depth must exceed all distances");
    require(grid_h >= 1 && grid_w >= 1, ErrorCode::BadConfig, "bad grid size");
  }
};

inline DataConfig data_config_from(const Config& cfg) {
  DataConfig d;
  d.root = cfg.get("data.root");
  d.scenes = cfg.get_int("data.scenes");
  d.seed = uint64_t(cfg.get_int("data.seed"));
  d.frac_val = cfg.get_double("data.frac_val");
  d.frac_test = cfg.get_double("data.frac_test");
  d.sample_rate = cfg.get_int("data.sample_rate");
  d.duration = cfg.get_double("data.duration");
  d.ambient = cfg.get_double("data.ambient");
  d.sources_min = cfg.get_int("data.sources_min");
  d.sources_max = cfg.get_int("data.sources_max");
  d.dist_min = cfg.get_double("data.dist_min");
  d.dist_max = cfg.get_double("data.dist_max");
  d.min_sep_deg = cfg.get_double("data.min_sep_deg");
  d.grid_h = cfg.get_int("data.grid_h");
  d.grid_w = cfg.get_int("data.grid_w");
  d.far_depth = cfg.get_double("data.far_depth");
  d.validate();
  return d;
}

struct SplitCounts {
  int train = 0, val = 0, test = 0;
};

inline SplitCounts split_counts(int n, double frac_val, double frac_test) {
  SplitCounts c;
  c.val = int(n * frac_val);
  c.test = int(n * frac_test);
  c.train = n - c.val - c.test;
  require(c.train >= 1, ErrorCode::BadConfig, "split leaves no training scenes");
  return c;
}

inline std::string split_of_index(int i, const SplitCounts& c) {
  if (i < c.train) return "train";
  if (i < c.train + c.val) return "val";
  return "test";
}

inline std::string scene_id(int i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "scene_%04d", i);
  return buf;
}

/// Azimuths live on a 1/64-degree lattice. Lattice points plus the rig's
/// multiples of 90 stay exactly representable, which keeps the rotation
/// identity of the renderer bitwise.
inline double lattice_azimuth(Rng& rng) { return rng.uniform_int(0, 360 * 64 - 1) / 64.0; }

/// Deterministic scene draw: every choice flows from the dataset seed and
/// the scene index alone.
inline Scene sample_scene(const DataConfig& d, int index) {
  Rng rng(mix_seed(d.seed, uint64_t(index)));
  Scene s;
  s.seed = mix_seed(d.seed, 0x5CE4Eull ^ uint64_t(index));
  s.duration_s = d.duration;
  s.ambient_level = d.ambient;
  int n = rng.uniform_int(d.sources_min, d.sources_max);
  for (int j = 0; j < n; ++j) {
    SourceSpec src;
    src.cls = static_cast<SourceClass>(rng.uniform_int(1, 3));
    src.distance_m = rng.uniform(d.dist_min, d.dist_max);
    src.gain = rng.uniform(0.6, 1.0);
    src.seed = mix_seed(s.seed, 1000 + uint64_t(j));
    for (int attempt = 0;; ++attempt) {
      src.azimuth_deg = lattice_azimuth(rng);
      bool ok = true;
      for (const auto& other : s.sources)
        if (angular_distance_deg(src.azimuth_deg, other.azimuth_deg) < d.min_sep_deg) ok = false;
      if (ok) break;
      require(attempt < 1000, ErrorCode::BadConfig,
              "cannot place sources with the requested separation");
    }
    s.sources.push_back(src);
  }
  validate_scene(s, d.min_sep_deg);
  return s;
}

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json js;
  js["seed"] = s.seed;
  js["duration_s"] = s.duration_s;
  js["ambient_level"] = s.ambient_level;
  js["sources"] = nlohmann::json::array();
  for (const auto& src : s.sources)
    js["sources"].push_back({{"class", class_name(int(src.cls))},
                             {"azimuth_deg", src.azimuth_deg},
                             {"distance_m", src.distance_m},
                             {"gain", src.gain},
                             {"seed", src.seed}});
  return js;
}

inline Scene scene_from_json(const nlohmann::json& js) {
  Scene s;
  s.seed = js.at("seed").get<uint64_t>();
  s.duration_s = js.at("duration_s").get<double>();
  s.ambient_level = js.at("ambient_level").get<double>();
  for (const auto& e : js.at("sources")) {
    SourceSpec src;
    src.cls = static_cast<SourceClass>(class_id_from_name(e.at("class").get<std::string>()));
    src.azimuth_deg = e.at("azimuth_deg").get<double>();
    src.distance_m = e.at("distance_m").get<double>();
    src.gain = e.at("gain").get<double>();
    src.seed = e.at("seed").get<uint64_t>();
    s.sources.push_back(src);
  }
  return s;
}

/// Write the whole dataset tree. Layout per scene:
///   <root>/<split>/<id>/audio_pair{0,90,180,270}.wav  stereo float32
///   <root>/<split>/<id>/labels.pgm                    class ids 0..3
///   <root>/<split>/<id>/depth.f32                     row-major meters
///   <root>/<split>/<id>/scene.json                    source list + seeds
/// plus a manifest.json per split and the generating config at the root.
inline SplitCounts generate_dataset(const Config& cfg) {
  namespace fs = std::filesystem;
  DataConfig d = data_config_from(cfg);
  require(!d.root.empty(), ErrorCode::BadConfig, "data.root is not set");
  RigConfig rig;
  rig.ear_separation_m = cfg.get_double("rig.ear_separation");
  rig.speed_of_sound = cfg.get_double("rig.speed_of_sound");

  SplitCounts counts = split_counts(d.scenes, d.frac_val, d.frac_test);
  std::error_code ec;
  fs::create_directories(d.root, ec);
  require(!ec, ErrorCode::IoFailure, "cannot create " + d.root);
  {
    std::ofstream out(d.root + "/config.txt");
    require(out.good(), ErrorCode::IoFailure, "cannot write dataset config");
    out << cfg.to_text();
  }

  std::map<std::string, std::vector<std::string>> ids_by_split;
  for (int i = 0; i < d.scenes; ++i) {
    Scene scene = sample_scene(d, i);
    std::string split = split_of_index(i, counts);
    std::string id = scene_id(i);
    std::string dir = d.root + "/" + split + "/" + id;
    fs::create_directories(dir, ec);
    require(!ec, ErrorCode::IoFailure, "cannot create " + dir);

    RigClip clip = render_rig(scene, rig, d.sample_rate);
    for (int p = 0; p < 4; ++p) {
      WavClip wav;
      wav.sample_rate = d.sample_rate;
      wav.channels = {clip.pairs[size_t(p)].left.samples, clip.pairs[size_t(p)].right.samples};
      write_wav(dir + "/audio_pair" + std::to_string(rig.orientations_deg[size_t(p)]) + ".wav",
                wav);
    }
    auto [labels, depth] = ground_truth(scene, d.grid_h, d.grid_w, d.far_depth);
    write_pgm(dir + "/labels.pgm", labels);
    write_f32_raster(dir + "/depth.f32", depth.cells);
    std::ofstream sj(dir + "/scene.json");
    require(sj.good(), ErrorCode::IoFailure, "cannot write scene.json");
    sj << scene_to_json(scene).dump(2) << '\n';
    ids_by_split[split].push_back(id);
  }

  for (const char* split : {"train", "val", "test"}) {
    auto& ids = ids_by_split[split];
    if (ids.empty() && split != std::string("train")) continue;
    fs::create_directories(d.root + "/" + split, ec);
    nlohmann::json js;
    js["split"] = split;
    js["ids"] = ids;
    js["config_hash"] = cfg.hash();
    std::ofstream out(d.root + "/" + split + "/manifest.json");
    require(out.good(), ErrorCode::IoFailure, "cannot write manifest");
    out << js.dump(2) << '\n';
  }
  return counts;
}

struct ScenePayload {
  std::string id;
  Scene scene;
  std::array<WavClip, 4> pairs;  // indexed like RigConfig::orientations_deg
  LabelGrid labels;
  DepthGrid depth;
};

/// Read-only view over one split of a generated dataset.
class DatasetView {
 public:
  DatasetView(std::string root, std::string split)
      : root_(std::move(root)), split_(std::move(split)) {
    std::ifstream f(root_ + "/" + split_ + "/manifest.json");
    require(f.good(), ErrorCode::DataMissing,
            "missing manifest for split '" + split_ + "' under " + root_);
    nlohmann::json js;
    try {
      f >> js;
      ids_ = js.at("ids").get<std::vector<std::string>>();
      config_hash_ = js.at("config_hash").get<std::string>();
    } catch (const std::exception& e) {
      fail(ErrorCode::DataMissing, "bad manifest: " + std::string(e.what()));
    }
  }

  size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& config_hash() const { return config_hash_; }
  const std::string& split() const { return split_; }

  std::string dir_of(size_t i) const {
    require(i < ids_.size(), ErrorCode::DataMissing, "scene index out of range");
    return root_ + "/" + split_ + "/" + ids_[i];
  }

  ScenePayload load(size_t i) const {
    std::string dir = dir_of(i);
    ScenePayload p;
    p.id = ids_[i];
    std::ifstream sj(dir + "/scene.json");
    require(sj.good(), ErrorCode::DataMissing, "missing scene.json in " + dir);
    nlohmann::json js;
    try {
      sj >> js;
    } catch (const std::exception& e) {
      fail(ErrorCode::DataMissing, "bad scene.json: " + std::string(e.what()));
    }
    p.scene = scene_from_json(js);
    static const int kOrients[4] = {0, 90, 180, 270};
    for (int k = 0; k < 4; ++k) {
      p.pairs[size_t(k)] = read_wav(dir + "/audio_pair" + std::to_string(kOrients[k]) + ".wav");
      require(p.pairs[size_t(k)].channels.size() == 2, ErrorCode::BadAudioFormat,
              "expected stereo pair in " + dir);
    }
    p.labels = read_pgm(dir + "/labels.pgm");
    p.depth = read_depth_raster(dir + "/depth.f32", p.labels.h, p.labels.w);
    return p;
  }

 private:
  std::string root_;
  std::string split_;
  std::vector<std::string> ids_;
  std::string config_hash_;
};

}  // namespace bapn
