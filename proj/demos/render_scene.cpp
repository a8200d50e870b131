// Renders one hand-built street scene through the four-pair microphone
// rig and writes everything a listener or debugger would want: the four
// stereo WAVs, the class-id grid, and a depth map scaled into a PGM.
//
//   render_scene [output_dir]

#include <filesystem>
#include <iostream>

#include "bapn/dataset.hpp"

using namespace bapn;

int main(int argc, char** argv) {
  std::string out = argc > 1 ? argv[1] : "scene_out";
  std::filesystem::create_directories(out);

  Scene scene;
  scene.sources.push_back({SourceClass::car, 30.0, 4.0, 1.0, 11});
  scene.sources.push_back({SourceClass::train, 250.0, 12.0, 0.8, 12});
  scene.ambient_level = 0.003;
  scene.duration_s = 2.0;
  scene.seed = 7;

  RigConfig rig;
  double sr = 16000.0;
  RigClip clip = render_rig(scene, rig, sr);

  for (int p = 0; p < 4; ++p) {
    const EarPair& pair = clip.pairs[size_t(p)];
    WavClip wav;
    wav.sample_rate = sr;
    wav.channels = {pair.left.samples, pair.right.samples};
    std::string path =
        out + "/pair" + std::to_string(rig.orientations_deg[size_t(p)]) + ".wav";
    write_wav(path, wav);
    std::cout << path << "  rms L " << rms(pair.left) << "  R " << rms(pair.right) << "\n";
  }

  auto [labels, depth] = ground_truth(scene, 32, 64, 50.0);
  write_pgm(out + "/labels.pgm", labels);

  // depth in meters -> gray levels, near is bright
  LabelGrid depth_img{depth.h, depth.w, std::vector<uint8_t>(depth.cells.size())};
  for (size_t i = 0; i < depth.cells.size(); ++i) {
    double v = 255.0 * (1.0 - depth.cells[i] / 50.0);
    depth_img.cells[i] = uint8_t(std::clamp(v, 0.0, 255.0));
  }
  write_pgm(out + "/depth.pgm", depth_img);

  std::cout << out << "/labels.pgm\n" << out << "/depth.pgm\n";
  for (const auto& src : scene.sources)
    std::cout << "source " << class_name(int(src.cls)) << " azimuth " << src.azimuth_deg
              << " deg, distance " << src.distance_m << " m\n";
  return 0;
}
