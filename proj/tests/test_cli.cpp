#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bapn/dataset.hpp"
#include "bapn/nn/gradcheck_suite.hpp"
#include "bapn/train.hpp"

using namespace bapn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("bapn_cli_" + std::to_string(uintptr_t(this)) + "_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

/// Run the installed binary with the given arguments, capturing streams.
RunResult run_cli(const std::string& args, const std::string& scratch) {
  std::string out_file = scratch + "/stdout.txt";
  std::string err_file = scratch + "/stderr.txt";
  std::string cmd = std::string(BAPN_CLI_PATH) + " " + args + " > " + out_file + " 2> " + err_file;
  int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

/// Last stdout line parsed as JSON; the error report when a command fails.
nlohmann::json error_json(const RunResult& r) {
  std::string line;
  std::istringstream is(r.out);
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) line = l;
  nlohmann::json js = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  REQUIRE(!js.is_discarded());
  return js;
}

std::string tiny_model_args() {
  return "--set data.grid_h=8 --set data.grid_w=16 --set model.base_channels=4 "
         "--set model.aspp_filters=8 --set model.fuse_channels=8 --set model.dec_hidden=4 "
         "--set model.s3r_widths=4,4,4,4,4 --set data.duration=0.25";
}

std::string gen_args() {
  return "--set data.scenes=10 --set data.duration=0.25 --set data.grid_h=8 "
         "--set data.grid_w=16 --set data.sources_max=1";
}

/// Four identical sources a quarter turn apart make the scene invariant
/// under rig rotation, so every pair hears the same two channels up to
/// floating-point summation order.
Scene symmetric_scene(uint64_t seed) {
  Scene sc;
  for (double az : {45.0, 135.0, 225.0, 315.0})
    sc.sources.push_back({SourceClass::car, az, 3.0, 1.0, mix_seed(seed, 0xCAFE)});
  sc.ambient_level = 0.003;
  sc.duration_s = 0.25;
  sc.seed = seed;
  return sc;
}

/// Write a dataset of rotation-symmetric scenes in the layout gen emits.
void write_symmetric_dataset(const std::string& root, int n_train) {
  RigConfig rig;
  std::map<std::string, std::vector<std::string>> ids;
  for (int i = 0; i < n_train + 2; ++i) {
    Scene sc = symmetric_scene(uint64_t(i) + 1);
    std::string split = i < n_train ? "train" : (i == n_train ? "val" : "test");
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d", i);
    std::string dir = root + "/" + split + "/" + buf;
    fs::create_directories(dir);
    RigClip clip = render_rig(sc, rig, 16000.0);
    for (int p = 0; p < 4; ++p) {
      WavClip wav;
      wav.sample_rate = 16000.0;
      wav.channels = {clip.pairs[size_t(p)].left.samples, clip.pairs[size_t(p)].right.samples};
      write_wav(dir + "/audio_pair" + std::to_string(rig.orientations_deg[size_t(p)]) + ".wav",
                wav);
    }
    auto [labels, depth] = ground_truth(sc, 8, 16, 50.0);
    write_pgm(dir + "/labels.pgm", labels);
    write_f32_raster(dir + "/depth.f32", depth.cells);
    std::ofstream(dir + "/scene.json") << scene_to_json(sc).dump(2) << '\n';
    ids[split].push_back(buf);
  }
  for (const auto& [split, list] : ids) {
    nlohmann::json js{{"split", split}, {"ids", list}, {"config_hash", "handmade"}};
    std::ofstream(root + "/" + split + "/manifest.json") << js.dump(2) << '\n';
  }
}

double wav_snr_db(const WavClip& ref, const WavClip& est) {
  double sig = 0.0, err = 0.0;
  for (size_t c = 0; c < ref.channels.size(); ++c) {
    for (size_t i = 0; i < ref.channels[c].size(); ++i) {
      double r = ref.channels[c][i];
      double d = r - est.channels[c][i];
      sig += r * r;
      err += d * d;
    }
  }
  if (err == 0.0) return 1e9;
  return 10.0 * std::log10(sig / err);
}

}  // namespace

TEST_CASE("help enumerates every config key", "[cli]") {
  TempDir tmp;
  RunResult r = run_cli("--help", tmp.str());
  REQUIRE(r.exit_code == 0);
  for (const auto& [key, entry] : Config::schema()) {
    INFO("missing key " << key);
    REQUIRE(r.out.find(key) != std::string::npos);
  }
  for (const char* sub : {"gen", "labels", "train", "eval", "infer-s3r", "ablate", "selftest"})
    REQUIRE(r.out.find(sub) != std::string::npos);
}

TEST_CASE("bad invocations exit 2 with error json", "[cli]") {
  TempDir tmp;

  RunResult none = run_cli("", tmp.str());
  REQUIRE(none.exit_code == 2);
  REQUIRE(error_json(none)["error"] == "BadConfig");

  RunResult bogus = run_cli("frobnicate", tmp.str());
  REQUIRE(bogus.exit_code == 2);
  REQUIRE(error_json(bogus)["error"] == "BadConfig");

  RunResult key = run_cli("train --set no.such.key=1 --out " + tmp.str() + "/x", tmp.str());
  REQUIRE(key.exit_code == 2);
  REQUIRE(error_json(key)["error"] == "BadConfig");
  REQUIRE(error_json(key)["message"].get<std::string>().find("no.such.key") !=
          std::string::npos);
}

TEST_CASE("eval on a missing checkpoint reports CheckpointCorrupt", "[cli]") {
  TempDir tmp;
  RunResult r = run_cli("eval --set data.root=" + tmp.str() +
                            " --set eval.checkpoint=" + tmp.str() + "/nope.ckpt --out " +
                            tmp.str() + "/out",
                        tmp.str());
  REQUIRE(r.exit_code == 2);
  REQUIRE(error_json(r)["error"] == "CheckpointCorrupt");
}

TEST_CASE("gen writes a deterministic tree and prints split counts", "[cli]") {
  TempDir tmp;
  std::string out = tmp.str() + "/data";
  RunResult first = run_cli("gen " + gen_args() + " --out " + out, tmp.str());
  REQUIRE(first.exit_code == 0);
  REQUIRE(first.out.find("train 8") != std::string::npos);
  REQUIRE(first.out.find("val 1") != std::string::npos);
  REQUIRE(first.out.find("test 1") != std::string::npos);

  // snapshot, rerun into the same directory, compare bytes
  std::map<std::string, std::string> before;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file()) before[e.path().string()] = slurp(e.path().string());
  RunResult again = run_cli("gen " + gen_args() + " --out " + out, tmp.str());
  REQUIRE(again.exit_code == 0);
  size_t seen = 0;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file()) {
      ++seen;
      REQUIRE(slurp(e.path().string()) == before.at(e.path().string()));
    }
  REQUIRE(seen == before.size());
}

TEST_CASE("ablate minimal grid emits one csv row per cell-seed pair", "[cli]") {
  TempDir tmp;
  std::string data = tmp.str() + "/data";
  REQUIRE(run_cli("gen " + gen_args() + " --out " + data, tmp.str()).exit_code == 0);

  RunResult r = run_cli("ablate " + tiny_model_args() + " --set data.root=" + data +
                            " --set train.epochs=1 --set train.max_steps=1" +
                            " --set ablate.cells=mono,pair0 --set ablate.seeds=3 --out " +
                            tmp.str() + "/abl",
                        tmp.str());
  REQUIRE(r.exit_code == 0);
  std::istringstream csv(slurp(tmp.str() + "/abl/ablation.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);)
    if (!l.empty()) lines.push_back(l);
  REQUIRE(lines.size() == 3);  // header + 2 data rows
  REQUIRE(lines[0] == "cell,seed,config_hash,miou,failed");
}

TEST_CASE("infer-s3r preserves input length and sample rate", "[cli]") {
  TempDir tmp;
  std::string data = tmp.str() + "/data";
  REQUIRE(run_cli("gen " + gen_args() + " --out " + data, tmp.str()).exit_code == 0);
  std::string run = tmp.str() + "/run";
  REQUIRE(run_cli("train " + tiny_model_args() + " --set data.root=" + data +
                      " --set train.tasks=s3r --set train.epochs=1 --set train.max_steps=1 "
                      "--out " + run,
                  tmp.str())
              .exit_code == 0);
  std::string ckpt = " --set eval.checkpoint=" + run + "/epoch_0.ckpt";
  std::string input = data + "/test/scene_0009/audio_pair0.wav";

  SECTION("matching length passes through quietly") {
    RunResult r = run_cli("infer-s3r " + tiny_model_args() + ckpt +
                              " --set infer.input=" + input + " --out " + tmp.str() + "/inf",
                          tmp.str());
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.err.find("warning") == std::string::npos);
    WavClip in = read_wav(input);
    for (int alpha : {90, 180, 270}) {
      WavClip pred = read_wav(tmp.str() + "/inf/pred_" + std::to_string(alpha) + ".wav");
      REQUIRE(pred.sample_rate == in.sample_rate);
      REQUIRE(pred.channels.size() == 2);
      REQUIRE(pred.frames() == in.frames());
    }
  }

  SECTION("longer input is center-cropped with a warning") {
    WavClip in = read_wav(input);
    WavClip longer = in;
    for (auto& c : longer.channels) {
      std::vector<double> padded(c.size() * 2, 0.01);
      std::copy(c.begin(), c.end(), padded.begin() + long(c.size() / 2));
      c = std::move(padded);
    }
    write_wav(tmp.str() + "/long.wav", longer);
    RunResult r = run_cli("infer-s3r " + tiny_model_args() + ckpt + " --set infer.input=" +
                              tmp.str() + "/long.wav --out " + tmp.str() + "/inf_long",
                          tmp.str());
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.err.find("warning") != std::string::npos);
    WavClip pred = read_wav(tmp.str() + "/inf_long/pred_90.wav");
    REQUIRE(pred.frames() == longer.frames());
  }

  SECTION("shorter input is center-padded with a warning") {
    WavClip in = read_wav(input);
    WavClip shorter = in;
    for (auto& c : shorter.channels) c.resize(c.size() / 2);
    write_wav(tmp.str() + "/short.wav", shorter);
    RunResult r = run_cli("infer-s3r " + tiny_model_args() + ckpt + " --set infer.input=" +
                              tmp.str() + "/short.wav --out " + tmp.str() + "/inf_short",
                          tmp.str());
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.err.find("warning") != std::string::npos);
    WavClip pred = read_wav(tmp.str() + "/inf_short/pred_90.wav");
    REQUIRE(pred.frames() == shorter.frames());
  }

  SECTION("silent input surfaces SilentInput") {
    WavClip silent = read_wav(input);
    for (auto& c : silent.channels) std::fill(c.begin(), c.end(), 0.0);
    write_wav(tmp.str() + "/silent.wav", silent);
    RunResult r = run_cli("infer-s3r " + tiny_model_args() + ckpt + " --set infer.input=" +
                              tmp.str() + "/silent.wav --out " + tmp.str() + "/inf_sil",
                          tmp.str());
    REQUIRE(r.exit_code == 2);
    REQUIRE(error_json(r)["error"] == "SilentInput");
  }

  SECTION("mono input surfaces BadAudioFormat") {
    WavClip in = read_wav(input);
    WavClip mono = in;
    mono.channels.resize(1);
    write_wav(tmp.str() + "/mono.wav", mono);
    RunResult r = run_cli("infer-s3r " + tiny_model_args() + ckpt + " --set infer.input=" +
                              tmp.str() + "/mono.wav --out " + tmp.str() + "/inf_mono",
                          tmp.str());
    REQUIRE(r.exit_code == 2);
    REQUIRE(error_json(r)["error"] == "BadAudioFormat");
  }
}

TEST_CASE("rotation-symmetric scenes reproduce the input pair", "[cli]") {
  TempDir tmp;
  std::string data = tmp.str() + "/data";
  write_symmetric_dataset(data, 8);

  // On these scenes the rotated pairs equal the reference pair, so the
  // correct difference signal is zero; training must keep it there.
  std::string run = tmp.str() + "/run";
  RunResult tr = run_cli("train " + tiny_model_args() + " --set data.root=" + data +
                             " --set train.tasks=s3r --set train.epochs=5 --set train.lr=0.001 "
                             "--out " + run,
                         tmp.str());
  REQUIRE(tr.exit_code == 0);

  std::string input = data + "/test/scene_0009/audio_pair0.wav";
  RunResult inf = run_cli("infer-s3r " + tiny_model_args() +
                              " --set eval.checkpoint=" + run + "/epoch_4.ckpt" +
                              " --set infer.input=" + input + " --out " + tmp.str() + "/inf",
                          tmp.str());
  REQUIRE(inf.exit_code == 0);

  WavClip in = read_wav(input);
  WavClip pred = read_wav(tmp.str() + "/inf/pred_90.wav");
  REQUIRE(wav_snr_db(in, pred) >= 30.0);
}

TEST_CASE("selftest passes fresh and flags a corrupted checkpoint", "[cli]") {
  TempDir tmp;
  RunResult fresh = run_cli("selftest", tmp.str());
  REQUIRE(fresh.exit_code == 0);
  REQUIRE(fresh.out.find("FAIL") == std::string::npos);

  // every registered op must appear in the grad-check section
  for (const auto& c : nn::gradcheck_suite()) {
    INFO("missing op " << c.name);
    REQUIRE(fresh.out.find("grad " + c.name) != std::string::npos);
  }

  // write a real checkpoint, break the magic, and point selftest at it
  std::string data = tmp.str() + "/data";
  REQUIRE(run_cli("gen " + gen_args() + " --out " + data, tmp.str()).exit_code == 0);
  std::string run = tmp.str() + "/run";
  REQUIRE(run_cli("train " + tiny_model_args() + " --set data.root=" + data +
                      " --set train.epochs=1 --set train.max_steps=1 --out " + run,
                  tmp.str())
              .exit_code == 0);
  std::string ckpt = run + "/epoch_0.ckpt";
  {
    std::fstream f(ckpt, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  RunResult bad = run_cli("selftest --set selftest.checkpoint=" + ckpt, tmp.str());
  REQUIRE(bad.exit_code == 1);
  REQUIRE(bad.out.find("FAIL  checkpoint file integrity") != std::string::npos);
  // the corruption fails exactly one check
  size_t fails = 0;
  for (size_t at = bad.out.find("FAIL"); at != std::string::npos;
       at = bad.out.find("FAIL", at + 1))
    ++fails;
  REQUIRE(fails == 1);
}

TEST_CASE("subcommands write only under --out", "[cli]") {
  TempDir tmp;
  std::string data = tmp.str() + "/data";
  REQUIRE(run_cli("gen " + gen_args() + " --out " + data, tmp.str()).exit_code == 0);

  // run from inside an empty directory; nothing may appear there
  fs::path cwd = tmp.path / "scratch_cwd";
  fs::create_directories(cwd);
  std::string cmd = "cd " + cwd.string() + " && " + BAPN_CLI_PATH + " train " +
                    tiny_model_args() + " --set data.root=" + data +
                    " --set train.epochs=1 --set train.max_steps=1 --out " + tmp.str() +
                    "/run > /dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  REQUIRE(fs::is_empty(cwd));
  REQUIRE(fs::exists(tmp.path / "run" / "run_record.json"));
}

TEST_CASE("BAPN_THREADS validates before running", "[cli]") {
  TempDir tmp;
  std::string cmd_bad = "BAPN_THREADS=zero " + std::string(BAPN_CLI_PATH) + " selftest > " +
                        tmp.str() + "/o.txt 2>&1";
  int status = std::system(cmd_bad.c_str());
  REQUIRE(WEXITSTATUS(status) == 2);
  std::string cmd_ok = "BAPN_THREADS=2 " + std::string(BAPN_CLI_PATH) + " selftest > " +
                       tmp.str() + "/o2.txt 2>&1";
  status = std::system(cmd_ok.c_str());
  REQUIRE(WEXITSTATUS(status) == 0);
}
