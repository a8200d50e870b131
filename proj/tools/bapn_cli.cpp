#include <Eigen/Core>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bapn/nn/gradcheck_suite.hpp"
#include "bapn/train.hpp"

namespace fs = std::filesystem;
using namespace bapn;

namespace {

const char* kUsage =
    "usage: bapn <subcommand> [--config FILE] [--set key=value ...] [--out DIR]\n"
    "\n"
    "subcommands:\n"
    "  gen        generate a synthetic binaural dataset under --out\n"
    "  labels     turn a label-frame stack into sound masks and training targets\n"
    "  train      train the multi-task network; artifacts land under --out\n"
    "  eval       evaluate a checkpoint on the configured split\n"
    "  infer-s3r  predict rotated-pair audio for a stereo WAV\n"
    "  ablate     run the input/task ablation grid\n"
    "  selftest   run the built-in fixture suite and print a pass matrix\n"
    "\n"
    "--help prints this text plus every configuration key with its default.\n";

struct CliArgs {
  std::string subcommand;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  bool help = false;
};

CliArgs parse_args(int argc, char** argv) {
  CliArgs args;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    auto value = [&](const char* flag) -> std::string {
      require(i + 1 < argc, ErrorCode::BadConfig, std::string(flag) + " needs a value");
      return argv[++i];
    };
    if (a == "--help" || a == "-h") {
      args.help = true;
    } else if (a == "--config") {
      args.config_path = value("--config");
    } else if (a == "--set") {
      args.overrides.push_back(value("--set"));
    } else if (a == "--out") {
      args.out = value("--out");
    } else if (!a.empty() && a[0] == '-') {
      fail(ErrorCode::BadConfig, "unknown flag '" + a + "'");
    } else if (args.subcommand.empty()) {
      args.subcommand = a;
    } else {
      fail(ErrorCode::BadConfig, "unexpected argument '" + a + "'");
    }
  }
  return args;
}

std::string need_out(const CliArgs& args) {
  require(!args.out.empty(), ErrorCode::BadConfig,
          "this subcommand writes artifacts; pass --out DIR");
  fs::create_directories(args.out);
  return args.out;
}

int run_gen(Config& cfg, const std::string& out) {
  cfg.set("data.root", out);  // everything a subcommand writes stays under --out
  SplitCounts counts = generate_dataset(cfg);
  std::cout << "dataset " << out << "\n"
            << "train " << counts.train << "\nval " << counts.val << "\ntest " << counts.test
            << "\n";
  return 0;
}

ClassTable load_class_table(const std::string& path) {
  if (path.empty()) return native_class_table();
  std::ifstream f(path);
  require(f.good(), ErrorCode::DataMissing, "cannot open class table " + path);
  nlohmann::json js = nlohmann::json::parse(f, nullptr, /*allow_exceptions=*/false);
  require(!js.is_discarded() && js.is_object(), ErrorCode::BadConfig,
          path + " is not a JSON object of {id: name}");
  ClassTable table;
  for (auto& [key, val] : js.items()) {
    require(val.is_string(), ErrorCode::BadConfig, "class table values must be names");
    size_t used = 0;
    int id = std::stoi(key, &used);
    require(used == key.size(), ErrorCode::BadConfig, "class table key '" + key + "' is not an id");
    table.names[id] = val.get<std::string>();
  }
  return table;
}

int run_labels(const Config& cfg, const std::string& out) {
  std::string stack_dir = cfg.get("labels.stack");
  require(!stack_dir.empty(), ErrorCode::BadConfig, "set labels.stack to a directory of PGM frames");
  ClassTable table = load_class_table(cfg.get("labels.table"));

  std::set<int> target_ids;
  for (const std::string& name : cfg.get_list("labels.targets")) {
    bool found = false;
    for (const auto& [id, n] : table.names)
      if (n == name) {
        target_ids.insert(id);
        found = true;
      }
    require(found, ErrorCode::UnknownClass, "target class '" + name + "' is not in the table");
  }

  std::vector<std::string> frame_paths;
  for (const auto& e : fs::directory_iterator(stack_dir))
    if (e.path().extension() == ".pgm") frame_paths.push_back(e.path().string());
  std::sort(frame_paths.begin(), frame_paths.end());
  require(!frame_paths.empty(), ErrorCode::DataMissing, "no .pgm frames in " + stack_dir);

  LabelStack stack;
  for (const auto& p : frame_paths) stack.frames.push_back(read_pgm(p));
  LabelGrid background = mode_background(stack);
  write_pgm(out + "/background.pgm", background);

  for (size_t i = 0; i < stack.frames.size(); ++i) {
    std::string stem = fs::path(frame_paths[i]).stem().string();
    SoundMask mask = sound_mask(stack.frames[i], background, target_ids);
    LabelGrid mask_img{mask.h, mask.w, std::vector<uint8_t>(mask.cells.size())};
    for (size_t k = 0; k < mask.cells.size(); ++k) mask_img.cells[k] = mask.cells[k] ? 255 : 0;
    write_pgm(out + "/mask_" + stem + ".pgm", mask_img);
    write_pgm(out + "/target_" + stem + ".pgm", to_training_target(mask, stack.frames[i], table));
  }
  std::cout << "frames " << stack.frames.size() << "\ngrid " << background.h << "x"
            << background.w << "\ntargets " << target_ids.size() << "\n";
  return 0;
}

void print_reports(const EvalReports& rep, const TaskSet& tasks) {
  if (tasks.semantic) std::cout << format_table(rep.semantic, native_class_table()) << "\n";
  if (tasks.depth) {
    std::cout << format_table(rep.depth) << "\n";
    std::cout << "mean-depth baseline rmse " << rep.mean_depth_baseline.rmse << "\n\n";
  }
  if (tasks.s3r) {
    std::cout << format_table(rep.s3r) << "\n";
    std::cout << "copy-reference baseline mse " << rep.copy_reference_baseline.mean_mse()
              << "\n\n";
  }
}

int run_train(const Config& cfg, const std::string& out) {
  RunRecord rec = train(cfg, out, &std::cout);
  std::cout << "\nsteps " << rec.steps << "\nfinal train loss " << rec.train_loss.back() << "\n";
  if (!rec.val_loss.empty()) std::cout << "final val loss " << rec.val_loss.back() << "\n";
  std::cout << "\n";
  print_reports(rec.final_reports, rec.tasks);
  std::cout << "checkpoint " << out << "/" << rec.checkpoint << "\n"
            << "run record " << out << "/run_record.json\n";
  return 0;
}

int run_eval(const Config& cfg, const std::string& out) {
  ExperimentConfig ecfg = experiment_from(cfg);
  std::string ckpt = cfg.get("eval.checkpoint");
  require(!ckpt.empty(), ErrorCode::BadConfig, "set eval.checkpoint to a trained model");
  int pairs = int(std::max<std::size_t>(ecfg.output_pairs.size(), 1));
  ModelConfig mcfg = model_config_from(cfg, branches_of(ecfg.input), pairs);
  PerceptionNet<double> net(mcfg);
  load_model(ckpt, net);
  net.set_training(false);

  EvalReports rep = evaluate(net, ecfg, ecfg.eval_split);
  std::ofstream(out + "/eval_report.json") << to_json(rep).dump(2) << '\n';
  std::cout << "split " << ecfg.eval_split << "\n\n";
  print_reports(rep, ecfg.tasks);
  std::cout << "report " << out << "/eval_report.json\n";
  return 0;
}

int run_infer(const Config& cfg, const std::string& out) {
  // inference needs no dataset, only the model geometry and dsp settings
  InputMode mode = parse_input_mode(cfg.get("train.input"));
  require(branches_of(mode) == 2, ErrorCode::BadConfig,
          "inference reads one stereo pair; train.input must be a two-channel mode");
  std::vector<int> output_pairs = cfg.get_int_list("train.output_pairs");
  require(!output_pairs.empty(), ErrorCode::BadConfig, "train.output_pairs is empty");
  int window = cfg.get_int("dsp.window");
  int hop = cfg.get_int("dsp.hop");
  double target_rms = cfg.get_double("dsp.target_rms");
  require(window > 0 && hop > 0 && hop * 2 <= window, ErrorCode::BadConfig,
          "need window > 0 and hop <= window/2");
  require(target_rms > 0.0, ErrorCode::BadConfig, "dsp.target_rms must be positive");
  std::string ckpt = cfg.get("eval.checkpoint");
  require(!ckpt.empty(), ErrorCode::BadConfig, "set eval.checkpoint to a trained model");
  std::string in_path = cfg.get("infer.input");
  require(!in_path.empty(), ErrorCode::BadConfig, "set infer.input to a stereo WAV");

  WavClip clip = read_wav(in_path);
  require(clip.channels.size() == 2, ErrorCode::BadAudioFormat,
          in_path + " has " + std::to_string(clip.channels.size()) + " channels, expected 2");
  double want_sr = cfg.get_double("data.sample_rate");
  require(clip.sample_rate == want_sr, ErrorCode::BadAudioFormat,
          "sample rate " + std::to_string(llround(clip.sample_rate)) +
              " differs from the model's " + std::to_string(llround(want_sr)));

  size_t have = clip.frames();
  size_t want = size_t(std::llround(cfg.get_double("data.duration") * want_sr));
  require(have > 0 && want > 0, ErrorCode::BadAudioFormat, "empty clip");
  size_t crop_off = 0, pad_off = 0;
  std::array<std::vector<double>, 2> ch;
  if (have == want) {
    ch = {clip.channels[0], clip.channels[1]};
  } else if (have > want) {
    crop_off = (have - want) / 2;
    std::cerr << "warning: input has " << have << " samples, model expects " << want
              << "; center-cropping\n";
    for (int c = 0; c < 2; ++c)
      ch[size_t(c)].assign(clip.channels[size_t(c)].begin() + long(crop_off),
                           clip.channels[size_t(c)].begin() + long(crop_off + want));
  } else {
    pad_off = (want - have) / 2;
    std::cerr << "warning: input has " << have << " samples, model expects " << want
              << "; center-padding with silence\n";
    for (int c = 0; c < 2; ++c) {
      ch[size_t(c)].assign(want, 0.0);
      std::copy(clip.channels[size_t(c)].begin(), clip.channels[size_t(c)].end(),
                ch[size_t(c)].begin() + long(pad_off));
    }
  }

  // the training-time normalization, restricted to the channels we have
  double energy = 0.0;
  for (const auto& c : ch)
    for (double v : c) energy += v * v;
  double r = std::sqrt(energy / double(2 * want));
  require(r > kSilenceFloor, ErrorCode::SilentInput, "input clip is silent");
  double gain = target_rms / r;

  std::array<Waveform, 2> wave;
  std::array<Spectrogram, 2> spec;
  std::vector<double> input;
  for (int c = 0; c < 2; ++c) {
    wave[size_t(c)].sample_rate = want_sr;
    wave[size_t(c)].samples.resize(want);
    for (size_t i = 0; i < want; ++i) wave[size_t(c)].samples[i] = ch[size_t(c)][i] * gain;
    spec[size_t(c)] = stft(wave[size_t(c)], window, hop);
    std::vector<double> lm = log_magnitude(spec[size_t(c)]);
    input.insert(input.end(), lm.begin(), lm.end());
  }
  int fb = spec[0].freq_bins, tf = spec[0].frames;

  ModelConfig mcfg = model_config_from(cfg, 2, int(output_pairs.size()));
  PerceptionNet<double> net(mcfg);
  load_model(ckpt, net);
  net.set_training(false);
  auto x = nn::Tensor<double>::from({1, 2, fb, tf}, std::move(input));
  ModelOutput<double> pred = net.forward(x, TaskSet{false, false, true});

  size_t plane = size_t(fb) * size_t(tf);
  const auto& mask_data = pred.s3r_masks.data();
  for (size_t pair = 0; pair < output_pairs.size(); ++pair) {
    WavClip out_clip;
    out_clip.sample_rate = want_sr;
    out_clip.channels.assign(2, std::vector<double>(have, 0.0));
    for (int c = 0; c < 2; ++c) {
      ComplexMask mask;
      mask.freq_bins = fb;
      mask.frames = tf;
      const double* mre = mask_data.data() + (pair * 4 + size_t(c) * 2) * plane;
      mask.re.assign(mre, mre + plane);
      mask.im.assign(mre + plane, mre + 2 * plane);
      Spectrogram diff = apply_complex_mask(spec[size_t(c)], mask);
      Waveform rec = reconstruct_target(wave[size_t(c)], diff);
      // back to the caller's scale and length
      auto& dst = out_clip.channels[size_t(c)];
      if (have >= want) {
        for (size_t i = 0; i < rec.samples.size(); ++i)
          dst[crop_off + i] = rec.samples[i] / gain;
      } else {
        for (size_t i = 0; i < have && pad_off + i < rec.samples.size(); ++i)
          dst[i] = rec.samples[pad_off + i] / gain;
      }
    }
    std::string path = out + "/pred_" + std::to_string(output_pairs[pair]) + ".wav";
    write_wav(path, out_clip);
    std::cout << path << "\n";
  }
  return 0;
}

int run_ablate(const Config& cfg, const std::string& out) {
  AblationResult res = ablate(cfg, out, &std::cout);
  std::cout << "\ncell          median_miou\n";
  for (const auto& [name, med] : res.medians) {
    std::cout << name;
    for (size_t i = name.size(); i < 14; ++i) std::cout << ' ';
    std::cout << med << "\n";
  }
  std::cout << "rows " << out << "/ablation.csv\n";
  return 0;
}

// ---- selftest ----------------------------------------------------------

struct CheckRow {
  std::string name;
  bool ok = false;
  std::string detail;
};

template <typename F>
CheckRow run_check(const std::string& name, F body) {
  CheckRow row{name, false, ""};
  try {
    row.detail = body(row.ok);
  } catch (const std::exception& e) {
    row.ok = false;
    row.detail = e.what();
  }
  return row;
}

Waveform random_clip(uint64_t seed, double seconds, double sr) {
  Rng rng(mix_seed(seed, 0x5EEDull));
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(size_t(std::llround(seconds * sr)));
  for (auto& v : w.samples) v = rng.normal();
  return w;
}

int run_selftest(const Config& cfg) {
  std::vector<CheckRow> rows;

  rows.push_back(run_check("stft round trip", [](bool& ok) {
    double worst = 1e9;
    for (uint64_t seed : {1, 2, 3}) {
      Waveform w = random_clip(seed, 2.0, 16000.0);
      Waveform back = istft(stft(w, 512, 160));
      std::vector<double> head(w.samples.begin(), w.samples.begin() + long(back.samples.size()));
      worst = std::min(worst, snr_db(head, back.samples, 512));
    }
    ok = worst >= 60.0;
    std::ostringstream os;
    os << "min interior snr " << worst << " dB";
    return os.str();
  }));

  rows.push_back(run_check("rms normalization", [](bool& ok) {
    Waveform w = random_clip(9, 0.2, 16000.0);
    Waveform n = rms_normalize(w, 0.1);
    double acc = 0.0;
    for (double v : n.samples) acc += v * v;  // independent of rms()
    double got = std::sqrt(acc / double(n.samples.size()));
    ok = std::abs(got - 0.1) < 1e-12;
    std::ostringstream os;
    os << "rms " << got;
    return os.str();
  }));

  rows.push_back(run_check("rig rotation equivariance", [](bool& ok) {
    RigConfig rig;
    Scene sc;
    sc.sources.push_back({SourceClass::car, 30.25, 2.5, 1.0, 3});
    sc.sources.push_back({SourceClass::train, 247.484375, 7.0, 0.8, 4});
    sc.ambient_level = 0.003;
    sc.duration_s = 0.5;
    sc.seed = 77;
    Scene rot = sc;
    for (auto& s : rot.sources) s.azimuth_deg += 90.0;
    EarPair ref = render_binaural(sc, 0, rig, 16000.0);
    EarPair got = render_binaural(rot, 90, rig, 16000.0);
    ok = ref.left.samples == got.left.samples && ref.right.samples == got.right.samples;
    return std::string(ok ? "bitwise equal" : "pairs differ");
  }));

  rows.push_back(run_check("zero azimuth symmetry", [](bool& ok) {
    Scene sc;
    sc.sources.push_back({SourceClass::car, 0.0, 3.0, 1.0, 5});
    sc.ambient_level = 0.0;  // ambient is per-ear and would break the mirror
    sc.duration_s = 0.5;
    sc.seed = 5;
    EarPair p = render_binaural(sc, 0, RigConfig{}, 16000.0);
    ok = p.left.samples == p.right.samples;
    return std::string(ok ? "ears bitwise equal" : "ears differ");
  }));

  rows.push_back(run_check("background mode oracle", [](bool& ok) {
    Rng rng(404);
    LabelStack stack;
    for (int t = 0; t < 7; ++t) {
      LabelGrid g{6, 5, {}};
      g.cells.resize(30);
      for (auto& c : g.cells) c = uint8_t(rng.uniform_int(0, 3));
      stack.frames.push_back(std::move(g));
    }
    LabelGrid got = mode_background(stack);
    ok = true;
    for (size_t i = 0; i < got.cells.size(); ++i) {
      int hist[4] = {0, 0, 0, 0};
      for (const auto& f : stack.frames) hist[f.cells[i]]++;
      int best = 0;
      for (int c = 1; c < 4; ++c)
        if (hist[c] > hist[best]) best = c;  // min id wins ties
      ok = ok && got.cells[i] == best;
    }
    return std::string(ok ? "matches histogram argmax" : "disagrees with oracle");
  }));

  rows.push_back(run_check("static stack has no sound mask", [](bool& ok) {
    Rng rng(11);
    LabelGrid g{4, 6, {}};
    g.cells.resize(24);
    for (auto& c : g.cells) c = uint8_t(rng.uniform_int(0, 3));
    SoundMask m = sound_mask(g, g, {1, 2, 3});
    ok = std::all_of(m.cells.begin(), m.cells.end(), [](uint8_t v) { return v == 0; });
    return std::string(ok ? "all zero" : "nonzero cells");
  }));

  rows.push_back(run_check("pseudo-label chain matches simulator", [](bool& ok) {
    Scene sc;
    sc.sources.push_back({SourceClass::car, 30.25, 3.0, 1.0, 6});
    sc.sources.push_back({SourceClass::motorcycle, 200.0, 8.0, 1.0, 7});
    sc.duration_s = 0.5;
    LabelGrid gt = ground_truth_semantic(sc, 8, 16);
    LabelGrid empty{8, 16, std::vector<uint8_t>(128, 0)};
    SoundMask m = sound_mask(gt, empty, {1, 2, 3});
    LabelGrid chained = to_training_target(m, gt, native_class_table());
    ok = chained.cells == gt.cells;
    return std::string(ok ? "bit-exact" : "differs from ground truth");
  }));

  for (const auto& c : nn::gradcheck_suite()) {
    rows.push_back(run_check("grad " + c.name, [&](bool& ok) {
      double worst = 0.0;
      for (uint64_t seed = 1; seed <= 5; ++seed) worst = std::max(worst, c.run(seed));
      ok = worst <= 1e-4;
      std::ostringstream os;
      os << "max err " << worst;
      return os.str();
    }));
  }

  rows.push_back(run_check("checkpoint round trip", [](bool& ok) {
    CheckpointRecord r;
    r.name = "probe.w";
    r.dims = {2, 2};
    r.step = 3;
    r.values = {0.5, -0.25, 1.0, -2.0};  // dyadic: float32 exact
    r.m = {0.125, 0.0, 0.5, 0.75};
    r.v = {0.25, 0.5, 0.0, 1.0};
    std::stringstream buf;
    save_checkpoint(buf, {r});
    auto back = load_checkpoint(buf);
    ok = back.size() == 1 && back[0].name == r.name && back[0].dims == r.dims &&
         back[0].step == r.step && back[0].values == r.values && back[0].m == r.m &&
         back[0].v == r.v;
    return std::string(ok ? "bitwise equal" : "record changed");
  }));

  rows.push_back(run_check("checkpoint corruption detected", [](bool& ok) {
    CheckpointRecord r;
    r.name = "probe.w";
    r.dims = {1};
    r.step = 0;
    r.values = {1.0};
    r.m = {0.0};
    r.v = {0.0};
    std::stringstream buf;
    save_checkpoint(buf, {r});
    std::string bytes = buf.str();
    bytes[0] = 'X';
    std::stringstream bad(bytes);
    try {
      load_checkpoint(bad);
      ok = false;
      return std::string("corrupt stream was accepted");
    } catch (const Error& e) {
      ok = e.code() == ErrorCode::CheckpointCorrupt;
      return std::string(error_name(e.code()));
    }
  }));

  rows.push_back(run_check("semantic head starts uniform", [](bool& ok) {
    ModelConfig mcfg;
    mcfg.base_channels = 4;
    mcfg.aspp_filters = 8;
    mcfg.fuse_channels = 8;
    mcfg.dec_hidden = 4;
    mcfg.s3r_widths = {4, 4, 4, 4, 4};
    mcfg.grid_h = 4;
    mcfg.grid_w = 8;
    mcfg.pairs = 1;
    PerceptionNet<double> net(mcfg);
    net.set_training(false);
    auto x = nn::Tensor<double>::from({1, 2, 64, 64}, std::vector<double>(64 * 64 * 2, 0.3));
    auto out = net.forward(x, TaskSet{true, false, false});
    auto probs = nn::softmax_channels(out.semantic_logits);
    ok = std::all_of(probs.data().begin(), probs.data().end(),
                     [](double p) { return p == 0.25; });
    return std::string(ok ? "softmax exactly 0.25" : "head is not neutral");
  }));

  rows.push_back(run_check("iou oracle", [](bool& ok) {
    LabelGrid a{1, 4, {0, 1, 1, 2}};
    LabelGrid b{1, 4, {0, 1, 2, 2}};
    SemanticReport rep = miou({a}, {b}, {1, 2, 3});
    ok = rep.per_class_iou.at(1) == 0.5 && rep.per_class_iou.at(2) == 0.5 &&
         rep.per_class_iou.count(3) == 0 && rep.mean_iou == 0.5;
    return std::string(ok ? "hand case exact" : "hand case wrong");
  }));

  rows.push_back(run_check("depth oracle", [](bool& ok) {
    DepthGrid g{2, 2, {3.0, 4.0, 5.0, 50.0}};
    DepthReport rep = depth_metrics({g}, {g}, 50.0);
    ok = rep.abs_rel == 0.0 && rep.sq_rel == 0.0 && rep.rmse == 0.0 && rep.mse == 0.0;
    return std::string(ok ? "identity gives zero" : "nonzero on identity");
  }));

  rows.push_back(run_check("audio distance is zero on identity", [](bool& ok) {
    Waveform w = random_clip(21, 0.2, 16000.0);
    S3RReport rep = s3r_metrics({w}, {w}, 512, 160);
    ok = rep.mean_mse() == 0.0 && rep.mean_env() == 0.0;
    return std::string(ok ? "zero" : "nonzero");
  }));

  std::string probe = cfg.get("selftest.checkpoint");
  if (!probe.empty()) {
    rows.push_back(run_check("checkpoint file integrity", [&](bool& ok) {
      auto recs = load_checkpoint(probe);
      ok = true;
      return std::to_string(recs.size()) + " records";
    }));
  }

  size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  int passed = 0;
  for (const auto& r : rows) {
    std::cout << (r.ok ? "pass  " : "FAIL  ") << r.name;
    for (size_t i = r.name.size(); i < width + 2; ++i) std::cout << ' ';
    std::cout << r.detail << "\n";
    passed += r.ok ? 1 : 0;
  }
  std::cout << "selftest: " << passed << "/" << rows.size() << " checks passed\n";
  return passed == int(rows.size()) ? 0 : 1;
}

bool is_internal(ErrorCode c) {
  switch (c) {
    case ErrorCode::Internal:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::MissingGrad:
    case ErrorCode::DegenerateBatch:
      return true;
    default:
      return false;  // everything else traces back to inputs or environment
  }
}

int dispatch(const CliArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const auto& o : args.overrides) cfg.apply_override(o);

  if (args.help || args.subcommand.empty()) {
    std::cout << kUsage << "\n" << Config::help_text();
    require(args.help, ErrorCode::BadConfig, "missing subcommand");
    return 0;
  }

  const std::string& sub = args.subcommand;
  if (sub == "gen") return run_gen(cfg, need_out(args));
  if (sub == "labels") return run_labels(cfg, need_out(args));
  if (sub == "train") return run_train(cfg, need_out(args));
  if (sub == "eval") return run_eval(cfg, need_out(args));
  if (sub == "infer-s3r") return run_infer(cfg, need_out(args));
  if (sub == "ablate") return run_ablate(cfg, need_out(args));
  if (sub == "selftest") return run_selftest(cfg);
  fail(ErrorCode::BadConfig, "unknown subcommand '" + sub + "'");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    if (const char* threads = std::getenv("BAPN_THREADS")) {
      char* end = nullptr;
      long n = std::strtol(threads, &end, 10);
      require(end && *end == '\0' && n >= 1, ErrorCode::BadConfig,
              "BAPN_THREADS must be a positive integer");
      Eigen::setNbThreads(int(n));
    }
    return dispatch(parse_args(argc, argv));
  } catch (const Error& e) {
    std::string msg = e.what();
    std::string prefix = std::string(error_name(e.code())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    nlohmann::json js{{"error", error_name(e.code())}, {"message", msg}};
    std::cout << js.dump() << "\n";
    return is_internal(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    nlohmann::json js{{"error", "Internal"}, {"message", e.what()}};
    std::cout << js.dump() << "\n";
    return 1;
  }
}
