#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bapn/train.hpp"

using namespace bapn;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("bapn_train_" + std::to_string(uintptr_t(this)) + "_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

// Small scenes and a small model keep full train() runs in the
// millisecond-to-second range without changing any code path.
Config tiny_run_config(const std::string& root) {
  Config cfg;
  cfg.set("data.root", root);
  cfg.set("data.scenes", "10");  // splits to 8 train / 1 val / 1 test
  cfg.set("data.duration", "0.25");
  cfg.set("data.grid_h", "8");
  cfg.set("data.grid_w", "16");
  cfg.set("data.sources_max", "1");
  cfg.set("model.base_channels", "4");
  cfg.set("model.aspp_filters", "8");
  cfg.set("model.fuse_channels", "8");
  cfg.set("model.dec_hidden", "4");
  cfg.set("model.s3r_widths", "4,4,4,4,4");
  return cfg;
}

const std::string& shared_dataset() {
  static TempDir dir;
  static std::string root;
  if (root.empty()) {
    root = dir.str() + "/data";
    generate_dataset(tiny_run_config(root));
  }
  return root;
}

}  // namespace

TEST_CASE("input modes map to branches and rig pairs", "[train]") {
  for (const char* name :
       {"mono", "pair0", "pair90", "pair180", "pair270", "pairs2", "pairs4"}) {
    REQUIRE(input_mode_name(parse_input_mode(name)) == name);
  }
  REQUIRE(branches_of(InputMode::mono) == 2);
  REQUIRE(branches_of(InputMode::pair270) == 2);
  REQUIRE(branches_of(InputMode::pairs2) == 4);
  REQUIRE(branches_of(InputMode::pairs4) == 8);
  REQUIRE(pairs_used(InputMode::mono) == std::vector<int>{0});
  REQUIRE(pairs_used(InputMode::pair180) == std::vector<int>{2});
  REQUIRE(pairs_used(InputMode::pairs2) == std::vector<int>{0, 1});
  REQUIRE(pairs_used(InputMode::pairs4) == std::vector<int>{0, 1, 2, 3});
  REQUIRE_THROWS_AS(parse_input_mode("stereo"), Error);

  AblationCell cell = parse_cell("pairs2+sd");
  REQUIRE(cell.input == InputMode::pairs2);
  REQUIRE(cell.tasks.semantic);
  REQUIRE(cell.tasks.depth);
  REQUIRE(cell.tasks.s3r);
  cell = parse_cell("mono");
  REQUIRE(cell.tasks.semantic);
  REQUIRE_FALSE(cell.tasks.depth);
  REQUIRE_FALSE(cell.tasks.s3r);
  REQUIRE_THROWS_AS(parse_cell("pair0+x"), Error);
}

TEST_CASE("experiment config mirrors documented defaults", "[train]") {
  Config cfg;
  cfg.set("data.root", "somewhere");
  ExperimentConfig e = experiment_from(cfg);
  REQUIRE(e.tasks.semantic);
  REQUIRE_FALSE(e.tasks.depth);
  REQUIRE_FALSE(e.tasks.s3r);
  REQUIRE(e.input == InputMode::pair0);
  REQUIRE(e.output_pairs == std::vector<int>{90, 180, 270});
  REQUIRE(e.epochs == 10);
  REQUIRE(e.lr == Approx(1e-5));
  REQUIRE(e.batch == 2);
  REQUIRE(e.weights.lambda1 == Approx(0.2));
  REQUIRE(e.weights.lambda2 == Approx(0.2));
  REQUIRE(e.window == 512);
  REQUIRE(e.hop == 160);
  REQUIRE(e.eval_split == "test");

  SECTION("rotation offsets are restricted to the rig") {
    cfg.set("train.output_pairs", "45,90");
    REQUIRE_THROWS_AS(experiment_from(cfg), Error);
  }
  SECTION("hop must leave window overlap") {
    cfg.set("dsp.hop", "400");
    REQUIRE_THROWS_AS(experiment_from(cfg), Error);
  }
  SECTION("mask task needs at least one output pair") {
    cfg.set("train.tasks", "semantic,s3r");
    cfg.set("train.output_pairs", "");
    REQUIRE_THROWS_AS(experiment_from(cfg), Error);
  }
}

TEST_CASE("scene assembly produces model-ready planes", "[train]") {
  const std::string& root = shared_dataset();
  Config cfg = tiny_run_config(root);
  DatasetView view(root, "train");
  ScenePayload payload = view.load(0);

  ExperimentConfig e = experiment_from(cfg);
  SceneExample ex = assemble_example(payload, e);
  size_t plane = size_t(ex.freq_bins) * size_t(ex.frames);
  REQUIRE(ex.branches == 2);
  REQUIRE(ex.freq_bins == 257);
  REQUIRE(ex.frames == 26);  // 0.25 s at 16 kHz, hop 160
  REQUIRE(ex.input.size() == 2 * plane);
  for (double v : ex.input) {
    REQUIRE(std::isfinite(v));
    REQUIRE(v >= 0.0);  // ln(1 + |S|)
  }
  REQUIRE(ex.labels.size() == 8 * 16);
  REQUIRE(ex.depth_norm.size() == 8 * 16);
  for (double v : ex.depth_norm) {
    REQUIRE(v > 0.0);
    REQUIRE(v <= 1.0);
  }
  REQUIRE(ex.ref_re.empty());  // mask task off
  REQUIRE(ex.s3r_target.empty());

  SECTION("mono duplicates the left channel into both branches") {
    Config mono_cfg = cfg;
    mono_cfg.set("train.input", "mono");
    SceneExample m = assemble_example(payload, experiment_from(mono_cfg));
    REQUIRE(m.branches == 2);
    REQUIRE(std::equal(m.input.begin(), m.input.begin() + long(plane),
                       m.input.begin() + long(plane)));
    // the stereo example's right branch carries different energy
    REQUIRE_FALSE(std::equal(ex.input.begin() + long(plane), ex.input.end(),
                             m.input.begin() + long(plane)));
    // both share the left branch: the per-scene gain ignores input mode
    REQUIRE(std::equal(ex.input.begin(), ex.input.begin() + long(plane), m.input.begin()));
  }

  SECTION("two-pair mode stacks four branches, front pair first") {
    Config p2 = cfg;
    p2.set("train.input", "pairs2");
    SceneExample s = assemble_example(payload, experiment_from(p2));
    REQUIRE(s.branches == 4);
    REQUIRE(s.input.size() == 4 * plane);
    REQUIRE(std::equal(ex.input.begin(), ex.input.end(), s.input.begin()));
  }

  SECTION("mask task fills reference and difference planes") {
    Config s3 = cfg;
    s3.set("train.tasks", "semantic,s3r");
    SceneExample s = assemble_example(payload, experiment_from(s3));
    REQUIRE(s.ref_re.size() == 2 * plane);
    REQUIRE(s.ref_im.size() == 2 * plane);
    REQUIRE(s.s3r_target.size() == 3 * 4 * plane);
  }
}

TEST_CASE("per-scene gain hits the target jointly and rejects silence", "[train]") {
  const std::string& root = shared_dataset();
  Config cfg = tiny_run_config(root);
  cfg.set("train.tasks", "semantic,s3r");
  ExperimentConfig e = experiment_from(cfg);
  DatasetView view(root, "train");
  ScenePayload payload = view.load(1);
  SceneExample ex = assemble_example(payload, e, /*keep_waves=*/true);

  // ref_waves (front pair) plus gt_waves (the three rotations) are all
  // eight rig channels; their joint rms is the normalization contract.
  double energy = 0.0;
  size_t n = 0;
  for (const auto* group : {&ex.ref_waves, &ex.gt_waves})
    for (const auto& w : *group) {
      for (double v : w.samples) energy += v * v;
      n += w.samples.size();
    }
  REQUIRE(n == 8u * payload.pairs[0].frames());
  REQUIRE(std::sqrt(energy / double(n)) == Approx(e.target_rms).epsilon(1e-9));

  // one gain for the whole scene: channel ratios survive
  auto rms = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s / double(v.size()));
  };
  double raw_ratio = rms(payload.pairs[0].channels[0]) / rms(payload.pairs[0].channels[1]);
  double cooked_ratio = rms(ex.ref_waves[0].samples) / rms(ex.ref_waves[1].samples);
  REQUIRE(cooked_ratio == Approx(raw_ratio).epsilon(1e-9));

  ScenePayload silent = payload;
  for (auto& pair : silent.pairs)
    for (auto& ch : pair.channels) std::fill(ch.begin(), ch.end(), 0.0);
  try {
    assemble_example(silent, e);
    FAIL("silent payload was accepted");
  } catch (const Error& err) {
    REQUIRE(err.code() == ErrorCode::SilentInput);
  }
}

TEST_CASE("difference-spectrogram targets reconstruct the rotated pair", "[train]") {
  const std::string& root = shared_dataset();
  Config cfg = tiny_run_config(root);
  cfg.set("train.tasks", "semantic,s3r");
  ExperimentConfig e = experiment_from(cfg);
  DatasetView view(root, "train");
  ScenePayload payload = view.load(2);
  SceneExample ex = assemble_example(payload, e, /*keep_waves=*/true);
  size_t plane = size_t(ex.freq_bins) * size_t(ex.frames);

  for (size_t slot : {size_t(0), size_t(5)}) {  // 90 deg left, 270 deg right
    Spectrogram diff;
    diff.freq_bins = ex.freq_bins;
    diff.frames = ex.frames;
    diff.window = e.window;
    diff.hop = e.hop;
    diff.sample_rate = ex.ref_waves[0].sample_rate;
    diff.bins.resize(plane);
    const double* re = ex.s3r_target.data() + slot * 2 * plane;
    const double* im = re + plane;
    for (size_t k = 0; k < plane; ++k) diff.bins[k] = {re[k], im[k]};

    // a perfect difference prediction must hand back the rotated channel
    Waveform rec = reconstruct_target(ex.ref_waves[slot % 2], diff);
    REQUIRE(snr_db(ex.gt_waves[slot].samples, rec.samples, size_t(e.window)) > 60.0);
  }
}

TEST_CASE("batch assembly stacks scenes and checks agreement", "[train]") {
  const std::string& root = shared_dataset();
  Config cfg = tiny_run_config(root);
  cfg.set("train.tasks", "semantic,depth,s3r");
  ExperimentConfig e = experiment_from(cfg);
  DatasetView view(root, "train");
  SceneExample a = assemble_example(view.load(0), e);
  SceneExample b = assemble_example(view.load(1), e);

  Batch batch = make_batch({a, b}, e, 8, 16);
  REQUIRE(batch.input.shape() == nn::Shape{2, 2, 257, 26});
  REQUIRE(batch.labels.size() == 2 * 8 * 16);
  REQUIRE(batch.depth_norm.shape() == nn::Shape{2, 1, 8, 16});
  REQUIRE(batch.ref_re.shape() == nn::Shape{2, 2, 257, 26});
  REQUIRE(batch.ref_im.shape() == nn::Shape{2, 2, 257, 26});
  REQUIRE(batch.s3r_target.shape() == nn::Shape{2, 12, 257, 26});

  SceneExample c = b;
  c.frames -= 1;
  REQUIRE_THROWS_AS(make_batch({a, c}, e, 8, 16), Error);
  REQUIRE_THROWS_AS(make_batch({}, e, 8, 16), Error);
}

TEST_CASE("loss terms combine with the documented weights", "[train]") {
  // Hand-built single-cell batch: every component value is exact.
  ExperimentConfig e;
  e.data_root = "unused";
  e.tasks = TaskSet{true, true, true};
  e.output_pairs = {90};
  e.far_depth = 50.0;

  Batch batch;
  batch.grid_h = batch.grid_w = 1;
  batch.labels = {0};
  batch.depth_norm = nn::Tensor<double>::from({1, 1, 1, 1}, {0.0});
  batch.ref_re = nn::Tensor<double>::from({1, 2, 1, 1}, {0.3, -0.7});
  batch.ref_im = nn::Tensor<double>::from({1, 2, 1, 1}, {0.1, 0.4});
  double t = std::sqrt(0.4);
  batch.s3r_target = nn::Tensor<double>::from({1, 4, 1, 1}, {t, t, t, t});

  ModelOutput<double> out;
  // two classes with p(true) = 1/e makes the cross entropy exactly 1
  out.semantic_logits =
      nn::Tensor<double>::from({1, 2, 1, 1}, {-std::log(std::exp(1.0) - 1.0), 0.0});
  out.depth = nn::Tensor<double>::from({1, 1, 1, 1}, {50.0 * std::sqrt(0.5)});
  out.s3r_masks = nn::Tensor<double>::from({1, 4, 1, 1}, {0.0, 0.0, 0.0, 0.0});

  LossParts parts = total_loss(out, batch, e);
  REQUIRE(parts.semantic == Approx(1.0).margin(1e-12));
  REQUIRE(parts.depth == Approx(0.5).margin(1e-12));
  REQUIRE(parts.s3r == Approx(0.4).margin(1e-12));
  REQUIRE(parts.value == Approx(1.18).margin(1e-9));
  REQUIRE(parts.value ==
          Approx(parts.semantic + 0.2 * parts.depth + 0.2 * parts.s3r).margin(1e-12));

  SECTION("zero weights leave the semantic term alone") {
    e.weights.lambda1 = e.weights.lambda2 = 0.0;
    LossParts bare = total_loss(out, batch, e);
    REQUIRE(bare.value == Approx(bare.semantic).margin(1e-12));
  }

  SECTION("matching predictions zero every term") {
    ModelOutput<double> ideal;
    ideal.semantic_logits = nn::Tensor<double>::from({1, 2, 1, 1}, {50.0, 0.0});
    ideal.depth = nn::Tensor<double>::from({1, 1, 1, 1}, {0.0});
    // mask times reference must equal the target; with ref = (1, 0)
    // the mask simply is the target
    batch.ref_re = nn::Tensor<double>::from({1, 2, 1, 1}, {1.0, 1.0});
    batch.ref_im = nn::Tensor<double>::from({1, 2, 1, 1}, {0.0, 0.0});
    ideal.s3r_masks = nn::Tensor<double>::from({1, 4, 1, 1}, {t, t, t, t});
    LossParts zero = total_loss(ideal, batch, e);
    REQUIRE(zero.depth == 0.0);
    REQUIRE(zero.s3r == Approx(0.0).margin(1e-12));
    REQUIRE(zero.value == Approx(0.0).margin(1e-9));
  }

  SECTION("enabled tasks demand their outputs and targets") {
    ModelOutput<double> missing = out;
    missing.depth = nn::Tensor<double>();
    try {
      total_loss(missing, batch, e);
      FAIL("missing depth output was accepted");
    } catch (const Error& err) {
      REQUIRE(err.code() == ErrorCode::MissingTarget);
    }
    Batch no_target = batch;
    no_target.s3r_target = nn::Tensor<double>();
    try {
      total_loss(out, no_target, e);
      FAIL("missing mask target was accepted");
    } catch (const Error& err) {
      REQUIRE(err.code() == ErrorCode::MissingTarget);
    }
  }
}

TEST_CASE("training smoke run writes every artifact", "[train]") {
  TempDir out;
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("train.epochs", "2");
  cfg.set("train.batch", "4");
  cfg.set("train.max_steps", "3");
  cfg.set("train.lr", "0.001");

  RunRecord rec = train(cfg, out.str());
  REQUIRE(rec.steps == 3);  // the cap lands mid-epoch
  REQUIRE(rec.train_loss.size() == 2);
  REQUIRE(rec.val_loss.size() == 2);
  REQUIRE_FALSE(rec.diverged);
  REQUIRE(rec.config_hash == cfg.hash());
  REQUIRE(rec.checkpoint == "epoch_1.ckpt");
  REQUIRE(fs::exists(out.path / "epoch_0.ckpt"));
  REQUIRE(fs::exists(out.path / "epoch_1.ckpt"));
  REQUIRE(rec.final_reports.semantic.mean_iou >= 0.0);

  std::ifstream jf(out.str() + "/run_record.json");
  REQUIRE(jf.good());
  nlohmann::json js = nlohmann::json::parse(jf);
  REQUIRE(js["config_hash"] == cfg.hash());
  REQUIRE(js["steps"] == 3);
  REQUIRE(js["train_loss"].size() == 2);
  REQUIRE(js["final"].contains("semantic"));
  REQUIRE(js.contains("wall_time_s"));

  std::ifstream sf(out.str() + "/loss.svg");
  std::string svg((std::istreambuf_iterator<char>(sf)), std::istreambuf_iterator<char>());
  REQUIRE(svg.find("<polyline") != std::string::npos);
}

TEST_CASE("zero learning rate leaves parameters at initialization", "[train]") {
  TempDir out;
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("train.epochs", "1");
  cfg.set("train.max_steps", "2");
  cfg.set("train.lr", "0");

  RunRecord rec = train(cfg, out.str());
  ModelConfig mcfg = model_config_from(cfg, 2, 3);
  PerceptionNet<double> loaded(mcfg), reference(mcfg);
  load_model(out.str() + "/" + rec.checkpoint, loaded);
  auto lp = loaded.parameters();
  auto rp = reference.parameters();
  REQUIRE(lp.size() == rp.size());
  for (size_t i = 0; i < lp.size(); ++i) {
    REQUIRE(lp[i]->name == rp[i]->name);
    const auto& lv = lp[i]->t.data();
    const auto& rv = rp[i]->t.data();
    REQUIRE(lv.size() == rv.size());
    for (size_t k = 0; k < lv.size(); ++k) {
      // checkpoints round through float32; so must the comparison
      REQUIRE(float(lv[k]) == float(rv[k]));
    }
  }
}

TEST_CASE("a small fixed set is memorized quickly", "[train]") {
  TempDir out;
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("train.epochs", "50");  // 8 scenes, batch 2: 200 steps
  cfg.set("train.lr", "0.002");

  RunRecord rec = train(cfg, out.str());
  REQUIRE(rec.steps == 200);
  REQUIRE(rec.train_loss.front() > 0.0);
  REQUIRE(rec.train_loss.back() < 0.25 * rec.train_loss.front());
}

TEST_CASE("identical configs reproduce the run record bit for bit", "[train]") {
  TempDir out1, out2;
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("train.tasks", "semantic,depth");
  cfg.set("train.epochs", "2");
  cfg.set("train.max_steps", "4");
  cfg.set("train.lr", "0.001");

  RunRecord a = train(cfg, out1.str());
  RunRecord b = train(cfg, out2.str());
  REQUIRE(a.to_json_obj(false).dump() == b.to_json_obj(false).dump());

  // the persisted records agree too, once wall time is dropped
  auto strip = [](const std::string& dir) {
    std::ifstream f(dir + "/run_record.json");
    nlohmann::json js = nlohmann::json::parse(f);
    js.erase("wall_time_s");
    return js.dump();
  };
  REQUIRE(strip(out1.str()) == strip(out2.str()));
}

TEST_CASE("semantic-only training leaves the other decoders untouched", "[train]") {
  TempDir out;
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("train.epochs", "1");
  cfg.set("train.max_steps", "2");
  cfg.set("train.lr", "0.01");

  RunRecord rec = train(cfg, out.str());
  ModelConfig mcfg = model_config_from(cfg, 2, 3);
  PerceptionNet<double> loaded(mcfg), reference(mcfg);
  load_model(out.str() + "/" + rec.checkpoint, loaded);
  auto lp = loaded.parameters();
  auto rp = reference.parameters();
  bool encoder_moved = false;
  for (size_t i = 0; i < lp.size(); ++i) {
    const std::string& name = lp[i]->name;
    const auto& lv = lp[i]->t.data();
    const auto& rv = rp[i]->t.data();
    if (name.rfind("dep.", 0) == 0 || name.rfind("s3r.", 0) == 0) {
      for (size_t k = 0; k < lv.size(); ++k) REQUIRE(float(lv[k]) == float(rv[k]));
    } else if (!std::equal(lv.begin(), lv.end(), rv.begin(),
                           [](double x, double y) { return float(x) == float(y); })) {
      encoder_moved = true;
    }
  }
  REQUIRE(encoder_moved);
}

TEST_CASE("evaluation is idempotent and honest about fresh models", "[train]") {
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("train.tasks", "semantic,depth,s3r");
  ExperimentConfig e = experiment_from(cfg);
  ModelConfig mcfg = model_config_from(cfg, 2, 3);
  PerceptionNet<double> net(mcfg);
  net.set_training(true);

  EvalReports r1 = evaluate(net, e, "test");
  EvalReports r2 = evaluate(net, e, "test");
  REQUIRE(to_json(r1).dump() == to_json(r2).dump());
  REQUIRE(net.training());  // mode restored

  // untrained semantics argmax to a single class: no overlap anywhere
  REQUIRE(r1.semantic.mean_iou <= 0.15);
  // untrained depth is exactly zero, so the relative error is exactly one
  REQUIRE(r1.depth.abs_rel == Approx(1.0).margin(1e-12));
  REQUIRE(r1.mean_depth_baseline.rmse < r1.depth.rmse);
  REQUIRE(r1.train_mean_depth > 0.0);

  // fresh masks are exactly zero, so reconstruction equals the reference
  REQUIRE(r1.s3r.mse_per_channel.size() == 6);
  for (size_t k = 0; k < 6; ++k) {
    REQUIRE(r1.s3r.mse_per_channel[k] ==
            Approx(r1.copy_reference_baseline.mse_per_channel[k]).margin(1e-12));
  }
}

TEST_CASE("non-finite losses persist a diverged record before failing", "[train]") {
  TempDir data, out;
  Config cfg = tiny_run_config(data.str() + "/data");
  cfg.set("data.scenes", "10");
  generate_dataset(cfg);
  cfg.set("train.tasks", "semantic,depth");
  cfg.set("train.epochs", "1");
  cfg.set("train.lr", "0.001");

  // poison every training depth raster so the very first batch is NaN
  DatasetView view(data.str() + "/data", "train");
  std::vector<float> bad(8 * 16, std::nanf(""));
  for (size_t i = 0; i < view.size(); ++i) {
    std::ofstream f(view.dir_of(i) + "/depth.f32", std::ios::binary);
    f.write(reinterpret_cast<const char*>(bad.data()), std::streamsize(bad.size() * 4));
  }

  try {
    train(cfg, out.str());
    FAIL("NaN loss did not abort the run");
  } catch (const Error& err) {
    REQUIRE(err.code() == ErrorCode::DivergedLoss);
  }
  std::ifstream jf(out.str() + "/run_record.json");
  REQUIRE(jf.good());
  nlohmann::json js = nlohmann::json::parse(jf);
  REQUIRE(js["diverged"] == true);
  REQUIRE(js["steps"] == 0);  // failed before the first completed step count
  REQUIRE(js["train_loss"].size() == 1);
  REQUIRE(js["train_loss"][0].is_null());  // NaN serializes as null
}

TEST_CASE("early stopping bookkeeping stays consistent", "[train]") {
  TempDir out;
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("train.epochs", "6");
  cfg.set("train.early_stop", "1");
  cfg.set("train.lr", "0.002");

  RunRecord rec = train(cfg, out.str());
  REQUIRE(rec.train_loss.size() == rec.val_loss.size());
  REQUIRE(rec.train_loss.size() <= 6);
  if (rec.val_loss.size() < 6) {
    // stopped early: the last epoch failed to improve on the best val loss
    double best = rec.val_loss[0];
    for (double v : rec.val_loss) best = std::min(best, v);
    REQUIRE(rec.val_loss.back() >= best);
  }
}

TEST_CASE("ablation grids run every cell and survive failures", "[train]") {
  TempDir out;
  Config cfg = tiny_run_config(shared_dataset());
  cfg.set("ablate.cells", "mono,pair0");
  cfg.set("ablate.seeds", "1");
  cfg.set("train.epochs", "1");
  cfg.set("train.max_steps", "1");
  cfg.set("train.lr", "0.001");

  AblationResult res = ablate(cfg, out.str());
  REQUIRE(res.rows.size() == 2);
  REQUIRE(res.medians.size() == 2);
  REQUIRE(res.medians[0].first == "mono");
  REQUIRE(res.medians[1].first == "pair0");
  REQUIRE(res.rows[0].config_hash != res.rows[1].config_hash);
  for (const auto& row : res.rows) REQUIRE_FALSE(row.failed);

  std::ifstream csv(out.str() + "/ablation.csv");
  std::string line;
  std::getline(csv, line);
  REQUIRE(line == "cell,seed,config_hash,miou,failed");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 2);
  REQUIRE(fs::exists(out.path / "ablation.txt"));
  REQUIRE(fs::exists(out.path / "ablation.svg"));

  SECTION("a cell that cannot run is recorded, not fatal") {
    TempDir out2;
    Config bad = cfg;
    bad.set("train.output_pairs", "");  // makes any +s cell invalid
    bad.set("ablate.cells", "pair0,pair0+s");
    AblationResult mixed = ablate(bad, out2.str());
    REQUIRE(mixed.rows.size() == 2);
    REQUIRE_FALSE(mixed.rows[0].failed);
    REQUIRE(mixed.rows[1].failed);
    REQUIRE_FALSE(mixed.rows[1].error.empty());
    REQUIRE(std::isnan(mixed.medians[1].second));
  }
}
