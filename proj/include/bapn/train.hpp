#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "bapn/checkpoint.hpp"
#include "bapn/config.hpp"
#include "bapn/dataset.hpp"
#include "bapn/dsp.hpp"
#include "bapn/error.hpp"
#include "bapn/labels.hpp"
#include "bapn/metrics.hpp"
#include "bapn/model.hpp"

namespace bapn {

struct LossWeights {
  double lambda1 = 0.2;  // depth
  double lambda2 = 0.2;  // rotated-pair masks
};

/// Which microphones feed the encoder. Mono duplicates the front-left
/// channel into both branches so the architecture (and parameter count)
/// stays comparable while interaural cues vanish.
enum class InputMode { mono, pair0, pair90, pair180, pair270, pairs2, pairs4 };

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "mono") return InputMode::mono;
  if (s == "pair0") return InputMode::pair0;
  if (s == "pair90") return InputMode::pair90;
  if (s == "pair180") return InputMode::pair180;
  if (s == "pair270") return InputMode::pair270;
  if (s == "pairs2") return InputMode::pairs2;
  if (s == "pairs4") return InputMode::pairs4;
  fail(ErrorCode::BadConfig, "unknown input mode '" + s + "'");
}

inline std::string input_mode_name(InputMode m) {
  switch (m) {
    case InputMode::mono: return "mono";
    case InputMode::pair0: return "pair0";
    case InputMode::pair90: return "pair90";
    case InputMode::pair180: return "pair180";
    case InputMode::pair270: return "pair270";
    case InputMode::pairs2: return "pairs2";
    case InputMode::pairs4: return "pairs4";
  }
  fail(ErrorCode::Internal, "unhandled input mode");
}

inline int branches_of(InputMode m) {
  switch (m) {
    case InputMode::pairs2: return 4;
    case InputMode::pairs4: return 8;
    default: return 2;
  }
}

/// Rig pair indices (0 -> 0 deg, 1 -> 90 deg, ...) this mode reads.
inline std::vector<int> pairs_used(InputMode m) {
  switch (m) {
    case InputMode::mono:
    case InputMode::pair0: return {0};
    case InputMode::pair90: return {1};
    case InputMode::pair180: return {2};
    case InputMode::pair270: return {3};
    case InputMode::pairs2: return {0, 1};
    case InputMode::pairs4: return {0, 1, 2, 3};
  }
  fail(ErrorCode::Internal, "unhandled input mode");
}

struct ExperimentConfig {
  TaskSet tasks;
  InputMode input = InputMode::pair0;
  std::vector<int> output_pairs = {90, 180, 270};  // rotation offsets for masks
  uint64_t seed = 1;
  int epochs = 10;
  double lr = 1e-5;
  int batch = 2;
  int early_stop = 0;  // epochs of val plateau before stopping; 0 disables
  int max_steps = 0;   // optimizer-step cap for smoke runs; 0 disables
  LossWeights weights;
  std::string data_root;
  std::string eval_split = "test";
  int window = 512;
  int hop = 160;
  double target_rms = 0.1;
  double far_depth = 50.0;

  void validate() const {
    require(!data_root.empty(), ErrorCode::BadConfig, "data.root is not set");
    require(tasks.count() > 0, ErrorCode::BadConfig, "no tasks enabled");
    require(!tasks.s3r || !output_pairs.empty(), ErrorCode::BadConfig,
            "mask task needs at least one output pair");
    for (int p : output_pairs)
      require(p == 90 || p == 180 || p == 270, ErrorCode::BadConfig,
              "output pairs must come from {90, 180, 270}");
    require(epochs >= 1, ErrorCode::BadConfig, "epochs must be >= 1");
    require(lr >= 0.0, ErrorCode::BadConfig, "lr must be nonnegative");
    require(batch >= 1, ErrorCode::BadConfig, "batch must be >= 1");
    require(weights.lambda1 >= 0.0 && weights.lambda2 >= 0.0, ErrorCode::BadConfig,
            "loss weights must be nonnegative");
    require(window > 0 && hop > 0 && hop <= window / 2, ErrorCode::BadConfig,
            "bad stft geometry");
    require(target_rms > 0.0, ErrorCode::BadConfig, "target rms must be positive");
    require(far_depth > 0.0, ErrorCode::BadConfig, "far_depth must be positive");
  }
};

inline ExperimentConfig experiment_from(const Config& cfg) {
  ExperimentConfig e;
  e.tasks = parse_tasks(cfg.get_list("train.tasks"));
  e.input = parse_input_mode(cfg.get("train.input"));
  e.output_pairs = cfg.get_int_list("train.output_pairs");
  e.seed = uint64_t(cfg.get_int("train.seed"));
  e.epochs = cfg.get_int("train.epochs");
  e.lr = cfg.get_double("train.lr");
  e.batch = cfg.get_int("train.batch");
  e.early_stop = cfg.get_int("train.early_stop");
  e.max_steps = cfg.get_int("train.max_steps");
  e.weights.lambda1 = cfg.get_double("train.lambda1");
  e.weights.lambda2 = cfg.get_double("train.lambda2");
  e.data_root = cfg.get("data.root");
  e.eval_split = cfg.get("eval.split");
  e.window = cfg.get_int("dsp.window");
  e.hop = cfg.get_int("dsp.hop");
  e.target_rms = cfg.get_double("dsp.target_rms");
  e.far_depth = cfg.get_double("data.far_depth");
  e.validate();
  return e;
}

/// One scene, converted to model-ready buffers. All audio shares a single
/// per-scene gain computed over the whole 8-channel clip, so interaural
/// and inter-pair level cues survive normalization.
struct SceneExample {
  int branches = 0, freq_bins = 0, frames = 0;
  std::vector<double> input;       // branches * freq_bins * frames, ln(1+|S|)
  std::vector<int> labels;         // grid cells, training ids
  std::vector<double> depth_norm;  // grid cells, meters / far_depth
  // Mask-task buffers (empty when the task is off):
  std::vector<double> ref_re, ref_im;  // 2 * bins * frames, front pair L then R
  std::vector<double> s3r_target;      // pairs * 4 * bins * frames, diff specs
  // Waveforms for reconstruction-level evaluation (filled on demand):
  std::vector<Waveform> ref_waves;  // L, R of the front pair, normalized
  std::vector<Waveform> gt_waves;   // per output pair: L, R, normalized
};

namespace detail {

inline double clip_gain(const ScenePayload& p, double target_rms) {
  double energy = 0.0;
  size_t n = 0;
  for (const auto& pair : p.pairs)
    for (const auto& ch : pair.channels) {
      for (double v : ch) energy += v * v;
      n += ch.size();
    }
  double r = n ? std::sqrt(energy / double(n)) : 0.0;
  require(r >= kSilenceFloor, ErrorCode::SilentInput, "clip is silent");
  return target_rms / r;
}

inline Waveform scaled_wave(const std::vector<double>& ch, double sr, double gain) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(ch.size());
  for (size_t i = 0; i < ch.size(); ++i) w.samples[i] = ch[i] * gain;
  return w;
}

inline void append_log_magnitude(std::vector<double>& dst, const Spectrogram& s) {
  std::vector<double> lm = log_magnitude(s);
  dst.insert(dst.end(), lm.begin(), lm.end());
}

}  // namespace detail

inline SceneExample assemble_example(const ScenePayload& p, const ExperimentConfig& cfg,
                                     bool keep_waves = false) {
  SceneExample ex;
  double gain = detail::clip_gain(p, cfg.target_rms);
  double sr = p.pairs[0].sample_rate;

  std::vector<int> mics = pairs_used(cfg.input);
  ex.branches = branches_of(cfg.input);
  for (int mic : mics) {
    for (int ch = 0; ch < 2; ++ch) {
      int src_ch = cfg.input == InputMode::mono ? 0 : ch;
      Waveform w = detail::scaled_wave(p.pairs[size_t(mic)].channels[size_t(src_ch)], sr, gain);
      Spectrogram s = stft(w, cfg.window, cfg.hop);
      if (ex.freq_bins == 0) {
        ex.freq_bins = s.freq_bins;
        ex.frames = s.frames;
      }
      detail::append_log_magnitude(ex.input, s);
    }
  }

  ex.labels.assign(p.labels.cells.begin(), p.labels.cells.end());
  ex.depth_norm.resize(p.depth.cells.size());
  for (size_t i = 0; i < p.depth.cells.size(); ++i)
    ex.depth_norm[i] = p.depth.cells[i] / cfg.far_depth;

  if (cfg.tasks.s3r) {
    static const int kOrientIndex[4] = {0, 90, 180, 270};
    std::array<Spectrogram, 2> ref;
    for (int ch = 0; ch < 2; ++ch) {
      Waveform w = detail::scaled_wave(p.pairs[0].channels[size_t(ch)], sr, gain);
      ref[size_t(ch)] = stft(w, cfg.window, cfg.hop);
      for (const auto& b : ref[size_t(ch)].bins) ex.ref_re.push_back(b.real());
      for (const auto& b : ref[size_t(ch)].bins) ex.ref_im.push_back(b.imag());
      if (keep_waves) ex.ref_waves.push_back(w);
    }
    for (int alpha : cfg.output_pairs) {
      int idx = -1;
      for (int k = 0; k < 4; ++k)
        if (kOrientIndex[k] == alpha) idx = k;
      require(idx >= 0, ErrorCode::BadConfig, "bad output pair");
      for (int ch = 0; ch < 2; ++ch) {
        Waveform w = detail::scaled_wave(p.pairs[size_t(idx)].channels[size_t(ch)], sr, gain);
        Spectrogram s = stft(w, cfg.window, cfg.hop);
        // Target is the difference signal's spectrogram: reference minus
        // the rotated pair, stored as a real then an imaginary plane.
        const Spectrogram& r = ref[size_t(ch)];
        for (size_t k = 0; k < s.bins.size(); ++k)
          ex.s3r_target.push_back(r.bins[k].real() - s.bins[k].real());
        for (size_t k = 0; k < s.bins.size(); ++k)
          ex.s3r_target.push_back(r.bins[k].imag() - s.bins[k].imag());
        if (keep_waves) ex.gt_waves.push_back(w);
      }
    }
  }
  return ex;
}

/// A training batch as tensors. Reference spectra and targets are
/// constants; only the model parameters require gradients.
struct Batch {
  nn::Tensor<double> input;       // [N, B, Fb, Tf]
  std::vector<int> labels;        // N * H * W
  nn::Tensor<double> depth_norm;  // [N, 1, H, W]
  nn::Tensor<double> ref_re, ref_im;  // [N, 2, Fb, Tf]
  nn::Tensor<double> s3r_target;      // [N, P*4, Fb, Tf]
  int grid_h = 0, grid_w = 0;
};

inline Batch make_batch(const std::vector<SceneExample>& exs, const ExperimentConfig& cfg,
                        int grid_h, int grid_w) {
  require(!exs.empty(), ErrorCode::BadConfig, "empty batch");
  int n = int(exs.size());
  int b = exs[0].branches, fb = exs[0].freq_bins, tf = exs[0].frames;
  Batch out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  std::vector<double> input, depth, rre, rim, tgt;
  for (const auto& ex : exs) {
    require(ex.branches == b && ex.freq_bins == fb && ex.frames == tf,
            ErrorCode::ShapeMismatch, "examples disagree in shape");
    input.insert(input.end(), ex.input.begin(), ex.input.end());
    out.labels.insert(out.labels.end(), ex.labels.begin(), ex.labels.end());
    depth.insert(depth.end(), ex.depth_norm.begin(), ex.depth_norm.end());
    rre.insert(rre.end(), ex.ref_re.begin(), ex.ref_re.end());
    rim.insert(rim.end(), ex.ref_im.begin(), ex.ref_im.end());
    tgt.insert(tgt.end(), ex.s3r_target.begin(), ex.s3r_target.end());
  }
  out.input = nn::Tensor<double>::from({n, b, fb, tf}, std::move(input));
  out.depth_norm = nn::Tensor<double>::from({n, 1, grid_h, grid_w}, std::move(depth));
  if (cfg.tasks.s3r) {
    int p4 = int(cfg.output_pairs.size()) * 4;
    out.ref_re = nn::Tensor<double>::from({n, 2, fb, tf}, std::move(rre));
    out.ref_im = nn::Tensor<double>::from({n, 2, fb, tf}, std::move(rim));
    out.s3r_target = nn::Tensor<double>::from({n, p4, fb, tf}, std::move(tgt));
  }
  return out;
}

struct LossParts {
  nn::Tensor<double> total;
  double semantic = 0.0, depth = 0.0, s3r = 0.0;
  double value = 0.0;
};

/// Masked reference spectra vs difference-signal targets, one mse per
/// mask plane; planes share a size so the plane mean equals the full mean.
inline nn::Tensor<double> s3r_plane_loss(nn::Tensor<double> masks, const Batch& batch,
                                         const ExperimentConfig& cfg) {
  int planes = int(cfg.output_pairs.size()) * 4;
  nn::Tensor<double> acc;
  for (int pair = 0; pair < int(cfg.output_pairs.size()); ++pair) {
    for (int ch = 0; ch < 2; ++ch) {
      int mre = pair * 4 + ch * 2, mim = mre + 1;
      auto m_re = nn::slice(masks, 1, mre, mre + 1);
      auto m_im = nn::slice(masks, 1, mim, mim + 1);
      auto x_re = nn::slice(batch.ref_re, 1, ch, ch + 1);
      auto x_im = nn::slice(batch.ref_im, 1, ch, ch + 1);
      // Complex product (m_re + i m_im)(x_re + i x_im), plane by plane.
      auto p_re = nn::sub(nn::mul(m_re, x_re), nn::mul(m_im, x_im));
      auto p_im = nn::add(nn::mul(m_re, x_im), nn::mul(m_im, x_re));
      auto t_re = nn::slice(batch.s3r_target, 1, mre, mre + 1);
      auto t_im = nn::slice(batch.s3r_target, 1, mim, mim + 1);
      auto term = nn::add(nn::mse(p_re, t_re), nn::mse(p_im, t_im));
      acc = acc.defined() ? nn::add(acc, term) : term;
    }
  }
  return nn::scale(acc, 1.0 / double(planes));
}

inline LossParts total_loss(const ModelOutput<double>& out, const Batch& batch,
                            const ExperimentConfig& cfg) {
  LossParts parts;
  if (cfg.tasks.semantic) {
    require(out.semantic_logits.defined(), ErrorCode::MissingTarget,
            "semantic task enabled but no logits produced");
    require(!batch.labels.empty(), ErrorCode::MissingTarget, "no semantic labels in batch");
    auto ce = nn::cross_entropy(out.semantic_logits, batch.labels);
    parts.semantic = ce.item();
    parts.total = ce;
  }
  if (cfg.tasks.depth) {
    require(out.depth.defined(), ErrorCode::MissingTarget,
            "depth task enabled but no prediction produced");
    require(batch.depth_norm.defined(), ErrorCode::MissingTarget, "no depth target in batch");
    auto dl = nn::mse(nn::scale(out.depth, 1.0 / cfg.far_depth), batch.depth_norm);
    parts.depth = dl.item();
    auto weighted = nn::scale(dl, cfg.weights.lambda1);
    parts.total = parts.total.defined() ? nn::add(parts.total, weighted) : weighted;
  }
  if (cfg.tasks.s3r) {
    require(out.s3r_masks.defined(), ErrorCode::MissingTarget,
            "mask task enabled but no masks produced");
    require(batch.s3r_target.defined(), ErrorCode::MissingTarget, "no mask targets in batch");
    auto sl = s3r_plane_loss(out.s3r_masks, batch, cfg);
    parts.s3r = sl.item();
    auto weighted = nn::scale(sl, cfg.weights.lambda2);
    parts.total = parts.total.defined() ? nn::add(parts.total, weighted) : weighted;
  }
  require(parts.total.defined(), ErrorCode::BadConfig, "no loss terms enabled");
  parts.value = parts.total.item();
  return parts;
}

struct EvalReports {
  SemanticReport semantic;
  DepthReport depth;
  S3RReport s3r;
  DepthReport mean_depth_baseline;
  S3RReport copy_reference_baseline;
  double train_mean_depth = 0.0;
};

inline nlohmann::json to_json(const EvalReports& r) {
  nlohmann::json js;
  js["semantic"] = to_json(r.semantic, native_class_table());
  js["depth"] = to_json(r.depth);
  js["s3r"] = to_json(r.s3r);
  js["baselines"] = {{"mean_depth", to_json(r.mean_depth_baseline)},
                     {"copy_reference", to_json(r.copy_reference_baseline)},
                     {"train_mean_depth", r.train_mean_depth}};
  return js;
}

/// Mean over every ground-truth depth cell of the training split: the
/// closed-form constant predictor the depth task must beat.
inline double train_mean_depth(const std::string& root) {
  DatasetView train(root, "train");
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < train.size(); ++i) {
    std::string dir = train.dir_of(i);
    LabelGrid labels = read_pgm(dir + "/labels.pgm");
    DepthGrid depth = read_depth_raster(dir + "/depth.f32", labels.h, labels.w);
    for (double v : depth.cells) sum += v;
    n += depth.cells.size();
  }
  require(n > 0, ErrorCode::DataMissing, "empty training split");
  return sum / double(n);
}

inline EvalReports evaluate(PerceptionNet<double>& net, const ExperimentConfig& cfg,
                            const std::string& split) {
  bool was_training = net.training();
  net.set_training(false);
  DatasetView view(cfg.data_root, split);
  require(view.size() > 0, ErrorCode::DataMissing, "empty split '" + split + "'");

  std::vector<LabelGrid> pred_labels, gt_labels;
  std::vector<DepthGrid> pred_depth, gt_depth, const_depth;
  int planes = int(cfg.output_pairs.size()) * 2;
  std::vector<std::vector<Waveform>> slot_pred(static_cast<size_t>(planes));
  std::vector<std::vector<Waveform>> slot_gt(static_cast<size_t>(planes));
  std::vector<std::vector<Waveform>> slot_copy(static_cast<size_t>(planes));

  double mean_depth = train_mean_depth(cfg.data_root);

  for (size_t i = 0; i < view.size(); ++i) {
    ScenePayload payload = view.load(i);
    SceneExample ex = assemble_example(payload, cfg, /*keep_waves=*/cfg.tasks.s3r);
    Batch batch = make_batch({ex}, cfg, payload.labels.h, payload.labels.w);
    ModelOutput<double> out = net.forward(batch.input, cfg.tasks);

    if (cfg.tasks.semantic) {
      const auto& logits = out.semantic_logits;
      int k = logits.shape()[1], cells = payload.labels.h * payload.labels.w;
      LabelGrid pred{payload.labels.h, payload.labels.w,
                     std::vector<uint8_t>(size_t(cells), 0)};
      for (int c = 0; c < cells; ++c) {
        int best = 0;
        double best_v = logits.data()[size_t(c)];
        for (int cls = 1; cls < k; ++cls) {
          double v = logits.data()[size_t(cls) * cells + size_t(c)];
          if (v > best_v) {
            best_v = v;
            best = cls;
          }
        }
        pred.cells[size_t(c)] = uint8_t(best);
      }
      pred_labels.push_back(std::move(pred));
      gt_labels.push_back(payload.labels);
    }
    if (cfg.tasks.depth) {
      pred_depth.push_back(
          DepthGrid{payload.depth.h, payload.depth.w, out.depth.data()});
      gt_depth.push_back(payload.depth);
      const_depth.push_back(DepthGrid{
          payload.depth.h, payload.depth.w,
          std::vector<double>(payload.depth.cells.size(), mean_depth)});
    }
    if (cfg.tasks.s3r) {
      const auto& masks = out.s3r_masks;
      size_t plane = size_t(ex.freq_bins) * size_t(ex.frames);
      for (int pair = 0; pair < int(cfg.output_pairs.size()); ++pair) {
        for (int ch = 0; ch < 2; ++ch) {
          // Rebuild the predicted difference spectrogram, invert it, and
          // subtract from the reference to reconstruct the rotated pair.
          Spectrogram ref;
          ref.freq_bins = ex.freq_bins;
          ref.frames = ex.frames;
          ref.window = cfg.window;
          ref.hop = cfg.hop;
          ref.sample_rate = ex.ref_waves[size_t(ch)].sample_rate;
          ref.bins.resize(plane);
          Spectrogram diff = ref;
          const double* mre = masks.data().data() + size_t(pair * 4 + ch * 2) * plane;
          const double* mim = mre + plane;
          const double* xre = ex.ref_re.data() + size_t(ch) * plane;
          const double* xim = ex.ref_im.data() + size_t(ch) * plane;
          for (size_t k = 0; k < plane; ++k) {
            diff.bins[k] = {mre[k] * xre[k] - mim[k] * xim[k],
                            mre[k] * xim[k] + mim[k] * xre[k]};
          }
          Waveform rec = reconstruct_target(ex.ref_waves[size_t(ch)], diff);
          size_t slot = size_t(pair * 2 + ch);
          slot_pred[slot].push_back(std::move(rec));
          slot_gt[slot].push_back(ex.gt_waves[slot]);
          slot_copy[slot].push_back(ex.ref_waves[size_t(ch)]);
        }
      }
    }
  }

  EvalReports rep;
  rep.train_mean_depth = mean_depth;
  if (cfg.tasks.semantic) rep.semantic = miou(pred_labels, gt_labels, {1, 2, 3});
  if (cfg.tasks.depth) {
    rep.depth = depth_metrics(pred_depth, gt_depth, cfg.far_depth);
    rep.mean_depth_baseline = depth_metrics(const_depth, gt_depth, cfg.far_depth);
  }
  if (cfg.tasks.s3r) {
    for (int slot = 0; slot < planes; ++slot) {
      S3RReport per = s3r_metrics(slot_pred[size_t(slot)], slot_gt[size_t(slot)], cfg.window,
                                  cfg.hop);
      S3RReport cp = s3r_metrics(slot_copy[size_t(slot)], slot_gt[size_t(slot)], cfg.window,
                                 cfg.hop);
      double pm = 0.0, pe = 0.0, cm = 0.0, ce = 0.0;
      for (double v : per.mse_per_channel) pm += v;
      for (double v : per.env_per_channel) pe += v;
      for (double v : cp.mse_per_channel) cm += v;
      for (double v : cp.env_per_channel) ce += v;
      size_t cnt = per.mse_per_channel.size();
      rep.s3r.mse_per_channel.push_back(pm / double(cnt));
      rep.s3r.env_per_channel.push_back(pe / double(cnt));
      rep.copy_reference_baseline.mse_per_channel.push_back(cm / double(cnt));
      rep.copy_reference_baseline.env_per_channel.push_back(ce / double(cnt));
    }
  }
  net.set_training(was_training);
  return rep;
}

struct RunRecord {
  std::string config_hash;
  std::vector<double> train_loss;  // one entry per epoch
  std::vector<double> val_loss;
  EvalReports final_reports;
  TaskSet tasks;
  double wall_time_s = 0.0;
  std::string checkpoint;
  bool diverged = false;
  int steps = 0;

  nlohmann::json to_json_obj(bool include_wall_time = true) const {
    nlohmann::json js;
    js["config_hash"] = config_hash;
    js["train_loss"] = train_loss;
    js["val_loss"] = val_loss;
    js["diverged"] = diverged;
    js["steps"] = steps;
    js["checkpoint"] = checkpoint;
    nlohmann::json fin;
    if (tasks.semantic) fin["semantic"] = to_json(final_reports.semantic, native_class_table());
    if (tasks.depth) {
      fin["depth"] = to_json(final_reports.depth);
      fin["mean_depth_baseline"] = to_json(final_reports.mean_depth_baseline);
    }
    if (tasks.s3r) {
      fin["s3r"] = to_json(final_reports.s3r);
      fin["copy_reference_baseline"] = to_json(final_reports.copy_reference_baseline);
    }
    js["final"] = fin;
    if (include_wall_time) js["wall_time_s"] = wall_time_s;
    return js;
  }
};

namespace detail {

template <typename T>
void shuffle_indices(std::vector<T>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[size_t(rng.uniform_int(0, int(i) - 1))]);
}

inline void write_loss_plot(const std::string& path, const std::vector<double>& train,
                            const std::vector<double>& val) {
  if (train.empty()) return;
  double lo = train[0], hi = train[0];
  for (double v : train) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : val) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;
  const int w = 480, h = 280, m = 40;
  auto xmap = [&](size_t i, size_t n) {
    return m + double(w - 2 * m) * (n > 1 ? double(i) / double(n - 1) : 0.5);
  };
  auto ymap = [&](double v) { return h - m - double(h - 2 * m) * (v - lo) / (hi - lo); };
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  os << "<rect width='" << w << "' height='" << h << "' fill='white'/>\n";
  os << "<text x='" << m << "' y='20' font-size='12'>loss per epoch (solid train";
  if (!val.empty()) os << ", dashed val";
  os << ")</text>\n";
  auto poly = [&](const std::vector<double>& ys, const char* dash) {
    if (ys.empty()) return;
    os << "<polyline fill='none' stroke='black' stroke-width='1.5'" << dash << " points='";
    for (size_t i = 0; i < ys.size(); ++i)
      os << xmap(i, ys.size()) << ',' << ymap(ys[i]) << ' ';
    os << "'/>\n";
  };
  poly(train, "");
  poly(val, " stroke-dasharray='6,4'");
  os << "<text x='4' y='" << ymap(hi) + 4 << "' font-size='10'>" << hi << "</text>\n";
  os << "<text x='4' y='" << ymap(lo) + 4 << "' font-size='10'>" << lo << "</text>\n";
  os << "</svg>\n";
  std::ofstream f(path);
  if (f.good()) f << os.str();
}

}  // namespace detail

/// Full training run: deterministic given the config, checkpoints every
/// epoch under out_dir, and a final evaluation on the configured split.
inline RunRecord train(const Config& cfg, const std::string& out_dir,
                       std::ostream* log = nullptr) {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig ecfg = experiment_from(cfg);
  std::filesystem::create_directories(out_dir);

  DatasetView train_view(ecfg.data_root, "train");
  require(train_view.size() > 0, ErrorCode::DataMissing, "empty training split");
  bool have_val = true;
  size_t val_size = 0;
  try {
    DatasetView v(ecfg.data_root, "val");
    val_size = v.size();
  } catch (const Error&) {
    have_val = false;
  }
  have_val = have_val && val_size > 0;

  int pairs = int(std::max<std::size_t>(ecfg.output_pairs.size(), 1));
  ModelConfig mcfg = model_config_from(cfg, branches_of(ecfg.input), pairs);
  PerceptionNet<double> net(mcfg);
  net.set_training(true);
  auto params = net.parameters();
  nn::AdamConfig adam;
  adam.lr = ecfg.lr;

  RunRecord rec;
  rec.config_hash = cfg.hash();
  rec.tasks = ecfg.tasks;

  Rng order_rng(mix_seed(ecfg.seed, 0x0BDEull));
  std::vector<size_t> order(train_view.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto run_epoch_eval = [&](const std::string& split) {
    DatasetView view(ecfg.data_root, split);
    net.set_training(false);
    double sum = 0.0;
    int batches = 0;
    for (size_t i = 0; i < view.size(); i += size_t(ecfg.batch)) {
      std::vector<SceneExample> exs;
      int h = 0, w = 0;
      for (size_t j = i; j < std::min(view.size(), i + size_t(ecfg.batch)); ++j) {
        ScenePayload p = view.load(j);
        h = p.labels.h;
        w = p.labels.w;
        exs.push_back(assemble_example(p, ecfg));
      }
      Batch batch = make_batch(exs, ecfg, h, w);
      ModelOutput<double> out = net.forward(batch.input, ecfg.tasks);
      sum += total_loss(out, batch, ecfg).value;
      ++batches;
    }
    net.set_training(true);
    return sum / std::max(batches, 1);
  };

  int steps = 0;
  bool stop = false;
  double best_val = std::numeric_limits<double>::infinity();
  int plateau = 0;
  std::string last_ckpt;
  for (int epoch = 0; epoch < ecfg.epochs && !stop; ++epoch) {
    detail::shuffle_indices(order, order_rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t i = 0; i < order.size() && !stop; i += size_t(ecfg.batch)) {
      std::vector<SceneExample> exs;
      int h = 0, w = 0;
      for (size_t j = i; j < std::min(order.size(), i + size_t(ecfg.batch)); ++j) {
        ScenePayload p = train_view.load(order[j]);
        h = p.labels.h;
        w = p.labels.w;
        exs.push_back(assemble_example(p, ecfg));
      }
      Batch batch = make_batch(exs, ecfg, h, w);
      ModelOutput<double> out = net.forward(batch.input, ecfg.tasks);
      LossParts parts = total_loss(out, batch, ecfg);
      if (!std::isfinite(parts.value)) {
        rec.diverged = true;
        rec.train_loss.push_back(parts.value);
        std::ofstream(out_dir + "/run_record.json") << rec.to_json_obj().dump(2) << '\n';
        fail(ErrorCode::DivergedLoss, "loss is not finite at step " + std::to_string(steps));
      }
      parts.total.backward();
      for (auto* p : params) {
        p->t.grad();  // decoders outside this task set get explicit zeros
        nn::adam_step(*p, adam);
      }
      epoch_loss += parts.value;
      ++batches;
      ++steps;
      if (ecfg.max_steps > 0 && steps >= ecfg.max_steps) stop = true;
    }
    rec.train_loss.push_back(epoch_loss / std::max(batches, 1));
    if (have_val) rec.val_loss.push_back(run_epoch_eval("val"));
    if (log) {
      *log << "epoch " << epoch << " train_loss " << rec.train_loss.back();
      if (have_val) *log << " val_loss " << rec.val_loss.back();
      *log << std::endl;  // flushed so redirected logs show progress live
    }
    // recorded relative to out_dir so identical configs yield identical
    // records no matter where the run lands
    last_ckpt = "epoch_" + std::to_string(epoch) + ".ckpt";
    save_model(out_dir + "/" + last_ckpt, net);
    if (have_val && ecfg.early_stop > 0) {
      if (rec.val_loss.back() < best_val - 1e-12) {
        best_val = rec.val_loss.back();
        plateau = 0;
      } else if (++plateau >= ecfg.early_stop) {
        stop = true;
      }
    }
  }
  rec.steps = steps;
  rec.checkpoint = last_ckpt;

  rec.final_reports = evaluate(net, ecfg, ecfg.eval_split);
  auto t1 = std::chrono::steady_clock::now();
  rec.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
  std::ofstream(out_dir + "/run_record.json") << rec.to_json_obj().dump(2) << '\n';
  detail::write_loss_plot(out_dir + "/loss.svg", rec.train_loss, rec.val_loss);
  return rec;
}

/// One ablation cell: an input mode plus an optional task-combination
/// suffix, e.g. "pair0", "mono", "pairs2+sd" (d adds depth, s adds masks).
struct AblationCell {
  std::string name;
  InputMode input;
  TaskSet tasks{true, false, false};
};

inline AblationCell parse_cell(const std::string& s) {
  AblationCell cell;
  cell.name = s;
  std::string input = s, suffix;
  size_t plus = s.find('+');
  if (plus != std::string::npos) {
    input = s.substr(0, plus);
    suffix = s.substr(plus + 1);
  }
  cell.input = parse_input_mode(input);
  for (char c : suffix) {
    if (c == 'd')
      cell.tasks.depth = true;
    else if (c == 's')
      cell.tasks.s3r = true;
    else
      fail(ErrorCode::BadConfig, "unknown task suffix '" + std::string(1, c) + "' in cell " + s);
  }
  return cell;
}

struct AblationRow {
  std::string cell;
  uint64_t seed = 0;
  std::string config_hash;
  double miou = 0.0;
  bool failed = false;
  std::string error;
};

struct AblationResult {
  std::vector<AblationRow> rows;                  // one per (cell, seed)
  std::vector<std::pair<std::string, double>> medians;  // per cell, input order
};

/// Run every (cell, seed) pair sequentially and report the median mIoU per
/// cell. Individual cell failures are recorded, not fatal.
inline AblationResult ablate(const Config& base, const std::string& out_dir,
                             std::ostream* log = nullptr) {
  std::vector<std::string> cells = base.get_list("ablate.cells");
  std::vector<int> seeds = base.get_int_list("ablate.seeds");
  require(!cells.empty(), ErrorCode::BadConfig, "ablate.cells is empty");
  require(!seeds.empty(), ErrorCode::BadConfig, "ablate.seeds is empty");

  AblationResult result;
  for (const auto& cell_name : cells) {
    AblationCell cell = parse_cell(cell_name);
    std::vector<double> scores;
    for (int seed : seeds) {
      Config cfg = base;
      cfg.set("train.input", input_mode_name(cell.input));
      cfg.set("train.seed", std::to_string(seed));
      std::string tasks = "semantic";
      if (cell.tasks.depth) tasks += ",depth";
      if (cell.tasks.s3r) tasks += ",s3r";
      cfg.set("train.tasks", tasks);
      AblationRow row;
      row.cell = cell_name;
      row.seed = uint64_t(seed);
      row.config_hash = cfg.hash();
      std::string cell_dir = out_dir + "/" + cell_name + "_seed" + std::to_string(seed);
      try {
        RunRecord rec = train(cfg, cell_dir, log);
        row.miou = rec.final_reports.semantic.mean_iou;
        scores.push_back(row.miou);
      } catch (const Error& e) {
        row.failed = true;
        row.error = e.what();
      }
      if (log) {
        *log << "cell " << cell_name << " seed " << seed << " "
             << (row.failed ? "failed: " + row.error : "miou " + std::to_string(row.miou))
             << std::endl;
      }
      result.rows.push_back(std::move(row));
    }
    std::sort(scores.begin(), scores.end());
    double median = scores.empty() ? std::nan("") : scores[scores.size() / 2];
    if (!scores.empty() && scores.size() % 2 == 0)
      median = 0.5 * (scores[scores.size() / 2 - 1] + scores[scores.size() / 2]);
    result.medians.emplace_back(cell_name, median);
  }

  // Persist: CSV of raw rows (sorted by config hash for a stable merge
  // order) plus an aligned text table of medians.
  std::vector<AblationRow> sorted = result.rows;
  std::sort(sorted.begin(), sorted.end(),
            [](const AblationRow& a, const AblationRow& b) { return a.config_hash < b.config_hash; });
  std::ofstream csv(out_dir + "/ablation.csv");
  csv << "cell,seed,config_hash,miou,failed\n";
  for (const auto& r : sorted)
    csv << r.cell << ',' << r.seed << ',' << r.config_hash << ',' << r.miou << ','
        << (r.failed ? 1 : 0) << '\n';
  std::ofstream txt(out_dir + "/ablation.txt");
  txt << "cell          median_miou\n";
  for (const auto& [name, med] : result.medians) {
    txt << name;
    for (size_t i = name.size(); i < 14; ++i) txt << ' ';
    txt << med << '\n';
  }

  // Bar chart of medians.
  std::ostringstream svg;
  int w = 80 * int(result.medians.size()) + 80, h = 240;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  svg << "<rect width='" << w << "' height='" << h << "' fill='white'/>\n";
  for (size_t i = 0; i < result.medians.size(); ++i) {
    double v = result.medians[i].second;
    if (!std::isfinite(v)) v = 0.0;
    double bh = std::clamp(v, 0.0, 1.0) * (h - 80);
    double x = 40 + 80.0 * double(i);
    svg << "<rect x='" << x << "' y='" << (h - 40 - bh) << "' width='48' height='" << bh
        << "' fill='steelblue'/>\n";
    svg << "<text x='" << x << "' y='" << (h - 24) << "' font-size='11'>"
        << result.medians[i].first << "</text>\n";
    svg << "<text x='" << x << "' y='" << (h - 44 - bh) << "' font-size='10'>"
        << detail::fixed3(result.medians[i].second) << "</text>\n";
  }
  svg << "</svg>\n";
  std::ofstream(out_dir + "/ablation.svg") << svg.str();
  return result;
}

}  // namespace bapn
