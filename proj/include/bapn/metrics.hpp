#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bapn/dsp.hpp"
#include "bapn/error.hpp"
#include "bapn/labels.hpp"
#include "bapn/scene.hpp"

namespace bapn::detail {

inline std::string class_label(const ClassTable& table, int cls) {
  auto it = table.names.find(cls);
  return it == table.names.end() ? "class" + std::to_string(cls) : it->second;
}

}  // namespace bapn::detail

namespace bapn {

struct SemanticReport {
  std::map<int, double> per_class_iou;  // only classes present somewhere
  double mean_iou = 0.0;
};

struct DepthReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double mse = 0.0;  // on depths normalized by far_depth
};

struct S3RReport {
  std::vector<double> mse_per_channel;
  std::vector<double> env_per_channel;

  double mean_mse() const {
    double s = 0.0;
    for (double v : mse_per_channel) s += v;
    return mse_per_channel.empty() ? 0.0 : s / double(mse_per_channel.size());
  }
  double mean_env() const {
    double s = 0.0;
    for (double v : env_per_channel) s += v;
    return env_per_channel.empty() ? 0.0 : s / double(env_per_channel.size());
  }
};

/// Intersection-over-union accumulated over the whole set: one confusion
/// count per class, not per-grid averages. Classes that never occur in
/// either prediction or truth are left out of the mean.
inline SemanticReport miou(const std::vector<LabelGrid>& pred, const std::vector<LabelGrid>& gt,
                           const std::vector<int>& target_classes) {
  require(pred.size() == gt.size(), ErrorCode::ShapeMismatch,
          "prediction and truth sets differ in size");
  std::map<int, uint64_t> tp, fp, fn;
  for (size_t i = 0; i < pred.size(); ++i) {
    const LabelGrid& p = pred[i];
    const LabelGrid& g = gt[i];
    require(p.h == g.h && p.w == g.w, ErrorCode::ShapeMismatch,
            "prediction and truth grids differ in shape");
    for (size_t c = 0; c < p.cells.size(); ++c) {
      int pc = p.cells[c], gc = g.cells[c];
      if (pc == gc)
        ++tp[pc];
      else {
        ++fp[pc];
        ++fn[gc];
      }
    }
  }
  SemanticReport rep;
  double sum = 0.0;
  int counted = 0;
  for (int cls : target_classes) {
    uint64_t t = tp.count(cls) ? tp[cls] : 0;
    uint64_t f = fp.count(cls) ? fp[cls] : 0;
    uint64_t n = fn.count(cls) ? fn[cls] : 0;
    if (t + f + n == 0) continue;  // class absent from the entire set
    double iou = double(t) / double(t + f + n);
    rep.per_class_iou[cls] = iou;
    sum += iou;
    ++counted;
  }
  rep.mean_iou = counted ? sum / counted : 0.0;
  return rep;
}

/// far_depth sets the [0,1] normalization for the MSE column; the other
/// three metrics run on raw meters.
inline DepthReport depth_metrics(const std::vector<DepthGrid>& pred,
                                 const std::vector<DepthGrid>& gt, double far_depth) {
  require(pred.size() == gt.size(), ErrorCode::ShapeMismatch,
          "prediction and truth sets differ in size");
  require(far_depth > 0.0, ErrorCode::BadConfig, "far_depth must be positive");
  double abs_rel = 0.0, sq_rel = 0.0, sq = 0.0, sqn = 0.0;
  uint64_t n = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const DepthGrid& p = pred[i];
    const DepthGrid& g = gt[i];
    require(p.h == g.h && p.w == g.w, ErrorCode::ShapeMismatch,
            "prediction and truth grids differ in shape");
    for (size_t c = 0; c < p.cells.size(); ++c) {
      double gv = g.cells[c], pv = p.cells[c];
      require(gv > 0.0, ErrorCode::NonpositiveGroundTruth,
              "depth ground truth must be positive");
      double d = pv - gv;
      abs_rel += std::fabs(d) / gv;
      sq_rel += d * d / gv;
      sq += d * d;
      double dn = d / far_depth;
      sqn += dn * dn;
      ++n;
    }
  }
  require(n > 0, ErrorCode::ShapeMismatch, "empty evaluation set");
  DepthReport rep;
  rep.abs_rel = abs_rel / double(n);
  rep.sq_rel = sq_rel / double(n);
  rep.rmse = std::sqrt(sq / double(n));
  rep.mse = sqn / double(n);
  return rep;
}

/// Per channel: mean squared spectrogram difference plus mean absolute
/// envelope difference between reconstructed and true waveforms.
inline S3RReport s3r_metrics(const std::vector<Waveform>& pred, const std::vector<Waveform>& gt,
                             int window, int hop) {
  require(pred.size() == gt.size(), ErrorCode::ShapeMismatch,
          "prediction and truth sets differ in size");
  S3RReport rep;
  for (size_t i = 0; i < pred.size(); ++i) {
    const Waveform& p = pred[i];
    const Waveform& g = gt[i];
    require(p.samples.size() == g.samples.size(), ErrorCode::ShapeMismatch,
            "waveform lengths differ");
    require(p.sample_rate == g.sample_rate, ErrorCode::ShapeMismatch, "sample rates differ");
    Spectrogram sp = stft(p, window, hop);
    Spectrogram sg = stft(g, window, hop);
    double acc = 0.0;
    for (size_t k = 0; k < sp.bins.size(); ++k) {
      double dr = sp.bins[k].real() - sg.bins[k].real();
      double di = sp.bins[k].imag() - sg.bins[k].imag();
      acc += dr * dr + di * di;
    }
    rep.mse_per_channel.push_back(acc / double(sp.bins.size()));

    std::vector<double> ep = envelope(p), eg = envelope(g);
    double mae = 0.0;
    for (size_t k = 0; k < ep.size(); ++k) mae += std::fabs(ep[k] - eg[k]);
    rep.env_per_channel.push_back(mae / double(ep.size()));
  }
  return rep;
}

inline nlohmann::json to_json(const SemanticReport& r, const ClassTable& table) {
  nlohmann::json per;
  for (const auto& [cls, iou] : r.per_class_iou) per[detail::class_label(table, cls)] = iou;
  return {{"per_class_iou", per}, {"mean_iou", r.mean_iou}};
}

inline nlohmann::json to_json(const DepthReport& r) {
  return {{"abs_rel", r.abs_rel}, {"sq_rel", r.sq_rel}, {"rmse", r.rmse}, {"mse", r.mse}};
}

inline nlohmann::json to_json(const S3RReport& r) {
  return {{"s3r_mse", r.mse_per_channel}, {"s3r_env", r.env_per_channel}};
}

namespace detail {

inline std::string fixed3(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << v;
  return os.str();
}

inline void table_row(std::ostringstream& os, const std::vector<std::string>& cells) {
  for (const auto& c : cells) {
    os << c;
    for (size_t i = c.size(); i < 12; ++i) os << ' ';
  }
  os << '\n';
}

}  // namespace detail

inline std::string format_table(const SemanticReport& r, const ClassTable& table) {
  std::ostringstream os;
  std::vector<std::string> head = {"metric"}, vals = {"iou"};
  for (const auto& [cls, iou] : r.per_class_iou) {
    head.push_back(detail::class_label(table, cls));
    vals.push_back(detail::fixed3(iou));
  }
  head.push_back("all");
  vals.push_back(detail::fixed3(r.mean_iou));
  detail::table_row(os, head);
  detail::table_row(os, vals);
  return os.str();
}

inline std::string format_table(const DepthReport& r) {
  std::ostringstream os;
  detail::table_row(os, {"abs_rel", "sq_rel", "rmse", "mse"});
  detail::table_row(os, {detail::fixed3(r.abs_rel), detail::fixed3(r.sq_rel),
                         detail::fixed3(r.rmse), detail::fixed3(r.mse)});
  return os.str();
}

inline std::string format_table(const S3RReport& r) {
  std::ostringstream os;
  std::vector<std::string> head = {"channel"}, mses = {"mse"}, envs = {"env"};
  for (size_t i = 0; i < r.mse_per_channel.size(); ++i) {
    head.push_back("ch" + std::to_string(i));
    mses.push_back(detail::fixed3(r.mse_per_channel[i]));
    envs.push_back(detail::fixed3(r.env_per_channel[i]));
  }
  detail::table_row(os, head);
  detail::table_row(os, mses);
  detail::table_row(os, envs);
  return os.str();
}

}  // namespace bapn
