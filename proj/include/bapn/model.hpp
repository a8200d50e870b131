#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "bapn/config.hpp"
#include "bapn/error.hpp"
#include "bapn/nn/ops.hpp"
#include "bapn/nn/optim.hpp"
#include "bapn/rng.hpp"

namespace bapn {

/// Which decoders a forward pass should run. Disabled decoders never enter
/// the graph, so their parameters see no gradient at all.
struct TaskSet {
  bool semantic = false;
  bool depth = false;
  bool s3r = false;

  int count() const { return int(semantic) + int(depth) + int(s3r); }
};

inline TaskSet parse_tasks(const std::vector<std::string>& names) {
  TaskSet t;
  for (const auto& n : names) {
    if (n == "semantic")
      t.semantic = true;
    else if (n == "depth")
      t.depth = true;
    else if (n == "s3r")
      t.s3r = true;
    else
      fail(ErrorCode::BadConfig, "unknown task '" + n + "'");
  }
  require(t.count() > 0, ErrorCode::BadConfig, "no tasks enabled");
  return t;
}

struct ModelConfig {
  int branches = 2;        // input channels sharing the encoder weights
  int base_channels = 32;  // first strided conv; doubles each layer
  int aspp_filters = 64;
  std::vector<int> dilations = {6, 12, 18};
  double dilation_scale = 1.0;
  int fuse_channels = 192;
  int dec_hidden = 64;
  std::vector<int> s3r_widths = {64, 32, 16, 8, 8};
  int grid_h = 32;
  int grid_w = 64;
  int n_classes = 4;  // background + car + motorcycle + train
  int pairs = 3;      // rotation offsets the mask head predicts
  uint64_t init_seed = 7;

  void validate() const {
    require(branches >= 1, ErrorCode::BadConfig, "branches must be >= 1");
    require(base_channels >= 1, ErrorCode::BadConfig, "base_channels must be >= 1");
    require(aspp_filters >= 8, ErrorCode::BadConfig, "aspp_filters must be >= 8");
    require(dilations.size() == 3, ErrorCode::BadConfig, "need exactly 3 dilation rates");
    require(dilation_scale > 0.0, ErrorCode::BadConfig, "dilation_scale must be positive");
    require(fuse_channels >= 1 && dec_hidden >= 1, ErrorCode::BadConfig,
            "channel counts must be positive");
    require(s3r_widths.size() == 5, ErrorCode::BadConfig, "s3r_widths needs 5 entries");
    for (int w : s3r_widths)
      require(w >= 1, ErrorCode::BadConfig, "s3r widths must be positive");
    require(grid_h >= 1 && grid_w >= 1, ErrorCode::BadConfig, "output grid must be nonempty");
    require(n_classes >= 2, ErrorCode::BadConfig, "need at least 2 classes");
    require(pairs >= 1, ErrorCode::BadConfig, "need at least one rotation pair");
  }

  int effective_dilation(int i) const {
    double d = dilations.at(size_t(i)) * dilation_scale;
    return std::max(1, int(std::llround(d)));
  }

  /// Spatial extent after one stride-2 encoder layer (pad to even, then
  /// 4x4 stride 2 pad 1): ceil(n / 2).
  static int halved(int n) { return (n + 1) / 2; }
};

inline ModelConfig model_config_from(const Config& cfg, int branches, int pairs) {
  ModelConfig m;
  m.branches = branches;
  m.base_channels = cfg.get_int("model.base_channels");
  m.aspp_filters = cfg.get_int("model.aspp_filters");
  m.dilations = cfg.get_int_list("model.dilations");
  m.dilation_scale = cfg.get_double("model.dilation_scale");
  m.fuse_channels = cfg.get_int("model.fuse_channels");
  m.dec_hidden = cfg.get_int("model.dec_hidden");
  m.s3r_widths = cfg.get_int_list("model.s3r_widths");
  m.grid_h = cfg.get_int("data.grid_h");
  m.grid_w = cfg.get_int("data.grid_w");
  m.pairs = pairs;
  m.init_seed = uint64_t(cfg.get_int("model.init_seed"));
  m.validate();
  return m;
}

template <typename T>
struct ModelOutput {
  nn::Tensor<T> semantic_logits;  // [N, n_classes, grid_h, grid_w]
  nn::Tensor<T> depth;            // [N, 1, grid_h, grid_w], meters
  nn::Tensor<T> s3r_masks;        // [N, pairs*4, Fb, Tf], entries in [-1, 1]
};

namespace detail {

/// Convolution (or transposed convolution) followed by batch norm. Owns its
/// parameters and running stats; the perception net strings these together.
template <typename T>
struct ConvBN {
  nn::Parameter<T> w;
  nn::Parameter<T> gamma;
  nn::Parameter<T> beta;
  nn::BNState<T> state;
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  bool transposed = false;

  ConvBN(const std::string& name, nn::Shape wshape, int out_ch, int stride_, int pad_,
         int dilation_, bool transposed_, Rng& rng)
      : w(name + ".w",
          nn::he_normal<T>(wshape, size_t(wshape[transposed_ ? 0 : 1]) * size_t(wshape[2]) *
                                       size_t(wshape[3]),
                           rng)),
        gamma(name + ".g", nn::Tensor<T>::filled({out_ch}, T(1), true)),
        beta(name + ".b", nn::Tensor<T>::filled({out_ch}, T(0), true)),
        state(out_ch),
        stride(stride_),
        pad(pad_),
        dilation(dilation_),
        transposed(transposed_) {}

  nn::Tensor<T> forward(nn::Tensor<T> x, bool training, bool relu_after = true) {
    nn::Tensor<T> y = transposed ? nn::conv_transpose2d(x, w.t, stride, pad)
                                 : nn::conv2d(x, w.t, stride, pad, dilation);
    y = nn::batchnorm2d(y, gamma.t, beta.t, state, training);
    return relu_after ? nn::relu(y) : y;
  }

  void collect(std::vector<nn::Parameter<T>*>& params,
               std::vector<std::pair<std::string, nn::BNState<T>*>>& states) {
    params.push_back(&w);
    params.push_back(&gamma);
    params.push_back(&beta);
    states.emplace_back(w.name + ".stats", &state);
  }
};

}  // namespace detail

/// Multi-task perception net: a strided conv encoder applied with one shared
/// weight set to every input channel, an ASPP context block over the
/// concatenated branch features, and per-task decoders for semantic class
/// grids, depth grids, and complex ratio masks at rotated orientations.
template <typename T>
class PerceptionNet {
 public:
  explicit PerceptionNet(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.init_seed, 0x90DE1ull));
    int c = cfg_.base_channels;

    // Shared branch: 4x4 stride-2 convs, widths c, 2c, 4c, 8c.
    int in_ch = 1;
    for (int i = 0; i < 4; ++i) {
      int out_ch = c << i;
      enc_.emplace_back("enc.l" + std::to_string(i), nn::Shape{out_ch, in_ch, 4, 4}, out_ch,
                        2, 1, 1, false, rng);
      in_ch = out_ch;
    }
    branch_out_ = in_ch;

    int cat_ch = branch_out_ * cfg_.branches;
    int af = cfg_.aspp_filters;
    aspp_.emplace_back("aspp.point", nn::Shape{af, cat_ch, 1, 1}, af, 1, 0, 1, false, rng);
    for (int i = 0; i < 3; ++i) {
      int d = cfg_.effective_dilation(i);
      aspp_.emplace_back("aspp.d" + std::to_string(cfg_.dilations[size_t(i)]),
                         nn::Shape{af, cat_ch, 3, 3}, af, 1, d, d, false, rng);
    }
    fuse_ = std::make_unique<detail::ConvBN<T>>("aspp.fuse", nn::Shape{cfg_.fuse_channels, 4 * af, 1, 1},
                                                cfg_.fuse_channels, 1, 0, 1, false, rng);

    int dh = cfg_.dec_hidden;
    sem_.emplace_back("sem.l0", nn::Shape{dh, cfg_.fuse_channels, 1, 1}, dh, 1, 0, 1, false, rng);
    sem_.emplace_back("sem.l1", nn::Shape{dh, dh, 1, 1}, dh, 1, 0, 1, false, rng);
    sem_head_ = zero_head("sem.head", cfg_.n_classes, dh);

    dep_.emplace_back("dep.l0", nn::Shape{dh, cfg_.fuse_channels, 1, 1}, dh, 1, 0, 1, false, rng);
    dep_.emplace_back("dep.l1", nn::Shape{dh, dh, 1, 1}, dh, 1, 0, 1, false, rng);
    dep_head_ = zero_head("dep.head", 1, dh);

    in_ch = cfg_.fuse_channels;
    for (int i = 0; i < 5; ++i) {
      int out_ch = cfg_.s3r_widths[size_t(i)];
      bool last = i == 4;
      // Four stride-2 upconvs restore resolution; the fifth refines at full
      // size. Transposed weights are stored [in, out, kh, kw].
      s3r_.emplace_back("s3r.up" + std::to_string(i),
                        nn::Shape{in_ch, out_ch, last ? 3 : 4, last ? 3 : 4}, out_ch, last ? 1 : 2,
                        1, 1, true, rng);
      in_ch = out_ch;
    }
    s3r_head_ = zero_head("s3r.head", cfg_.pairs * 4, in_ch);
  }

  const ModelConfig& config() const { return cfg_; }
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  /// Shared-weight branch stack only: [N, branches, Fb, Tf] ->
  /// [N, branches*C, h, w] with h, w = four ceil-halvings of Fb, Tf.
  nn::Tensor<T> branch_features(nn::Tensor<T> x) {
    require(x.shape().size() == 4, ErrorCode::ShapeMismatch, "encoder input must be 4-d");
    require(x.shape()[1] == cfg_.branches, ErrorCode::ShapeMismatch,
            "input channels do not match configured branches");
    int n = x.shape()[0], fb = x.shape()[2], tf = x.shape()[3];
    require(fb >= 4 && tf >= 4, ErrorCode::ShapeMismatch, "input grid too small to encode");

    // Every input channel runs through the same branch weights; stacking the
    // channels into the batch gives that sharing for free.
    nn::Tensor<T> h = nn::reshape(x, {n * cfg_.branches, 1, fb, tf});
    for (auto& layer : enc_) {
      int hh = h.shape()[2], hw = h.shape()[3];
      if (hh % 2 || hw % 2) h = nn::pad2d(h, 0, hh % 2, 0, hw % 2);
      h = layer.forward(h, training_);
    }
    // [N*B, C, h, w] and [N, B*C, h, w] share one row-major layout.
    return nn::reshape(h, {n, cfg_.branches * branch_out_, h.shape()[2], h.shape()[3]});
  }

  /// x: [N, branches, Fb, Tf] normalized log-magnitude grids.
  nn::Tensor<T> encode(nn::Tensor<T> x) {
    nn::Tensor<T> h = branch_features(x);
    std::vector<nn::Tensor<T>> scales;
    scales.reserve(aspp_.size());
    for (auto& branch : aspp_) scales.push_back(branch.forward(h, training_));
    return fuse_->forward(nn::concat<T>(scales, 1), training_);
  }

  /// -> [N, n_classes, grid_h, grid_w] logits (softmax left to callers).
  nn::Tensor<T> decode_semantic(nn::Tensor<T> feat) {
    nn::Tensor<T> h = nn::upsample_bilinear2d(feat, cfg_.grid_h, cfg_.grid_w);
    for (auto& layer : sem_) h = layer.forward(h, training_);
    return nn::conv2d(h, sem_head_->t, 1, 0);
  }

  /// -> [N, 1, grid_h, grid_w] nonnegative meters.
  nn::Tensor<T> decode_depth(nn::Tensor<T> feat) {
    nn::Tensor<T> h = nn::upsample_bilinear2d(feat, cfg_.grid_h, cfg_.grid_w);
    for (auto& layer : dep_) h = layer.forward(h, training_);
    return nn::relu(nn::conv2d(h, dep_head_->t, 1, 0));
  }

  /// -> [N, pairs*4, fb, tf] mask components in [-1, 1]; channel layout per
  /// pair is (left re, left im, right re, right im).
  nn::Tensor<T> decode_s3r(nn::Tensor<T> feat, int fb, int tf) {
    nn::Tensor<T> h = feat;
    for (auto& layer : s3r_) h = layer.forward(h, training_);
    require(h.shape()[2] >= fb && h.shape()[3] >= tf, ErrorCode::ShapeMismatch,
            "mask decoder cannot reach requested resolution");
    h = nn::conv2d(h, s3r_head_->t, 1, 0);
    h = nn::crop2d(h, 0, 0, fb, tf);
    nn::Tensor<T> one = nn::Tensor<T>::filled(h.shape(), T(1), false);
    return nn::sub(nn::scale(nn::sigmoid(h), T(2)), one);
  }

  ModelOutput<T> forward(nn::Tensor<T> x, TaskSet tasks) {
    require(tasks.count() > 0, ErrorCode::BadConfig, "forward needs at least one task");
    int fb = x.shape()[2], tf = x.shape()[3];
    nn::Tensor<T> feat = encode(x);
    ModelOutput<T> out;
    if (tasks.semantic) out.semantic_logits = decode_semantic(feat);
    if (tasks.depth) out.depth = decode_depth(feat);
    if (tasks.s3r) out.s3r_masks = decode_s3r(feat, fb, tf);
    return out;
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> ps;
    std::vector<std::pair<std::string, nn::BNState<T>*>> ss;
    collect(ps, ss);
    return ps;
  }

  std::vector<std::pair<std::string, nn::BNState<T>*>> bn_states() {
    std::vector<nn::Parameter<T>*> ps;
    std::vector<std::pair<std::string, nn::BNState<T>*>> ss;
    collect(ps, ss);
    return ss;
  }

  size_t param_count() {
    size_t n = 0;
    for (auto* p : parameters()) n += p->t.numel();
    return n;
  }

 private:
  std::unique_ptr<nn::Parameter<T>> zero_head(const std::string& name, int out_ch, int in_ch) {
    return std::make_unique<nn::Parameter<T>>(
        name + ".w", nn::Tensor<T>::filled({out_ch, in_ch, 1, 1}, T(0), true));
  }

  void collect(std::vector<nn::Parameter<T>*>& ps,
               std::vector<std::pair<std::string, nn::BNState<T>*>>& ss) {
    for (auto& l : enc_) l.collect(ps, ss);
    for (auto& l : aspp_) l.collect(ps, ss);
    fuse_->collect(ps, ss);
    for (auto& l : sem_) l.collect(ps, ss);
    ps.push_back(sem_head_.get());
    for (auto& l : dep_) l.collect(ps, ss);
    ps.push_back(dep_head_.get());
    for (auto& l : s3r_) l.collect(ps, ss);
    ps.push_back(s3r_head_.get());
  }

  ModelConfig cfg_;
  bool training_ = true;
  int branch_out_ = 0;
  std::vector<detail::ConvBN<T>> enc_;
  std::vector<detail::ConvBN<T>> aspp_;
  std::unique_ptr<detail::ConvBN<T>> fuse_;
  std::vector<detail::ConvBN<T>> sem_;
  std::unique_ptr<nn::Parameter<T>> sem_head_;
  std::vector<detail::ConvBN<T>> dep_;
  std::unique_ptr<nn::Parameter<T>> dep_head_;
  std::vector<detail::ConvBN<T>> s3r_;
  std::unique_ptr<nn::Parameter<T>> s3r_head_;
};

}  // namespace bapn
