#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bapn/nn/tensor.hpp"
#include "bapn/rng.hpp"

namespace bapn::nn {

/// A trainable tensor plus its Adam state. Moments are allocated up
/// front (zeros) so a freshly constructed parameter is ready to step.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> t;
  std::vector<T> m, v;
  uint64_t steps = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> tensor)
      : name(std::move(n)), t(std::move(tensor)), m(t.numel(), T(0)), v(t.numel(), T(0)) {}
};

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update with bias correction. The gradient buffer is cleared
/// afterwards so steps never leak into each other.
template <typename T>
void adam_step(Parameter<T>& p, const AdamConfig& cfg) {
  require(p.t.node() != nullptr, ErrorCode::MissingGrad, "parameter has no tensor");
  std::vector<T>& g = p.t.node()->grad;
  require(g.size() == p.t.numel(), ErrorCode::MissingGrad,
          "parameter '" + p.name + "' has no gradient; run backward() first");
  p.steps += 1;
  double b1t = 1.0 - std::pow(cfg.beta1, double(p.steps));
  double b2t = 1.0 - std::pow(cfg.beta2, double(p.steps));
  std::vector<T>& w = p.t.data();
  for (size_t i = 0; i < w.size(); ++i) {
    double gi = g[i];
    double mi = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
    double vi = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
    p.m[i] = static_cast<T>(mi);
    p.v[i] = static_cast<T>(vi);
    double mhat = mi / b1t;
    double vhat = vi / b2t;
    w[i] = static_cast<T>(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
  std::fill(g.begin(), g.end(), T(0));
}

/// He-normal initialization for a conv weight with the given fan-in.
template <typename T>
Tensor<T> he_normal(Shape shape, size_t fan_in, Rng& rng) {
  double std_dev = std::sqrt(2.0 / double(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * std_dev);
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace bapn::nn
