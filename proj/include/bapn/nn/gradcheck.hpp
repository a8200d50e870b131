#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bapn/nn/tensor.hpp"

namespace bapn::nn {

/// Compare reverse-mode gradients against central finite differences.
/// `f` must rebuild its graph from the inputs' current values on every
/// call and return a scalar. Returns the worst relative error
/// |analytic - numeric| / max(1, |analytic|, |numeric|) over every
/// coordinate of every input. Run with T = double; float32 rounding
/// swamps the finite-difference signal.
template <typename T, typename F>
double grad_check(F f, std::vector<Tensor<T>*> inputs, double h = 1e-5) {
  for (auto* x : inputs) x->zero_grad();
  Tensor<T> y = f();
  y.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto* x : inputs) analytic.push_back(x->grad());

  double worst = 0.0;
  for (size_t xi = 0; xi < inputs.size(); ++xi) {
    Tensor<T>& x = *inputs[xi];
    for (size_t i = 0; i < x.numel(); ++i) {
      T saved = x.data()[i];
      x.data()[i] = saved + static_cast<T>(h);
      double fp = f().item();
      x.data()[i] = saved - static_cast<T>(h);
      double fm = f().item();
      x.data()[i] = saved;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[xi][i];
      double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <typename T, typename F>
double grad_check(F f, Tensor<T>& x, double h = 1e-5) {
  return grad_check<T>([&] { return f(x); }, std::vector<Tensor<T>*>{&x}, h);
}

}  // namespace bapn::nn
