#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bapn/nn/gradcheck.hpp"
#include "bapn/nn/ops.hpp"
#include "bapn/rng.hpp"

namespace bapn::nn {

/// One finite-difference check: builds fresh random inputs from the seed,
/// runs the op, and returns the worst relative gradient error.
struct GradCase {
  std::string name;
  std::function<double(uint64_t seed)> run;
};

namespace detail {

inline Tensor<double> gc_randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return Tensor<double>::from(std::move(shape), std::move(v), true);
}

/// Push values away from zero so finite differences never straddle the
/// relu kink.
inline Tensor<double> gc_randn_off_kink(Shape shape, Rng& rng) {
  Tensor<double> t = gc_randn(std::move(shape), rng);
  for (auto& x : t.data())
    if (std::fabs(x) < 0.05) x += x >= 0 ? 0.1 : -0.1;
  return t;
}

}  // namespace detail

/// Every differentiable op, exercised at small but non-trivial shapes.
/// Acceptance requires each to stay below 1e-4 across seeds.
inline const std::vector<GradCase>& gradcheck_suite() {
  using detail::gc_randn;
  using detail::gc_randn_off_kink;
  static const std::vector<GradCase> cases = {
      {"add", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({2, 3, 4}, rng), b = gc_randn({2, 3, 4}, rng);
         return grad_check<double>([&] { return sum_all(mul(add(a, b), add(a, b))); },
                                   {&a, &b});
       }},
      {"sub", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({3, 5}, rng), b = gc_randn({3, 5}, rng);
         return grad_check<double>([&] { return sum_all(mul(sub(a, b), sub(a, b))); }, {&a, &b});
       }},
      {"mul", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({2, 7}, rng), b = gc_randn({2, 7}, rng);
         return grad_check<double>([&] { return sum_all(mul(a, b)); }, {&a, &b});
       }},
      {"scale", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({4, 4}, rng);
         return grad_check<double>([&] { return sum_all(mul(scale(a, 1.7), scale(a, 1.7))); },
                                   {&a});
       }},
      {"mean_all", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({3, 6}, rng);
         return grad_check<double>([&] { return mean_all(mul(a, a)); }, {&a});
       }},
      {"relu", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn_off_kink({2, 3, 5}, rng);
         return grad_check<double>([&] { return sum_all(mul(relu(a), relu(a))); }, {&a});
       }},
      {"sigmoid", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({2, 9}, rng);
         return grad_check<double>([&] { return sum_all(mul(sigmoid(a), sigmoid(a))); }, {&a});
       }},
      {"reshape", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({2, 6}, rng);
         return grad_check<double>(
             [&] { return sum_all(mul(reshape(a, {3, 4}), reshape(a, {3, 4}))); }, {&a});
       }},
      {"concat", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({2, 2, 3, 3}, rng), b = gc_randn({2, 1, 3, 3}, rng);
         return grad_check<double>(
             [&] {
               auto c = concat<double>({a, b}, 1);
               return sum_all(mul(c, c));
             },
             {&a, &b});
       }},
      {"slice", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({2, 5, 2, 2}, rng);
         return grad_check<double>(
             [&] {
               auto c = slice(a, 1, 1, 4);
               return sum_all(mul(c, c));
             },
             {&a});
       }},
      {"pad2d", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({1, 2, 3, 4}, rng);
         return grad_check<double>(
             [&] {
               auto p = pad2d(a, 1, 0, 2, 1);
               return sum_all(mul(p, p));
             },
             {&a});
       }},
      {"crop2d", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({1, 2, 5, 6}, rng);
         return grad_check<double>(
             [&] {
               auto c = crop2d(a, 1, 2, 3, 3);
               return sum_all(mul(c, c));
             },
             {&a});
       }},
      {"conv2d", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({2, 3, 6, 5}, rng);
         auto w = gc_randn({4, 3, 3, 3}, rng, 0.5);
         return grad_check<double>(
             [&] {
               auto y = conv2d(x, w, 1, 1);
               return sum_all(mul(y, y));
             },
             {&x, &w});
       }},
      {"conv2d_strided", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({1, 2, 8, 8}, rng);
         auto w = gc_randn({3, 2, 4, 4}, rng, 0.5);
         return grad_check<double>(
             [&] {
               auto y = conv2d(x, w, 2, 1);
               return sum_all(mul(y, y));
             },
             {&x, &w});
       }},
      {"conv2d_dilated", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({1, 2, 9, 9}, rng);
         auto w = gc_randn({2, 2, 3, 3}, rng, 0.5);
         return grad_check<double>(
             [&] {
               auto y = conv2d(x, w, 1, 2, 2);
               return sum_all(mul(y, y));
             },
             {&x, &w});
       }},
      {"conv_transpose2d", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({1, 3, 4, 4}, rng);
         auto w = gc_randn({3, 2, 4, 4}, rng, 0.5);
         return grad_check<double>(
             [&] {
               auto y = conv_transpose2d(x, w, 2, 1);
               return sum_all(mul(y, y));
             },
             {&x, &w});
       }},
      {"add_bias", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({2, 3, 2, 3}, rng);
         auto b = gc_randn({3}, rng);
         return grad_check<double>(
             [&] {
               auto y = add_bias(x, b);
               return sum_all(mul(y, y));
             },
             {&x, &b});
       }},
      {"batchnorm_train", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({3, 2, 3, 3}, rng);
         auto g = gc_randn({2}, rng);
         auto b = gc_randn({2}, rng);
         return grad_check<double>(
             [&] {
               BNState<double> state(2);  // fresh state: stats update is not differentiated
               auto y = batchnorm2d(x, g, b, state, true);
               return sum_all(mul(y, y));
             },
             {&x, &g, &b});
       }},
      {"batchnorm_eval", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({2, 2, 3, 3}, rng);
         auto g = gc_randn({2}, rng);
         auto b = gc_randn({2}, rng);
         return grad_check<double>(
             [&] {
               BNState<double> state(2);
               state.running_mean = {0.3, -0.2};
               state.running_var = {1.5, 0.8};
               auto y = batchnorm2d(x, g, b, state, false);
               return sum_all(mul(y, y));
             },
             {&x, &g, &b});
       }},
      {"upsample_bilinear", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({1, 2, 3, 4}, rng);
         return grad_check<double>(
             [&] {
               auto y = upsample_bilinear2d(x, 7, 9);
               return sum_all(mul(y, y));
             },
             {&x});
       }},
      {"softmax", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({1, 4, 2, 3}, rng);
         auto t = gc_randn({1, 4, 2, 3}, rng);
         return grad_check<double>([&] { return mse(softmax_channels(x), t); }, {&x});
       }},
      {"cross_entropy", [](uint64_t s) {
         Rng rng(s);
         auto x = gc_randn({2, 4, 3, 3}, rng);
         std::vector<int> labels(2 * 9);
         for (auto& l : labels) l = rng.uniform_int(0, 3);
         return grad_check<double>([&] { return cross_entropy(x, labels); }, {&x});
       }},
      {"mse", [](uint64_t s) {
         Rng rng(s);
         auto a = gc_randn({3, 4}, rng), b = gc_randn({3, 4}, rng);
         return grad_check<double>([&] { return mse(a, b); }, {&a, &b});
       }},
  };
  return cases;
}

}  // namespace bapn::nn
