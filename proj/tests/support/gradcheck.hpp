#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lmcg/ops.hpp"
#include "lmcg/rng.hpp"
#include "lmcg/tensor.hpp"

// Central finite-difference oracle, 64-bit, independent of the autodiff
// path it checks: the forward value is recomputed from scratch for each
// perturbed input, never read off a tape.

namespace lmcg::test {

using OpFn =
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  double max_rel = 0.0;
  int checks = 0;
};

// Scalar head: projects an arbitrary-shaped op output to one number with
// a non-uniform, input-independent weighting so the op's backward sees a
// generic incoming gradient. L = mean((out - c)^2).
inline double head_value(const Tensor<double>& out, const Tensor<double>& c) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double d = out.data()[i] - c.data()[i];
    acc += d * d;
  }
  return acc / double(out.numel());
}

inline GradCheckResult grad_check(const OpFn& fn,
                                  std::vector<Tensor<double>> inputs,
                                  Rng& rng, double eps = 1e-3) {
  // Fixed projection target drawn once per case.
  Tensor<double> probe = fn(inputs);
  Tensor<double> c = Tensor<double>::randn(probe.shape(), rng);

  // Analytic gradients.
  for (auto& in : inputs) in.set_requires_grad(true);
  Tape<double> tape;
  std::vector<Tensor<double>> analytic;
  {
    TapeScope<double> scope(tape);
    Tensor<double> out = fn(inputs);
    Tensor<double> loss = mse_mean(out, c);
    tape.backward(loss);
  }
  for (const auto& in : inputs) analytic.push_back(tape.grad(in));
  for (auto& in : inputs) in.set_requires_grad(false);

  GradCheckResult res;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    for (std::int64_t e = 0; e < inputs[j].numel(); ++e) {
      const double saved = inputs[j].data()[e];
      inputs[j].data()[e] = saved + eps;
      const double lp = head_value(fn(inputs), c);
      inputs[j].data()[e] = saved - eps;
      const double lm = head_value(fn(inputs), c);
      inputs[j].data()[e] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = analytic[j].data()[e];
      const double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      res.max_rel = std::max(res.max_rel, rel);
      ++res.checks;
    }
  }
  return res;
}

/// Random tensor with every element nudged at least `margin` away from
/// zero (for ops with a kink at the origin).
inline Tensor<double> randn_away_from_zero(Shape shape, Rng& rng,
                                           double margin = 0.08) {
  Tensor<double> t = Tensor<double>::randn(std::move(shape), rng);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double& v = t.data()[i];
    if (std::abs(v) < margin) v = v >= 0 ? margin : -margin;
  }
  return t;
}

}  // namespace lmcg::test
