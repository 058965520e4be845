#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lmcg/tensor.hpp"

namespace lmcg {

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  std::int64_t t = 0;
};

/// One Adam update over a named parameter subset, in place. Moment
/// buffers are created on first use and advance with each call. Every
/// listed parameter must have a gradient entry of matching shape.
template <typename T>
void adam_step(const std::vector<std::string>& names,
               std::map<std::string, Tensor<T>>& params,
               const std::map<std::string, Tensor<T>>& grads,
               std::map<std::string, AdamState<T>>& state, T lr,
               T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
  for (const auto& name : names) {
    auto pit = params.find(name);
    require(pit != params.end(), "adam_step: unknown parameter " + name);
    auto git = grads.find(name);
    if (git == grads.end())
      throw ShapeError("adam_step: missing gradient for parameter " + name);
    Tensor<T>& p = pit->second;
    const Tensor<T>& g = git->second;
    require(g.shape() == p.shape(),
            "adam_step: gradient shape " + shape_str(g.shape()) +
                " does not match parameter " + name + " " +
                shape_str(p.shape()));
    AdamState<T>& st = state[name];
    const std::size_t n = std::size_t(p.numel());
    if (st.m.empty()) {
      st.m.assign(n, T(0));
      st.v.assign(n, T(0));
    }
    ++st.t;
    const T bc1 = T(1) - std::pow(beta1, T(st.t));
    const T bc2 = T(1) - std::pow(beta2, T(st.t));
    T* pd = p.data();
    const T* gd = g.data();
    for (std::size_t i = 0; i < n; ++i) {
      st.m[i] = beta1 * st.m[i] + (T(1) - beta1) * gd[i];
      st.v[i] = beta2 * st.v[i] + (T(1) - beta2) * gd[i] * gd[i];
      const T mhat = st.m[i] / bc1;
      const T vhat = st.v[i] / bc2;
      pd[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace lmcg
