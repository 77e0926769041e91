#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vlalign/params.hpp"

namespace vlalign {

// Adam with bias correction, linear warmup, and linear decay to zero at
// total_steps (no decay when total_steps == 0).
struct AdamState {
  long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long warmup_steps = 0;
  long total_steps = 0;  // decay endpoint; 0 disables decay
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState create(const ParamStore& params, double lr, long warmup, long total) {
    AdamState s;
    s.learning_rate = lr;
    s.warmup_steps = warmup;
    s.total_steps = total;
    s.first_moment.resize(params.count());
    s.second_moment.resize(params.count());
    for (size_t i = 0; i < params.count(); ++i) {
      s.first_moment[i].assign(static_cast<size_t>(params.tensor(i).size()), 0.0);
      s.second_moment[i].assign(static_cast<size_t>(params.tensor(i).size()), 0.0);
    }
    return s;
  }
};

// effective learning rate at 1-based step t
inline double effective_lr(const AdamState& s, long t) {
  double lr = s.learning_rate;
  if (s.warmup_steps > 0 && t <= s.warmup_steps) {
    return lr * static_cast<double>(t) / static_cast<double>(s.warmup_steps);
  }
  if (s.total_steps > s.warmup_steps && t > s.warmup_steps) {
    double frac = static_cast<double>(s.total_steps - t) /
                  static_cast<double>(s.total_steps - s.warmup_steps);
    return lr * std::max(0.0, frac);
  }
  return lr;
}

// One optimizer step over every parameter, reading the accumulated gradients.
// Gradients must be finite; a NaN/Inf gradient aborts naming the parameter.
inline void adam_step(ParamStore& params, AdamState& state) {
  check(state.first_moment.size() == params.count(), "adam_step: state/parameter count mismatch");
  const long t = state.step + 1;
  const double lr = effective_lr(state, t);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  for (size_t p = 0; p < params.count(); ++p) {
    Tensor tensor = params.tensor(p);
    const std::vector<double>& g = tensor.grad();
    std::vector<double>& m = state.first_moment[p];
    std::vector<double>& v = state.second_moment[p];
    check(m.size() == g.size(), "adam_step: moment shape mismatch for '" + params.names()[p] + "'");
    double* w = tensor.raw();
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" +
                                 params.names()[p] + "'");
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
  state.step = t;
}

}  // namespace vlalign
