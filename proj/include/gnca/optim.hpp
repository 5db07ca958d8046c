#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "gnca/tensor.hpp"

namespace gnca {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step_count = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One Adam update with bias correction. Moments are allocated on the first call.
inline void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimiser state was built for other parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k].shape() || state.m[k].shape() != grads[k].shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k));
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

inline double global_norm(std::span<const Tensor> grads) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double x : g.data()) sq += x * x;
  }
  return std::sqrt(sq);
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// max_norm. Returns the norm before clipping.
inline double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& x : g.data()) x *= factor;
    }
  }
  return norm;
}

/// Reduce-on-plateau learning-rate schedule.
struct PlateauScheduler {
  double factor = 0.1;
  std::size_t patience = 10;
  double min_delta = 0.0;
  double min_lr = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  /// Feeds one monitored value; returns true when the learning rate was reduced.
  bool update(double metric, double& lr) {
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("PlateauScheduler: factor must be in (0,1)");
    if (metric < best - min_delta) {
      best = metric;
      stale = 0;
      return false;
    }
    if (++stale < patience) return false;
    stale = 0;
    const double reduced = std::max(lr * factor, min_lr);
    const bool changed = reduced < lr;
    lr = reduced;
    return changed;
  }
};

/// Stops when the monitored value has not improved for `patience` updates.
struct EarlyStopping {
  std::size_t patience = 20;
  double min_delta = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  /// Returns true if this value is a new best.
  bool update(double metric) {
    if (metric < best - min_delta) {
      best = metric;
      stale = 0;
      return true;
    }
    ++stale;
    return false;
  }
  bool should_stop() const { return stale >= patience; }
};

}  // namespace gnca
