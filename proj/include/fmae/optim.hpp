#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fmae/errors.hpp"
#include "fmae/tensor.hpp"

namespace fmae {

/// Adam moment buffers, one pair per parameter tensor, in registration order.
template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<T>> m, v;

  void init(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    m.clear();
    v.clear();
    for (const auto& [name, t] : params) {
      (void)name;
      m.emplace_back(t.size(), T(0));
      v.emplace_back(t.size(), T(0));
    }
    step = 0;
  }
};

/// One Adam update with bias correction. Consumes and clears the gradients.
template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state,
               double lr) {
  if (lr < 0) throw ContractError("adam_step: learning rate must be >= 0");
  if (state.m.size() != params.size()) throw ContractError("adam_step: state not initialized");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, tensor] = params[k];
    auto& value = tensor.mutable_value();
    const auto& grad = tensor.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      if (!std::isfinite(g)) {
        throw TrainingDivergenceError("adam_step: non-finite gradient in '" + name + "'");
      }
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
    }
    tensor.zero_grad();
  }
}

/// Linear warmup to the peak rate, then cosine decay to zero.
struct LrSchedule {
  double peak = 1.5e-4;
  int warmup_epochs = 40;
  int total_epochs = 800;
  int steps_per_epoch = 1;

  long warmup_steps() const { return static_cast<long>(warmup_epochs) * steps_per_epoch; }
  long total_steps() const { return static_cast<long>(total_epochs) * steps_per_epoch; }
};

inline double lr_at(long step, const LrSchedule& sched) {
  if (sched.peak <= 0) throw ContractError("lr_at: peak must be > 0");
  if (sched.warmup_epochs >= sched.total_epochs) {
    throw ContractError("lr_at: warmup must end before the schedule does");
  }
  const long warmup = sched.warmup_steps();
  const long total = sched.total_steps();
  if (step < 0 || step > total) throw ContractError("lr_at: step out of range");
  if (step <= warmup && warmup > 0) {
    return sched.peak * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (step == total) return 0.0;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return sched.peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

/// Maximum relative error between the reverse-mode gradient of f at `point`
/// and central finite differences. f must treat `point` as its only input.
/// Runs at the tensor's own precision; use double for meaningful results.
template <typename T>
double check_gradients(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> point,
                       double h = 1e-5) {
  Tensor<T> loss = f(point);
  if (loss.size() != 1) throw ContractError("check_gradients: f must return a scalar");
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw Error("check_gradients: non-finite evaluation at the base point");
  }
  point.zero_grad();
  loss.backward();
  const std::vector<T> analytic = point.grad();

  auto& value = point.mutable_value();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const T saved = value[i];
    value[i] = static_cast<T>(static_cast<double>(saved) + h);
    const double fp = static_cast<double>(f(point).item());
    value[i] = static_cast<T>(static_cast<double>(saved) - h);
    const double fm = static_cast<double>(f(point).item());
    value[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("check_gradients: non-finite evaluation near the base point");
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace fmae
