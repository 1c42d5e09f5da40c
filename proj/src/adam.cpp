#include "lip3d/adam.hpp"

#include <cmath>
#include <string>

#include "lip3d/errors.hpp"

namespace lip3d {

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " params vs " + std::to_string(grads.size()) +
                         " grads");
  }
  if (state.first_moment.empty()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: moment buffers sized " +
                         std::to_string(state.first_moment.size()) +
                         " do not match " + std::to_string(params.size()) +
                         " params");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

void lr_decay(AdamState& state, long step, long every, double factor) {
  if (every <= 0) throw ValueError("lr_decay: every must be positive");
  if (factor <= 0.0 || factor > 1.0) {
    throw ValueError("lr_decay: factor must be in (0,1]");
  }
  if (step > 0 && step % every == 0) state.lr *= factor;
}

AdamOptimizer::AdamOptimizer(std::vector<DiffTensor> params, double lr)
    : params_(std::move(params)) {
  states_.resize(params_.size());
  for (auto& s : states_) s.lr = lr;
}

void AdamOptimizer::step() {
  step_count_ += 1;
  static const std::vector<double> kEmpty;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.has_grad()) {
      adam_step(p.values(), p.grad(), states_[i]);
    } else {
      std::vector<double> zeros(p.numel(), 0.0);
      adam_step(p.values(), zeros, states_[i]);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

void AdamOptimizer::decay(long every, double factor) {
  for (auto& s : states_) lr_decay(s, step_count_, every, factor);
}

double AdamOptimizer::lr() const {
  return states_.empty() ? 0.0 : states_.front().lr;
}

}  // namespace lip3d
