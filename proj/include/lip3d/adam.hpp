#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lip3d/tensor.hpp"

namespace lip3d {

struct AdamState {
  long step_count = 0;
  std::vector<double> first_moment;   // sized on first step
  std::vector<double> second_moment;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update; increments state.step_count.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state);

// lr <- lr*factor at every positive multiple of `every`.
void lr_decay(AdamState& state, long step, long every, double factor);

// Shared-schedule Adam over a list of parameter tensors. Missing grads are
// treated as zero.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<DiffTensor> params, double lr);

  void step();
  void zero_grad();
  // Applies the decay rule to every per-parameter state at the current step.
  void decay(long every, double factor);

  long step_count() const { return step_count_; }
  double lr() const;
  std::size_t parameter_count() const { return params_.size(); }

 private:
  std::vector<DiffTensor> params_;
  std::vector<AdamState> states_;
  long step_count_ = 0;
};

}  // namespace lip3d
