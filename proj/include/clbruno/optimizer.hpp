#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clbruno/autodiff.hpp"

namespace clbruno {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one optimization run.
struct AdamState {
  explicit AdamState(std::span<Parameter* const> params, AdamOptions options = {});

  AdamOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step_count = 0;
};

/// One bias-corrected adaptive-moment update of `params` from their current
/// gradients. Gradients are left untouched. Throws DivergenceError naming the
/// first parameter with a non-finite gradient, before any value changes.
void adam_step(std::span<Parameter* const> params, AdamState& state);

/// Convenience owner of a parameter list and its state.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options = {})
      : params_(std::move(params)), state_(params_, options) {}

  void step() { adam_step(params_, state_); }
  void zero_grad();
  const AdamState& state() const { return state_; }
  std::span<Parameter* const> params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamState state_;
};

}  // namespace clbruno
