#pragma once

#include "pmedit/toy_model.hpp"

#include <cstdint>
#include <string_view>

namespace pmedit {

struct ValueSolveOptions {
  std::int64_t max_iters = 500;
  double step_size = 0.05;
  /// Weight of the anchor penalty gamma * ||v - v_init||^2.
  double decay = 1e-3;
  double grad_tol = 1e-7;
  double target_tol = 1e-6;

  void validate() const;
};

enum class ValueSolveStop {
  ClosedForm,   // no downstream blocks, minimizer computed exactly
  TargetTol,
  GradTol,
  MaxIters,
  StepUnderflow,  // line search could not find a decrease
};

std::string_view to_string(ValueSolveStop stop);

struct ValueSolveResult {
  Vector value;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::int64_t iters = 0;
  ValueSolveStop stop = ValueSolveStop::MaxIters;
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// L(v) = ||forward_from(model, layer, h, v) - target||^2 + decay * ||v - v_init||^2
/// and its exact gradient by back-propagation through blocks layer+1..L-1.
LossGrad value_loss_grad(const ToyModel& model, std::int64_t layer, const Vector& h,
                         const Vector& v, const Vector& target, double decay,
                         const Vector& v_init);

/// Finds the FFN output at `layer` that drives the model output for x toward target.
/// Gradient descent with step halving on loss increase, started at the current value.
/// Throws Diverged if the loss turns non-finite.
ValueSolveResult solve_value(const ToyModel& model, std::int64_t layer, const Vector& x,
                             const Vector& target, const ValueSolveOptions& opts = {});

}  // namespace pmedit
