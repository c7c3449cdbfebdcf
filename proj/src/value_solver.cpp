#include "pmedit/value_solver.hpp"

#include "pmedit/error.hpp"

#include <cmath>
#include <string>

namespace pmedit {

void ValueSolveOptions::validate() const {
  if (max_iters < 1) throw Error(ErrorKind::InvalidConfig, "max_iters must be >= 1");
  if (!(step_size > 0.0)) throw Error(ErrorKind::InvalidConfig, "step_size must be > 0");
  if (!(decay >= 0.0)) throw Error(ErrorKind::InvalidConfig, "decay must be >= 0");
  if (!(grad_tol >= 0.0) || !(target_tol >= 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "tolerances must be >= 0");
  }
}

std::string_view to_string(ValueSolveStop stop) {
  switch (stop) {
    case ValueSolveStop::ClosedForm: return "closed_form";
    case ValueSolveStop::TargetTol: return "target_tol";
    case ValueSolveStop::GradTol: return "grad_tol";
    case ValueSolveStop::MaxIters: return "max_iters";
    case ValueSolveStop::StepUnderflow: return "step_underflow";
  }
  return "unknown";
}

namespace {

constexpr double kMinStep = 1e-30;

void check_shapes(const ToyModel& model, std::int64_t layer, const Vector& h, const Vector& v,
                  const Vector& target, const Vector& v_init) {
  if (layer < 0 || layer >= model.num_layers()) {
    throw Error(ErrorKind::DimensionMismatch, "layer " + std::to_string(layer) + " out of range");
  }
  const auto d = model.d_model();
  if (h.size() != d || v.size() != d || target.size() != d || v_init.size() != d) {
    throw Error(ErrorKind::DimensionMismatch, "value solve vectors must have dimension d_model");
  }
}

}  // namespace

LossGrad value_loss_grad(const ToyModel& model, std::int64_t layer, const Vector& h,
                         const Vector& v, const Vector& target, double decay,
                         const Vector& v_init) {
  check_shapes(model, layer, h, v, target, v_init);
  const Activation act = model.config().activation;

  // Forward through the downstream blocks, keeping pre-activations.
  std::vector<Vector> pre;
  pre.reserve(model.num_layers() - layer - 1);
  Vector out = h + v;
  for (std::int64_t l = layer + 1; l < model.num_layers(); ++l) {
    pre.push_back(model.up(l) * out);
    Vector key = pre.back();
    for (Eigen::Index i = 0; i < key.size(); ++i) key(i) = activate(act, key(i));
    out += model.down(l) * key;
  }

  const Vector residual = out - target;
  const Vector anchor = v - v_init;
  LossGrad lg;
  lg.loss = residual.squaredNorm() + decay * anchor.squaredNorm();

  // d/dh_l of h_{l+1} = I + W diag(act'(A h)) A, applied transposed.
  Vector g = 2.0 * residual;
  for (std::int64_t l = model.num_layers() - 1; l > layer; --l) {
    const Vector& p = pre[l - layer - 1];
    Vector back = model.down(l).transpose() * g;
    for (Eigen::Index i = 0; i < back.size(); ++i) back(i) *= activate_grad(act, p(i));
    g += model.up(l).transpose() * back;
  }
  lg.grad = g + 2.0 * decay * anchor;
  return lg;
}

ValueSolveResult solve_value(const ToyModel& model, std::int64_t layer, const Vector& x,
                             const Vector& target, const ValueSolveOptions& opts) {
  opts.validate();
  if (layer < 0 || layer >= model.num_layers()) {
    throw Error(ErrorKind::DimensionMismatch, "layer " + std::to_string(layer) + " out of range");
  }
  if (target.size() != model.d_model()) {
    throw Error(ErrorKind::DimensionMismatch, "target must have dimension d_model");
  }
  if (!target.allFinite()) throw Error(ErrorKind::InvalidConfig, "non-finite target");

  const ForwardTrace trace = forward(model, x);
  const Vector& h = trace.hidden[layer];
  const Vector v_init = model.down(layer) * trace.keys[layer];

  ValueSolveResult result;
  LossGrad current = value_loss_grad(model, layer, h, v_init, target, opts.decay, v_init);
  if (!std::isfinite(current.loss)) throw Error(ErrorKind::Diverged, "initial loss is not finite");
  result.initial_loss = current.loss;

  if (layer == model.num_layers() - 1) {
    // Quadratic with identity Hessian scale: minimizer is explicit.
    result.value = (target - h + opts.decay * v_init) / (1.0 + opts.decay);
    result.final_loss =
        value_loss_grad(model, layer, h, result.value, target, opts.decay, v_init).loss;
    result.iters = 0;
    result.stop = ValueSolveStop::ClosedForm;
    return result;
  }

  Vector v = v_init;
  double step = opts.step_size;
  result.stop = ValueSolveStop::MaxIters;
  std::int64_t it = 0;
  for (; it < opts.max_iters; ++it) {
    if (current.loss <= opts.target_tol) {
      result.stop = ValueSolveStop::TargetTol;
      break;
    }
    if (current.grad.norm() <= opts.grad_tol) {
      result.stop = ValueSolveStop::GradTol;
      break;
    }
    bool accepted = false;
    while (step >= kMinStep) {
      const Vector candidate = v - step * current.grad;
      LossGrad next = value_loss_grad(model, layer, h, candidate, target, opts.decay, v_init);
      if (std::isfinite(next.loss) && next.loss <= current.loss) {
        v = candidate;
        current = std::move(next);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.stop = ValueSolveStop::StepUnderflow;
      break;
    }
  }
  if (!std::isfinite(current.loss)) throw Error(ErrorKind::Diverged, "loss is not finite");
  if (it == opts.max_iters && result.stop == ValueSolveStop::MaxIters) {
    if (current.loss <= opts.target_tol) result.stop = ValueSolveStop::TargetTol;
  }
  result.value = std::move(v);
  result.final_loss = current.loss;
  result.iters = it;
  return result;
}

}  // namespace pmedit
