#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "mimlab/tensor.hpp"

namespace mimlab {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Per-parameter moments and step count.
template <typename Scalar>
struct AdamWState {
  Tensor<Scalar> m;
  Tensor<Scalar> v;
  std::int64_t t = 0;

  static AdamWState like(const Tensor<Scalar>& param) {
    return AdamWState{Tensor<Scalar>::zeros(param.shape()), Tensor<Scalar>::zeros(param.shape()), 0};
  }
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
/// Throws NumericalError on a non-finite gradient and leaves param/state
/// untouched in that case.
template <typename Scalar>
void adamw_step(Tensor<Scalar>& param, const Tensor<Scalar>& grad, AdamWState<Scalar>& state, const AdamWHyper& hp,
                const std::string& name = "param") {
  if (grad.shape() != param.shape() || state.m.shape() != param.shape() || state.v.shape() != param.shape())
    throw ShapeError("adamw_step: shape mismatch for " + name + " " + shape_string(param.shape()) + " vs grad " +
                     shape_string(grad.shape()));
  if (!grad.all_finite()) throw NumericalError("adamw_step: non-finite gradient for " + name);

  state.t += 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  const Scalar b1 = static_cast<Scalar>(hp.beta1), b2 = static_cast<Scalar>(hp.beta2);
  auto m = state.m.data().array();
  auto v = state.v.data().array();
  auto g = grad.data().array();
  m = b1 * m + (Scalar(1) - b1) * g;
  v = b2 * v + (Scalar(1) - b2) * g * g;

  auto p = param.data().array();
  const Scalar decay = static_cast<Scalar>(hp.lr * hp.weight_decay);
  const Scalar lr = static_cast<Scalar>(hp.lr);
  const Scalar eps = static_cast<Scalar>(hp.eps);
  const Scalar inv_bc1 = static_cast<Scalar>(1.0 / bc1);
  const Scalar inv_bc2 = static_cast<Scalar>(1.0 / bc2);
  p = p - decay * p - lr * (m * inv_bc1) / ((v * inv_bc2).sqrt() + eps);
}

}  // namespace mimlab
