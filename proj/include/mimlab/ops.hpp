#pragma once

// Differentiable primitives over Var. Each function computes the forward
// value eagerly and records a closure that maps the output gradient back to
// its inputs. Reductions accumulate left to right in at least double
// precision so results do not depend on vectorization width.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mimlab/autodiff.hpp"

namespace mimlab {

namespace detail {

template <typename Scalar>
using Acc = std::conditional_t<(sizeof(Scalar) < sizeof(double)), double, Scalar>;

template <typename Scalar>
Tape<Scalar>& same_tape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.tape() != b.tape() || a.tape() == nullptr) throw ShapeError(std::string(op) + ": operands live on different tapes");
  return *a.tape();
}

template <typename Scalar>
[[noreturn]] void shape_mismatch(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

template <typename Scalar>
void require_rank2(const char* op, const Tensor<Scalar>& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_string(a.shape()));
}

/// Elementwise unary op; dfdx(x, y) is the local derivative.
template <typename Scalar, typename F, typename D>
Var<Scalar> unary(const Var<Scalar>& a, F f, D dfdx) {
  Tape<Scalar>& tape = *a.tape();
  const Tensor<Scalar>& x = a.value();
  Tensor<Scalar> y(x.shape());
  for (Index i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const int ia = a.id();
  auto out = tape.record(std::move(y), {ia}, {});
  const int io = out.id();
  // The closure is attached after recording so it can refer to the output id.
  return tape.attach_backward(out, [ia, io, dfdx](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (!t.requires_grad(ia)) return;
    const Tensor<Scalar>& xv = t.value(ia);
    const Tensor<Scalar>& yv = t.value(io);
    Tensor<Scalar>& ga = t.grad_slot(ia);
    for (Index i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (operands must have identical shapes).

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b, "add");
  if (a.shape() != b.shape()) detail::shape_mismatch("add", a.value(), b.value());
  Tensor<Scalar> y(a.shape(), a.value().data() + b.value().data());
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(ia, g.matrix());
    t.accumulate(ib, g.matrix());
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b, "sub");
  if (a.shape() != b.shape()) detail::shape_mismatch("sub", a.value(), b.value());
  Tensor<Scalar> y(a.shape(), a.value().data() - b.value().data());
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(ia, g.matrix());
    t.accumulate(ib, -g.matrix());
  });
}

/// Hadamard product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b, "mul");
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.value(), b.value());
  Tensor<Scalar> y(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(ia, g.matrix().cwiseProduct(t.value(ib).matrix()));
    t.accumulate(ib, g.matrix().cwiseProduct(t.value(ia).matrix()));
  });
}

/// Elementwise maximum; ties route the gradient to the first operand.
template <typename Scalar>
Var<Scalar> maximum(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b, "max");
  if (a.shape() != b.shape()) detail::shape_mismatch("max", a.value(), b.value());
  Tensor<Scalar> y(a.shape(), a.value().data().cwiseMax(b.value().data()));
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const Tensor<Scalar>& av = t.value(ia);
    const Tensor<Scalar>& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<Scalar>& ga = t.grad_slot(ia);
      for (Index i = 0; i < g.size(); ++i)
        if (av[i] >= bv[i]) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<Scalar>& gb = t.grad_slot(ib);
      for (Index i = 0; i < g.size(); ++i)
        if (av[i] < bv[i]) gb[i] += g[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> y(a.shape(), a.value().data() * s);
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia},
                          [ia, s](Tape<Scalar>& t, const Tensor<Scalar>& g) { t.accumulate(ia, g.matrix() * s); });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a) { return scale(a, Scalar(-1)); }

// ---------------------------------------------------------------------------
// Linear algebra and layout.

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  Tape<Scalar>& tape = detail::same_tape(a, b, "matmul");
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) detail::shape_mismatch("matmul", av, bv);
  Tensor<Scalar> y({av.rows(), bv.cols()});
  y.matrix().noalias() = av.matrix() * bv.matrix();
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (t.requires_grad(ia)) t.grad_slot(ia).matrix().noalias() += g.matrix() * t.value(ib).matrix().transpose();
    if (t.requires_grad(ib)) t.grad_slot(ib).matrix().noalias() += t.value(ia).matrix().transpose() * g.matrix();
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  if (shape_size(shape) != a.value().size())
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  Tensor<Scalar> y = a.value().reshaped(std::move(shape));
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (t.requires_grad(ia)) t.grad_slot(ia).data() += g.data();
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  detail::require_rank2("transpose", a.value());
  const Tensor<Scalar>& av = a.value();
  Tensor<Scalar> y({av.cols(), av.rows()});
  y.matrix() = av.matrix().transpose();
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(ia, g.matrix().transpose());
  });
}

/// Rows [begin, begin + count) of the matrix view.
template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Index begin, Index count) {
  const Tensor<Scalar>& av = a.value();
  if (begin < 0 || count < 0 || begin + count > av.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(av.shape()));
  Tensor<Scalar> y({count, av.cols()});
  y.matrix() = av.matrix().middleRows(begin, count);
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia, begin, count](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (t.requires_grad(ia)) t.grad_slot(ia).matrix().middleRows(begin, count) += g.matrix();
  });
}

/// Columns [begin, begin + count) of the matrix view.
template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Index begin, Index count) {
  const Tensor<Scalar>& av = a.value();
  if (begin < 0 || count < 0 || begin + count > av.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(av.shape()));
  Tensor<Scalar> y({av.rows(), count});
  y.matrix() = av.matrix().middleCols(begin, count);
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia, begin, count](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (t.requires_grad(ia)) t.grad_slot(ia).matrix().middleCols(begin, count) += g.matrix();
  });
}

/// Selected rows of the matrix view, in the given order (repeats allowed).
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& a, std::vector<Index> rows) {
  const Tensor<Scalar>& av = a.value();
  Tensor<Scalar> y({static_cast<Index>(rows.size()), av.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows())
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(av.shape()));
    y.matrix().row(static_cast<Index>(i)) = av.matrix().row(rows[i]);
  }
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia, rows = std::move(rows)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (!t.requires_grad(ia)) return;
    auto ga = t.grad_slot(ia).matrix();
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.matrix().row(static_cast<Index>(i));
  });
}

/// Flat-index gather; the result is rank 1.
template <typename Scalar>
Var<Scalar> gather(const Var<Scalar>& a, std::vector<Index> indices) {
  const Tensor<Scalar>& av = a.value();
  Tensor<Scalar> y({static_cast<Index>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= av.size())
      throw ShapeError("gather: index " + std::to_string(indices[i]) + " outside " + shape_string(av.shape()));
    y[static_cast<Index>(i)] = av[indices[i]];
  }
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia},
                          [ia, indices = std::move(indices)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                            if (!t.requires_grad(ia)) return;
                            Tensor<Scalar>& ga = t.grad_slot(ia);
                            for (std::size_t i = 0; i < indices.size(); ++i) ga[indices[i]] += g[static_cast<Index>(i)];
                          });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const Index cols = parts[0].value().cols();
  Index rows = 0;
  std::vector<int> ids;
  std::vector<Index> offsets;
  for (const Var<Scalar>& p : parts) {
    if (p.tape() != parts[0].tape()) throw ShapeError("concat_rows: operands live on different tapes");
    if (p.value().cols() != cols) detail::shape_mismatch("concat_rows", parts[0].value(), p.value());
    offsets.push_back(rows);
    rows += p.value().rows();
    ids.push_back(p.id());
  }
  Tensor<Scalar> y({rows, cols});
  for (std::size_t i = 0; i < parts.size(); ++i)
    y.matrix().middleRows(offsets[i], parts[i].value().rows()) = parts[i].value().matrix();
  std::vector<int> inputs = ids;
  return parts[0].tape()->record(std::move(y), std::move(inputs),
                                 [ids, offsets](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                   for (std::size_t i = 0; i < ids.size(); ++i) {
                                     if (!t.requires_grad(ids[i])) continue;
                                     Tensor<Scalar>& gi = t.grad_slot(ids[i]);
                                     gi.matrix() += g.matrix().middleRows(offsets[i], gi.rows());
                                   }
                                 });
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Index rows = parts[0].value().rows();
  Index cols = 0;
  std::vector<int> ids;
  std::vector<Index> offsets;
  for (const Var<Scalar>& p : parts) {
    if (p.tape() != parts[0].tape()) throw ShapeError("concat_cols: operands live on different tapes");
    if (p.value().rows() != rows) detail::shape_mismatch("concat_cols", parts[0].value(), p.value());
    offsets.push_back(cols);
    cols += p.value().cols();
    ids.push_back(p.id());
  }
  Tensor<Scalar> y({rows, cols});
  for (std::size_t i = 0; i < parts.size(); ++i)
    y.matrix().middleCols(offsets[i], parts[i].value().cols()) = parts[i].value().matrix();
  std::vector<int> inputs = ids;
  return parts[0].tape()->record(std::move(y), std::move(inputs),
                                 [ids, offsets](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                   for (std::size_t i = 0; i < ids.size(); ++i) {
                                     if (!t.requires_grad(ids[i])) continue;
                                     Tensor<Scalar>& gi = t.grad_slot(ids[i]);
                                     gi.matrix() += g.matrix().middleCols(offsets[i], gi.cols());
                                   }
                                 });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  return concat_rows(std::span<const Var<Scalar>>(parts));
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  return concat_cols(std::span<const Var<Scalar>>(parts));
}

/// Repeats a single row (shape [d] or [1, d]) n times into an n x d matrix.
template <typename Scalar>
Var<Scalar> broadcast_rows(const Var<Scalar>& a, Index n) {
  const Tensor<Scalar>& av = a.value();
  if (av.rows() != 1) throw ShapeError("broadcast: expected a single row, got " + shape_string(av.shape()));
  Tensor<Scalar> y({n, av.cols()});
  y.matrix().rowwise() = av.matrix().row(0);
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (!t.requires_grad(ia)) return;
    auto ga = t.grad_slot(ia).matrix();
    for (Index r = 0; r < g.rows(); ++r) ga.row(0) += g.matrix().row(r);
  });
}

/// Row i of the result is `row` where mask[i] != 0 and a's row i otherwise.
/// Replaced rows of `a` receive no gradient and never influence the value.
template <typename Scalar>
Var<Scalar> where_rows(std::span<const std::uint8_t> mask, const Var<Scalar>& a, const Var<Scalar>& row) {
  Tape<Scalar>& tape = detail::same_tape(a, row, "where_rows");
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols() || static_cast<Index>(mask.size()) != av.rows())
    detail::shape_mismatch("where_rows", av, rv);
  Tensor<Scalar> y({av.rows(), av.cols()});
  for (Index r = 0; r < av.rows(); ++r)
    y.matrix().row(r) = mask[static_cast<std::size_t>(r)] ? rv.matrix().row(0) : av.matrix().row(r);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const int ia = a.id(), ir = row.id();
  return tape.record(std::move(y), {ia, ir}, [ia, ir, m = std::move(m)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const bool need_a = t.requires_grad(ia), need_r = t.requires_grad(ir);
    for (Index r = 0; r < g.rows(); ++r) {
      if (m[static_cast<std::size_t>(r)]) {
        if (need_r) t.grad_slot(ir).matrix().row(0) += g.matrix().row(r);
      } else if (need_a) {
        t.grad_slot(ia).matrix().row(r) += g.matrix().row(r);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions.

/// Sum of all elements; rank-0 result.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const Tensor<Scalar>& av = a.value();
  detail::Acc<Scalar> s = 0;
  for (Index i = 0; i < av.size(); ++i) s += av[i];
  const int ia = a.id();
  return a.tape()->record(Tensor<Scalar>::scalar(static_cast<Scalar>(s)), {ia},
                          [ia](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                            if (t.requires_grad(ia)) t.grad_slot(ia).data().array() += g[0];
                          });
}

/// Sum over axis 0 (result [cols]) or axis 1 (result [rows]) of the matrix view.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a, int axis) {
  const Tensor<Scalar>& av = a.value();
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  const Index rows = av.rows(), cols = av.cols();
  Tensor<Scalar> y({axis == 0 ? cols : rows});
  if (axis == 0) {
    for (Index c = 0; c < cols; ++c) {
      detail::Acc<Scalar> s = 0;
      for (Index r = 0; r < rows; ++r) s += av.at(r, c);
      y[c] = static_cast<Scalar>(s);
    }
  } else {
    for (Index r = 0; r < rows; ++r) {
      detail::Acc<Scalar> s = 0;
      for (Index c = 0; c < cols; ++c) s += av.at(r, c);
      y[r] = static_cast<Scalar>(s);
    }
  }
  const int ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia, axis](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (!t.requires_grad(ia)) return;
    auto ga = t.grad_slot(ia).matrix();
    if (axis == 0)
      ga.rowwise() += Eigen::Map<const RowMatrix<Scalar>>(g.data().data(), 1, g.size()).row(0);
    else
      ga.colwise() += g.data();
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(n));
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a, int axis) {
  const Index n = axis == 0 ? a.value().rows() : a.value().cols();
  if (n == 0) throw ShapeError("mean: empty axis");
  return scale(sum(a, axis), Scalar(1) / static_cast<Scalar>(n));
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities.

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  return detail::unary(a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  return detail::unary(a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return Scalar(1) / x; });
}

template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& a) {
  return detail::unary(a, [](Scalar x) { return std::sqrt(x); }, [](Scalar, Scalar y) { return Scalar(0.5) / y; });
}

/// |x|; the subgradient at 0 is 0.
template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
  return detail::unary(
      a, [](Scalar x) { return std::abs(x); },
      [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0)); });
}

/// Exact gelu: x * Phi(x).
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  constexpr Scalar inv_sqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  constexpr Scalar inv_sqrt2pi = std::numbers::inv_sqrtpi_v<Scalar> * inv_sqrt2;
  return detail::unary(
      a, [](Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2)); },
      [](Scalar x, Scalar) {
        const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(Scalar(-0.5) * x * x);
      });
}

/// Huber-style smooth l1 with transition at beta.
template <typename Scalar>
Var<Scalar> smooth_l1(const Var<Scalar>& a, Scalar beta = Scalar(1)) {
  return detail::unary(
      a,
      [beta](Scalar x) {
        const Scalar ax = std::abs(x);
        return ax < beta ? Scalar(0.5) * x * x / beta : ax - Scalar(0.5) * beta;
      },
      [beta](Scalar x, Scalar) {
        if (std::abs(x) < beta) return x / beta;
        return x > 0 ? Scalar(1) : Scalar(-1);
      });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations over the last axis.

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a) {
  const Tensor<Scalar>& av = a.value();
  Tensor<Scalar> y(av.shape());
  for (Index r = 0; r < av.rows(); ++r) {
    const Scalar m = av.matrix().row(r).maxCoeff();
    detail::Acc<Scalar> s = 0;
    for (Index c = 0; c < av.cols(); ++c) {
      const Scalar e = std::exp(av.at(r, c) - m);
      y.at(r, c) = e;
      s += e;
    }
    y.matrix().row(r) /= static_cast<Scalar>(s);
  }
  const int ia = a.id();
  auto out = a.tape()->record(std::move(y), {ia}, {});
  const int io = out.id();
  return a.tape()->attach_backward(out, [ia, io](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (!t.requires_grad(ia)) return;
    const Tensor<Scalar>& yv = t.value(io);
    auto ga = t.grad_slot(ia).matrix();
    for (Index r = 0; r < g.rows(); ++r) {
      const Scalar dot = g.matrix().row(r).dot(yv.matrix().row(r));
      ga.row(r) += yv.matrix().row(r).cwiseProduct(g.matrix().row(r) - RowMatrix<Scalar>::Constant(1, g.cols(), dot));
    }
  });
}

template <typename Scalar>
Var<Scalar> log_softmax(const Var<Scalar>& a) {
  const Tensor<Scalar>& av = a.value();
  Tensor<Scalar> y(av.shape());
  for (Index r = 0; r < av.rows(); ++r) {
    const Scalar m = av.matrix().row(r).maxCoeff();
    detail::Acc<Scalar> s = 0;
    for (Index c = 0; c < av.cols(); ++c) s += std::exp(av.at(r, c) - m);
    const Scalar lse = m + static_cast<Scalar>(std::log(s));
    for (Index c = 0; c < av.cols(); ++c) y.at(r, c) = av.at(r, c) - lse;
  }
  const int ia = a.id();
  auto out = a.tape()->record(std::move(y), {ia}, {});
  const int io = out.id();
  return a.tape()->attach_backward(out, [ia, io](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (!t.requires_grad(ia)) return;
    const Tensor<Scalar>& yv = t.value(io);
    auto ga = t.grad_slot(ia).matrix();
    for (Index r = 0; r < g.rows(); ++r) {
      detail::Acc<Scalar> gs = 0;
      for (Index c = 0; c < g.cols(); ++c) gs += g.at(r, c);
      for (Index c = 0; c < g.cols(); ++c) ga(r, c) += g.at(r, c) - std::exp(yv.at(r, c)) * static_cast<Scalar>(gs);
    }
  });
}

/// Normalizes each row to zero mean and unit (biased) variance. No affine
/// parameters; compose with mul/add for those.
template <typename Scalar>
Var<Scalar> layernorm(const Var<Scalar>& a, Scalar eps = Scalar(1e-5)) {
  const Tensor<Scalar>& av = a.value();
  const Index rows = av.rows(), cols = av.cols();
  Tensor<Scalar> y(av.shape());
  Vector<Scalar> rstd(rows);
  for (Index r = 0; r < rows; ++r) {
    detail::Acc<Scalar> mu = 0;
    for (Index c = 0; c < cols; ++c) mu += av.at(r, c);
    mu /= cols;
    detail::Acc<Scalar> var = 0;
    for (Index c = 0; c < cols; ++c) {
      const detail::Acc<Scalar> d = av.at(r, c) - mu;
      var += d * d;
    }
    var /= cols;
    const detail::Acc<Scalar> inv = 1 / std::sqrt(var + eps);
    rstd[r] = static_cast<Scalar>(inv);
    for (Index c = 0; c < cols; ++c) y.at(r, c) = static_cast<Scalar>((av.at(r, c) - mu) * inv);
  }
  const int ia = a.id();
  auto out = a.tape()->record(std::move(y), {ia}, {});
  const int io = out.id();
  return a.tape()->attach_backward(out, [ia, io, rstd = std::move(rstd)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (!t.requires_grad(ia)) return;
    const Tensor<Scalar>& yv = t.value(io);
    auto ga = t.grad_slot(ia).matrix();
    const Index cols = g.cols();
    for (Index r = 0; r < g.rows(); ++r) {
      detail::Acc<Scalar> mg = 0, mgy = 0;
      for (Index c = 0; c < cols; ++c) {
        mg += g.at(r, c);
        mgy += static_cast<detail::Acc<Scalar>>(g.at(r, c)) * yv.at(r, c);
      }
      mg /= cols;
      mgy /= cols;
      for (Index c = 0; c < cols; ++c)
        ga(r, c) += rstd[r] * static_cast<Scalar>(g.at(r, c) - mg - yv.at(r, c) * mgy);
    }
  });
}

}  // namespace mimlab
