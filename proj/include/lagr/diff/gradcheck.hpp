#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lagr/diff/ops.hpp"
#include "lagr/io.hpp"

namespace lagr::diff {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kRelErrFloor = 1e-8;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
inline std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x0, double h = kFdStep) {
  if (!(h > 0)) throw OracleError("finite_diff: step must be positive");
  std::vector<double> grad(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double keep = x0[i];
    x0[i] = keep + h;
    const double fp = f(x0);
    x0[i] = keep - h;
    const double fm = f(x0);
    x0[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw OracleError("finite_diff: non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline double relative_error(double a, double n, double floor = kRelErrFloor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct GradReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_rel_err = 0.0;
  /// Smallest |input| to a relu/abs node at the base point.
  double kink_distance = 0.0;

  std::string csv() const {
    io::CsvWriter w({"param_index", "analytic", "numeric", "rel_err"});
    for (std::size_t i = 0; i < analytic.size(); ++i)
      w.row({std::to_string(i), io::fmt(analytic[i], 17), io::fmt(numeric[i], 17),
             io::fmt(relative_error(analytic[i], numeric[i]), 6)});
    return w.str();
  }
};

/// Builds a scalar on `tape` from leaves holding the given input tensors.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients of f with respect to every entry of every
/// input against central finite differences.
inline GradReport check_gradient(const GraphFn& f, const std::vector<Tensor>& inputs, double h = kFdStep) {
  GradReport rep;
  {
    KinkMonitor monitor;
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    const Var root = f(tape, leaves);
    rep.kink_distance = monitor.distance();
    tape.backward(root);
    for (const Var& v : leaves)
      for (double g : v.grad().data()) rep.analytic.push_back(g);
  }
  std::vector<double> flat;
  for (const Tensor& t : inputs) flat.insert(flat.end(), t.data().begin(), t.data().end());
  auto eval = [&](const std::vector<double>& x) {
    Tape tape;
    std::vector<Var> leaves;
    std::size_t off = 0;
    for (const Tensor& t : inputs) {
      Tensor c(t.shape());
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(off),
                x.begin() + static_cast<std::ptrdiff_t>(off + t.size()), c.data().begin());
      off += t.size();
      leaves.push_back(tape.leaf(std::move(c), false));
    }
    return f(tape, leaves).value().item();
  };
  rep.numeric = finite_diff(eval, flat, h);
  for (std::size_t i = 0; i < rep.analytic.size(); ++i)
    rep.max_rel_err = std::max(rep.max_rel_err, relative_error(rep.analytic[i], rep.numeric[i]));
  return rep;
}

inline GradReport check_gradient(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x0,
                                 double h = kFdStep) {
  return check_gradient([&f](Tape& t, const std::vector<Var>& v) { return f(t, v[0]); },
                        std::vector<Tensor>{x0}, h);
}

} // namespace lagr::diff
