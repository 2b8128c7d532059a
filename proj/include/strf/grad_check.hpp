// Central-difference gradient checking in double precision.
#ifndef STRF_GRAD_CHECK_HPP
#define STRF_GRAD_CHECK_HPP

#include "strf/autodiff.hpp"

#include <functional>

namespace strf {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // 0 checks every coordinate; otherwise an evenly strided subset per leaf.
  std::size_t max_coords_per_leaf = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

namespace detail {

inline double eval_scalar(const std::function<VarD()>& f) {
  NoGradGuard guard;
  const VarD out = f();
  if (out.value().size() != 1)
    throw ContractError("grad_check: function must return a scalar, got dims " +
                        to_string(out.dims()));
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw EvaluationError("grad_check: function value is not finite");
  return v;
}

}  // namespace detail

// Compares backward() against central differences for every listed leaf.
// Error per coordinate is |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport grad_check(const std::function<VarD()>& f, std::vector<VarD> leaves,
                                  GradCheckOptions opts = {}) {
  const VarD out = f();
  if (out.value().size() != 1)
    throw ContractError("grad_check: function must return a scalar, got dims " +
                        to_string(out.dims()));
  if (!out.value().all_finite()) throw EvaluationError("grad_check: function value is not finite");
  const GradientMap<double> grads = backward(out);

  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    VarD& leaf = leaves[l];
    const TensorD analytic = grads(leaf);
    auto& x = leaf.mutable_value();
    const std::size_t n = x.size();
    const std::size_t step =
        opts.max_coords_per_leaf == 0 || n <= opts.max_coords_per_leaf
            ? 1
            : (n + opts.max_coords_per_leaf - 1) / opts.max_coords_per_leaf;
    for (std::size_t i = 0; i < n; i += step) {
      const double orig = x[i];
      x[i] = orig + opts.epsilon;
      const double fp = detail::eval_scalar(f);
      x[i] = orig - opts.epsilon;
      const double fm = detail::eval_scalar(f);
      x[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.epsilon);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_leaf = l;
        report.worst_index = i;
      }
    }
  }
  return report;
}

// Single-input form: f maps x to a scalar.
inline double grad_check(const std::function<VarD(const VarD&)>& f, const TensorD& x,
                         double epsilon = 1e-5) {
  VarD leaf = VarD::parameter(x);
  GradCheckOptions opts;
  opts.epsilon = epsilon;
  return grad_check([&] { return f(leaf); }, {leaf}, opts).max_rel_error;
}

}  // namespace strf

#endif  // STRF_GRAD_CHECK_HPP
