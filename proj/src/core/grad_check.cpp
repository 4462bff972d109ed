#include "v2m/core/grad_check.hpp"

#include <cmath>

#include "v2m/core/error.hpp"

namespace v2m {
namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor>& inputs) {
  Graph g(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  const Var y = f(g, vars);
  if (y.value().size() != 1) throw DimensionError("grad_check needs a scalar-valued function");
  return y.value()[0];
}

}  // namespace

GradCheckResult grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw InputError("grad_check step must lie in [1e-7, 1e-3]");

  std::vector<Tensor> analytic;
  {
    Graph g(true);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.input(t));
    const Var y = f(g, vars);
    g.backward(y);
    for (const Var& v : vars) analytic.push_back(g.grad(v));
  }

  GradCheckResult res;
  std::vector<Tensor> work(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + h;
      const double fp = evaluate(f, work);
      work[k][i] = x0 - h;
      const double fm = evaluate(f, work);
      work[k][i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[k][i];
      const double err = std::abs(ad - fd) / (std::abs(fd) + 1e-12);
      if (!std::isfinite(err)) throw NumericError("grad_check: non-finite difference quotient");
      if (err > res.max_rel_error) {
        res = GradCheckResult{err, k, i, ad, fd};
      }
    }
  }
  return res;
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h) {
  MultiScalarFn wrapped = [&f](Graph& g, std::span<const Var> v) { return f(g, v[0]); };
  return grad_check(wrapped, std::span<const Tensor>(&x, 1), h);
}

}  // namespace v2m
