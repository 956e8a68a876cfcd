#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dtpsr/autodiff.hpp"
#include "dtpsr/rng.hpp"

namespace dtpsr::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  const CounterRng rng(seed, "test.random_tensor");
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal(i);
  return t;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Relative error |a - n| / max(|a|, |n|, floor) between analytic and
/// numerical derivatives.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares d(loss)/d(leaf) from backward() with central differences of
/// step h for every element of every leaf.
inline GradCheckResult grad_check(const std::function<ad::Var(ad::Graph&)>& loss_fn,
                                  const std::vector<std::pair<std::string, ad::Var>>& leaves,
                                  double h = 1e-4) {
  for (auto& [name, v] : leaves) v->grad = Tensor(v->value.shape());
  {
    ad::Graph g;
    g.backward(loss_fn(g));
  }
  GradCheckResult r;
  for (auto& [name, v] : leaves) {
    for (std::size_t i = 0; i < v->value.size(); ++i) {
      const double orig = v->value[i];
      v->value[i] = orig + h;
      ad::Graph gp(false);
      const double fp = loss_fn(gp)->value[0];
      v->value[i] = orig - h;
      ad::Graph gm(false);
      const double fm = loss_fn(gm)->value[0];
      v->value[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double err = relative_error(v->grad[i], num);
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(v->grad[i]) +
                  " numeric=" + std::to_string(num);
      }
    }
  }
  return r;
}

}  // namespace dtpsr::test
