#ifndef AAD_GRADCHECK_HPP
#define AAD_GRADCHECK_HPP

#include <algorithm>
#include <vector>

#include "aad/graph.hpp"

namespace aad {

// Compares reverse-mode gradients against central finite differences in
// double precision. `build` must construct a fresh scalar loss from the
// current parameter values (and must be deterministic across calls, e.g.
// re-seed any rng it uses). Returns max |analytic - numeric| normalized by
// the largest gradient magnitude encountered (floored at 1e-6).
template <typename Build>
double finite_diff_max_rel_error(const std::vector<Var<double>>& params, Build&& build,
                                 double eps = 1e-5) {
  for (auto& p : params) p->grad = Tensor<double>{};
  auto loss = build();
  require(loss->value.numel() == 1, "gradcheck: loss must be scalar");
  backward(loss);
  std::vector<Tensor<double>> analytic;
  for (auto& p : params)
    analytic.push_back(p->grad.empty() ? Tensor<double>::zeros(p->value.shape) : p->grad);

  double max_mag = 1e-6, max_diff = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& v = params[pi]->value;
    for (int64_t k = 0; k < v.numel(); ++k) {
      const double orig = v[k];
      double lp, lm;
      {
        NoGradGuard ng;
        v[k] = orig + eps;
        lp = build()->value[0];
        v[k] = orig - eps;
        lm = build()->value[0];
        v[k] = orig;
      }
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic[pi][k];
      max_mag = std::max({max_mag, std::abs(numeric), std::abs(a)});
      max_diff = std::max(max_diff, std::abs(a - numeric));
    }
  }
  return max_diff / max_mag;
}

}  // namespace aad

#endif  // AAD_GRADCHECK_HPP
