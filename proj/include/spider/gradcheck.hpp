#ifndef SPIDER_GRADCHECK_HPP
#define SPIDER_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "spider/ops.hpp"
#include "spider/tensor.hpp"

namespace spider {

// Central-difference verification of reverse-mode gradients.
//
// build_loss must construct the scalar loss graph from the current parameter
// values and be deterministic (no RNG draws, no stateful side effects that
// change its value between calls). Analytic gradients come from one taped
// backward pass; numeric ones from (f(t+eps) - f(t-eps)) / (2 eps) per
// coordinate. Returns max over coordinates of
// |analytic - numeric| / max(1, |numeric|).
template <class T>
double finite_diff_check(const std::function<TensorPtr<T>()>& build_loss,
                         const std::vector<TensorPtr<T>>& params,
                         double eps = 1e-5) {
  if (eps <= 0) throw ContractError("finite_diff_check requires eps > 0");

  for (const auto& p : params) p->zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(&tape);
    auto loss = build_loss();
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad_vec());

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      const T saved = p.data()[i];
      p.data()[i] = saved + static_cast<T>(eps);
      double f_plus;
      {
        NoGradGuard ng;
        f_plus = static_cast<double>(build_loss()->value());
      }
      p.data()[i] = saved - static_cast<T>(eps);
      double f_minus;
      {
        NoGradGuard ng;
        f_minus = static_cast<double>(build_loss()->value());
      }
      p.data()[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace spider

#endif
