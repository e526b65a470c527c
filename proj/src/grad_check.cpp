#include "hallucdet/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "hallucdet/errors.hpp"

namespace hallucdet {

double grad_check(const std::function<double(const Vec&)>& loss, const Vec& params, const Vec& analytic_grad,
                  double epsilon) {
  if (epsilon <= 0.0) throw argument_error("grad_check: epsilon must be positive");
  if (params.size() != analytic_grad.size()) throw shape_error("grad_check: gradient size mismatch");

  double worst = 0.0;
  Vec probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + epsilon;
    const double above = loss(probe);
    probe[i] = params[i] - epsilon;
    const double below = loss(probe);
    probe[i] = params[i];
    if (!std::isfinite(above) || !std::isfinite(below))
      throw numeric_error("grad_check: loss evaluated to a non-finite value");
    const double numeric = (above - below) / (2.0 * epsilon);
    const double analytic = analytic_grad[i];
    const double rel =
        std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace hallucdet
