#pragma once

#include <functional>
#include <span>

#include "hallucdet/matrix.hpp"

namespace hallucdet {

/// Central-difference gradient verification. `loss` must be deterministic in
/// the parameter vector it receives. Returns the maximum over parameters of
/// |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
double grad_check(const std::function<double(const Vec&)>& loss, const Vec& params, const Vec& analytic_grad,
                  double epsilon);

}  // namespace hallucdet
