#pragma once

#include <vector>

#include "hallucdet/matrix.hpp"

namespace hallucdet {

/// Plain SGD with step decay: the effective rate at iteration t is
/// learning_rate * decay_ratio^(number of milestones <= t).
struct SgdConfig {
  double learning_rate = 0.02;
  long total_iterations = 1500;
  std::vector<long> decay_milestones{400, 1100};
  double decay_ratio = 0.1;

  void validate() const;
};

double effective_learning_rate(const SgdConfig& config, long iteration);

/// params - lr(iteration) * grads. Purely functional; iteration must be
/// < total_iterations.
Vec sgd_step(const Vec& params, const Vec& grads, long iteration, const SgdConfig& config);
Matrix sgd_step(const Matrix& params, const Matrix& grads, long iteration, const SgdConfig& config);

}  // namespace hallucdet
