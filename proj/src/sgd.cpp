#include "hallucdet/sgd.hpp"

#include <string>

#include "hallucdet/errors.hpp"

namespace hallucdet {

void SgdConfig::validate() const {
  if (learning_rate <= 0.0) throw argument_error("learning_rate must be positive");
  if (total_iterations <= 0) throw argument_error("total_iterations must be positive");
  if (decay_ratio <= 0.0 || decay_ratio >= 1.0) throw argument_error("decay_ratio must be in (0,1)");
  long prev = -1;
  for (long m : decay_milestones) {
    if (m <= prev) throw argument_error("decay_milestones must be strictly increasing");
    if (m >= total_iterations) throw argument_error("decay milestone beyond total_iterations");
    prev = m;
  }
}

double effective_learning_rate(const SgdConfig& config, long iteration) {
  double lr = config.learning_rate;
  for (long m : config.decay_milestones)
    if (m <= iteration) lr *= config.decay_ratio;
  return lr;
}

Vec sgd_step(const Vec& params, const Vec& grads, long iteration, const SgdConfig& config) {
  if (params.size() != grads.size()) throw shape_error("sgd_step: params/grads size mismatch");
  if (iteration >= config.total_iterations)
    throw argument_error("sgd_step: iteration " + std::to_string(iteration) + " beyond schedule");
  const double lr = effective_learning_rate(config, iteration);
  Vec out = params;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= lr * grads[i];
  return out;
}

Matrix sgd_step(const Matrix& params, const Matrix& grads, long iteration, const SgdConfig& config) {
  if (!params.same_shape(grads)) throw shape_error("sgd_step: params/grads shape mismatch");
  Matrix out = params;
  out.data = sgd_step(params.data, grads.data, iteration, config);
  return out;
}

}  // namespace hallucdet
