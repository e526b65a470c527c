#pragma once

#include <string>
#include <vector>

#include "hallucdet/heads.hpp"
#include "hallucdet/kv.hpp"
#include "hallucdet/layers.hpp"
#include "hallucdet/matrix.hpp"
#include "hallucdet/rng.hpp"
#include "hallucdet/synthworld.hpp"

namespace hallucdet {

enum class HallucinatorVariant { none, conservative, aggressive };

const char* variant_name(HallucinatorVariant variant);
HallucinatorVariant variant_from_name(const std::string& name);

/// Generator network mapping [prototype; seed; noise] (3d) to a new example
/// (d). Conservative: two layers, operating on classifier-space features.
/// Aggressive: three layers, operating on raw proposal features before the
/// box-head transform. ReLU between layers, none after the last.
struct Hallucinator {
  HallucinatorVariant variant = HallucinatorVariant::conservative;
  std::vector<AffineLayer> layers;

  int feature_dim() const { return layers.empty() ? 0 : layers.back().weights.rows; }
  int input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols; }
};

/// Near-identity start: the first layer passes the seed block through
/// unchanged (zeros on the prototype and noise blocks), later square layers
/// start at identity, and N(0, init_noise_std^2) is added to every weight.
/// Biases start at zero, so with zero init noise and zero epsilon the network
/// reproduces any nonnegative seed exactly.
Hallucinator init_hallucinator(int feature_dim, HallucinatorVariant variant, double init_noise_std,
                               Rng& rng);

struct NoiseSpec {
  Vec mean;
  Vec stddev;
};

/// Per-dimension sample mean/std (n-1 denominator) of the base-stage
/// features; the noise input epsilon is drawn from this distribution.
NoiseSpec fit_noise_spec(const std::vector<Vec>& base_features);
Vec sample_noise(const NoiseSpec& spec, Rng& rng);

/// Rows are [prototype; seed; noise] concatenations, one per example.
Matrix hallucinator_inputs(const Matrix& prototypes, const Matrix& seeds, const Matrix& noise);

struct HallucinatorForward {
  std::vector<AffineCache> caches;
  Matrix outputs;
};

HallucinatorForward hallucinator_forward(const Hallucinator& h, const Matrix& inputs);
Matrix hallucinate_batch(const Hallucinator& h, const Matrix& inputs);

/// Deterministic single-example generation with the noise already drawn.
Vec hallucinate_vector(const Hallucinator& h, const Vec& prototype, const Vec& seed, const Vec& noise);

/// Draws epsilon, looks up the seed's class prototype, and returns the
/// generated example carrying the seed's label.
LabeledFeature hallucinate(const Hallucinator& h, const PrototypeRegistry& prototypes,
                           const LabeledFeature& seed, const NoiseSpec& noise, Rng& rng);

struct HallucinatorGrads {
  std::vector<AffineGrads> layers;  // aligned with Hallucinator::layers
};

/// Backpropagates dL/doutputs through the layer stack; optionally also
/// returns dL/dinputs (needed when the aggressive variant sits under further
/// transforms).
HallucinatorGrads hallucinator_backward(const Hallucinator& h, const HallucinatorForward& forward,
                                        const Matrix& grad_outputs, Matrix* grad_inputs = nullptr);

struct HallucinationLoss {
  double loss = 0.0;
  Matrix hallucinated;
  HallucinatorGrads grads;
};

/// Generation loss: cross-entropy of the hallucinated examples under a
/// frozen head,
/// summed (not averaged) over the generated set; gradients reach only the
/// hallucinator parameters. When the variant hallucinates below the box-head
/// transform, pass that transform so generated examples are routed through it
/// before the head; transform_grads (optional) receives its gradient for the
/// one phase where it is trainable.
HallucinationLoss hallucination_loss(const Hallucinator& h, const ClassifierHead& frozen_head,
                                     const Matrix& inputs, const std::vector<int>& target_rows,
                                     const AffineLayer* transform = nullptr,
                                     AffineGrads* transform_grads = nullptr);

struct AggressiveLoss {
  double loss = 0.0;
  HallucinatorGrads halluc_grads;
  AffineGrads transform_grads;
};

/// Training loss for the aggressive variant: hallucinated examples pass
/// through the box-head transform T, per-class means of those become
/// prototypes, and held-out validation features (also passed through T) are
/// classified against them with scaled cosine similarity. Mean cross-entropy;
/// gradients flow to both the hallucinator and T.
AggressiveLoss aggressive_prototypical_loss(const Hallucinator& h, const AffineLayer& transform,
                                            const Matrix& halluc_inputs,
                                            const std::vector<int>& halluc_classes,
                                            const Matrix& validation_features,
                                            const std::vector<int>& validation_classes,
                                            const std::vector<int>& class_ids, double cosine_scale);

/// Flat parameter view (per layer: weights row-major, then bias) used by
/// finite-difference checks and generic update loops.
Vec hallucinator_params(const Hallucinator& h);
void set_hallucinator_params(Hallucinator& h, const Vec& params);
Vec flatten_grads(const Hallucinator& h, const HallucinatorGrads& grads);

KvFile hallucinator_to_kv(const Hallucinator& h);
Hallucinator hallucinator_from_kv(const KvFile& kv);
KvFile noise_spec_to_kv(const NoiseSpec& spec);
NoiseSpec noise_spec_from_kv(const KvFile& kv);

}  // namespace hallucdet
