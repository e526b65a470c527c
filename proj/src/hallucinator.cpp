#include "hallucdet/hallucinator.hpp"

#include <cmath>
#include <map>

#include "hallucdet/errors.hpp"

namespace hallucdet {

const char* variant_name(HallucinatorVariant variant) {
  switch (variant) {
    case HallucinatorVariant::none: return "none";
    case HallucinatorVariant::conservative: return "conservative";
    case HallucinatorVariant::aggressive: return "aggressive";
  }
  throw argument_error("variant_name: unknown variant");
}

HallucinatorVariant variant_from_name(const std::string& name) {
  if (name == "none") return HallucinatorVariant::none;
  if (name == "conservative") return HallucinatorVariant::conservative;
  if (name == "aggressive") return HallucinatorVariant::aggressive;
  throw argument_error("variant must be 'none', 'conservative' or 'aggressive', got '" + name + "'");
}

Hallucinator init_hallucinator(int feature_dim, HallucinatorVariant variant, double init_noise_std,
                               Rng& rng) {
  if (feature_dim < 1) throw argument_error("init_hallucinator: feature_dim must be >= 1");
  if (variant == HallucinatorVariant::none)
    throw argument_error("init_hallucinator: variant 'none' has no network");
  if (init_noise_std < 0.0) throw argument_error("init_hallucinator: init_noise_std must be >= 0");

  const int d = feature_dim;
  const int num_layers = variant == HallucinatorVariant::conservative ? 2 : 3;
  Hallucinator h;
  h.variant = variant;
  h.layers.reserve(num_layers);

  AffineLayer first;
  first.weights = Matrix(d, 3 * d);
  // The input is [prototype; seed; noise]; identity sits on the seed block.
  for (int i = 0; i < d; ++i) first.weights(i, d + i) = 1.0;
  first.bias.assign(d, 0.0);
  h.layers.push_back(std::move(first));
  for (int l = 1; l < num_layers; ++l) {
    AffineLayer layer;
    layer.weights = Matrix::identity(d);
    layer.bias.assign(d, 0.0);
    h.layers.push_back(std::move(layer));
  }
  for (AffineLayer& layer : h.layers)
    for (double& w : layer.weights.data) w += rng.normal(0.0, init_noise_std);
  return h;
}

NoiseSpec fit_noise_spec(const std::vector<Vec>& base_features) {
  if (base_features.size() < 2) throw argument_error("fit_noise_spec: need at least 2 features");
  const std::size_t dim = base_features.front().size();
  NoiseSpec spec;
  spec.mean.assign(dim, 0.0);
  spec.stddev.assign(dim, 0.0);
  for (const Vec& f : base_features) {
    if (f.size() != dim) throw shape_error("fit_noise_spec: inconsistent feature dimensions");
    for (std::size_t j = 0; j < dim; ++j) spec.mean[j] += f[j];
  }
  const double n = static_cast<double>(base_features.size());
  for (double& m : spec.mean) m /= n;
  for (const Vec& f : base_features)
    for (std::size_t j = 0; j < dim; ++j) {
      const double delta = f[j] - spec.mean[j];
      spec.stddev[j] += delta * delta;
    }
  for (double& s : spec.stddev) s = std::sqrt(s / (n - 1.0));
  return spec;
}

Vec sample_noise(const NoiseSpec& spec, Rng& rng) {
  Vec eps(spec.mean.size());
  for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = rng.normal(spec.mean[j], spec.stddev[j]);
  return eps;
}

Matrix hallucinator_inputs(const Matrix& prototypes, const Matrix& seeds, const Matrix& noise) {
  if (prototypes.rows != seeds.rows || prototypes.rows != noise.rows ||
      prototypes.cols != seeds.cols || prototypes.cols != noise.cols)
    throw shape_error("hallucinator_inputs: prototype/seed/noise shapes must match");
  return concat_cols(prototypes, seeds, noise);
}

HallucinatorForward hallucinator_forward(const Hallucinator& h, const Matrix& inputs) {
  if (inputs.cols != h.input_dim()) throw shape_error("hallucinator_forward: input dim mismatch");
  HallucinatorForward fwd;
  fwd.caches.resize(h.layers.size());
  Matrix current = inputs;
  for (std::size_t l = 0; l < h.layers.size(); ++l) {
    const bool last = l + 1 == h.layers.size();
    current = last ? affine_forward(current, h.layers[l], &fwd.caches[l])
                   : affine_relu_forward(current, h.layers[l], &fwd.caches[l]);
  }
  fwd.outputs = std::move(current);
  return fwd;
}

Matrix hallucinate_batch(const Hallucinator& h, const Matrix& inputs) {
  return hallucinator_forward(h, inputs).outputs;
}

Vec hallucinate_vector(const Hallucinator& h, const Vec& prototype, const Vec& seed, const Vec& noise) {
  const int d = h.feature_dim();
  if (static_cast<int>(prototype.size()) != d || static_cast<int>(seed.size()) != d ||
      static_cast<int>(noise.size()) != d)
    throw shape_error("hallucinate_vector: inputs must all have the network's feature dimension");
  Matrix input(1, 3 * d);
  for (int j = 0; j < d; ++j) {
    input(0, j) = prototype[j];
    input(0, d + j) = seed[j];
    input(0, 2 * d + j) = noise[j];
  }
  return hallucinate_batch(h, input).row(0);
}

LabeledFeature hallucinate(const Hallucinator& h, const PrototypeRegistry& prototypes,
                           const LabeledFeature& seed, const NoiseSpec& noise, Rng& rng) {
  if (seed.label == kBackground)
    throw argument_error("hallucinate: background examples are never hallucinated");
  if (!prototypes.has(seed.label))
    throw contract_error("hallucinate: no prototype registered for class " + std::to_string(seed.label));
  const Vec eps = sample_noise(noise, rng);
  LabeledFeature out;
  out.vector = hallucinate_vector(h, prototypes.get(seed.label), seed.vector, eps);
  out.label = seed.label;
  out.origin = Origin::hallucinated;
  return out;
}

HallucinatorGrads hallucinator_backward(const Hallucinator& h, const HallucinatorForward& forward,
                                        const Matrix& grad_outputs, Matrix* grad_inputs) {
  HallucinatorGrads grads;
  grads.layers.resize(h.layers.size());
  Matrix upstream = grad_outputs;
  for (int l = static_cast<int>(h.layers.size()) - 1; l >= 0; --l) {
    const bool last = l + 1 == static_cast<int>(h.layers.size());
    AffineGrads layer_grads = last ? affine_backward(upstream, h.layers[l], forward.caches[l])
                                   : affine_relu_backward(upstream, h.layers[l], forward.caches[l]);
    upstream = layer_grads.input;
    grads.layers[l] = std::move(layer_grads);
  }
  if (grad_inputs) *grad_inputs = std::move(upstream);
  return grads;
}

HallucinationLoss hallucination_loss(const Hallucinator& h, const ClassifierHead& frozen_head,
                                     const Matrix& inputs, const std::vector<int>& target_rows,
                                     const AffineLayer* transform, AffineGrads* transform_grads) {
  if (inputs.rows == 0) throw argument_error("hallucination_loss: empty generated set");
  if (static_cast<int>(target_rows.size()) != inputs.rows)
    throw argument_error("hallucination_loss: one target row per input required");
  HallucinatorForward fwd = hallucinator_forward(h, inputs);
  AffineCache transform_cache;
  const Matrix classifier_in =
      transform ? affine_relu_forward(fwd.outputs, *transform, &transform_cache) : fwd.outputs;
  const Matrix logits = head_logits(frozen_head, classifier_in);
  const CrossEntropyResult ce = softmax_cross_entropy(logits, target_rows);
  // The generation loss sums over the generated set; undo the mean reduction.
  const double batch = static_cast<double>(inputs.rows);
  Matrix grad_logits = ce.grad_logits;
  for (double& g : grad_logits.data) g *= batch;
  Matrix grad_classifier_in;
  head_backward(frozen_head, classifier_in, logits, grad_logits, nullptr, &grad_classifier_in);
  Matrix grad_outputs;
  if (transform) {
    AffineGrads t = affine_relu_backward(grad_classifier_in, *transform, transform_cache);
    grad_outputs = std::move(t.input);
    if (transform_grads) *transform_grads = std::move(t);
  } else {
    grad_outputs = std::move(grad_classifier_in);
  }
  HallucinationLoss out;
  out.loss = ce.loss * batch;
  out.grads = hallucinator_backward(h, fwd, grad_outputs);
  out.hallucinated = std::move(fwd.outputs);
  return out;
}

AggressiveLoss aggressive_prototypical_loss(const Hallucinator& h, const AffineLayer& transform,
                                            const Matrix& halluc_inputs,
                                            const std::vector<int>& halluc_classes,
                                            const Matrix& validation_features,
                                            const std::vector<int>& validation_classes,
                                            const std::vector<int>& class_ids, double cosine_scale) {
  if (class_ids.size() < 2)
    throw argument_error("aggressive_prototypical_loss: need at least 2 classes");
  if (static_cast<int>(halluc_classes.size()) != halluc_inputs.rows)
    throw argument_error("aggressive_prototypical_loss: one class per hallucination input required");
  if (static_cast<int>(validation_classes.size()) != validation_features.rows)
    throw argument_error("aggressive_prototypical_loss: one class per validation feature required");

  std::map<int, int> class_index;
  for (std::size_t i = 0; i < class_ids.size(); ++i) class_index[class_ids[i]] = static_cast<int>(i);
  const int num_classes = static_cast<int>(class_ids.size());
  const int d = h.feature_dim();

  std::vector<int> counts(num_classes, 0);
  std::vector<int> halluc_index(halluc_inputs.rows);
  for (int i = 0; i < halluc_inputs.rows; ++i) {
    auto it = class_index.find(halluc_classes[i]);
    if (it == class_index.end())
      throw argument_error("aggressive_prototypical_loss: hallucination class not in class_ids");
    halluc_index[i] = it->second;
    ++counts[it->second];
  }
  for (int c = 0; c < num_classes; ++c)
    if (counts[c] == 0)
      throw contract_error("aggressive_prototypical_loss: class " + std::to_string(class_ids[c]) +
                           " has no hallucinated examples");

  HallucinatorForward fwd = hallucinator_forward(h, halluc_inputs);
  AffineCache halluc_cache, val_cache;
  const Matrix halluc_post = affine_relu_forward(fwd.outputs, transform, &halluc_cache);
  const Matrix val_post = affine_relu_forward(validation_features, transform, &val_cache);

  Matrix prototypes(num_classes, d);
  for (int i = 0; i < halluc_post.rows; ++i)
    for (int j = 0; j < d; ++j) prototypes(halluc_index[i], j) += halluc_post(i, j);
  for (int c = 0; c < num_classes; ++c)
    for (int j = 0; j < d; ++j) prototypes(c, j) /= static_cast<double>(counts[c]);

  // Scaled-cosine scoring against the prototypes reuses the cosine-head math.
  ClassifierHead proto_head;
  proto_head.kind = HeadKind::cosine;
  proto_head.cosine_scale = cosine_scale;
  proto_head.weights = prototypes;

  std::vector<int> targets(validation_classes.size());
  for (std::size_t i = 0; i < validation_classes.size(); ++i) {
    auto it = class_index.find(validation_classes[i]);
    if (it == class_index.end())
      throw argument_error("aggressive_prototypical_loss: validation class not in class_ids");
    targets[i] = it->second;
  }

  const Matrix logits = head_logits(proto_head, val_post);
  const CrossEntropyResult ce = softmax_cross_entropy(logits, targets);
  Matrix grad_prototypes, grad_val_post;
  head_backward(proto_head, val_post, logits, ce.grad_logits, &grad_prototypes, &grad_val_post);

  Matrix grad_halluc_post(halluc_post.rows, d);
  for (int i = 0; i < halluc_post.rows; ++i) {
    const int c = halluc_index[i];
    for (int j = 0; j < d; ++j) grad_halluc_post(i, j) = grad_prototypes(c, j) / counts[c];
  }

  AffineGrads val_grads = affine_relu_backward(grad_val_post, transform, val_cache);
  AffineGrads halluc_grads_t = affine_relu_backward(grad_halluc_post, transform, halluc_cache);

  AggressiveLoss out;
  out.loss = ce.loss;
  out.transform_grads.weights = val_grads.weights + halluc_grads_t.weights;
  out.transform_grads.bias.resize(val_grads.bias.size());
  for (std::size_t j = 0; j < val_grads.bias.size(); ++j)
    out.transform_grads.bias[j] = val_grads.bias[j] + halluc_grads_t.bias[j];
  out.halluc_grads = hallucinator_backward(h, fwd, halluc_grads_t.input);
  return out;
}

Vec hallucinator_params(const Hallucinator& h) {
  Vec params;
  for (const AffineLayer& layer : h.layers) {
    params.insert(params.end(), layer.weights.data.begin(), layer.weights.data.end());
    params.insert(params.end(), layer.bias.begin(), layer.bias.end());
  }
  return params;
}

void set_hallucinator_params(Hallucinator& h, const Vec& params) {
  std::size_t offset = 0;
  for (AffineLayer& layer : h.layers) {
    if (offset + layer.weights.data.size() + layer.bias.size() > params.size())
      throw shape_error("set_hallucinator_params: parameter vector too short");
    std::copy(params.begin() + offset, params.begin() + offset + layer.weights.data.size(),
              layer.weights.data.begin());
    offset += layer.weights.data.size();
    std::copy(params.begin() + offset, params.begin() + offset + layer.bias.size(), layer.bias.begin());
    offset += layer.bias.size();
  }
  if (offset != params.size()) throw shape_error("set_hallucinator_params: parameter vector too long");
}

Vec flatten_grads(const Hallucinator& h, const HallucinatorGrads& grads) {
  if (grads.layers.size() != h.layers.size())
    throw shape_error("flatten_grads: layer count mismatch");
  Vec flat;
  for (const AffineGrads& g : grads.layers) {
    flat.insert(flat.end(), g.weights.data.begin(), g.weights.data.end());
    flat.insert(flat.end(), g.bias.begin(), g.bias.end());
  }
  return flat;
}

KvFile hallucinator_to_kv(const Hallucinator& h) {
  KvFile kv;
  kv.set_str("kind", "hallucinator");
  kv.set_str("variant", variant_name(h.variant));
  kv.set_i64("feature_dim", h.feature_dim());
  kv.set_i64("num_layers", static_cast<long long>(h.layers.size()));
  for (std::size_t l = 0; l < h.layers.size(); ++l) {
    const std::string prefix = "layer." + std::to_string(l);
    kv.set_mat(prefix + ".weights", h.layers[l].weights);
    kv.set_vec(prefix + ".bias", h.layers[l].bias);
  }
  return kv;
}

Hallucinator hallucinator_from_kv(const KvFile& kv) {
  if (kv.get_str("kind") != "hallucinator") throw parse_error("hallucinator_from_kv: kind mismatch");
  Hallucinator h;
  h.variant = variant_from_name(kv.get_str("variant"));
  const int num_layers = static_cast<int>(kv.get_i64("num_layers"));
  for (int l = 0; l < num_layers; ++l) {
    const std::string prefix = "layer." + std::to_string(l);
    AffineLayer layer;
    layer.weights = kv.get_mat(prefix + ".weights");
    layer.bias = kv.get_vec(prefix + ".bias");
    h.layers.push_back(std::move(layer));
  }
  return h;
}

KvFile noise_spec_to_kv(const NoiseSpec& spec) {
  KvFile kv;
  kv.set_str("kind", "noise_spec");
  kv.set_vec("mean", spec.mean);
  kv.set_vec("stddev", spec.stddev);
  return kv;
}

NoiseSpec noise_spec_from_kv(const KvFile& kv) {
  if (kv.get_str("kind") != "noise_spec") throw parse_error("noise_spec_from_kv: kind mismatch");
  NoiseSpec spec;
  spec.mean = kv.get_vec("mean");
  spec.stddev = kv.get_vec("stddev");
  return spec;
}

}  // namespace hallucdet
