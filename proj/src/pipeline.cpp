#include "hallucdet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "hallucdet/errors.hpp"
#include "hallucdet/layers.hpp"

namespace hallucdet {

const char* proposal_mode_name(ProposalMode mode) {
  return mode == ProposalMode::single ? "single" : "corpns";
}

ProposalMode proposal_mode_from_name(const std::string& name) {
  if (name == "single") return ProposalMode::single;
  if (name == "corpns") return ProposalMode::corpns;
  throw argument_error("proposal mode must be 'single' or 'corpns', got '" + name + "'");
}

const char* init_mode_name(InitMode mode) {
  return mode == InitMode::voc_random ? "voc_random" : "coco_novel_pretrain";
}

InitMode init_mode_from_name(const std::string& name) {
  if (name == "voc_random") return InitMode::voc_random;
  if (name == "coco_novel_pretrain") return InitMode::coco_novel_pretrain;
  throw argument_error("init mode must be 'voc_random' or 'coco_novel_pretrain', got '" + name + "'");
}

const char* train_mode_name(TrainMode mode) { return mode == TrainMode::em ? "em" : "joint"; }

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "em") return TrainMode::em;
  if (name == "joint") return TrainMode::joint;
  throw argument_error("train mode must be 'em' or 'joint', got '" + name + "'");
}

int TrainConfig::fg_count() const { return static_cast<int>(std::lround(batch_size * fg_fraction)); }

void TrainConfig::validate(const SyntheticWorld& world) const {
  if (shot < 1) throw argument_error("config: shot must be >= 1");
  if (m < 0) throw argument_error("config: m must be >= 0");
  if (em_iterations != 1 && em_iterations != 2)
    throw argument_error("config: em_iterations must be 1 or 2");
  if (batch_size <= 0) throw argument_error("config: batch_size must be positive");
  if (fg_fraction <= 0.0 || fg_fraction >= 1.0)
    throw argument_error("config: fg_fraction must lie in (0,1)");
  if (fg_per_class <= 0) throw argument_error("config: fg_per_class must be positive");
  if (fg_count() <= 0 || bg_count() <= 0)
    throw argument_error("config: batch must contain both foreground and background");
  if (fg_count() % fg_per_class != 0)
    throw argument_error("config: foreground share of the batch must be divisible by fg_per_class");
  if (classes_per_batch() < world.novel_classes)
    throw argument_error("config: batch must have room for every novel class");
  if (classes_per_batch() > world.base_classes)
    throw argument_error("config: batch class count exceeds the number of base classes");
  if (base_pool_per_class < 2) throw argument_error("config: base_pool_per_class must be >= 2");
  if (proposals_per_instance < 0)
    throw argument_error("config: proposals_per_instance must be >= 0");
  if (test_fg_per_class <= 0) throw argument_error("config: test_fg_per_class must be positive");
  if (head_init_std < 0.0 || novel_init_std < 0.0 || halluc_init_noise < 0.0 ||
      transform_init_std < 0.0 || rpn_init_std < 0.0)
    throw argument_error("config: init noise levels must be >= 0");
  if (cosine_scale <= 0.0) throw argument_error("config: cosine_scale must be positive");
  if (rpn_heads < 2) throw argument_error("config: rpn_heads must be >= 2");
  if (coop_threshold <= 0.0 || coop_threshold >= 1.0)
    throw argument_error("config: coop_threshold must lie in (0,1)");
  if (div_epsilon < 0.0) throw argument_error("config: div_epsilon must be >= 0");
  if (tau <= 0.0 || tau >= 1.0) throw argument_error("config: tau must lie in (0,1)");
  base_sgd.validate();
  finetune_sgd.validate();
  halluc_base_sgd.validate();
  halluc_finetune_sgd.validate();
  novel_pretrain_sgd.validate();
  if (halluc_finetune_sgd.total_iterations != finetune_sgd.total_iterations)
    throw argument_error(
        "config: the hallucinator fine-tune step must share the classifier's iteration budget");
}

Matrix apply_transform(const AffineLayer& transform, const Matrix& raw) {
  return affine_relu_forward(raw, transform);
}

Vec apply_transform(const AffineLayer& transform, const Vec& raw) {
  Matrix m(1, static_cast<int>(raw.size()));
  m.set_row(0, raw);
  return apply_transform(transform, m).row(0);
}

namespace {

bool aggressive_space(const TrainConfig& config) {
  return config.variant == HallucinatorVariant::aggressive;
}

Vec to_halluc_space(const TrainConfig& config, const AffineLayer& transform, const Vec& raw) {
  return aggressive_space(config) ? raw : apply_transform(transform, raw);
}

struct RawBatch {
  Matrix features;  // raw feature space, foreground rows first
  std::vector<int> labels;
  std::vector<int> objectness;
};

RawBatch draw_base_batch(const SyntheticWorld& world, const TrainConfig& config, Rng& rng) {
  const int fg = config.fg_count();
  const int bg = config.bg_count();
  RawBatch batch;
  batch.features = Matrix(fg + bg, world.feature_dim);
  batch.labels.reserve(fg + bg);
  batch.objectness.reserve(fg + bg);
  const std::vector<std::size_t> classes =
      rng.sample_without_replacement(world.base_classes, config.classes_per_batch());
  int row = 0;
  for (std::size_t cls : classes) {
    for (int q = 0; q < config.fg_per_class; ++q) {
      const Vec instance = sample_instance(world, static_cast<int>(cls), rng);
      batch.features.set_row(row++, sample_proposals(world, instance, 1, rng).front());
      batch.labels.push_back(static_cast<int>(cls));
      batch.objectness.push_back(1);
    }
  }
  for (const LabeledFeature& f : sample_background(world, bg, rng)) {
    batch.features.set_row(row++, f.vector);
    batch.labels.push_back(kBackground);
    batch.objectness.push_back(0);
  }
  return batch;
}

void check_finite(double loss, const char* stage, long iteration) {
  if (!std::isfinite(loss))
    throw numeric_error(std::string(stage) + " diverged at iteration " + std::to_string(iteration) +
                        ": non-finite loss");
}

Vec add_vecs(const Vec& a, const Vec& b) {
  Vec out = a;
  axpy(out, 1.0, b);
  return out;
}

}  // namespace

BaseState train_base_stage(const SyntheticWorld& world, const TrainConfig& config, const Rng& root) {
  config.validate(world);
  BaseState state;

  Rng head_rng = root.stream("head-init");
  state.head = make_head(config.head_kind, world.base_classes, world.feature_dim, config.head_init_std,
                         config.cosine_scale, head_rng);
  Rng transform_rng = root.stream("transform-init");
  state.transform.weights = Matrix(world.feature_dim, world.feature_dim);
  for (double& w : state.transform.weights.data) w = transform_rng.normal(0.0, config.transform_init_std);
  state.transform.bias.assign(world.feature_dim, 0.0);
  if (config.proposal == ProposalMode::corpns) {
    Rng rpn_rng = root.stream("rpn-init");
    state.ensemble = make_ensemble(config.rpn_heads, world.feature_dim, config.rpn_init_std,
                                   config.coop_threshold, config.div_epsilon, rpn_rng);
    state.has_ensemble = true;
  }

  Rng train_rng = root.stream("base-train");
  for (long iter = 0; iter < config.base_sgd.total_iterations; ++iter) {
    const RawBatch batch = draw_base_batch(world, config, train_rng);
    AffineCache cache;
    const Matrix classifier_in = affine_relu_forward(batch.features, state.transform, &cache);
    std::vector<int> rows(batch.labels.size());
    for (std::size_t i = 0; i < batch.labels.size(); ++i) rows[i] = label_to_row(state.head, batch.labels[i]);
    const HeadLoss loss = head_loss_and_grads(state.head, classifier_in, rows);
    check_finite(loss.loss, "base stage", iter);
    const AffineGrads transform_grads = affine_relu_backward(loss.grad_features, state.transform, cache);
    state.head.weights = sgd_step(state.head.weights, loss.grad_weights, iter, config.base_sgd);
    state.transform.weights = sgd_step(state.transform.weights, transform_grads.weights, iter, config.base_sgd);
    state.transform.bias = sgd_step(state.transform.bias, transform_grads.bias, iter, config.base_sgd);
    if (state.has_ensemble) {
      const CorpnsLoss rpn_loss =
          corpns_total_loss(state.ensemble, batch.features, batch.objectness, config.rpn_weights);
      check_finite(rpn_loss.loss, "base stage (proposal ensemble)", iter);
      set_ensemble_params(state.ensemble, sgd_step(ensemble_params(state.ensemble),
                                                   flatten_ensemble_grads(rpn_loss), iter, config.base_sgd));
    }
  }

  // Freeze prototypes and the noise distribution from a dedicated base pool,
  // in the space where this configuration hallucinates.
  Rng pool_rng = root.stream("base-pool");
  std::vector<int> ids;
  std::vector<Vec> means;
  std::vector<Vec> all_features;
  all_features.reserve(static_cast<std::size_t>(world.base_classes) * config.base_pool_per_class);
  for (int cls = 0; cls < world.base_classes; ++cls) {
    std::vector<Vec> class_features;
    class_features.reserve(config.base_pool_per_class);
    for (int k = 0; k < config.base_pool_per_class; ++k)
      class_features.push_back(
          to_halluc_space(config, state.transform, sample_instance(world, cls, pool_rng)));
    ids.push_back(cls);
    means.push_back(PrototypeRegistry::mean_of(class_features));
    for (Vec& f : class_features) all_features.push_back(std::move(f));
  }
  state.prototypes.freeze_base(ids, means);
  state.noise = fit_noise_spec(all_features);
  return state;
}

void train_hallucinator_base(BaseState& state, const SyntheticWorld& world, const TrainConfig& config,
                             const Rng& root) {
  if (!config.hallucination_active()) return;
  Rng init_rng = root.stream("halluc-init");
  state.halluc = init_hallucinator(world.feature_dim, config.variant, config.halluc_init_noise, init_rng);
  state.has_halluc = true;

  const bool agg = aggressive_space(config);
  const int d = world.feature_dim;
  Rng rng = root.stream("halluc-base");
  for (long iter = 0; iter < config.halluc_base_sgd.total_iterations; ++iter) {
    const std::vector<std::size_t> classes =
        rng.sample_without_replacement(world.base_classes, config.classes_per_batch());
    const int total = static_cast<int>(classes.size()) * config.m;
    Matrix inputs(total, 3 * d);
    std::vector<int> target_rows;
    std::vector<int> input_classes;
    target_rows.reserve(total);
    input_classes.reserve(total);
    int row = 0;
    for (std::size_t cls : classes) {
      const Vec prototype = state.prototypes.get(static_cast<int>(cls));
      for (int j = 0; j < config.m; ++j) {
        const Vec instance = sample_instance(world, static_cast<int>(cls), rng);
        const Vec seed =
            to_halluc_space(config, state.transform, sample_proposals(world, instance, 1, rng).front());
        inputs.set_row(row++, concat(prototype, seed, sample_noise(state.noise, rng)));
        target_rows.push_back(label_to_row(state.head, static_cast<int>(cls)));
        input_classes.push_back(static_cast<int>(cls));
      }
    }

    if (!agg) {
      const HallucinationLoss loss = hallucination_loss(state.halluc, state.head, inputs, target_rows);
      check_finite(loss.loss, "hallucinator base training", iter);
      set_hallucinator_params(state.halluc,
                              sgd_step(hallucinator_params(state.halluc),
                                       flatten_grads(state.halluc, loss.grads), iter, config.halluc_base_sgd));
      continue;
    }

    // Aggressive variant: the generation loss routed through T, plus the
    // prototypical validation loss; the hallucinator and T train jointly in
    // this phase.
    AffineGrads transform_from_gen;
    const HallucinationLoss gen_loss = hallucination_loss(state.halluc, state.head, inputs, target_rows,
                                                          &state.transform, &transform_from_gen);
    Matrix validation(static_cast<int>(classes.size()) * config.fg_per_class, d);
    std::vector<int> validation_classes;
    validation_classes.reserve(validation.rows);
    int vrow = 0;
    for (std::size_t cls : classes) {
      for (int q = 0; q < config.fg_per_class; ++q) {
        const Vec instance = sample_instance(world, static_cast<int>(cls), rng);
        validation.set_row(vrow++, sample_proposals(world, instance, 1, rng).front());
        validation_classes.push_back(static_cast<int>(cls));
      }
    }
    std::vector<int> class_ids(classes.begin(), classes.end());
    const AggressiveLoss proto_loss =
        aggressive_prototypical_loss(state.halluc, state.transform, inputs, input_classes, validation,
                                     validation_classes, class_ids, config.cosine_scale);
    check_finite(gen_loss.loss + proto_loss.loss, "hallucinator base training", iter);

    const Vec halluc_grads = add_vecs(flatten_grads(state.halluc, gen_loss.grads),
                                      flatten_grads(state.halluc, proto_loss.halluc_grads));
    set_hallucinator_params(state.halluc, sgd_step(hallucinator_params(state.halluc), halluc_grads, iter,
                                                   config.halluc_base_sgd));
    state.transform.weights =
        sgd_step(state.transform.weights, transform_from_gen.weights + proto_loss.transform_grads.weights,
                 iter, config.halluc_base_sgd);
    state.transform.bias =
        sgd_step(state.transform.bias,
                 add_vecs(transform_from_gen.bias, proto_loss.transform_grads.bias), iter,
                 config.halluc_base_sgd);
  }
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& is_positive,
                         int total_positives) {
  if (scores.size() != is_positive.size())
    throw argument_error("average_precision: scores/is_positive size mismatch");
  if (total_positives <= 0) throw argument_error("average_precision: total_positives must be positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  double ap = 0.0;
  int hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (is_positive[order[rank]]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return ap / total_positives;
}

EvalResult evaluate(const ClassifierHead& head, const AffineLayer& transform, const Episode& episode,
                    int base_classes, int novel_classes, double tau) {
  const std::size_t pool_size = episode.test_foreground.size() + episode.test_background.size();
  if (pool_size == 0) throw argument_error("evaluate: empty test pool");
  const int d = head.feature_dim();
  Matrix raw(static_cast<int>(pool_size), d);
  std::vector<int> labels;
  labels.reserve(pool_size);
  int row = 0;
  for (const LabeledFeature& f : episode.test_foreground) {
    raw.set_row(row++, f.vector);
    labels.push_back(f.label);
  }
  for (const LabeledFeature& f : episode.test_background) {
    raw.set_row(row++, f.vector);
    labels.push_back(f.label);
  }

  const Matrix probs = softmax_rows(head_logits(head, apply_transform(transform, raw)));
  std::vector<int> predicted(pool_size);
  std::vector<double> score(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) {
    int best = 0;
    for (int k = 1; k < probs.cols; ++k)
      if (probs(static_cast<int>(i), k) > probs(static_cast<int>(i), best)) best = k;
    predicted[i] = best;
    score[i] = probs(static_cast<int>(i), best);
  }

  EvalResult result;
  const int background_row = head.background_row();
  for (std::size_t i = 0; i < pool_size; ++i) {
    if (predicted[i] == background_row || score[i] < tau) continue;
    if (labels[i] == predicted[i])
      ++result.tp_count;
    else
      ++result.fp_count;
  }

  result.novel_ap.reserve(novel_classes);
  for (int n = 0; n < novel_classes; ++n) {
    const int cls = base_classes + n;
    int total_positives = 0;
    for (int label : labels)
      if (label == cls) ++total_positives;
    std::vector<double> class_scores;
    std::vector<bool> class_hits;
    for (std::size_t i = 0; i < pool_size; ++i) {
      if (predicted[i] != cls) continue;
      class_scores.push_back(score[i]);
      class_hits.push_back(labels[i] == cls);
    }
    result.novel_ap.push_back(class_scores.empty()
                                  ? 0.0
                                  : average_precision(class_scores, class_hits, total_positives));
  }
  result.mean_novel_ap =
      std::accumulate(result.novel_ap.begin(), result.novel_ap.end(), 0.0) / result.novel_ap.size();
  return result;
}

namespace {

struct ClassPool {
  std::vector<Vec> raw;
  std::vector<Vec> classifier_space;
};

// Per-class fine-tuning features: ground-truth instances plus proposals, the
// latter filtered by the frozen objectness ensemble in corpns mode.
std::vector<ClassPool> build_pools(const BaseState& base, const SyntheticWorld& world,
                                   const Episode& episode, const TrainConfig& config) {
  std::vector<ClassPool> pools(world.num_classes());
  auto add_feature = [&](int cls, const Vec& feature) {
    pools[cls].raw.push_back(feature);
    pools[cls].classifier_space.push_back(apply_transform(base.transform, feature));
  };
  auto add_group = [&](const std::vector<std::vector<InstanceSet>>& groups, int offset) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const int cls = offset + static_cast<int>(g);
      for (const InstanceSet& set : groups[g]) {
        add_feature(cls, set.instance);
        if (set.proposals.empty()) continue;
        if (config.proposal == ProposalMode::corpns && base.has_ensemble) {
          Matrix proposal_rows = Matrix::from_rows(set.proposals);
          const Vec scores = selected_scores(base.ensemble, proposal_rows);
          for (std::size_t p = 0; p < set.proposals.size(); ++p)
            if (scores[p] >= 0.5) add_feature(cls, set.proposals[p]);
        } else {
          for (const Vec& proposal : set.proposals) add_feature(cls, proposal);
        }
      }
    }
  };
  add_group(episode.base_sets, 0);
  add_group(episode.novel_sets, world.base_classes);
  return pools;
}

const Vec& halluc_space_entry(const ClassPool& pool, std::size_t index, bool agg) {
  return agg ? pool.raw[index] : pool.classifier_space[index];
}

// Running per-novel-class prototype over training + generated examples, in
// hallucination space.
struct NovelPrototypes {
  std::vector<Vec> sums;
  std::vector<long> counts;

  Vec mean(int novel_index) const {
    Vec m = sums[novel_index];
    for (double& v : m) v /= static_cast<double>(counts[novel_index]);
    return m;
  }
  void add(int novel_index, const Vec& v) {
    axpy(sums[novel_index], 1.0, v);
    ++counts[novel_index];
  }
};

struct Runtime {
  const BaseState* base = nullptr;
  const SyntheticWorld* world = nullptr;
  const TrainConfig* config = nullptr;
  ClassifierHead head;
  Hallucinator halluc;
  bool has_halluc = false;
  std::vector<ClassPool> pools;
  NovelPrototypes prototypes;
};

struct GeneratedSet {
  std::vector<LabeledFeature> examples;  // classifier space
  Matrix inputs;                         // hallucinator inputs, reused by the loss
  std::vector<int> target_rows;
};

// Builds hallucinator inputs for m examples per novel class using prototype
// values snapshotted at entry; optionally folds the generated outputs back
// into the running prototypes.
GeneratedSet generate_for_novel(Runtime& rt, bool update_prototypes, Rng& rng) {
  const TrainConfig& config = *rt.config;
  const bool agg = aggressive_space(config);
  const int d = rt.world->feature_dim;
  const int novel = rt.world->novel_classes;
  GeneratedSet out;
  out.inputs = Matrix(novel * config.m, 3 * d);
  out.target_rows.reserve(out.inputs.rows);
  std::vector<int> novel_index(out.inputs.rows);
  int row = 0;
  for (int n = 0; n < novel; ++n) {
    const int cls = rt.world->base_classes + n;
    const Vec prototype = rt.prototypes.mean(n);
    const ClassPool& pool = rt.pools[cls];
    for (int j = 0; j < config.m; ++j) {
      const Vec& seed = halluc_space_entry(pool, rng.uniform_index(pool.raw.size()), agg);
      out.inputs.set_row(row, concat(prototype, seed, sample_noise(rt.base->noise, rng)));
      out.target_rows.push_back(label_to_row(rt.head, cls));
      novel_index[row] = n;
      ++row;
    }
  }
  const Matrix generated = hallucinate_batch(rt.halluc, out.inputs);
  out.examples.reserve(generated.rows);
  for (int i = 0; i < generated.rows; ++i) {
    Vec produced = generated.row(i);
    if (update_prototypes) rt.prototypes.add(novel_index[i], produced);
    LabeledFeature f;
    f.label = rt.world->base_classes + novel_index[i];
    f.origin = Origin::hallucinated;
    f.vector = agg ? apply_transform(rt.base->transform, produced) : std::move(produced);
    out.examples.push_back(std::move(f));
  }
  return out;
}

struct IterationBatch {
  Batch batch;
  GeneratedSet generated;
  bool has_generated = false;
};

// One fine-tuning batch: balanced foreground over all novel classes plus a
// random base subset, fresh background, and (when active) size-preserving
// recomposition with hallucinated novel examples.
IterationBatch draw_finetune_batch(Runtime& rt, Rng& cls_rng, Rng& gen_rng) {
  const TrainConfig& config = *rt.config;
  const SyntheticWorld& world = *rt.world;
  std::vector<int> batch_classes;
  for (int n = 0; n < world.novel_classes; ++n) batch_classes.push_back(world.base_classes + n);
  const int base_slots = config.classes_per_batch() - world.novel_classes;
  for (std::size_t b : cls_rng.sample_without_replacement(world.base_classes, base_slots))
    batch_classes.push_back(static_cast<int>(b));

  std::vector<LabeledFeature> foreground;
  foreground.reserve(static_cast<std::size_t>(batch_classes.size()) * config.fg_per_class);
  for (int cls : batch_classes) {
    const ClassPool& pool = rt.pools[cls];
    for (int q = 0; q < config.fg_per_class; ++q) {
      const std::size_t pick = cls_rng.uniform_index(pool.classifier_space.size());
      foreground.push_back({pool.classifier_space[pick], cls, Origin::real});
    }
  }
  std::vector<LabeledFeature> background = sample_background(world, config.bg_count(), cls_rng);
  for (LabeledFeature& f : background) f.vector = apply_transform(rt.base->transform, f.vector);

  IterationBatch out;
  if (rt.has_halluc) {
    out.generated = generate_for_novel(rt, /*update_prototypes=*/true, gen_rng);
    out.has_generated = true;
    out.batch = compose_batch(std::move(foreground), std::move(background),
                              out.generated.examples, gen_rng);
  } else {
    out.batch = compose_batch(std::move(foreground), std::move(background), {}, gen_rng);
  }
  return out;
}

// Every classifier round replays the same batch and noise draws (the streams
// are keyed by name only), so consecutive rounds differ in exactly one input:
// the hallucinator parameters.  Round-over-round deltas therefore measure the
// value of refining the generator, not batch-sampling luck.
void classifier_round(Runtime& rt, const Rng& root) {
  const TrainConfig& config = *rt.config;
  Rng cls_rng = root.stream("ft-cls");
  Rng gen_rng = root.stream("ft-gen");
  Matrix features;
  std::vector<int> rows;
  for (long iter = 0; iter < config.finetune_sgd.total_iterations; ++iter) {
    IterationBatch it = draw_finetune_batch(rt, cls_rng, gen_rng);
    batch_to_rows(rt.head, it.batch, &features, &rows);
    const HeadLoss loss = head_loss_and_grads(rt.head, features, rows);
    check_finite(loss.loss, "fine-tuning", iter);
    rt.head.weights = sgd_step(rt.head.weights, loss.grad_weights, iter, config.finetune_sgd);
  }
}

void halluc_round(Runtime& rt, int round, const Rng& root) {
  const TrainConfig& config = *rt.config;
  const bool agg = aggressive_space(config);
  Rng rng = root.stream("ft-halluc-" + std::to_string(round));
  for (long iter = 0; iter < config.halluc_finetune_sgd.total_iterations; ++iter) {
    GeneratedSet gen = generate_for_novel(rt, /*update_prototypes=*/false, rng);
    const HallucinationLoss loss =
        hallucination_loss(rt.halluc, rt.head, gen.inputs, gen.target_rows,
                           agg ? &rt.base->transform : nullptr);
    check_finite(loss.loss, "hallucinator fine-tuning", iter);
    set_hallucinator_params(rt.halluc, sgd_step(hallucinator_params(rt.halluc),
                                                flatten_grads(rt.halluc, loss.grads), iter,
                                                config.halluc_finetune_sgd));
  }
}

Runtime setup_finetune(const BaseState& base, const SyntheticWorld& world, const Episode& episode,
                       const TrainConfig& config, const Rng& root) {
  config.validate(world);
  Runtime rt;
  rt.base = &base;
  rt.world = &world;
  rt.config = &config;

  Rng novel_rng = root.stream("novel-init");
  rt.head = expand_head(base.head, world.base_classes + world.novel_classes, config.novel_init_std,
                        novel_rng);
  if (config.init_mode == InitMode::coco_novel_pretrain) {
    const Matrix pretrained = coco_style_novel_init(base, episode, config, world.novel_classes, root);
    for (int n = 0; n < world.novel_classes; ++n)
      rt.head.weights.set_row(world.base_classes + n, pretrained.row(n));
  }

  rt.pools = build_pools(base, world, episode, config);
  rt.prototypes.sums.resize(world.novel_classes);
  rt.prototypes.counts.assign(world.novel_classes, 0);
  const bool agg = aggressive_space(config);
  for (int n = 0; n < world.novel_classes; ++n) {
    const ClassPool& pool = rt.pools[world.base_classes + n];
    rt.prototypes.sums[n].assign(world.feature_dim, 0.0);
    for (std::size_t i = 0; i < pool.raw.size(); ++i)
      rt.prototypes.add(n, halluc_space_entry(pool, i, agg));
  }

  rt.has_halluc = base.has_halluc && config.hallucination_active();
  if (rt.has_halluc) rt.halluc = base.halluc;
  return rt;
}

void notify(const PhaseCallback& cb, const std::string& phase, const Runtime& rt) {
  if (cb) cb(phase, rt.head, rt.has_halluc ? &rt.halluc : nullptr);
}

FinetuneOutput finish(Runtime& rt, const Episode& episode) {
  FinetuneOutput out;
  out.eval = evaluate(rt.head, rt.base->transform, episode, rt.world->base_classes,
                      rt.world->novel_classes, rt.config->tau);
  out.head = std::move(rt.head);
  out.halluc = std::move(rt.halluc);
  out.has_halluc = rt.has_halluc;
  return out;
}

}  // namespace

FinetuneOutput finetune_em(const BaseState& base, const SyntheticWorld& world, const Episode& episode,
                           const TrainConfig& config, const Rng& root, const PhaseCallback& on_phase) {
  Runtime rt = setup_finetune(base, world, episode, config, root);
  // Each round re-runs the full classifier fine-tune from the same initial
  // head; what persists across rounds is the hallucinator and the novel
  // prototype running means.  Round r+1 thus measures the value of the
  // refined generator fed with the accumulated class-center estimates.
  const ClassifierHead initial_head = rt.head;
  for (int round = 1; round <= config.em_iterations; ++round) {
    if (round > 1) rt.head = initial_head;
    notify(on_phase, "classifier-round-" + std::to_string(round) + ":begin", rt);
    classifier_round(rt, root);
    notify(on_phase, "classifier-round-" + std::to_string(round) + ":end", rt);
    if (round < config.em_iterations && rt.has_halluc) {
      notify(on_phase, "halluc-round-" + std::to_string(round) + ":begin", rt);
      halluc_round(rt, round, root);
      notify(on_phase, "halluc-round-" + std::to_string(round) + ":end", rt);
    }
  }
  return finish(rt, episode);
}

FinetuneOutput finetune_joint(const BaseState& base, const SyntheticWorld& world, const Episode& episode,
                              const TrainConfig& config, const Rng& root, const PhaseCallback& on_phase) {
  Runtime rt = setup_finetune(base, world, episode, config, root);
  Matrix features;
  std::vector<int> rows;
  const bool agg = aggressive_space(config);
  // Same iteration budget and the same per-round learning-rate trajectories as
  // the alternating schedule; the only difference is the interleaving — both
  // parameter sets move every step instead of taking turns.
  Rng cls_rng = root.stream("ft-cls");
  Rng gen_rng = root.stream("ft-gen");
  for (int round = 1; round <= config.em_iterations; ++round) {
    notify(on_phase, "joint-round-" + std::to_string(round) + ":begin", rt);
    for (long iter = 0; iter < config.finetune_sgd.total_iterations; ++iter) {
      IterationBatch it = draw_finetune_batch(rt, cls_rng, gen_rng);
      batch_to_rows(rt.head, it.batch, &features, &rows);
      const HeadLoss head_loss = head_loss_and_grads(rt.head, features, rows);
      check_finite(head_loss.loss, "joint fine-tuning", iter);
      // Both updates are computed from the same pre-step parameters and then
      // applied together.
      if (it.has_generated) {
        const HallucinationLoss halluc_loss =
            hallucination_loss(rt.halluc, rt.head, it.generated.inputs, it.generated.target_rows,
                               agg ? &rt.base->transform : nullptr);
        check_finite(halluc_loss.loss, "joint fine-tuning (hallucinator)", iter);
        set_hallucinator_params(rt.halluc,
                                sgd_step(hallucinator_params(rt.halluc),
                                         flatten_grads(rt.halluc, halluc_loss.grads), iter,
                                         config.halluc_finetune_sgd));
      }
      rt.head.weights =
          sgd_step(rt.head.weights, head_loss.grad_weights, iter, config.finetune_sgd);
    }
    notify(on_phase, "joint-round-" + std::to_string(round) + ":end", rt);
  }
  return finish(rt, episode);
}

Matrix coco_style_novel_init(const BaseState& base, const Episode& episode, const TrainConfig& config,
                             int novel_classes, const Rng& root) {
  if (config.init_mode != InitMode::coco_novel_pretrain)
    throw contract_error("coco_style_novel_init: init mode is not coco_novel_pretrain");
  Rng rng = root.stream("novel-pretrain");
  const int d = base.head.feature_dim();

  // A |C_n|-way head: plain rows, no background slot.
  ClassifierHead pretrain;
  pretrain.kind = base.head.kind;
  pretrain.cosine_scale = base.head.cosine_scale;
  pretrain.weights = Matrix(novel_classes, d);
  for (double& w : pretrain.weights.data) w = rng.normal(0.0, config.novel_init_std);

  std::vector<std::vector<Vec>> pools(novel_classes);
  for (int n = 0; n < novel_classes; ++n) {
    for (const InstanceSet& set : episode.novel_sets[n]) {
      pools[n].push_back(apply_transform(base.transform, set.instance));
      for (const Vec& p : set.proposals) pools[n].push_back(apply_transform(base.transform, p));
    }
  }

  Matrix features(novel_classes * config.fg_per_class, d);
  std::vector<int> rows(features.rows);
  for (long iter = 0; iter < config.novel_pretrain_sgd.total_iterations; ++iter) {
    int r = 0;
    for (int n = 0; n < novel_classes; ++n)
      for (int q = 0; q < config.fg_per_class; ++q) {
        features.set_row(r, pools[n][rng.uniform_index(pools[n].size())]);
        rows[r] = n;
        ++r;
      }
    const HeadLoss loss = head_loss_and_grads(pretrain, features, rows);
    check_finite(loss.loss, "novel pre-training", iter);
    pretrain.weights = sgd_step(pretrain.weights, loss.grad_weights, iter, config.novel_pretrain_sgd);
  }
  return pretrain.weights;
}

EvalResult run_single_seed(const WorldConfig& world_config, const TrainConfig& config, std::uint64_t seed) {
  const Rng root(seed);
  Rng world_rng = root.stream("world");
  const SyntheticWorld world = generate_world(world_config, world_rng);
  config.validate(world);

  BaseState base = train_base_stage(world, config, root);
  train_hallucinator_base(base, world, config, root);

  EpisodeConfig episode_config;
  episode_config.shot = config.shot;
  episode_config.proposals_per_instance = config.proposals_per_instance;
  episode_config.test_fg_per_class = config.test_fg_per_class;
  episode_config.test_bg_total = config.test_bg_total;
  Rng episode_rng = root.stream("episode");
  const Episode episode = build_episode(world, episode_config, episode_rng);

  const FinetuneOutput out = config.train_mode == TrainMode::em
                                 ? finetune_em(base, world, episode, config, root)
                                 : finetune_joint(base, world, episode, config, root);
  return out.eval;
}

void mean_and_half_width(const std::vector<double>& values, double* mean, double* half_width) {
  if (values.size() < 2)
    throw argument_error("mean_and_half_width: need at least 2 values");
  const double n = static_cast<double>(values.size());
  double m = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - m) * (v - m);
  var /= (n - 1.0);
  *mean = m;
  *half_width = 1.96 * std::sqrt(var / n);
}

int worker_count(std::size_t jobs) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  long cap = static_cast<long>(hw);
  if (const char* env = std::getenv("HALLUC_THREADS")) {
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || parsed < 1)
      throw argument_error("HALLUC_THREADS must be a positive integer");
    cap = parsed;
  }
  if (jobs == 0) return 1;
  return static_cast<int>(std::min<long>(cap, static_cast<long>(jobs)));
}

MultiReport run_multiseed(const WorldConfig& world_config, const TrainConfig& config,
                          const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw argument_error("run_multiseed: need at least 2 seeds");
  std::vector<EvalResult> results(seeds.size());
  std::vector<std::string> failures(seeds.size());
  const int workers = worker_count(seeds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= seeds.size()) return;
      try {
        results[i] = run_single_seed(world_config, config, seeds[i]);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w) threads.emplace_back(work);
    for (std::thread& t : threads) t.join();
  }
  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (!failures[i].empty())
      throw numeric_error("seed " + std::to_string(seeds[i]) + " failed: " + failures[i]);

  MultiReport report;
  report.rows.reserve(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) report.rows.push_back({seeds[i], results[i]});
  std::sort(report.rows.begin(), report.rows.end(),
            [](const SeedRow& a, const SeedRow& b) { return a.seed < b.seed; });

  std::vector<double> aps, tps, fps;
  for (const SeedRow& row : report.rows) {
    aps.push_back(row.eval.mean_novel_ap);
    tps.push_back(static_cast<double>(row.eval.tp_count));
    fps.push_back(static_cast<double>(row.eval.fp_count));
  }
  mean_and_half_width(aps, &report.aggregate.mean_novel_ap, &report.aggregate.ap_half_width);
  mean_and_half_width(tps, &report.aggregate.mean_tp, &report.aggregate.tp_half_width);
  mean_and_half_width(fps, &report.aggregate.mean_fp, &report.aggregate.fp_half_width);
  const std::size_t classes = report.rows.front().eval.novel_ap.size();
  report.aggregate.mean_class_ap.assign(classes, 0.0);
  for (const SeedRow& row : report.rows)
    for (std::size_t c = 0; c < classes; ++c) report.aggregate.mean_class_ap[c] += row.eval.novel_ap[c];
  for (double& v : report.aggregate.mean_class_ap) v /= static_cast<double>(report.rows.size());
  return report;
}

}  // namespace hallucdet
