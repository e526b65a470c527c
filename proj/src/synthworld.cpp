#include "hallucdet/synthworld.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "hallucdet/errors.hpp"

namespace hallucdet {

void WorldConfig::validate() const {
  if (feature_dim <= 0) throw argument_error("world: feature_dim must be positive");
  if (base_classes <= 0) throw argument_error("world: base_classes must be positive");
  if (novel_classes <= 0) throw argument_error("world: novel_classes must be positive");
  if (num_modes <= 0 || num_modes > feature_dim)
    throw argument_error("world: num_modes must be in [1, feature_dim]");
  if (mode_scale <= 0.0) throw argument_error("world: mode_scale must be positive");
  if (iso_noise < 0.0) throw argument_error("world: iso_noise must be non-negative");
  if (proposal_jitter <= 0.0) throw argument_error("world: proposal_jitter must be positive");
  if (proposal_jitter >= mode_scale)
    throw argument_error("world: proposal_jitter must be smaller than mode_scale");
  if (mean_spread <= mode_scale)
    throw argument_error("world: mean_spread must exceed mode_scale");
  if (bg_components <= 0) throw argument_error("world: bg_components must be positive");
  if (bg_scale <= 0.0) throw argument_error("world: bg_scale must be positive");
  if (bg_mean_spread <= 0.0) throw argument_error("world: bg_mean_spread must be positive");
  if (!bg_weights.empty()) {
    if (static_cast<int>(bg_weights.size()) != bg_components)
      throw argument_error("world: bg_weights size must equal bg_components");
    double total = 0.0;
    for (double w : bg_weights) {
      if (w <= 0.0) throw argument_error("world: bg_weights must be positive");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw argument_error("world: bg_weights must sum to 1");
  }
}

double SyntheticWorld::mode_orthonormality_error() const {
  const Matrix gram = matmul_at(shared_modes, shared_modes);
  double worst = 0.0;
  for (int i = 0; i < gram.rows; ++i)
    for (int j = 0; j < gram.cols; ++j) {
      const double target = (i == j) ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(gram(i, j) - target));
    }
  return worst;
}

namespace {

Vec draw_vector(int dim, double stddev, Rng& rng) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal(0.0, stddev);
  return v;
}

// Orthonormal columns via Gram-Schmidt with a second orthogonalization pass;
// a (measure-zero) degenerate draw is redrawn.
Matrix orthonormal_modes(int dim, int count, Rng& rng) {
  std::vector<Vec> columns;
  columns.reserve(count);
  while (static_cast<int>(columns.size()) < count) {
    Vec candidate = draw_vector(dim, 1.0, rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vec& basis : columns) {
        const double proj = dot(candidate, basis);
        for (int i = 0; i < dim; ++i) candidate[i] -= proj * basis[i];
      }
    }
    const double len = norm(candidate);
    if (len < 1e-6) continue;
    for (int i = 0; i < dim; ++i) candidate[i] /= len;
    columns.push_back(std::move(candidate));
  }
  Matrix modes(dim, count);
  for (int j = 0; j < count; ++j)
    for (int i = 0; i < dim; ++i) modes(i, j) = columns[j][i];
  return modes;
}

}  // namespace

SyntheticWorld generate_world(const WorldConfig& config, Rng& rng) {
  config.validate();
  SyntheticWorld world;
  world.feature_dim = config.feature_dim;
  world.base_classes = config.base_classes;
  world.novel_classes = config.novel_classes;
  world.iso_noise = config.iso_noise;
  world.proposal_jitter = config.proposal_jitter;
  world.bg_scale = config.bg_scale;

  world.shared_modes = orthonormal_modes(config.feature_dim, config.num_modes, rng);
  world.mode_scales.assign(config.num_modes, config.mode_scale);

  // mean_spread is the expected norm of a class mean, so the per-coordinate
  // deviation shrinks with dimension; this keeps class overlap comparable
  // across feature_dim choices.
  const double mean_sd = config.mean_spread / std::sqrt(static_cast<double>(config.feature_dim));
  const int total_classes = config.base_classes + config.novel_classes;
  world.class_means.reserve(total_classes);
  for (int c = 0; c < total_classes; ++c)
    world.class_means.push_back(draw_vector(config.feature_dim, mean_sd, rng));

  const double bg_sd = config.bg_mean_spread / std::sqrt(static_cast<double>(config.feature_dim));
  world.bg_means.reserve(config.bg_components);
  for (int g = 0; g < config.bg_components; ++g)
    world.bg_means.push_back(draw_vector(config.feature_dim, bg_sd, rng));
  if (config.bg_weights.empty())
    world.bg_weights.assign(config.bg_components, 1.0 / config.bg_components);
  else
    world.bg_weights = config.bg_weights;
  return world;
}

Vec sample_instance(const SyntheticWorld& world, int class_id, Rng& rng) {
  if (class_id < 0 || class_id >= world.num_classes())
    throw argument_error("sample_instance: class_id out of range");
  Vec feature = world.class_means[class_id];
  const int modes = world.num_modes();
  Vec coeffs(modes);
  for (int j = 0; j < modes; ++j) coeffs[j] = rng.normal(0.0, world.mode_scales[j]);
  for (int i = 0; i < world.feature_dim; ++i) {
    double along = 0.0;
    for (int j = 0; j < modes; ++j) along += world.shared_modes(i, j) * coeffs[j];
    feature[i] += along + rng.normal(0.0, world.iso_noise);
  }
  return feature;
}

std::vector<Vec> sample_proposals(const SyntheticWorld& world, const Vec& instance, int count, Rng& rng) {
  if (static_cast<int>(instance.size()) != world.feature_dim)
    throw shape_error("sample_proposals: instance dimension mismatch");
  if (count < 0) throw argument_error("sample_proposals: count must be non-negative");
  std::vector<Vec> proposals;
  proposals.reserve(count);
  for (int p = 0; p < count; ++p) {
    Vec prop = instance;
    for (int i = 0; i < world.feature_dim; ++i) prop[i] += rng.normal(0.0, world.proposal_jitter);
    proposals.push_back(std::move(prop));
  }
  return proposals;
}

std::vector<LabeledFeature> sample_background(const SyntheticWorld& world, int count, Rng& rng) {
  if (count < 0) throw argument_error("sample_background: count must be non-negative");
  std::vector<LabeledFeature> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t component = world.bg_means.size() - 1;
    for (std::size_t g = 0; g < world.bg_weights.size(); ++g) {
      cumulative += world.bg_weights[g];
      if (u < cumulative) {
        component = g;
        break;
      }
    }
    Vec feature = world.bg_means[component];
    for (int i = 0; i < world.feature_dim; ++i) feature[i] += rng.normal(0.0, world.bg_scale);
    out.push_back({std::move(feature), kBackground, Origin::real});
  }
  return out;
}

Batch compose_batch(std::vector<LabeledFeature> foreground, std::vector<LabeledFeature> background,
                    std::vector<LabeledFeature> generated, Rng& rng) {
  for (const LabeledFeature& f : foreground)
    if (f.label == kBackground) throw argument_error("compose_batch: foreground entry labeled background");
  for (const LabeledFeature& f : background)
    if (f.label != kBackground) throw argument_error("compose_batch: background entry with foreground label");

  Batch batch;
  batch.foreground = std::move(foreground);
  if (generated.empty()) {
    batch.background = std::move(background);
    return batch;
  }
  if (generated.size() > background.size()) {
    std::fprintf(stderr,
                 "warning: compose_batch truncating %zu generated examples to background budget %zu\n",
                 generated.size(), background.size());
    generated.resize(background.size());
  }
  batch.generated = std::move(generated);

  std::vector<std::size_t> removed = rng.sample_without_replacement(background.size(), batch.generated.size());
  std::vector<bool> keep(background.size(), true);
  for (std::size_t idx : removed) keep[idx] = false;
  batch.background.reserve(background.size() - batch.generated.size());
  for (std::size_t i = 0; i < background.size(); ++i)
    if (keep[i]) batch.background.push_back(std::move(background[i]));
  return batch;
}

void EpisodeConfig::validate() const {
  if (shot <= 0) throw argument_error("episode: shot must be positive");
  if (proposals_per_instance < 0) throw argument_error("episode: proposals_per_instance must be non-negative");
  if (test_fg_per_class <= 0) throw argument_error("episode: test_fg_per_class must be positive");
}

Episode build_episode(const SyntheticWorld& world, const EpisodeConfig& config, Rng& rng) {
  config.validate();
  Episode episode;
  episode.shot = config.shot;
  episode.proposals_per_instance = config.proposals_per_instance;

  Rng train_rng = rng.stream("episode-train");
  auto draw_sets = [&](int class_id) {
    std::vector<InstanceSet> sets;
    sets.reserve(config.shot);
    for (int k = 0; k < config.shot; ++k) {
      InstanceSet set;
      set.instance = sample_instance(world, class_id, train_rng);
      set.proposals = sample_proposals(world, set.instance, config.proposals_per_instance, train_rng);
      sets.push_back(std::move(set));
    }
    return sets;
  };
  episode.base_sets.reserve(world.base_classes);
  for (int b = 0; b < world.base_classes; ++b) episode.base_sets.push_back(draw_sets(b));
  episode.novel_sets.reserve(world.novel_classes);
  for (int n = 0; n < world.novel_classes; ++n)
    episode.novel_sets.push_back(draw_sets(world.base_classes + n));

  Rng test_rng = rng.stream("episode-test");
  episode.test_foreground.reserve(static_cast<std::size_t>(config.test_fg_per_class) * world.num_classes());
  for (int c = 0; c < world.num_classes(); ++c)
    for (int k = 0; k < config.test_fg_per_class; ++k)
      episode.test_foreground.push_back({sample_instance(world, c, test_rng), c, Origin::real});
  const int bg_total = config.test_bg_total >= 0 ? config.test_bg_total
                                                 : config.test_fg_per_class * world.num_classes();
  episode.test_background = sample_background(world, bg_total, test_rng);
  return episode;
}

namespace {

std::string indexed(const std::string& prefix, int i) { return prefix + "." + std::to_string(i); }

}  // namespace

KvFile world_to_kv(const SyntheticWorld& world) {
  KvFile kv;
  kv.set_str("kind", "world");
  kv.set_i64("feature_dim", world.feature_dim);
  kv.set_i64("base_classes", world.base_classes);
  kv.set_i64("novel_classes", world.novel_classes);
  kv.set_f64("iso_noise", world.iso_noise);
  kv.set_f64("proposal_jitter", world.proposal_jitter);
  kv.set_f64("bg_scale", world.bg_scale);
  kv.set_mat("shared_modes", world.shared_modes);
  kv.set_vec("mode_scales", world.mode_scales);
  for (int c = 0; c < world.num_classes(); ++c)
    kv.set_vec(indexed("class_mean", c), world.class_means[c]);
  kv.set_i64("bg_components", static_cast<long long>(world.bg_means.size()));
  for (std::size_t g = 0; g < world.bg_means.size(); ++g)
    kv.set_vec(indexed("bg_mean", static_cast<int>(g)), world.bg_means[g]);
  kv.set_vec("bg_weights", world.bg_weights);
  return kv;
}

SyntheticWorld world_from_kv(const KvFile& kv) {
  if (kv.get_str("kind") != "world") throw parse_error("world_from_kv: kind mismatch");
  SyntheticWorld world;
  world.feature_dim = static_cast<int>(kv.get_i64("feature_dim"));
  world.base_classes = static_cast<int>(kv.get_i64("base_classes"));
  world.novel_classes = static_cast<int>(kv.get_i64("novel_classes"));
  world.iso_noise = kv.get_f64("iso_noise");
  world.proposal_jitter = kv.get_f64("proposal_jitter");
  world.bg_scale = kv.get_f64("bg_scale");
  world.shared_modes = kv.get_mat("shared_modes");
  world.mode_scales = kv.get_vec("mode_scales");
  for (int c = 0; c < world.base_classes + world.novel_classes; ++c)
    world.class_means.push_back(kv.get_vec(indexed("class_mean", c)));
  const int bg_components = static_cast<int>(kv.get_i64("bg_components"));
  for (int g = 0; g < bg_components; ++g) world.bg_means.push_back(kv.get_vec(indexed("bg_mean", g)));
  world.bg_weights = kv.get_vec("bg_weights");
  return world;
}

namespace {

void sets_to_kv(KvFile& kv, const std::string& prefix, const std::vector<std::vector<InstanceSet>>& groups) {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t k = 0; k < groups[g].size(); ++k) {
      const std::string base = indexed(indexed(prefix, static_cast<int>(g)), static_cast<int>(k));
      kv.set_vec(base + ".instance", groups[g][k].instance);
      for (std::size_t p = 0; p < groups[g][k].proposals.size(); ++p)
        kv.set_vec(indexed(base + ".proposal", static_cast<int>(p)), groups[g][k].proposals[p]);
    }
  }
}

std::vector<std::vector<InstanceSet>> sets_from_kv(const KvFile& kv, const std::string& prefix, int groups,
                                                   int shot, int proposals) {
  std::vector<std::vector<InstanceSet>> out(groups);
  for (int g = 0; g < groups; ++g) {
    out[g].resize(shot);
    for (int k = 0; k < shot; ++k) {
      const std::string base = indexed(indexed(prefix, g), k);
      out[g][k].instance = kv.get_vec(base + ".instance");
      for (int p = 0; p < proposals; ++p)
        out[g][k].proposals.push_back(kv.get_vec(indexed(base + ".proposal", p)));
    }
  }
  return out;
}

void features_to_kv(KvFile& kv, const std::string& prefix, const std::vector<LabeledFeature>& features) {
  kv.set_i64(prefix + ".count", static_cast<long long>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::string base = indexed(prefix, static_cast<int>(i));
    kv.set_i64(base + ".label", features[i].label);
    kv.set_vec(base + ".vector", features[i].vector);
  }
}

std::vector<LabeledFeature> features_from_kv(const KvFile& kv, const std::string& prefix) {
  const int count = static_cast<int>(kv.get_i64(prefix + ".count"));
  std::vector<LabeledFeature> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const std::string base = indexed(prefix, i);
    LabeledFeature f;
    f.label = static_cast<int>(kv.get_i64(base + ".label"));
    f.vector = kv.get_vec(base + ".vector");
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

KvFile episode_to_kv(const Episode& episode) {
  KvFile kv;
  kv.set_str("kind", "episode");
  kv.set_i64("shot", episode.shot);
  kv.set_i64("proposals_per_instance", episode.proposals_per_instance);
  kv.set_i64("novel_groups", static_cast<long long>(episode.novel_sets.size()));
  kv.set_i64("base_groups", static_cast<long long>(episode.base_sets.size()));
  sets_to_kv(kv, "novel", episode.novel_sets);
  sets_to_kv(kv, "base", episode.base_sets);
  features_to_kv(kv, "test_fg", episode.test_foreground);
  features_to_kv(kv, "test_bg", episode.test_background);
  return kv;
}

Episode episode_from_kv(const KvFile& kv) {
  if (kv.get_str("kind") != "episode") throw parse_error("episode_from_kv: kind mismatch");
  Episode episode;
  episode.shot = static_cast<int>(kv.get_i64("shot"));
  episode.proposals_per_instance = static_cast<int>(kv.get_i64("proposals_per_instance"));
  const int novel_groups = static_cast<int>(kv.get_i64("novel_groups"));
  const int base_groups = static_cast<int>(kv.get_i64("base_groups"));
  episode.novel_sets = sets_from_kv(kv, "novel", novel_groups, episode.shot, episode.proposals_per_instance);
  episode.base_sets = sets_from_kv(kv, "base", base_groups, episode.shot, episode.proposals_per_instance);
  episode.test_foreground = features_from_kv(kv, "test_fg");
  episode.test_background = features_from_kv(kv, "test_bg");
  return episode;
}

}  // namespace hallucdet
