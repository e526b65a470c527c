#pragma once

#include <vector>

#include "hallucdet/kv.hpp"
#include "hallucdet/matrix.hpp"
#include "hallucdet/rng.hpp"

namespace hallucdet {

/// Label value for background features.
constexpr int kBackground = -1;

enum class Origin { real, hallucinated };

struct LabeledFeature {
  Vec vector;
  int label = kBackground;
  Origin origin = Origin::real;
};

/// Generative parameters of the synthetic feature universe. Foreground
/// classes are Gaussian blobs whose within-class variation lives in a set of
/// orthonormal modes shared by every class (base and novel alike); proposal
/// jitter is deliberately narrower than those modes, so a handful of
/// proposals around one instance under-represents the true class spread.
struct WorldConfig {
  int feature_dim = 32;
  int base_classes = 15;
  int novel_classes = 5;
  int num_modes = 6;
  double mode_scale = 1.0;
  double iso_noise = 0.1;
  double proposal_jitter = 0.15;
  double mean_spread = 4.0;      // expected norm of a class mean
  int bg_components = 8;
  double bg_scale = 1.0;
  double bg_mean_spread = 4.0;   // expected norm of a background component mean
  Vec bg_weights;                // empty -> uniform

  void validate() const;
};

struct SyntheticWorld {
  int feature_dim = 0;
  int base_classes = 0;
  int novel_classes = 0;
  std::vector<Vec> class_means;  // base classes first, then novel
  Matrix shared_modes;           // feature_dim x num_modes, orthonormal columns
  Vec mode_scales;
  double iso_noise = 0.0;
  double proposal_jitter = 0.0;
  std::vector<Vec> bg_means;
  Vec bg_weights;
  double bg_scale = 0.0;

  int num_classes() const { return base_classes + novel_classes; }
  int num_modes() const { return shared_modes.cols; }
  bool is_novel(int class_id) const { return class_id >= base_classes; }

  /// max |V^T V - I| entry; ~1e-15 for a freshly generated world.
  double mode_orthonormality_error() const;
};

SyntheticWorld generate_world(const WorldConfig& config, Rng& rng);

/// mu_c + V a + eta with a ~ N(0, diag(scales^2)), eta ~ N(0, iso^2 I).
Vec sample_instance(const SyntheticWorld& world, int class_id, Rng& rng);

/// Narrow isotropic jitter around one instance; the stand-in for the tight
/// high-overlap boxes a proposal stage reports for a single object.
std::vector<Vec> sample_proposals(const SyntheticWorld& world, const Vec& instance, int count, Rng& rng);

std::vector<LabeledFeature> sample_background(const SyntheticWorld& world, int count, Rng& rng);

/// A training batch in recomposed form: [foreground, generated; background].
struct Batch {
  std::vector<LabeledFeature> foreground;  // S_pos
  std::vector<LabeledFeature> generated;   // S_gen
  std::vector<LabeledFeature> background;  // S_neg (after any replacement)

  std::size_t total_size() const { return foreground.size() + generated.size() + background.size(); }
};

/// Replaces |generated| uniformly chosen background entries with the
/// generated examples; total batch size is preserved and no foreground entry
/// is ever dropped. If |generated| exceeds |background|, the surplus is
/// truncated and a warning is logged.
Batch compose_batch(std::vector<LabeledFeature> foreground, std::vector<LabeledFeature> background,
                    std::vector<LabeledFeature> generated, Rng& rng);

/// One annotated object: its ground-truth feature plus the proposal features
/// observed around it.
struct InstanceSet {
  Vec instance;
  std::vector<Vec> proposals;
};

/// A K-shot fine-tuning episode plus a held-out evaluation pool. The
/// fine-tuning data is balanced: K instances per novel class and K per base
/// class. The test pool is drawn with full within-class variation from a
/// dedicated stream, never with proposal jitter.
struct Episode {
  int shot = 0;
  int proposals_per_instance = 0;
  std::vector<std::vector<InstanceSet>> novel_sets;  // [novel index][k]; class id = base_classes + index
  std::vector<std::vector<InstanceSet>> base_sets;   // [base index][k]
  std::vector<LabeledFeature> test_foreground;
  std::vector<LabeledFeature> test_background;
};

struct EpisodeConfig {
  int shot = 1;
  int proposals_per_instance = 20;
  int test_fg_per_class = 50;
  int test_bg_total = -1;  // -1 -> test_fg_per_class * num_classes

  void validate() const;
};

Episode build_episode(const SyntheticWorld& world, const EpisodeConfig& config, Rng& rng);

KvFile world_to_kv(const SyntheticWorld& world);
SyntheticWorld world_from_kv(const KvFile& kv);
KvFile episode_to_kv(const Episode& episode);
Episode episode_from_kv(const KvFile& kv);

}  // namespace hallucdet
