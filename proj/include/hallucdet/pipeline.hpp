#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hallucdet/corpns.hpp"
#include "hallucdet/hallucinator.hpp"
#include "hallucdet/heads.hpp"
#include "hallucdet/matrix.hpp"
#include "hallucdet/rng.hpp"
#include "hallucdet/sgd.hpp"
#include "hallucdet/synthworld.hpp"

namespace hallucdet {

enum class ProposalMode { single, corpns };
enum class InitMode { voc_random, coco_novel_pretrain };
enum class TrainMode { em, joint };

const char* proposal_mode_name(ProposalMode mode);
ProposalMode proposal_mode_from_name(const std::string& name);
const char* init_mode_name(InitMode mode);
InitMode init_mode_from_name(const std::string& name);
const char* train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
  int shot = 1;
  int m = 20;                     // hallucinated examples per novel class per batch
  int em_iterations = 1;          // classifier fine-tuning rounds (1 or 2)
  TrainMode train_mode = TrainMode::em;
  ProposalMode proposal = ProposalMode::single;
  HeadKind head_kind = HeadKind::cosine;
  HallucinatorVariant variant = HallucinatorVariant::conservative;
  InitMode init_mode = InitMode::voc_random;

  int batch_size = 400;
  double fg_fraction = 0.25;      // foreground share of a batch; the rest is background
  int fg_per_class = 10;          // foreground examples drawn per in-batch class

  SgdConfig base_sgd{0.02, 800, {200, 600}, 0.1};
  SgdConfig finetune_sgd{0.1, 1500, {400, 1100}, 0.1};
  // The generation loss is a sum over S_gen, so these two learning rates
  // absorb the |S_gen| scale (~100-200 examples) relative to the mean-reduced
  // classifier loss. Iteration count of the fine-tune group must equal
  // finetune_sgd's: the hallucinator half-step gets the classifier's budget.
  SgdConfig halluc_base_sgd{1e-4, 100, {25, 75}, 0.1};
  SgdConfig halluc_finetune_sgd{1e-5, 1500, {400, 1100}, 0.1};
  SgdConfig novel_pretrain_sgd{0.02, 300, {75, 225}, 0.1};

  int base_pool_per_class = 100;  // instances per base class for prototypes + noise spec
  int proposals_per_instance = 20;
  int test_fg_per_class = 50;
  int test_bg_total = -1;

  double head_init_std = 0.01;
  double novel_init_std = 0.01;
  double halluc_init_noise = 0.02;
  double cosine_scale = 20.0;
  double transform_init_std = 0.1;

  int rpn_heads = 3;
  double rpn_init_std = 0.1;
  double coop_threshold = 0.3;
  double div_epsilon = 1e-6;
  RpnLossWeights rpn_weights;

  double tau = 0.5;               // detection score threshold for TP/FP counts

  bool hallucination_active() const { return variant != HallucinatorVariant::none && m > 0; }
  int fg_count() const;
  int bg_count() const { return batch_size - fg_count(); }
  int classes_per_batch() const { return fg_count() / fg_per_class; }
  void validate(const SyntheticWorld& world) const;
};

/// Everything stage 1 produces. After train_base_stage (plus, when
/// hallucination is on, train_hallucinator_base) these fields other than the
/// hallucinator are frozen for the rest of a run.
struct BaseState {
  ClassifierHead head;       // base classes + background
  AffineLayer transform;     // the box-head analog T (raw feature -> classifier space)
  RpnEnsemble ensemble;      // only meaningful when proposal mode is corpns
  bool has_ensemble = false;
  NoiseSpec noise;
  PrototypeRegistry prototypes;  // frozen base prototypes, in hallucination space
  Hallucinator halluc;
  bool has_halluc = false;
};

/// Classifier-space transform of one raw feature batch.
Matrix apply_transform(const AffineLayer& transform, const Matrix& raw);
Vec apply_transform(const AffineLayer& transform, const Vec& raw);

/// Stage 1: trains T, the base classifier head, and (in corpns mode) the
/// objectness ensemble on abundant base-class data, then freezes base
/// prototypes and the noise spec computed from a dedicated base pool in the
/// configured hallucination space.
BaseState train_base_stage(const SyntheticWorld& world, const TrainConfig& config, const Rng& root);

/// Stage 1b: initializes the hallucinator (identity + noise) and trains it
/// with the generation loss against the frozen base classifier; the
/// aggressive variant
/// instead trains jointly with T under the prototypical validation loss.
void train_hallucinator_base(BaseState& state, const SyntheticWorld& world, const TrainConfig& config,
                             const Rng& root);

struct EvalResult {
  std::vector<double> novel_ap;  // one per novel class
  double mean_novel_ap = 0.0;
  long tp_count = 0;
  long fp_count = 0;
};

/// Ranking-based AP over one class: examples with argmax == the class are
/// ranked by score; AP = sum over hits of precision-at-hit / total positives.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& is_positive,
                         int total_positives);

/// Scores the test pool with the final transform + head: per-feature argmax
/// and max softmax score, AP-analog per novel class, and thresholded TP/FP
/// counts.
EvalResult evaluate(const ClassifierHead& head, const AffineLayer& transform, const Episode& episode,
                    int base_classes, int novel_classes, double tau);

/// Observer for freeze-discipline checks; called at round boundaries with the
/// current classifier and (when present) hallucinator.
using PhaseCallback =
    std::function<void(const std::string& phase, const ClassifierHead& head, const Hallucinator* halluc)>;

struct FinetuneOutput {
  ClassifierHead head;
  Hallucinator halluc;
  bool has_halluc = false;
  EvalResult eval;
};

/// Stage 2, EM-style: alternates classifier rounds (frozen hallucinator,
/// recomposed batches, dynamic novel prototypes) with hallucinator rounds
/// (frozen classifier, generation loss), running em_iterations classifier
/// rounds in total.
FinetuneOutput finetune_em(const BaseState& base, const SyntheticWorld& world, const Episode& episode,
                           const TrainConfig& config, const Rng& root,
                           const PhaseCallback& on_phase = nullptr);

/// Stage 2 baseline: classifier and hallucinator step simultaneously every
/// iteration, over the same total classifier-iteration budget as the EM run.
FinetuneOutput finetune_joint(const BaseState& base, const SyntheticWorld& world, const Episode& episode,
                              const TrainConfig& config, const Rng& root,
                              const PhaseCallback& on_phase = nullptr);

/// The COCO-style option: pre-trains a |C_n|-way head on the novel episode
/// data alone and returns its rows as the novel-row initialization.
Matrix coco_style_novel_init(const BaseState& base, const Episode& episode, const TrainConfig& config,
                             int novel_classes, const Rng& root);

/// One complete seeded run: world, base stage, hallucinator, episode,
/// fine-tuning, evaluation.
EvalResult run_single_seed(const WorldConfig& world_config, const TrainConfig& config, std::uint64_t seed);

struct SeedRow {
  std::uint64_t seed = 0;
  EvalResult eval;
};

struct Aggregate {
  double mean_novel_ap = 0.0;
  double ap_half_width = 0.0;
  double mean_tp = 0.0;
  double tp_half_width = 0.0;
  double mean_fp = 0.0;
  double fp_half_width = 0.0;
  std::vector<double> mean_class_ap;
};

struct MultiReport {
  std::vector<SeedRow> rows;  // sorted by seed
  Aggregate aggregate;
};

/// Mean and normal-approximation 95% half-width (1.96 * sd / sqrt(n), sample
/// sd with n-1) of a metric across seeds.
void mean_and_half_width(const std::vector<double>& values, double* mean, double* half_width);

/// Independent end-to-end runs, one per seed, fanned out over worker threads
/// (capped by the HALLUC_THREADS environment variable); aggregation is sorted
/// by seed so output does not depend on scheduling.
MultiReport run_multiseed(const WorldConfig& world_config, const TrainConfig& config,
                          const std::vector<std::uint64_t>& seeds);

int worker_count(std::size_t jobs);

}  // namespace hallucdet
