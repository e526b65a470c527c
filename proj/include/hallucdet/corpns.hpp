#pragma once

#include <vector>

#include "hallucdet/kv.hpp"
#include "hallucdet/matrix.hpp"
#include "hallucdet/rng.hpp"

namespace hallucdet {

/// Ensemble of N binary objectness scorers over proposal features. Each head
/// is an affine map with sigmoid output; a box is scored by whichever head is
/// most certain about it (closest to 0 or 1), and only that head trains on
/// the box.
struct RpnEnsemble {
  std::vector<Vec> weights;  // one d-vector per head
  Vec biases;                // one per head
  double coop_threshold = 0.3;  // lower bound every head owes a foreground box
  double div_epsilon = 1e-6;    // Tikhonov term keeping the score covariance invertible

  int num_heads() const { return static_cast<int>(biases.size()); }
  int feature_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().size()); }
};

RpnEnsemble make_ensemble(int num_heads, int feature_dim, double init_std, double coop_threshold,
                          double div_epsilon, Rng& rng);

/// F[j, i] = sigmoid(w_j . x_i + b_j).
Matrix head_scores(const RpnEnsemble& ensemble, const Matrix& proposals);

/// Most certain head for one box: argmax_j |f_j - 0.5|, ties to the lowest
/// index.
int select_head(const Vec& scores_for_box);

struct ScoreLoss {
  double loss = 0.0;
  Matrix grad_scores;  // same shape as the score matrix passed in
};

/// Negative log-determinant of the (regularized) covariance of head scores
/// across the batch. Pushing this down forces the heads to disagree.
ScoreLoss divergence_loss(const Matrix& scores, double div_epsilon);

/// Hinge penalty: mean over (head, foreground box) of max(0, threshold -
/// score). An empty foreground set yields zero loss and zero gradients.
ScoreLoss cooperation_loss(const Matrix& fg_scores, double coop_threshold);

struct RpnLossWeights {
  double ce = 1.0;
  double div = 1.0;
  double coop = 1.0;
};

struct CorpnsLoss {
  double loss = 0.0;
  double ce = 0.0;
  double div = 0.0;
  double coop = 0.0;
  std::vector<Vec> grad_weights;
  Vec grad_biases;
};

/// Full ensemble objective: selected-head binary cross-entropy (mean over
/// boxes) plus the divergence and cooperation terms. Gradients cover every
/// head's affine parameters; the CE part of a box touches only its selected
/// head.
CorpnsLoss corpns_total_loss(const RpnEnsemble& ensemble, const Matrix& proposals,
                             const std::vector<int>& objectness, const RpnLossWeights& weights);

/// Scores each proposal with its selected head; the fine-tuning filter keeps
/// a proposal when this score is >= 0.5.
Vec selected_scores(const RpnEnsemble& ensemble, const Matrix& proposals);

Vec ensemble_params(const RpnEnsemble& ensemble);
void set_ensemble_params(RpnEnsemble& ensemble, const Vec& params);
Vec flatten_ensemble_grads(const CorpnsLoss& loss);

/// Mean absolute pairwise Pearson correlation between head score rows;
/// the diversity diagnostic.
double mean_pairwise_correlation(const Matrix& scores);

KvFile ensemble_to_kv(const RpnEnsemble& ensemble);
RpnEnsemble ensemble_from_kv(const KvFile& kv);

}  // namespace hallucdet
