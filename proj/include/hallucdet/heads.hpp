#pragma once

#include <map>
#include <vector>

#include "hallucdet/kv.hpp"
#include "hallucdet/matrix.hpp"
#include "hallucdet/rng.hpp"
#include "hallucdet/synthworld.hpp"

namespace hallucdet {

enum class HeadKind { cosine, fully_connected };

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

/// Box-classifier over pooled features. Row k of `weights` scores class k;
/// the last row always scores background. The cosine variant scores
/// scale * cos(feature, row) and is insensitive to feature magnitude, which
/// matters when novel rows start near zero norm.
struct ClassifierHead {
  HeadKind kind = HeadKind::cosine;
  Matrix weights;  // (foreground classes + 1) x feature_dim
  double cosine_scale = 20.0;

  int feature_dim() const { return weights.cols; }
  int num_rows() const { return weights.rows; }
  int background_row() const { return weights.rows - 1; }
  int foreground_classes() const { return weights.rows - 1; }
};

ClassifierHead make_head(HeadKind kind, int foreground_classes, int feature_dim, double init_std,
                         double cosine_scale, Rng& rng);

/// Grows `head` from C_b foreground rows to C_b + C_n, keeping every existing
/// row (including background, which stays last) and drawing the new novel
/// rows from N(0, novel_init_std^2).
ClassifierHead expand_head(const ClassifierHead& head, int new_foreground_classes, double novel_init_std,
                           Rng& rng);

int label_to_row(const ClassifierHead& head, int label);

Matrix head_logits(const ClassifierHead& head, const Matrix& features);

struct HeadLoss {
  double loss = 0.0;
  Matrix grad_weights;
  Matrix grad_features;
};

/// Mean cross-entropy of the head over `features` with per-row target rows,
/// plus exact gradients with respect to both the head weights and the input
/// features (the latter feeds the hallucinator during its own training).
HeadLoss head_loss_and_grads(const ClassifierHead& head, const Matrix& features,
                             const std::vector<int>& target_rows);

/// Backpropagates an upstream dL/dlogits through the head only (no
/// cross-entropy attached); used to compose custom losses.
void head_backward(const ClassifierHead& head, const Matrix& features, const Matrix& logits,
                   const Matrix& grad_logits, Matrix* grad_weights, Matrix* grad_features);

/// Flattens a recomposed batch into (features, target rows) in the fixed
/// order foreground, generated, background.
void batch_to_rows(const ClassifierHead& head, const Batch& batch, Matrix* features,
                   std::vector<int>* target_rows);

/// Class prototypes used as hallucinator anchors. Base-class prototypes are
/// computed once from abundant base data and frozen; novel prototypes are
/// recomputed on demand from whatever (few, possibly hallucinated) examples
/// currently exist for the class.
class PrototypeRegistry {
 public:
  void freeze_base(const std::vector<int>& class_ids, const std::vector<Vec>& means);
  bool is_frozen(int class_id) const;
  bool has(int class_id) const;
  Vec get(int class_id) const;

  /// Replaces the dynamic prototype for a novel class; frozen ids reject.
  void update_dynamic(int class_id, const Vec& mean);

  /// Mean of the given examples; throws on empty input.
  static Vec mean_of(const std::vector<Vec>& examples);

  std::vector<int> class_ids() const;

 private:
  std::map<int, Vec> prototypes_;
  std::map<int, bool> frozen_;
};

KvFile head_to_kv(const ClassifierHead& head);
ClassifierHead head_from_kv(const KvFile& kv);

}  // namespace hallucdet
