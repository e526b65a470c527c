#include "hallucdet/heads.hpp"

#include <cmath>

#include "hallucdet/errors.hpp"
#include "hallucdet/layers.hpp"

namespace hallucdet {

namespace {
constexpr double kNormFloor = 1e-12;
}

const char* head_kind_name(HeadKind kind) {
  return kind == HeadKind::cosine ? "cosine" : "fc";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "cosine") return HeadKind::cosine;
  if (name == "fc") return HeadKind::fully_connected;
  throw argument_error("head kind must be 'cosine' or 'fc', got '" + name + "'");
}

ClassifierHead make_head(HeadKind kind, int foreground_classes, int feature_dim, double init_std,
                         double cosine_scale, Rng& rng) {
  if (foreground_classes <= 0) throw argument_error("make_head: foreground_classes must be positive");
  if (feature_dim <= 0) throw argument_error("make_head: feature_dim must be positive");
  if (cosine_scale <= 0.0) throw argument_error("make_head: cosine_scale must be positive");
  ClassifierHead head;
  head.kind = kind;
  head.cosine_scale = cosine_scale;
  head.weights = Matrix(foreground_classes + 1, feature_dim);
  for (double& w : head.weights.data) w = rng.normal(0.0, init_std);
  return head;
}

ClassifierHead expand_head(const ClassifierHead& head, int new_foreground_classes, double novel_init_std,
                           Rng& rng) {
  const int old_fg = head.foreground_classes();
  if (new_foreground_classes <= old_fg)
    throw argument_error("expand_head: new class count must exceed the current one");
  ClassifierHead grown;
  grown.kind = head.kind;
  grown.cosine_scale = head.cosine_scale;
  grown.weights = Matrix(new_foreground_classes + 1, head.feature_dim());
  for (int r = 0; r < old_fg; ++r) grown.weights.set_row(r, head.weights.row(r));
  for (int r = old_fg; r < new_foreground_classes; ++r)
    for (int j = 0; j < head.feature_dim(); ++j) grown.weights(r, j) = rng.normal(0.0, novel_init_std);
  grown.weights.set_row(grown.background_row(), head.weights.row(head.background_row()));
  return grown;
}

int label_to_row(const ClassifierHead& head, int label) {
  if (label == kBackground) return head.background_row();
  if (label < 0 || label >= head.foreground_classes())
    throw argument_error("label_to_row: label out of range for this head");
  return label;
}

namespace {

Vec row_norms(const Matrix& m) {
  Vec norms(m.rows);
  for (int i = 0; i < m.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < m.cols; ++j) sq += m(i, j) * m(i, j);
    norms[i] = std::sqrt(sq);
  }
  return norms;
}

}  // namespace

Matrix head_logits(const ClassifierHead& head, const Matrix& features) {
  if (features.cols != head.feature_dim())
    throw shape_error("head_logits: feature dimension does not match head");
  Matrix logits = matmul_bt(features, head.weights);
  if (head.kind == HeadKind::fully_connected) return logits;
  const Vec fn = row_norms(features);
  const Vec wn = row_norms(head.weights);
  for (int i = 0; i < logits.rows; ++i) {
    const double ni = std::max(fn[i], kNormFloor);
    for (int k = 0; k < logits.cols; ++k) {
      const double mk = std::max(wn[k], kNormFloor);
      logits(i, k) = head.cosine_scale * logits(i, k) / (ni * mk);
    }
  }
  return logits;
}

void head_backward(const ClassifierHead& head, const Matrix& features, const Matrix& logits,
                   const Matrix& grad_logits, Matrix* grad_weights, Matrix* grad_features) {
  if (grad_logits.rows != features.rows || grad_logits.cols != head.num_rows())
    throw shape_error("head_backward: grad_logits shape mismatch");
  if (head.kind == HeadKind::fully_connected) {
    if (grad_weights) *grad_weights = matmul_at(grad_logits, features);
    if (grad_features) *grad_features = matmul(grad_logits, head.weights);
    return;
  }
  const Vec fn = row_norms(features);
  const Vec wn = row_norms(head.weights);
  // l_ik = s * (x_i . w_k) / (n_i * m_k). With G = dL/dl:
  //   dL/dx_i = sum_k G_ik s/(n_i m_k) w_k  -  (sum_k G_ik l_ik) x_i / n_i^2
  //   dL/dw_k = sum_i G_ik s/(n_i m_k) x_i  -  (sum_i G_ik l_ik) w_k / m_k^2
  // where the norm-direction terms vanish if the norm sits on the floor.
  Matrix scaled(grad_logits.rows, grad_logits.cols);
  for (int i = 0; i < grad_logits.rows; ++i) {
    const double ni = std::max(fn[i], kNormFloor);
    for (int k = 0; k < grad_logits.cols; ++k) {
      const double mk = std::max(wn[k], kNormFloor);
      scaled(i, k) = grad_logits(i, k) * head.cosine_scale / (ni * mk);
    }
  }
  if (grad_features) {
    *grad_features = matmul(scaled, head.weights);
    for (int i = 0; i < features.rows; ++i) {
      if (fn[i] <= kNormFloor) continue;
      double along = 0.0;
      for (int k = 0; k < grad_logits.cols; ++k) along += grad_logits(i, k) * logits(i, k);
      const double coeff = along / (fn[i] * fn[i]);
      for (int j = 0; j < features.cols; ++j) (*grad_features)(i, j) -= coeff * features(i, j);
    }
  }
  if (grad_weights) {
    *grad_weights = matmul_at(scaled, features);
    for (int k = 0; k < head.num_rows(); ++k) {
      if (wn[k] <= kNormFloor) continue;
      double along = 0.0;
      for (int i = 0; i < grad_logits.rows; ++i) along += grad_logits(i, k) * logits(i, k);
      const double coeff = along / (wn[k] * wn[k]);
      for (int j = 0; j < features.cols; ++j) (*grad_weights)(k, j) -= coeff * head.weights(k, j);
    }
  }
}

HeadLoss head_loss_and_grads(const ClassifierHead& head, const Matrix& features,
                             const std::vector<int>& target_rows) {
  const Matrix logits = head_logits(head, features);
  const CrossEntropyResult ce = softmax_cross_entropy(logits, target_rows);
  HeadLoss out;
  out.loss = ce.loss;
  head_backward(head, features, logits, ce.grad_logits, &out.grad_weights, &out.grad_features);
  return out;
}

void batch_to_rows(const ClassifierHead& head, const Batch& batch, Matrix* features,
                   std::vector<int>* target_rows) {
  const std::size_t total = batch.total_size();
  if (total == 0) throw argument_error("batch_to_rows: empty batch");
  const int dim = head.feature_dim();
  *features = Matrix(static_cast<int>(total), dim);
  target_rows->clear();
  target_rows->reserve(total);
  int row = 0;
  auto append = [&](const std::vector<LabeledFeature>& group) {
    for (const LabeledFeature& f : group) {
      if (static_cast<int>(f.vector.size()) != dim)
        throw shape_error("batch_to_rows: feature dimension mismatch");
      features->set_row(row++, f.vector);
      target_rows->push_back(label_to_row(head, f.label));
    }
  };
  append(batch.foreground);
  append(batch.generated);
  append(batch.background);
}

void PrototypeRegistry::freeze_base(const std::vector<int>& class_ids, const std::vector<Vec>& means) {
  if (class_ids.size() != means.size())
    throw argument_error("freeze_base: class_ids and means length mismatch");
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (frozen_.count(class_ids[i]) && frozen_.at(class_ids[i]))
      throw contract_error("freeze_base: prototype for class " + std::to_string(class_ids[i]) +
                           " is already frozen");
    prototypes_[class_ids[i]] = means[i];
    frozen_[class_ids[i]] = true;
  }
}

bool PrototypeRegistry::is_frozen(int class_id) const {
  auto it = frozen_.find(class_id);
  return it != frozen_.end() && it->second;
}

bool PrototypeRegistry::has(int class_id) const { return prototypes_.count(class_id) > 0; }

Vec PrototypeRegistry::get(int class_id) const {
  auto it = prototypes_.find(class_id);
  if (it == prototypes_.end())
    throw argument_error("PrototypeRegistry: no prototype for class " + std::to_string(class_id));
  return it->second;
}

void PrototypeRegistry::update_dynamic(int class_id, const Vec& mean) {
  if (is_frozen(class_id))
    throw contract_error("PrototypeRegistry: refusing to update frozen prototype for class " +
                         std::to_string(class_id));
  prototypes_[class_id] = mean;
  frozen_[class_id] = false;
}

Vec PrototypeRegistry::mean_of(const std::vector<Vec>& examples) {
  if (examples.empty()) throw argument_error("mean_of: no examples");
  Vec mean(examples.front().size(), 0.0);
  for (const Vec& e : examples) {
    if (e.size() != mean.size()) throw shape_error("mean_of: inconsistent dimensions");
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
  }
  for (double& v : mean) v /= static_cast<double>(examples.size());
  return mean;
}

std::vector<int> PrototypeRegistry::class_ids() const {
  std::vector<int> ids;
  ids.reserve(prototypes_.size());
  for (const auto& [id, _] : prototypes_) ids.push_back(id);
  return ids;
}

KvFile head_to_kv(const ClassifierHead& head) {
  KvFile kv;
  kv.set_str("kind", "head");
  kv.set_str("head_kind", head_kind_name(head.kind));
  kv.set_f64("cosine_scale", head.cosine_scale);
  kv.set_mat("weights", head.weights);
  return kv;
}

ClassifierHead head_from_kv(const KvFile& kv) {
  if (kv.get_str("kind") != "head") throw parse_error("head_from_kv: kind mismatch");
  ClassifierHead head;
  head.kind = head_kind_from_name(kv.get_str("head_kind"));
  head.cosine_scale = kv.get_f64("cosine_scale");
  head.weights = kv.get_mat("weights");
  return head;
}

}  // namespace hallucdet
