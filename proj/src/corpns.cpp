#include "hallucdet/corpns.hpp"

#include <cmath>
#include <string>

#include "hallucdet/errors.hpp"
#include "hallucdet/layers.hpp"

namespace hallucdet {

RpnEnsemble make_ensemble(int num_heads, int feature_dim, double init_std, double coop_threshold,
                          double div_epsilon, Rng& rng) {
  if (num_heads < 2) throw argument_error("make_ensemble: need at least 2 heads");
  if (feature_dim <= 0) throw argument_error("make_ensemble: feature_dim must be positive");
  if (coop_threshold <= 0.0 || coop_threshold >= 1.0)
    throw argument_error("make_ensemble: coop_threshold must lie in (0,1)");
  if (div_epsilon < 0.0) throw argument_error("make_ensemble: div_epsilon must be non-negative");
  RpnEnsemble ensemble;
  ensemble.coop_threshold = coop_threshold;
  ensemble.div_epsilon = div_epsilon;
  ensemble.weights.resize(num_heads);
  ensemble.biases.assign(num_heads, 0.0);
  for (int j = 0; j < num_heads; ++j) {
    ensemble.weights[j].resize(feature_dim);
    for (double& w : ensemble.weights[j]) w = rng.normal(0.0, init_std);
  }
  return ensemble;
}

Matrix head_scores(const RpnEnsemble& ensemble, const Matrix& proposals) {
  if (proposals.rows == 0) throw argument_error("head_scores: empty proposal set");
  if (proposals.cols != ensemble.feature_dim())
    throw shape_error("head_scores: proposal dimension does not match ensemble");
  const int n = ensemble.num_heads();
  Matrix scores(n, proposals.rows);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < proposals.rows; ++i) {
      double z = ensemble.biases[j];
      for (int k = 0; k < proposals.cols; ++k) z += ensemble.weights[j][k] * proposals(i, k);
      scores(j, i) = sigmoid(z);
    }
  return scores;
}

int select_head(const Vec& scores_for_box) {
  if (scores_for_box.empty()) throw argument_error("select_head: no scores");
  int best = 0;
  double best_certainty = std::abs(scores_for_box[0] - 0.5);
  for (std::size_t j = 1; j < scores_for_box.size(); ++j) {
    const double certainty = std::abs(scores_for_box[j] - 0.5);
    if (certainty > best_certainty) {
      best = static_cast<int>(j);
      best_certainty = certainty;
    }
  }
  return best;
}

ScoreLoss divergence_loss(const Matrix& scores, double div_epsilon) {
  const int n = scores.rows;
  const int b = scores.cols;
  if (b < 2) throw argument_error("divergence_loss: need at least 2 boxes");
  if (div_epsilon < 0.0) throw argument_error("divergence_loss: div_epsilon must be non-negative");

  const Vec means = row_mean(scores);
  Matrix centered = scores;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < b; ++i) centered(j, i) -= means[j];

  Matrix sigma = matmul_bt(centered, centered) * (1.0 / b);
  for (int j = 0; j < n; ++j) sigma(j, j) += div_epsilon;

  ScoreLoss out;
  out.loss = -logdet_spd(sigma);
  if (!std::isfinite(out.loss)) throw numeric_error("divergence_loss: non-finite loss");

  // d(-logdet Sigma)/dSigma = -Sigma^-1; through Sigma = (1/B) C C^T this is
  // dL/dC = -(2/B) Sigma^-1 C, and the centering backward subtracts row means.
  const Matrix sigma_inv = spd_inverse(sigma);
  Matrix grad_centered = matmul(sigma_inv, centered) * (-2.0 / b);
  const Vec grad_means = row_mean(grad_centered);
  out.grad_scores = Matrix(n, b);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < b; ++i) out.grad_scores(j, i) = grad_centered(j, i) - grad_means[j];
  return out;
}

ScoreLoss cooperation_loss(const Matrix& fg_scores, double coop_threshold) {
  ScoreLoss out;
  out.grad_scores = Matrix(fg_scores.rows, fg_scores.cols);
  if (fg_scores.cols == 0 || fg_scores.rows == 0) return out;
  const double count = static_cast<double>(fg_scores.rows) * fg_scores.cols;
  for (int j = 0; j < fg_scores.rows; ++j)
    for (int i = 0; i < fg_scores.cols; ++i) {
      const double gap = coop_threshold - fg_scores(j, i);
      if (gap > 0.0) {
        out.loss += gap / count;
        out.grad_scores(j, i) = -1.0 / count;
      }
    }
  return out;
}

CorpnsLoss corpns_total_loss(const RpnEnsemble& ensemble, const Matrix& proposals,
                             const std::vector<int>& objectness, const RpnLossWeights& weights) {
  if (static_cast<int>(objectness.size()) != proposals.rows)
    throw argument_error("corpns_total_loss: one objectness label per proposal required");
  for (int y : objectness)
    if (y != 0 && y != 1) throw argument_error("corpns_total_loss: objectness labels must be 0 or 1");

  const int n = ensemble.num_heads();
  const int b = proposals.rows;
  const Matrix scores = head_scores(ensemble, proposals);

  CorpnsLoss out;
  // Gradient accumulates with respect to the pre-sigmoid activations z; for
  // binary CE through a sigmoid that is just (f - y) on the selected head.
  Matrix grad_z(n, b);
  constexpr double kClamp = 1e-12;
  for (int i = 0; i < b; ++i) {
    Vec column(n);
    for (int j = 0; j < n; ++j) column[j] = scores(j, i);
    const int star = select_head(column);
    const double f = std::min(1.0 - kClamp, std::max(kClamp, scores(star, i)));
    const double y = static_cast<double>(objectness[i]);
    out.ce += -(y * std::log(f) + (1.0 - y) * std::log(1.0 - f)) / b;
    grad_z(star, i) += weights.ce * (scores(star, i) - y) / b;
  }

  const ScoreLoss div = divergence_loss(scores, ensemble.div_epsilon);
  out.div = div.loss;

  std::vector<int> fg_columns;
  for (int i = 0; i < b; ++i)
    if (objectness[i] == 1) fg_columns.push_back(i);
  Matrix fg_scores(n, static_cast<int>(fg_columns.size()));
  for (int j = 0; j < n; ++j)
    for (std::size_t c = 0; c < fg_columns.size(); ++c) fg_scores(j, static_cast<int>(c)) = scores(j, fg_columns[c]);
  const ScoreLoss coop = cooperation_loss(fg_scores, ensemble.coop_threshold);
  out.coop = coop.loss;

  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < b; ++i) {
      double grad_f = weights.div * div.grad_scores(j, i);
      grad_z(j, i) += grad_f * scores(j, i) * (1.0 - scores(j, i));
    }
    for (std::size_t c = 0; c < fg_columns.size(); ++c) {
      const int i = fg_columns[c];
      const double grad_f = weights.coop * coop.grad_scores(j, static_cast<int>(c));
      grad_z(j, i) += grad_f * scores(j, i) * (1.0 - scores(j, i));
    }
  }

  out.loss = weights.ce * out.ce + weights.div * out.div + weights.coop * out.coop;
  out.grad_weights.resize(n);
  out.grad_biases.assign(n, 0.0);
  for (int j = 0; j < n; ++j) {
    out.grad_weights[j].assign(proposals.cols, 0.0);
    for (int i = 0; i < b; ++i) {
      const double g = grad_z(j, i);
      if (g == 0.0) continue;
      for (int k = 0; k < proposals.cols; ++k) out.grad_weights[j][k] += g * proposals(i, k);
      out.grad_biases[j] += g;
    }
  }
  return out;
}

Vec selected_scores(const RpnEnsemble& ensemble, const Matrix& proposals) {
  const Matrix scores = head_scores(ensemble, proposals);
  Vec out(proposals.rows);
  Vec column(ensemble.num_heads());
  for (int i = 0; i < proposals.rows; ++i) {
    for (int j = 0; j < ensemble.num_heads(); ++j) column[j] = scores(j, i);
    out[i] = column[select_head(column)];
  }
  return out;
}

Vec ensemble_params(const RpnEnsemble& ensemble) {
  Vec params;
  for (int j = 0; j < ensemble.num_heads(); ++j) {
    params.insert(params.end(), ensemble.weights[j].begin(), ensemble.weights[j].end());
    params.push_back(ensemble.biases[j]);
  }
  return params;
}

void set_ensemble_params(RpnEnsemble& ensemble, const Vec& params) {
  const std::size_t per_head = ensemble.weights.front().size() + 1;
  if (params.size() != per_head * ensemble.num_heads())
    throw shape_error("set_ensemble_params: parameter count mismatch");
  std::size_t offset = 0;
  for (int j = 0; j < ensemble.num_heads(); ++j) {
    std::copy(params.begin() + offset, params.begin() + offset + ensemble.weights[j].size(),
              ensemble.weights[j].begin());
    offset += ensemble.weights[j].size();
    ensemble.biases[j] = params[offset++];
  }
}

Vec flatten_ensemble_grads(const CorpnsLoss& loss) {
  Vec flat;
  for (std::size_t j = 0; j < loss.grad_weights.size(); ++j) {
    flat.insert(flat.end(), loss.grad_weights[j].begin(), loss.grad_weights[j].end());
    flat.push_back(loss.grad_biases[j]);
  }
  return flat;
}

double mean_pairwise_correlation(const Matrix& scores) {
  const int n = scores.rows;
  const int b = scores.cols;
  if (n < 2 || b < 2) throw argument_error("mean_pairwise_correlation: need >= 2 heads and boxes");
  const Vec means = row_mean(scores);
  Vec sds(n, 0.0);
  for (int j = 0; j < n; ++j) {
    double sq = 0.0;
    for (int i = 0; i < b; ++i) {
      const double c = scores(j, i) - means[j];
      sq += c * c;
    }
    sds[j] = std::sqrt(sq / b);
  }
  double total = 0.0;
  int pairs = 0;
  for (int j = 0; j < n; ++j)
    for (int k = j + 1; k < n; ++k) {
      ++pairs;
      if (sds[j] < 1e-12 || sds[k] < 1e-12) continue;
      double cov = 0.0;
      for (int i = 0; i < b; ++i) cov += (scores(j, i) - means[j]) * (scores(k, i) - means[k]);
      cov /= b;
      total += std::abs(cov / (sds[j] * sds[k]));
    }
  return total / pairs;
}

KvFile ensemble_to_kv(const RpnEnsemble& ensemble) {
  KvFile kv;
  kv.set_str("kind", "rpn_ensemble");
  kv.set_i64("num_heads", ensemble.num_heads());
  kv.set_i64("feature_dim", ensemble.feature_dim());
  kv.set_f64("coop_threshold", ensemble.coop_threshold);
  kv.set_f64("div_epsilon", ensemble.div_epsilon);
  for (int j = 0; j < ensemble.num_heads(); ++j)
    kv.set_vec("head." + std::to_string(j) + ".weights", ensemble.weights[j]);
  kv.set_vec("biases", ensemble.biases);
  return kv;
}

RpnEnsemble ensemble_from_kv(const KvFile& kv) {
  if (kv.get_str("kind") != "rpn_ensemble") throw parse_error("ensemble_from_kv: kind mismatch");
  RpnEnsemble ensemble;
  ensemble.coop_threshold = kv.get_f64("coop_threshold");
  ensemble.div_epsilon = kv.get_f64("div_epsilon");
  const int num_heads = static_cast<int>(kv.get_i64("num_heads"));
  for (int j = 0; j < num_heads; ++j)
    ensemble.weights.push_back(kv.get_vec("head." + std::to_string(j) + ".weights"));
  ensemble.biases = kv.get_vec("biases");
  return ensemble;
}

}  // namespace hallucdet
