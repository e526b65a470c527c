#include "hallucdet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hallucdet/errors.hpp"

namespace hallucdet {

namespace {

void check_affine_shapes(const Matrix& input, const AffineLayer& layer) {
  if (layer.weights.cols != input.cols)
    throw shape_error("affine layer expects input width " + std::to_string(layer.weights.cols) + ", got " +
                      std::to_string(input.cols));
  if (static_cast<int>(layer.bias.size()) != layer.weights.rows)
    throw shape_error("affine bias length != weight rows");
}

Matrix affine_pre(const Matrix& input, const AffineLayer& layer) {
  Matrix pre = matmul_bt(input, layer.weights);
  for (int i = 0; i < pre.rows; ++i)
    for (int j = 0; j < pre.cols; ++j) pre(i, j) += layer.bias[j];
  return pre;
}

}  // namespace

Matrix affine_forward(const Matrix& input, const AffineLayer& layer, AffineCache* cache) {
  check_affine_shapes(input, layer);
  Matrix pre = affine_pre(input, layer);
  if (cache) {
    cache->input = input;
    cache->pre_activation = pre;
  }
  return pre;
}

AffineGrads affine_backward(const Matrix& grad_output, const AffineLayer& layer, const AffineCache& cache) {
  AffineGrads g;
  g.input = matmul(grad_output, layer.weights);
  g.weights = matmul_at(grad_output, cache.input);
  g.bias = col_sum(grad_output);
  return g;
}

Matrix affine_relu_forward(const Matrix& input, const AffineLayer& layer, AffineCache* cache) {
  check_affine_shapes(input, layer);
  Matrix pre = affine_pre(input, layer);
  Matrix out = pre;
  for (double& x : out.data) x = std::max(0.0, x);
  if (cache) {
    cache->input = input;
    cache->pre_activation = std::move(pre);
  }
  return out;
}

AffineGrads affine_relu_backward(const Matrix& grad_output, const AffineLayer& layer, const AffineCache& cache) {
  Matrix masked = grad_output;
  for (std::size_t i = 0; i < masked.data.size(); ++i)
    if (cache.pre_activation.data[i] <= 0.0) masked.data[i] = 0.0;
  AffineGrads g;
  g.input = matmul(masked, layer.weights);
  g.weights = matmul_at(masked, cache.input);
  g.bias = col_sum(masked);
  return g;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs = logits;
  for (int i = 0; i < logits.rows; ++i) {
    double mx = logits(i, 0);
    for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
    double sum = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      const double e = std::exp(logits(i, j) - mx);
      probs(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < logits.cols; ++j) probs(i, j) /= sum;
  }
  return probs;
}

CrossEntropyResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  if (logits.rows == 0) throw argument_error("softmax_cross_entropy: empty batch");
  if (static_cast<int>(labels.size()) != logits.rows)
    throw shape_error("softmax_cross_entropy: one label per row required");
  for (int y : labels)
    if (y < 0 || y >= logits.cols) throw argument_error("label out of range");

  const int batch = logits.rows;
  CrossEntropyResult result;
  result.grad_logits = Matrix(logits.rows, logits.cols, 0.0);
  double total = 0.0;
  for (int i = 0; i < batch; ++i) {
    double mx = logits(i, 0);
    for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
    double sum = 0.0;
    for (int j = 0; j < logits.cols; ++j) sum += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(sum);
    total += lse - logits(i, labels[i]);
    for (int j = 0; j < logits.cols; ++j) {
      const double p = std::exp(logits(i, j) - mx) / sum;
      result.grad_logits(i, j) = (p - (j == labels[i] ? 1.0 : 0.0)) / batch;
    }
  }
  result.loss = total / batch;
  if (!std::isfinite(result.loss)) throw numeric_error("softmax_cross_entropy produced non-finite loss");
  return result;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace hallucdet
