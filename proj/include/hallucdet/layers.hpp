#pragma once

#include <vector>

#include "hallucdet/matrix.hpp"

namespace hallucdet {

/// One affine layer, out = input * W^T + b. W has shape
/// (output_dim x input_dim); one row per output unit.
struct AffineLayer {
  Matrix weights;
  Vec bias;

  int input_dim() const { return weights.cols; }
  int output_dim() const { return weights.rows; }
};

/// What the backward pass needs from a forward pass.
struct AffineCache {
  Matrix input;
  Matrix pre_activation;  // before ReLU; equals the output for linear layers
};

struct AffineGrads {
  Matrix input;    // dL/dinput
  Matrix weights;  // dL/dW
  Vec bias;        // dL/db
};

Matrix affine_forward(const Matrix& input, const AffineLayer& layer, AffineCache* cache = nullptr);
AffineGrads affine_backward(const Matrix& grad_output, const AffineLayer& layer, const AffineCache& cache);

/// out[i,j] = max(0, sum_k input[i,k] * W[j,k] + b[j]). The subgradient at 0
/// is taken as 0.
Matrix affine_relu_forward(const Matrix& input, const AffineLayer& layer, AffineCache* cache = nullptr);
AffineGrads affine_relu_backward(const Matrix& grad_output, const AffineLayer& layer, const AffineCache& cache);

/// Mean softmax cross-entropy over rows, with max-subtracted logsumexp.
/// grad_logits is the analytic (softmax - onehot) / batch gradient.
struct CrossEntropyResult {
  double loss = 0.0;
  Matrix grad_logits;
};
CrossEntropyResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

/// Row-wise softmax probabilities (max-subtracted).
Matrix softmax_rows(const Matrix& logits);

double sigmoid(double x);

}  // namespace hallucdet
