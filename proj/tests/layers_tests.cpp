#include <cmath>

#include "doctest.h"
#include "hallucdet/grad_check.hpp"
#include "hallucdet/layers.hpp"
#include "hallucdet/rng.hpp"

using namespace hallucdet;

namespace {

AffineLayer random_layer(int out_dim, int in_dim, Rng& rng) {
  AffineLayer layer;
  layer.weights = Matrix(out_dim, in_dim);
  for (double& w : layer.weights.data) w = rng.normal(0.0, 0.7);
  layer.bias.resize(out_dim);
  for (double& b : layer.bias) b = rng.normal(0.0, 0.3);
  return layer;
}

Matrix random_matrix(int rows, int cols, Rng& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal(0.0, sd);
  return m;
}

// loss(W, b) = sum(out .* G) for a fixed G exercises every output path with
// distinct upstream gradients.
double weighted_sum(const Matrix& out, const Matrix& g) {
  double total = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) total += out.data[i] * g.data[i];
  return total;
}

Vec pack(const AffineLayer& layer) {
  Vec p = layer.weights.data;
  p.insert(p.end(), layer.bias.begin(), layer.bias.end());
  return p;
}

AffineLayer unpack(const AffineLayer& shape, const Vec& p) {
  AffineLayer layer = shape;
  std::copy(p.begin(), p.begin() + layer.weights.data.size(), layer.weights.data.begin());
  std::copy(p.begin() + layer.weights.data.size(), p.end(), layer.bias.begin());
  return layer;
}

}  // namespace

TEST_CASE("affine forward matches the by-hand formula") {
  AffineLayer layer;
  layer.weights = Matrix(2, 3, {1, 0, 2, -1, 1, 0});
  layer.bias = {0.5, -0.5};
  const Matrix in(1, 3, {1.0, 2.0, 3.0});
  const Matrix out = affine_forward(in, layer);
  CHECK(out.rows == 1);
  CHECK(out.cols == 2);
  CHECK(out(0, 0) == 7.5);   // 1 + 6 + 0.5
  CHECK(out(0, 1) == 0.5);   // -1 + 2 - 0.5
}

TEST_CASE("affine backward matches finite differences") {
  Rng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    const AffineLayer layer = random_layer(4, 3, rng);
    const Matrix input = random_matrix(6, 3, rng);
    const Matrix g = random_matrix(6, 4, rng);

    AffineCache cache;
    affine_forward(input, layer, &cache);
    const AffineGrads grads = affine_backward(g, layer, cache);

    Vec analytic = grads.weights.data;
    analytic.insert(analytic.end(), grads.bias.begin(), grads.bias.end());
    const double err = grad_check(
        [&](const Vec& p) {
          return weighted_sum(affine_forward(input, unpack(layer, p)), g);
        },
        pack(layer), analytic, 1e-5);
    CHECK(err < 1e-6);

    // Input gradient via the same scheme.
    const double in_err = grad_check(
        [&](const Vec& p) {
          Matrix shifted = input;
          shifted.data = p;
          return weighted_sum(affine_forward(shifted, layer), g);
        },
        input.data, grads.input.data, 1e-5);
    CHECK(in_err < 1e-6);
  }
}

TEST_CASE("relu clamps negatives and zeroes their gradient") {
  AffineLayer layer;
  layer.weights = Matrix::identity(2);
  layer.bias = {0.0, 0.0};
  const Matrix in(1, 2, {3.0, -2.0});
  AffineCache cache;
  const Matrix out = affine_relu_forward(in, layer, &cache);
  CHECK(out(0, 0) == 3.0);
  CHECK(out(0, 1) == 0.0);

  const Matrix g(1, 2, {1.0, 1.0});
  const AffineGrads grads = affine_relu_backward(g, layer, cache);
  CHECK(grads.input(0, 0) == 1.0);
  CHECK(grads.input(0, 1) == 0.0);  // clamped unit passes nothing back
}

TEST_CASE("affine+relu backward matches finite differences away from kinks") {
  Rng rng(202);
  for (int trial = 0; trial < 5; ++trial) {
    const AffineLayer layer = random_layer(4, 3, rng);
    Matrix input = random_matrix(6, 3, rng);

    // Keep every pre-activation away from zero so the FD probe never crosses
    // the kink.
    AffineCache probe;
    affine_relu_forward(input, layer, &probe);
    bool safe = true;
    for (double v : probe.pre_activation.data) safe &= std::abs(v) > 1e-2;
    if (!safe) continue;

    const Matrix g = random_matrix(6, 4, rng);
    const AffineGrads grads = affine_relu_backward(g, layer, probe);
    Vec analytic = grads.weights.data;
    analytic.insert(analytic.end(), grads.bias.begin(), grads.bias.end());
    const double err = grad_check(
        [&](const Vec& p) {
          return weighted_sum(affine_relu_forward(input, unpack(layer, p)), g);
        },
        pack(layer), analytic, 1e-6);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("uniform logits cost exactly ln K") {
  for (int k : {2, 3, 7, 21}) {
    const Matrix logits(4, k, 0.25);  // any constant row is uniform after softmax
    const std::vector<int> labels{0, k - 1, k / 2, 0};
    const CrossEntropyResult r = softmax_cross_entropy(logits, labels);
    CHECK(std::abs(r.loss - std::log(static_cast<double>(k))) < 1e-12);
  }
}

TEST_CASE("two-class cross-entropy matches the closed form") {
  // loss = log(1 + exp(l1 - l0)) for label 0.
  const Matrix logits(1, 2, {2.0, -1.0});
  const CrossEntropyResult r = softmax_cross_entropy(logits, {0});
  CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(-3.0))).epsilon(1e-12));

  // Gradient = softmax - onehot, averaged over the batch of one.
  const double p1 = 1.0 / (1.0 + std::exp(3.0));
  CHECK(r.grad_logits(0, 0) == doctest::Approx(-(p1)).epsilon(1e-9));
  CHECK(r.grad_logits(0, 1) == doctest::Approx(p1).epsilon(1e-9));
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(303);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix logits = random_matrix(5, 4, rng, 2.0);
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.uniform_index(4)));
    const CrossEntropyResult r = softmax_cross_entropy(logits, labels);
    const double err = grad_check(
        [&](const Vec& p) {
          Matrix shifted = logits;
          shifted.data = p;
          return softmax_cross_entropy(shifted, labels).loss;
        },
        logits.data, r.grad_logits.data, 1e-5);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("softmax is shift-stable and rows sum to one") {
  Matrix logits(2, 3, {1e4, 1e4 + 1.0, 1e4 - 2.0, -1e4, -1e4 + 0.5, -1e4});
  const Matrix p = softmax_rows(logits);
  for (int i = 0; i < 2; ++i) {
    double total = 0.0;
    for (int j = 0; j < 3; ++j) {
      CHECK(std::isfinite(p(i, j)));
      total += p(i, j);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sigmoid reference points") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(sigmoid(-40.0) > 0.0);
  CHECK(sigmoid(40.0) <= 1.0);
  CHECK(std::isfinite(sigmoid(-745.0)));
}
