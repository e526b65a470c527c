#include <cmath>

#include "doctest.h"
#include "hallucdet/grad_check.hpp"
#include "hallucdet/hallucinator.hpp"
#include "hallucdet/rng.hpp"

using namespace hallucdet;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal(0.0, sd);
  return m;
}

Vec random_vec(int n, Rng& rng, double sd = 1.0) {
  Vec v(n);
  for (double& x : v) x = rng.normal(0.0, sd);
  return v;
}

Vec abs_vec(Vec v) {
  for (double& x : v) x = std::abs(x);
  return v;
}

}  // namespace

TEST_CASE("variant naming round-trips") {
  for (auto v : {HallucinatorVariant::none, HallucinatorVariant::conservative,
                 HallucinatorVariant::aggressive})
    CHECK(variant_from_name(variant_name(v)) == v);
  CHECK_THROWS_AS(variant_from_name("bogus"), argument_error);
}

TEST_CASE("initialization produces the advertised architecture") {
  Rng rng(1);
  const Hallucinator cons = init_hallucinator(6, HallucinatorVariant::conservative, 0.0, rng);
  REQUIRE(cons.layers.size() == 2);
  CHECK(cons.input_dim() == 18);   // [prototype; seed; noise]
  CHECK(cons.feature_dim() == 6);
  CHECK(cons.layers[0].weights.rows == 6);
  CHECK(cons.layers[0].weights.cols == 18);
  CHECK(cons.layers[1].weights.rows == 6);
  CHECK(cons.layers[1].weights.cols == 6);

  const Hallucinator aggr = init_hallucinator(6, HallucinatorVariant::aggressive, 0.0, rng);
  REQUIRE(aggr.layers.size() == 3);
  CHECK(aggr.input_dim() == 18);
  CHECK(aggr.feature_dim() == 6);

  CHECK_THROWS_AS(init_hallucinator(6, HallucinatorVariant::none, 0.0, rng), argument_error);
}

TEST_CASE("zero-init-noise network reproduces nonnegative seeds exactly") {
  Rng rng(2);
  for (auto variant : {HallucinatorVariant::conservative, HallucinatorVariant::aggressive}) {
    const Hallucinator h = init_hallucinator(5, variant, 0.0, rng);
    for (int trial = 0; trial < 100; ++trial) {
      const Vec seed = abs_vec(random_vec(5, rng));  // nonnegative survives every ReLU
      const Vec prototype = random_vec(5, rng);
      const Vec zero(5, 0.0);
      const Vec out = hallucinate_vector(h, prototype, seed, zero);
      double max_dev = 0.0;
      for (int i = 0; i < 5; ++i) max_dev = std::max(max_dev, std::abs(out[i] - seed[i]));
      CHECK(max_dev == 0.0);
    }
  }
}

TEST_CASE("init noise perturbs weights at the requested scale") {
  Rng rng(3);
  const int d = 8;
  // Entry std of (weights - identity-structured init) should approach 0.05.
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const Hallucinator noisy = init_hallucinator(d, HallucinatorVariant::conservative, 0.05, rng);
    Rng ref_rng(999);  // init noise is additive, so subtract the clean skeleton
    const Hallucinator clean = init_hallucinator(d, HallucinatorVariant::conservative, 0.0, ref_rng);
    for (std::size_t l = 0; l < noisy.layers.size(); ++l)
      for (std::size_t i = 0; i < noisy.layers[l].weights.data.size(); ++i) {
        const double dev = noisy.layers[l].weights.data[i] - clean.layers[l].weights.data[i];
        sum_sq += dev * dev;
        ++count;
      }
  }
  const double entry_std = std::sqrt(sum_sq / static_cast<double>(count));
  CHECK(entry_std == doctest::Approx(0.05).epsilon(0.05));
}

TEST_CASE("near-identity init stays near the seed for realistic inputs") {
  Rng rng(4);
  const Hallucinator h = init_hallucinator(16, HallucinatorVariant::conservative, 0.02, rng);
  NoiseSpec spec;
  spec.mean = Vec(16, 0.3);
  spec.stddev = Vec(16, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec seed = abs_vec(random_vec(16, rng));
    const Vec prototype = random_vec(16, rng, 0.5);
    const Vec eps = sample_noise(spec, rng);
    const Vec out = hallucinate_vector(h, prototype, seed, eps);
    Vec dev = out;
    for (int i = 0; i < 16; ++i) dev[i] -= seed[i];
    CHECK(norm(dev) / std::max(1e-9, norm(seed)) < 0.5);
  }
}

TEST_CASE("fit_noise_spec matches the two-pass mean/std oracle") {
  const NoiseSpec spec = fit_noise_spec({{0.0, 0.0}, {2.0, 2.0}});
  CHECK(spec.mean == Vec{1.0, 1.0});
  CHECK(spec.stddev[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));  // n-1 denominator
  CHECK(spec.stddev[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));

  const NoiseSpec flat = fit_noise_spec({{3.0}, {3.0}, {3.0}});
  CHECK(flat.mean == Vec{3.0});
  CHECK(flat.stddev == Vec{0.0});

  CHECK_THROWS_AS(fit_noise_spec({}), argument_error);
  CHECK_THROWS_AS(fit_noise_spec({{1.0}}), argument_error);  // need at least two samples

  // Hand check against a three-point set.
  const NoiseSpec tri = fit_noise_spec({{1.0}, {2.0}, {4.0}});
  CHECK(tri.mean[0] == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
  CHECK(tri.stddev[0] == doctest::Approx(std::sqrt((1.0 / 2.0) * (16.0 / 9.0 + 1.0 / 9.0 + 25.0 / 9.0)))
                             .epsilon(1e-12));
}

TEST_CASE("sample_noise respects the spec moments") {
  NoiseSpec spec;
  spec.mean = {2.0, -1.0};
  spec.stddev = {0.5, 3.0};
  Rng rng(5);
  Vec sum(2, 0.0), sum_sq(2, 0.0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const Vec x = sample_noise(spec, rng);
    for (int j = 0; j < 2; ++j) {
      sum[j] += x[j];
      sum_sq[j] += x[j] * x[j];
    }
  }
  for (int j = 0; j < 2; ++j) {
    const double mean = sum[j] / n;
    const double var = sum_sq[j] / n - mean * mean;
    CHECK(mean == doctest::Approx(spec.mean[j]).epsilon(0.02));
    CHECK(var == doctest::Approx(spec.stddev[j] * spec.stddev[j]).epsilon(0.03));
  }
}

TEST_CASE("hallucinator_inputs concatenates [prototype; seed; noise] rows") {
  const Matrix protos(2, 2, {1, 2, 3, 4});
  const Matrix seeds(2, 2, {5, 6, 7, 8});
  const Matrix noise(2, 2, {9, 10, 11, 12});
  const Matrix in = hallucinator_inputs(protos, seeds, noise);
  REQUIRE(in.rows == 2);
  REQUIRE(in.cols == 6);
  CHECK(in.row(0) == Vec{1, 2, 5, 6, 9, 10});
  CHECK(in.row(1) == Vec{3, 4, 7, 8, 11, 12});
}

TEST_CASE("hallucinate carries the seed label and hallucinated origin") {
  Rng rng(6);
  const Hallucinator h = init_hallucinator(3, HallucinatorVariant::conservative, 0.01, rng);
  PrototypeRegistry reg;
  reg.update_dynamic(4, {0.1, 0.2, 0.3});
  NoiseSpec spec;
  spec.mean = Vec(3, 0.0);
  spec.stddev = Vec(3, 0.1);

  const LabeledFeature seed{{1.0, 2.0, 3.0}, 4, Origin::real};
  const LabeledFeature out = hallucinate(h, reg, seed, spec, rng);
  CHECK(out.label == 4);
  CHECK(out.origin == Origin::hallucinated);
  CHECK(out.vector.size() == 3);

  const LabeledFeature orphan{{1.0, 2.0, 3.0}, 9, Origin::real};
  CHECK_THROWS_AS(hallucinate(h, reg, orphan, spec, rng), contract_error);
}

TEST_CASE("generation loss sums over the generated set") {
  Rng rng(7);
  const int d = 4, classes = 3;
  const Hallucinator h = init_hallucinator(d, HallucinatorVariant::conservative, 0.05, rng);

  // A zero-weight fc head scores everything uniformly: each example costs
  // exactly ln(rows).
  ClassifierHead head;
  head.kind = HeadKind::fully_connected;
  head.weights = Matrix(classes + 1, d, 0.0);

  const Matrix protos = random_matrix(2, d, rng);
  const Matrix seeds = random_matrix(2, d, rng);
  const Matrix noise = random_matrix(2, d, rng, 0.1);
  const Matrix inputs = hallucinator_inputs(protos, seeds, noise);

  const HallucinationLoss two = hallucination_loss(h, head, inputs, {0, 1});
  CHECK(two.loss == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));
  CHECK(two.hallucinated.rows == 2);

  // Doubling the batch doubles the loss: a sum, not a mean.
  Matrix inputs4(4, inputs.cols);
  for (int i = 0; i < 4; ++i) inputs4.set_row(i, inputs.row(i % 2));
  const HallucinationLoss four = hallucination_loss(h, head, inputs4, {0, 1, 0, 1});
  CHECK(four.loss == doctest::Approx(2.0 * two.loss).epsilon(1e-12));
}

TEST_CASE("generation loss gradient matches finite differences") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 5;
    const Hallucinator h = init_hallucinator(d, HallucinatorVariant::conservative, 0.1, rng);
    ClassifierHead head;
    head.kind = trial % 2 == 0 ? HeadKind::cosine : HeadKind::fully_connected;
    head.weights = random_matrix(4, d, rng, 0.6);
    head.cosine_scale = 8.0;

    // Positive seeds keep the forward pass away from ReLU kinks at the
    // near-identity init.
    Matrix protos = random_matrix(3, d, rng, 0.5);
    Matrix seeds(3, d);
    for (double& v : seeds.data) v = 0.5 + std::abs(rng.normal(0.0, 1.0));
    Matrix noise = random_matrix(3, d, rng, 0.1);
    const Matrix inputs = hallucinator_inputs(protos, seeds, noise);
    const std::vector<int> targets{0, 1, 2};

    const HallucinationLoss out = hallucination_loss(h, head, inputs, targets);
    const Vec analytic = flatten_grads(h, out.grads);
    const double err = grad_check(
        [&](const Vec& p) {
          Hallucinator probe = h;
          set_hallucinator_params(probe, p);
          return hallucination_loss(probe, head, inputs, targets).loss;
        },
        hallucinator_params(h), analytic, 1e-5);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("generation loss routed through a transform reaches the transform grads") {
  Rng rng(9);
  const int d = 4;
  const Hallucinator h = init_hallucinator(d, HallucinatorVariant::aggressive, 0.1, rng);
  ClassifierHead head;
  head.kind = HeadKind::fully_connected;
  head.weights = random_matrix(3, d, rng, 0.5);

  AffineLayer transform;
  transform.weights = random_matrix(d, d, rng, 0.4);
  for (int i = 0; i < d; ++i) transform.weights(i, i) += 1.0;
  transform.bias = random_vec(d, rng, 0.1);

  Matrix protos = random_matrix(2, d, rng, 0.5);
  Matrix seeds(2, d);
  for (double& v : seeds.data) v = 0.5 + std::abs(rng.normal(0.0, 1.0));
  Matrix noise = random_matrix(2, d, rng, 0.1);
  const Matrix inputs = hallucinator_inputs(protos, seeds, noise);
  const std::vector<int> targets{0, 1};

  AffineGrads tgrads;
  const HallucinationLoss out = hallucination_loss(h, head, inputs, targets, &transform, &tgrads);

  // Hallucinator gradient under the composed map.
  const double h_err = grad_check(
      [&](const Vec& p) {
        Hallucinator probe = h;
        set_hallucinator_params(probe, p);
        return hallucination_loss(probe, head, inputs, targets, &transform).loss;
      },
      hallucinator_params(h), flatten_grads(h, out.grads), 1e-5);
  CHECK(h_err < 1e-5);

  // Transform gradient.
  Vec tparams = transform.weights.data;
  tparams.insert(tparams.end(), transform.bias.begin(), transform.bias.end());
  Vec tanalytic = tgrads.weights.data;
  tanalytic.insert(tanalytic.end(), tgrads.bias.begin(), tgrads.bias.end());
  const double t_err = grad_check(
      [&](const Vec& p) {
        AffineLayer probe = transform;
        std::copy(p.begin(), p.begin() + probe.weights.data.size(), probe.weights.data.begin());
        std::copy(p.begin() + probe.weights.data.size(), p.end(), probe.bias.begin());
        return hallucination_loss(h, head, inputs, targets, &probe).loss;
      },
      tparams, tanalytic, 1e-5);
  CHECK(t_err < 1e-5);
}

TEST_CASE("prototypical loss is near ln C at init and permutation-symmetric") {
  Rng rng(10);
  const int d = 6;
  const Hallucinator h = init_hallucinator(d, HallucinatorVariant::aggressive, 0.0, rng);
  AffineLayer transform;
  transform.weights = Matrix::identity(d);
  transform.bias = Vec(d, 0.0);

  // Two classes, two hallucinated examples each, far-apart validation points
  // equal to the class seeds: with an identity network and identity transform,
  // prototypes equal the seed means, so validation examples classify
  // correctly and the loss is below ln 2.
  Matrix protos(4, d, 0.0);
  Matrix seeds(4, d, 0.0);
  seeds(0, 0) = 2.0; seeds(1, 0) = 2.0;  // class 7 points along +e0
  seeds(2, 1) = 2.0; seeds(3, 1) = 2.0;  // class 9 points along +e1
  const Matrix noise(4, d, 0.0);
  const Matrix inputs = hallucinator_inputs(protos, seeds, noise);
  const std::vector<int> halluc_classes{7, 7, 9, 9};

  Matrix validation(2, d, 0.0);
  validation(0, 0) = 2.0;
  validation(1, 1) = 2.0;
  const std::vector<int> validation_classes{7, 9};
  const std::vector<int> class_ids{7, 9};

  const AggressiveLoss loss = aggressive_prototypical_loss(h, transform, inputs, halluc_classes,
                                                           validation, validation_classes, class_ids,
                                                           10.0);
  CHECK(loss.loss < std::log(2.0));

  // Swapping the class id order changes nothing.
  const AggressiveLoss swapped = aggressive_prototypical_loss(h, transform, inputs, halluc_classes,
                                                              validation, validation_classes, {9, 7},
                                                              10.0);
  CHECK(swapped.loss == doctest::Approx(loss.loss).epsilon(1e-12));
}

TEST_CASE("prototypical loss gradients match finite differences") {
  Rng rng(11);
  const int d = 4;
  const Hallucinator h = init_hallucinator(d, HallucinatorVariant::aggressive, 0.1, rng);
  AffineLayer transform;
  transform.weights = random_matrix(d, d, rng, 0.3);
  for (int i = 0; i < d; ++i) transform.weights(i, i) += 1.0;
  transform.bias = random_vec(d, rng, 0.05);

  Matrix protos = random_matrix(4, d, rng, 0.4);
  Matrix seeds(4, d);
  for (double& v : seeds.data) v = 0.5 + std::abs(rng.normal(0.0, 0.8));
  Matrix noise = random_matrix(4, d, rng, 0.1);
  const Matrix inputs = hallucinator_inputs(protos, seeds, noise);
  const std::vector<int> halluc_classes{3, 3, 5, 5};

  Matrix validation = random_matrix(3, d, rng, 0.8);
  for (double& v : validation.data) v = 0.3 + std::abs(v);
  const std::vector<int> validation_classes{3, 5, 3};
  const std::vector<int> class_ids{3, 5};

  const AggressiveLoss out = aggressive_prototypical_loss(h, transform, inputs, halluc_classes,
                                                          validation, validation_classes, class_ids,
                                                          6.0);

  const double h_err = grad_check(
      [&](const Vec& p) {
        Hallucinator probe = h;
        set_hallucinator_params(probe, p);
        return aggressive_prototypical_loss(probe, transform, inputs, halluc_classes, validation,
                                            validation_classes, class_ids, 6.0)
            .loss;
      },
      hallucinator_params(h), flatten_grads(h, out.halluc_grads), 1e-5);
  CHECK(h_err < 1e-5);

  Vec tparams = transform.weights.data;
  tparams.insert(tparams.end(), transform.bias.begin(), transform.bias.end());
  Vec tanalytic = out.transform_grads.weights.data;
  tanalytic.insert(tanalytic.end(), out.transform_grads.bias.begin(), out.transform_grads.bias.end());
  const double t_err = grad_check(
      [&](const Vec& p) {
        AffineLayer probe = transform;
        std::copy(p.begin(), p.begin() + probe.weights.data.size(), probe.weights.data.begin());
        std::copy(p.begin() + probe.weights.data.size(), p.end(), probe.bias.begin());
        return aggressive_prototypical_loss(h, probe, inputs, halluc_classes, validation,
                                            validation_classes, class_ids, 6.0)
            .loss;
      },
      tparams, tanalytic, 1e-5);
  CHECK(t_err < 1e-5);
}

TEST_CASE("hallucinator params flatten and restore exactly") {
  Rng rng(12);
  const Hallucinator h = init_hallucinator(5, HallucinatorVariant::aggressive, 0.2, rng);
  const Vec params = hallucinator_params(h);
  Hallucinator copy = init_hallucinator(5, HallucinatorVariant::aggressive, 0.0, rng);
  set_hallucinator_params(copy, params);
  for (std::size_t l = 0; l < h.layers.size(); ++l) {
    CHECK(copy.layers[l].weights.data == h.layers[l].weights.data);
    CHECK(copy.layers[l].bias == h.layers[l].bias);
  }
  CHECK_THROWS_AS(set_hallucinator_params(copy, Vec(3, 0.0)), shape_error);
}

TEST_CASE("hallucinator and noise spec kv round-trips are bitwise") {
  Rng rng(13);
  for (auto variant : {HallucinatorVariant::conservative, HallucinatorVariant::aggressive}) {
    const Hallucinator h = init_hallucinator(4, variant, 0.15, rng);
    const Hallucinator back = hallucinator_from_kv(hallucinator_to_kv(h));
    CHECK(back.variant == h.variant);
    REQUIRE(back.layers.size() == h.layers.size());
    for (std::size_t l = 0; l < h.layers.size(); ++l) {
      CHECK(back.layers[l].weights.data == h.layers[l].weights.data);
      CHECK(back.layers[l].bias == h.layers[l].bias);
    }
  }

  NoiseSpec spec;
  spec.mean = {0.25, -1.5, 1.0 / 3.0};
  spec.stddev = {0.1, 0.0, 7.25};
  const NoiseSpec back = noise_spec_from_kv(noise_spec_to_kv(spec));
  CHECK(back.mean == spec.mean);
  CHECK(back.stddev == spec.stddev);
}
