#include <doctest.h>

#include <cmath>

#include "rkpinn/nn.hpp"

using namespace rkpinn;

namespace {

const std::vector<std::size_t> kSizes{3, 7, 5, 4};

double probe(const MlpParameters& p, const Vector& x, const Vector& w) { return w.dot(forward(p, x)); }

}  // namespace

TEST_CASE("Glorot initialization shape, bounds and determinism") {
  const auto p = glorot_init(kSizes, 42);
  p.check_consistent();
  CHECK(p.layers.size() == 3);
  CHECK(p.parameter_count() == 3 * 7 + 7 + 7 * 5 + 5 + 5 * 4 + 4);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(kSizes[l] + kSizes[l + 1]));
    CHECK(p.layers[l].weights.rows() == static_cast<Eigen::Index>(kSizes[l + 1]));
    CHECK(p.layers[l].weights.cols() == static_cast<Eigen::Index>(kSizes[l]));
    CHECK(p.layers[l].weights.cwiseAbs().maxCoeff() <= bound);
    CHECK(p.layers[l].biases.isZero(0.0));
  }
  CHECK(glorot_init(kSizes, 42).flatten() == p.flatten());
  CHECK(glorot_init(kSizes, 43).flatten() != p.flatten());
}

TEST_CASE("Glorot weights are spread over the interval") {
  const auto p = glorot_init({200, 200, 1}, 7);
  const auto& w = p.layers[0].weights;
  const double bound = std::sqrt(6.0 / 400.0);
  const double mean = w.mean();
  const double var = (w.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.01 * bound);
  CHECK(var == doctest::Approx(bound * bound / 3.0).epsilon(0.02));
}

TEST_CASE("forward pass of a hand-built network") {
  auto p = MlpParameters::zeros({2, 2, 1});
  p.layers[0].weights << 1.0, 0.0, 0.0, 2.0;
  p.layers[0].biases << 0.5, -0.5;
  p.layers[1].weights << 3.0, -1.0;
  p.layers[1].biases << 0.25;
  const Vector y = forward(p, Vector{{0.2, 0.3}});
  CHECK(y(0) == doctest::Approx(3.0 * std::tanh(0.7) - std::tanh(0.1) + 0.25).epsilon(1e-15));
}

TEST_CASE("batched forward equals per-sample forward bitwise") {
  const auto p = glorot_init(kSizes, 3);
  Matrix x(3, 4);
  x << 0.1, -0.4, 2.0, 0.0, 0.3, 0.9, -1.0, 0.0, -0.2, 0.5, 0.25, 0.0;
  const Matrix y = forward(p, x);
  for (int j = 0; j < 4; ++j) CHECK(y.col(j) == forward(p, Vector(x.col(j))));
}

TEST_CASE("forward tangent matches central differences") {
  const auto p = glorot_init(kSizes, 5);
  const Vector x{{0.3, -0.8, 0.4}};
  for (std::size_t d = 0; d < 3; ++d) {
    const auto t = forward_tangent(p, x, d);
    CHECK(t.output == forward(p, x));
    Vector xp = x;
    Vector xm = x;
    const double h = 1e-6;
    xp(d) += h;
    xm(d) -= h;
    const Vector fd = (forward(p, xp) - forward(p, xm)) / (2 * h);
    CHECK((t.derivative - fd).cwiseAbs().maxCoeff() < 1e-8);
  }
  CHECK_THROWS_AS((void)forward_tangent(p, x, 3), ShapeError);
}

TEST_CASE("backward matches central differences") {
  const auto p = glorot_init(kSizes, 9);
  const Vector x{{0.3, -0.8, 0.4}};
  const Vector w{{1.0, -2.0, 0.5, 0.25}};
  const auto g = backward(p, x, w);
  const Vector flat = p.flatten();
  const Vector gflat = g.gradients.flatten();
  MlpParameters q = p;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    Vector fp = flat;
    Vector fm = flat;
    fp(i) += h;
    fm(i) -= h;
    q.assign_flat(fp);
    const double up = probe(q, x, w);
    q.assign_flat(fm);
    const double dn = probe(q, x, w);
    CHECK(std::abs(gflat(i) - (up - dn) / (2 * h)) < 1e-7);
  }
  for (int d = 0; d < 3; ++d) {
    Vector xp = x;
    Vector xm = x;
    xp(d) += h;
    xm(d) -= h;
    CHECK(std::abs(g.input_gradient(d) - (probe(p, xp, w) - probe(p, xm, w)) / (2 * h)) < 1e-7);
  }
}

TEST_CASE("tape backward through the tangent path matches differences of the tangent") {
  const auto p = glorot_init(kSizes, 11);
  Matrix x(3, 2);
  x << 0.3, -0.1, -0.8, 0.6, 0.4, 1.2;
  Matrix cot_out(4, 2);
  cot_out << 0.3, -0.5, 1.0, 0.2, -0.7, 0.4, 0.1, 0.9;
  Matrix cot_tan(4, 2);
  cot_tan << -1.0, 0.5, 0.25, 0.75, 2.0, -0.3, 0.6, -0.2;

  auto objective = [&](const MlpParameters& q) {
    MlpTape tape;
    tape.record(q, x, 0);
    return (cot_out.array() * tape.output().array()).sum() + (cot_tan.array() * tape.output_tangent().array()).sum();
  };

  MlpTape tape;
  tape.record(p, x, 0);
  auto grads = MlpParameters::zeros(p.layer_sizes);
  (void)tape.backward(cot_out, cot_tan, grads);
  const Vector gflat = grads.flatten();
  const Vector flat = p.flatten();
  MlpParameters q = p;
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    Vector fp = flat;
    Vector fm = flat;
    fp(i) += h;
    fm(i) -= h;
    q.assign_flat(fp);
    const double up = objective(q);
    q.assign_flat(fm);
    const double dn = objective(q);
    worst = std::max(worst, std::abs(gflat(i) - (up - dn) / (2 * h)));
  }
  CHECK(worst < 1e-7);
}

TEST_CASE("tape backward accumulates into existing gradients") {
  const auto p = glorot_init(kSizes, 2);
  Matrix x = Matrix::Constant(3, 1, 0.2);
  Matrix cot = Matrix::Constant(4, 1, 1.0);
  MlpTape tape;
  tape.record(p, x, std::nullopt);
  auto once = MlpParameters::zeros(p.layer_sizes);
  (void)tape.backward(cot, Matrix(), once);
  auto twice = MlpParameters::zeros(p.layer_sizes);
  (void)tape.backward(cot, Matrix(), twice);
  (void)tape.backward(cot, Matrix(), twice);
  CHECK((twice.flatten() - 2.0 * once.flatten()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("flatten and assign_flat round-trip") {
  const auto p = glorot_init(kSizes, 1);
  auto q = MlpParameters::zeros(kSizes);
  q.assign_flat(p.flatten());
  CHECK(q.flatten() == p.flatten());
  CHECK_THROWS_AS(q.assign_flat(Vector::Zero(3)), ShapeError);
}

TEST_CASE("shape errors") {
  const auto p = glorot_init(kSizes, 1);
  CHECK_THROWS_AS((void)forward(p, Vector(Vector::Zero(2))), ShapeError);
  CHECK_THROWS_AS((void)backward(p, Vector(Vector::Zero(3)), Vector(Vector::Zero(3))), ShapeError);
  CHECK_THROWS_AS((void)glorot_init({3}, 1), ShapeError);
}

TEST_CASE("Adam first step moves each parameter by lr against the gradient sign") {
  auto p = MlpParameters::zeros({1, 1, 1});
  p.layers[0].weights(0, 0) = 1.0;
  p.layers[0].biases(0) = -1.0;
  auto g = MlpParameters::zeros({1, 1, 1});
  g.layers[0].weights(0, 0) = 3.0;
  g.layers[0].biases(0) = -1e-3;
  auto state = AdamState::for_parameters(p);
  CHECK(adam_step(p, g, state, 0.1));
  CHECK(state.step_count == 1);
  CHECK(p.layers[0].weights(0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.layers[0].biases(0) == doctest::Approx(-0.9).epsilon(1e-4));
}

TEST_CASE("Adam follows the reference recursion") {
  auto p = MlpParameters::zeros({1, 1, 1});
  auto state = AdamState::for_parameters(p);
  double w = 0.0;
  double m = 0.0;
  double v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double grad = 2.0 * (w - 3.0);
    auto g = MlpParameters::zeros({1, 1, 1});
    g.layers[0].weights(0, 0) = grad;
    CHECK(adam_step(p, g, state, 0.05));
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    w -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.layers[0].weights(0, 0) == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("Adam rejects non-finite gradients without side effects") {
  auto p = glorot_init({2, 3, 1}, 4);
  const Vector before = p.flatten();
  auto state = AdamState::for_parameters(p);
  auto g = MlpParameters::zeros({2, 3, 1});
  g.layers[0].weights(1, 1) = std::nan("");
  CHECK_FALSE(adam_step(p, g, state, 0.1));
  CHECK(p.flatten() == before);
  CHECK(state.step_count == 0);
  CHECK_THROWS_AS((void)adam_step(p, MlpParameters::zeros({2, 3, 1}), state, 0.0), std::invalid_argument);
}

TEST_CASE("learning rate schedule") {
  CHECK(lr_schedule(0) == 0.05);
  CHECK(lr_schedule(100) == doctest::Approx(0.05 * 0.995).epsilon(1e-15));
  CHECK(lr_schedule(50) == doctest::Approx(0.05 * std::sqrt(0.995)).epsilon(1e-15));
  CHECK(lr_schedule(100000) == doctest::Approx(0.05 * std::pow(0.995, 1000.0)).epsilon(1e-12));
  const LearningRateSchedule custom{0.1, 0.5, 10.0};
  CHECK(custom(20) == doctest::Approx(0.025).epsilon(1e-15));
}
