#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "exrec/nn.hpp"

using namespace exrec;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Linear, IdentityZeroAndArithmetic) {
  EXPECT_TRUE(linear(Matrix::Identity(3, 3), vec({1, 2, 3})).isApprox(vec({1, 2, 3})));
  EXPECT_EQ(linear(Matrix::Zero(2, 3), vec({4, 5, 6})), vec({0, 0}));
  Matrix w(2, 2);
  w << 1, 2, 3, 4;
  EXPECT_EQ(linear(w, vec({1, 1})), vec({3, 7}));
}

TEST(Linear, ShapeErrorNamesBothShapes) {
  try {
    linear(Matrix::Zero(2, 3), vec({1, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
    EXPECT_NE(msg.find("length 2"), std::string::npos);
  }
}

TEST(Activation, ReluAndSoftmax) {
  EXPECT_EQ(relu(vec({-1, 0, 2})), vec({0, 0, 2}));
  const Vector s = softmax(vec({0, 0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_THROW(softmax(Vector()), ShapeError);
}

TEST(Activation, SoftmaxShiftInvarianceProperty) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index len = 1 + trial % 50;
    Vector x(len);
    for (Eigen::Index i = 0; i < len; ++i) x[i] = n(rng);
    const double c = n(rng) * 100.0;
    const Vector a = softmax(x);
    const Vector b = softmax((x.array() + c).matrix());
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
    EXPECT_TRUE((a.array() > 0.0).all());
    Eigen::Index ia, ib;
    a.maxCoeff(&ia);
    b.maxCoeff(&ib);
    EXPECT_EQ(ia, ib);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Activation, SoftmaxLargeLogitsStayFinite) {
  const Vector s = softmax(vec({1000, 999, -1000}));
  EXPECT_TRUE(s.allFinite());
  EXPECT_NEAR(s.sum(), 1.0, 1e-12);
}

TEST(CrossEntropy, Examples) {
  EXPECT_LE(cross_entropy(vec({0, 1, 0}), 1), 1e-11);
  EXPECT_NEAR(cross_entropy(Vector::Constant(44, 1.0 / 44.0), 7), std::log(44.0), 1e-9);
  EXPECT_NEAR(std::log(44.0), 3.7842, 1e-4);
  const double floored = cross_entropy(vec({1, 0}), 1);
  EXPECT_TRUE(std::isfinite(floored));
  EXPECT_NEAR(floored, 27.631, 1e-3);
  EXPECT_THROW(cross_entropy(vec({0.5, 0.5}), 2), IndexError);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Matrix p = Matrix::Constant(2, 2, 1.5);
  Matrix g = Matrix::Zero(2, 2);
  const Matrix before = p;
  Matrix* ps[] = {&p};
  const Matrix* gs[] = {&g};
  const Matrix* shapes[] = {&p};
  Adam adam({}, shapes);
  adam.step(ps, gs);
  EXPECT_EQ(p, before);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p(1, 3);
  p << 0.0, 1.0, -2.0;
  Matrix g(1, 3);
  g << 0.3, -5.0, 1e-3;
  const Matrix before = p;
  Matrix* ps[] = {&p};
  const Matrix* gs[] = {&g};
  const Matrix* shapes[] = {&p};
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  Adam adam(cfg, shapes);
  adam.step(ps, gs);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double delta = p(0, i) - before(0, i);
    EXPECT_LE(std::abs(delta), cfg.learning_rate);
    EXPECT_GE(std::abs(delta), 0.99 * cfg.learning_rate);
    EXPECT_EQ(delta < 0, g(0, i) > 0);
  }
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  Matrix w = Matrix::Zero(1, 1);
  Matrix g(1, 1);
  Matrix* ps[] = {&w};
  const Matrix* gs[] = {&g};
  const Matrix* shapes[] = {&w};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  Adam adam(cfg, shapes);
  for (int i = 0; i < 500; ++i) {
    g(0, 0) = 2.0 * (w(0, 0) - 3.0);
    adam.step(ps, gs);
  }
  EXPECT_LT(std::abs(w(0, 0) - 3.0), 0.01);
}

TEST(Adam, NanGradientIsRejectedWithoutSideEffects) {
  Matrix p = Matrix::Ones(2, 1);
  Matrix g = Matrix::Ones(2, 1);
  g(1, 0) = std::nan("");
  Matrix* ps[] = {&p};
  const Matrix* gs[] = {&g};
  const Matrix* shapes[] = {&p};
  Adam adam({}, shapes);
  EXPECT_THROW(adam.step(ps, gs), NumericError);
  EXPECT_EQ(adam.steps(), 0u);
  EXPECT_EQ(p, Matrix::Ones(2, 1));
}

TEST(Adam, ShapeMismatchIsRejected) {
  Matrix p = Matrix::Ones(2, 1);
  Matrix g = Matrix::Ones(1, 2);
  Matrix* ps[] = {&p};
  const Matrix* gs[] = {&g};
  const Matrix* shapes[] = {&p};
  Adam adam({}, shapes);
  EXPECT_THROW(adam.step(ps, gs), ShapeError);
}

namespace {

// One linear layer, softmax, cross entropy. Gradient by hand from the
// composed closed form: dW = (p - onehot) x^T (up to the log floor factor).
struct SingleLayer {
  Matrix w;
  Vector x;
  std::size_t target;

  double loss() const { return cross_entropy(softmax(linear(w, x)), target); }
  Matrix grad() const {
    const Vector p = softmax(linear(w, x));
    return cross_entropy_softmax_grad(p, target) * x.transpose();
  }
};

}  // namespace

TEST(GradCheck, SingleLayerMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  SingleLayer layer{random_matrix(5, 4, rng), random_matrix(4, 1, rng).col(0), 2};
  const Matrix g = layer.grad();
  Matrix* ps[] = {&layer.w};
  const Matrix* gs[] = {&g};
  const auto r = grad_check([&] { return layer.loss(); }, ps, gs);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  std::mt19937_64 rng(5);
  SingleLayer layer{random_matrix(3, 3, rng), random_matrix(3, 1, rng).col(0), 0};
  Matrix g = layer.grad();
  g(1, 2) *= 2.0;
  Matrix* ps[] = {&layer.w};
  const Matrix* gs[] = {&g};
  const auto r = grad_check([&] { return layer.loss(); }, ps, gs);
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_EQ(r.index, 1u * 3u + 2u);
}

// Property: each kernel op's backward agrees with central differences on
// random shapes and inputs (two-layer relu net exercises linear, relu,
// softmax and cross entropy, with gradients w.r.t. weights and input).
TEST(GradCheck, KernelOpsPropertyOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::Index in = 1 + static_cast<Eigen::Index>(rng() % 5);
    const Eigen::Index mid = 1 + static_cast<Eigen::Index>(rng() % 5);
    const Eigen::Index out = 2 + static_cast<Eigen::Index>(rng() % 5);
    Matrix w1 = random_matrix(mid, in, rng);
    Matrix w2 = random_matrix(out, mid, rng);
    Matrix x = random_matrix(in, 1, rng);
    const std::size_t target = rng() % static_cast<std::size_t>(out);

    auto loss = [&] {
      return cross_entropy(softmax(linear(w2, relu(linear(w1, x.col(0))))), target);
    };
    const Vector pre = linear(w1, x.col(0));
    const Vector h = relu(pre);
    const Vector p = softmax(linear(w2, h));
    const Vector dz = cross_entropy_softmax_grad(p, target);
    const Matrix gw2 = dz * h.transpose();
    const Vector dh = w2.transpose() * dz;
    const Vector dpre = (pre.array() > 0.0).select(dh, Vector::Zero(dh.size()));
    const Matrix gw1 = dpre * x.col(0).transpose();
    const Matrix gx = w1.transpose() * dpre;

    Matrix* ps[] = {&w1, &w2, &x};
    const Matrix* gs[] = {&gw1, &gw2, &gx};
    const auto r = grad_check(loss, ps, gs);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(GradCheck, SoftmaxBackwardPropertyOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 1000);
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 8);
    Matrix x = random_matrix(n, 1, rng);
    const Vector weights = random_matrix(n, 1, rng).col(0);
    auto loss = [&] { return weights.dot(softmax(x.col(0))); };
    const Matrix g = softmax_backward(softmax(x.col(0)), weights);
    Matrix* ps[] = {&x};
    const Matrix* gs[] = {&g};
    EXPECT_LT(grad_check(loss, ps, gs).max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Init, GlorotBoundsAndDeterminism) {
  std::mt19937_64 a(42), b(42);
  const Matrix m1 = glorot_uniform(10, 20, a);
  const Matrix m2 = glorot_uniform(10, 20, b);
  EXPECT_EQ(m1, m2);
  EXPECT_LE(m1.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 30.0));
}
