#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "exrec/error.hpp"

namespace exrec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Lower bound added to the target probability before taking the log.
inline constexpr double kLogFloor = 1e-12;

std::string shape_string(const Matrix& m);

/// W * x with an explicit shape check.
Vector linear(const Matrix& w, const Vector& x);

Vector relu(const Vector& x);

/// Shift-stable softmax. Throws ShapeError on an empty input.
Vector softmax(const Vector& logits);

/// -log(probs[target] + kLogFloor).
double cross_entropy(const Vector& probs, std::size_t target);

/// Gradient of cross_entropy(softmax(logits), target) with respect to the logits,
/// given probs = softmax(logits). Exact for the floored loss.
Vector cross_entropy_softmax_grad(const Vector& probs, std::size_t target);

/// Backward of y = softmax(x): returns dL/dx given y and dL/dy.
Vector softmax_backward(const Vector& y, const Vector& dy);

/// Glorot-style uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

bool all_finite(const Matrix& m);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter tensors.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig config, std::span<const Matrix* const> shapes);

  /// Applies one update. Throws NumericError if any gradient is non-finite,
  /// in which case neither parameters nor moments are modified.
  void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads);

  std::uint64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<Matrix>& first_moment() const noexcept { return m_; }
  const std::vector<Matrix>& second_moment() const noexcept { return v_; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::uint64_t t_ = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t tensor = 0;  // index of the worst tensor
  std::size_t index = 0;   // flat row-major index inside it
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares analytic gradients against central differences for every
/// parameter coordinate. `loss` is re-evaluated after each perturbation and
/// must read the parameters through the pointers in `params`.
///
/// The relative error of a coordinate is |a - n| / max(|a| + |n|, floor);
/// the floor keeps coordinates whose true gradient is ~0 from reporting
/// round-off noise as a large relative error.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<Matrix* const> params,
                           std::span<const Matrix* const> grads, double step = 1e-5,
                           double floor = 1e-6);

}  // namespace exrec
