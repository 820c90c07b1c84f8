#include "exrec/nn.hpp"

#include <cmath>
#include <sstream>

namespace exrec {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Vector linear(const Matrix& w, const Vector& x) {
  if (w.cols() != x.size()) {
    std::ostringstream os;
    os << "linear: weight " << shape_string(w) << " cannot multiply vector of length " << x.size();
    throw ShapeError(os.str());
  }
  return w * x;
}

Vector relu(const Vector& x) { return x.cwiseMax(0.0); }

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) throw ShapeError("softmax: empty input");
  const double shift = logits.maxCoeff();
  Vector out = (logits.array() - shift).exp();
  out /= out.sum();
  return out;
}

double cross_entropy(const Vector& probs, std::size_t target) {
  if (target >= static_cast<std::size_t>(probs.size())) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside " +
                     std::to_string(probs.size()) + " classes");
  }
  return -std::log(probs[static_cast<Eigen::Index>(target)] + kLogFloor);
}

Vector cross_entropy_softmax_grad(const Vector& probs, std::size_t target) {
  const auto t = static_cast<Eigen::Index>(target);
  if (t >= probs.size()) throw IndexError("cross_entropy: target out of range");
  // dL/dz_i = -(p_t / (p_t + floor)) * (delta_it - p_i)
  const double scale = probs[t] / (probs[t] + kLogFloor);
  Vector g = probs * scale;
  g[t] -= scale;
  return g;
}

Vector softmax_backward(const Vector& y, const Vector& dy) {
  const double dot = y.dot(dy);
  return y.cwiseProduct((dy.array() - dot).matrix());
}

Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Adam::Adam(AdamConfig config, std::span<const Matrix* const> shapes) : config_(config) {
  m_.reserve(shapes.size());
  v_.reserve(shapes.size());
  for (const Matrix* p : shapes) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("adam: expected " + std::to_string(m_.size()) + " tensors");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i]->rows() != m_[i].rows() || grads[i]->cols() != m_[i].cols() ||
        params[i]->rows() != m_[i].rows() || params[i]->cols() != m_[i].cols()) {
      throw ShapeError("adam: tensor " + std::to_string(i) + " has shape " +
                       shape_string(*params[i]) + ", gradient " + shape_string(*grads[i]) +
                       ", state " + shape_string(m_[i]));
    }
    if (!grads[i]->allFinite()) {
      throw NumericError("adam: non-finite gradient in tensor " + std::to_string(i));
    }
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double* g = grads[i]->data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* p = params[i]->data();
    const Eigen::Index n = m_[i].size();
    for (Eigen::Index j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

GradCheckResult grad_check(const std::function<double()>& loss, std::span<Matrix* const> params,
                           std::span<const Matrix* const> grads, double step, double floor) {
  GradCheckResult worst;
  bool first = true;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    Matrix& p = *params[ti];
    const Matrix& g = *grads[ti];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeError("grad_check: gradient " + shape_string(g) + " vs parameter " +
                       shape_string(p));
    }
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      const double saved = p.data()[j];
      p.data()[j] = saved + step;
      const double up = loss();
      p.data()[j] = saved - step;
      const double down = loss();
      p.data()[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = g.data()[j];
      const double err =
          std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
      if (first || err > worst.max_rel_error) {
        worst = {err, ti, static_cast<std::size_t>(j), analytic, numeric};
        first = false;
      }
    }
  }
  return worst;
}

}  // namespace exrec
