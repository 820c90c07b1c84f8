#include "exrec/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "exrec/error.hpp"

namespace exrec {

SortedTriple sorted_triple(const Vector& probs) {
  if (probs.size() < 2) throw InputError("sorted_triple: need at least two probabilities");
  double top = -1.0;
  double second = -1.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double v = probs[i];
    if (v > top) {
      second = top;
      top = v;
    } else if (v > second) {
      second = v;
    }
  }
  return {top, second, std::max(0.0, 1.0 - top - second)};
}

double marginal_distance(const Vector& probs) {
  const SortedTriple t = sorted_triple(probs);
  return std::clamp(t.top - t.second, 0.0, 1.0);
}

void DirichletParams::validate() const {
  for (double a : alpha) {
    if (!std::isfinite(a) || a <= 0.0) throw InputError("dirichlet: concentrations must be > 0");
  }
}

namespace {

double digamma(double x) { return boost::math::digamma(x); }
double trigamma(double x) { return boost::math::trigamma(x); }

// Newton iteration for psi^{-1}(y), starting point from Minka (2000).
double inverse_digamma(double y) {
  constexpr double kEulerGamma = 0.5772156649015329;
  double x = y >= -2.22 ? std::exp(y) + 0.5 : -1.0 / (y + kEulerGamma);
  for (int i = 0; i < 8; ++i) x -= (digamma(x) - y) / trigamma(x);
  return x;
}

std::string format_alpha(const std::array<double, 3>& a) {
  std::ostringstream os;
  os.precision(10);
  os << "(" << a[0] << ", " << a[1] << ", " << a[2] << ")";
  return os.str();
}

}  // namespace

DirichletParams fit_dirichlet(std::span<const SortedTriple> samples,
                              const DirichletFitOptions& options) {
  if (samples.size() < options.min_samples) {
    throw InputError("fit_dirichlet: need at least " + std::to_string(options.min_samples) +
                     " samples, got " + std::to_string(samples.size()));
  }
  const double n = static_cast<double>(samples.size());
  std::array<double, 3> mean{}, mean_sq{}, mean_log{};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SortedTriple& s = samples[i];
    const std::array<double, 3> raw{s.top, s.second, s.rest};
    const double sum = raw[0] + raw[1] + raw[2];
    if (!std::isfinite(sum) || std::abs(sum - 1.0) > 1e-6) {
      throw InputError("fit_dirichlet: sample " + std::to_string(i) + " sums to " +
                       std::to_string(sum));
    }
    for (std::size_t k = 0; k < 3; ++k) {
      if (raw[k] < -1e-12) throw InputError("fit_dirichlet: negative component");
      const double p = std::clamp(raw[k], options.clip, 1.0 - options.clip);
      mean[k] += p / n;
      mean_sq[k] += p * p / n;
      mean_log[k] += std::log(p) / n;
    }
  }

  // Method of moments: each component gives an estimate of the total concentration.
  double precision = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double var = mean_sq[k] - mean[k] * mean[k];
    if (var > 1e-14) {
      precision += (mean[k] - mean_sq[k]) / var;
      ++used;
    }
  }
  if (used == 0) throw InputError("fit_dirichlet: samples have zero variance");
  precision /= used;
  if (!(precision > 0.0)) precision = 1.0;

  std::array<double, 3> alpha{};
  for (std::size_t k = 0; k < 3; ++k) alpha[k] = std::max(precision * mean[k], 1e-3);

  std::ostringstream trace;
  trace << "init " << format_alpha(alpha) << "\n";
  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    const double psi_total = digamma(alpha[0] + alpha[1] + alpha[2]);
    std::array<double, 3> next{};
    double delta = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      next[k] = inverse_digamma(psi_total + mean_log[k]);
      delta = std::max(delta, std::abs(next[k] - alpha[k]) / std::max(1.0, alpha[k]));
    }
    if (it <= 20 || it % 100 == 0) trace << "iter " << it << " " << format_alpha(next) << "\n";
    for (double a : next) {
      if (!std::isfinite(a) || a <= 0.0) {
        throw ConvergenceError("fit_dirichlet: iteration left the positive orthant",
                               trace.str());
      }
    }
    alpha = next;
    if (delta < options.tolerance) return DirichletParams{alpha};
  }
  throw ConvergenceError("fit_dirichlet: no convergence after " +
                             std::to_string(options.max_iterations) + " iterations",
                         trace.str());
}

double marginal_density_raw(const DirichletParams& a, double z, std::size_t inner_points) {
  a.validate();
  if (z < 0.0 || z > 1.0) return 0.0;
  const double half = (1.0 - z) / 2.0;
  if (half <= 0.0 || inner_points == 0) return 0.0;
  const double h = half / static_cast<double>(inner_points);
  const double a1 = a.alpha[0] - 1.0;
  const double a2 = a.alpha[1] - 1.0;
  const double a3 = a.alpha[2] - 1.0;
  const double log_norm = std::lgamma(a.alpha[0] + a.alpha[1] + a.alpha[2]) -
                          std::lgamma(a.alpha[0]) - std::lgamma(a.alpha[1]) -
                          std::lgamma(a.alpha[2]);
  double sum = 0.0;
  for (std::size_t j = 0; j < inner_points; ++j) {
    const double offset = (static_cast<double>(j) + 0.5) * h;  // second-largest component
    const double top = offset + z;
    // 1 - 2*offset - z written so it stays exact near the upper end.
    const double rest = 2.0 * (static_cast<double>(inner_points - j) - 0.5) * h;
    const double term =
        std::exp(log_norm + a1 * std::log(top) + a2 * std::log(offset) + a3 * std::log(rest));
    if (!std::isfinite(term)) {
      std::ostringstream os;
      os << "marginal density: non-finite integrand at z=" << z << ", y=" << offset;
      throw NumericError(os.str());
    }
    sum += term;
  }
  return sum * h;
}

MarginalDistribution MarginalDistribution::tabulate(const DirichletParams& alpha,
                                                    std::size_t grid_size,
                                                    std::size_t inner_points) {
  alpha.validate();
  if (grid_size < 101) throw InputError("marginal distribution: grid size must be >= 101");
  if (inner_points < 1) throw InputError("marginal distribution: need inner points");
  MarginalDistribution d;
  d.alpha_ = alpha;
  d.inner_points_ = inner_points;
  d.grid_.resize(grid_size);
  d.pdf_.resize(grid_size);
  const double dz = 1.0 / static_cast<double>(grid_size - 1);
  for (std::size_t i = 0; i < grid_size; ++i) {
    d.grid_[i] = i == grid_size - 1 ? 1.0 : static_cast<double>(i) * dz;
    d.pdf_[i] = marginal_density_raw(alpha, d.grid_[i], inner_points);
  }
  double area = 0.0;
  for (std::size_t i = 1; i < grid_size; ++i) {
    area += 0.5 * (d.pdf_[i] + d.pdf_[i - 1]) * (d.grid_[i] - d.grid_[i - 1]);
  }
  if (!(area > 0.0) || !std::isfinite(area)) {
    throw NumericError("marginal distribution: density has no mass");
  }
  d.raw_mass_ = area;
  for (double& v : d.pdf_) v /= area;
  d.cdf_.assign(grid_size, 0.0);
  for (std::size_t i = 1; i < grid_size; ++i) {
    d.cdf_[i] = d.cdf_[i - 1] + 0.5 * (d.pdf_[i] + d.pdf_[i - 1]) * (d.grid_[i] - d.grid_[i - 1]);
  }
  return d;
}

namespace {

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  const std::size_t lo = hi - 1;
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

}  // namespace

double MarginalDistribution::cdf_at(double z) const {
  if (z <= 0.0) return 0.0;
  if (z >= 1.0) return 1.0;
  return interpolate(grid_, cdf_, z);
}

double MarginalDistribution::pdf_at(double z) const { return interpolate(grid_, pdf_, z); }

double MarginalDistribution::threshold(double lvl) const {
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (cdf_[i] >= lvl) return grid_[i];
  }
  return grid_.back();
}

void MarginalDistribution::set_level(double lvl) {
  if (!(lvl > 0.0 && lvl < 1.0)) throw InputError("marginal distribution: level must be in (0,1)");
  level_ = lvl;
  theta_ = threshold(lvl);
}

nlohmann::json MarginalDistribution::to_json() const {
  return {{"alpha", alpha_.alpha},
          {"level", level_},
          {"theta", theta_},
          {"grid_size", grid_.size()},
          {"inner_points", inner_points_}};
}

MarginalDistribution MarginalDistribution::from_json(const nlohmann::json& j) {
  try {
    DirichletParams a;
    a.alpha = j.at("alpha").get<std::array<double, 3>>();
    const auto grid = j.value("grid_size", std::size_t{2001});
    const auto inner = j.value("inner_points", grid);
    MarginalDistribution d = tabulate(a, grid, inner);
    d.level_ = j.at("level").get<double>();
    d.theta_ = j.at("theta").get<double>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("marginal distribution: ") + e.what());
  }
}

double threshold(const MarginalDistribution& dist, double level) { return dist.threshold(level); }

std::vector<SortedTriple> sample_dirichlet(const DirichletParams& alpha, std::size_t n,
                                           std::uint64_t seed) {
  alpha.validate();
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g0(alpha.alpha[0], 1.0);
  std::gamma_distribution<double> g1(alpha.alpha[1], 1.0);
  std::gamma_distribution<double> g2(alpha.alpha[2], 1.0);
  std::vector<SortedTriple> out;
  out.reserve(n);
  while (out.size() < n) {
    const double x0 = g0(rng);
    const double x1 = g1(rng);
    const double x2 = g2(rng);
    const double total = x0 + x1 + x2;
    if (!(total > 0.0)) continue;  // all three underflowed
    out.push_back({x0 / total, x1 / total, x2 / total});
  }
  return out;
}

std::vector<double> mc_marginal(const DirichletParams& alpha, std::size_t n, std::uint64_t seed) {
  std::vector<double> z;
  z.reserve(n / 2 + 1);
  for (const SortedTriple& t : sample_dirichlet(alpha, n, seed)) {
    if (t.top >= t.second) z.push_back(t.top - t.second);
  }
  return z;
}

double histogram_l1(const MarginalDistribution& dist, std::span<const double> samples,
                    std::size_t bins) {
  if (samples.empty() || bins == 0) throw InputError("histogram_l1: empty input");
  std::vector<double> counts(bins, 0.0);
  for (double z : samples) {
    auto b = static_cast<std::size_t>(z * static_cast<double>(bins));
    counts[std::min(b, bins - 1)] += 1.0;
  }
  double l1 = 0.0;
  const double n = static_cast<double>(samples.size());
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    l1 += std::abs(counts[b] / n - (dist.cdf_at(hi) - dist.cdf_at(lo)));
  }
  return l1;
}

}  // namespace exrec
