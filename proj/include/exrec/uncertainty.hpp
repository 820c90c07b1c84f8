#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exrec/nn.hpp"

namespace exrec {

/// Largest probability, second largest, and the mass of everything else.
struct SortedTriple {
  double top = 0.0;
  double second = 0.0;
  double rest = 0.0;
};

/// Throws InputError when probs has fewer than two entries.
SortedTriple sorted_triple(const Vector& probs);

/// Gap between the two largest probabilities, in [0, 1].
double marginal_distance(const Vector& probs);

struct DirichletParams {
  std::array<double, 3> alpha{1.0, 1.0, 1.0};

  /// Throws InputError unless every concentration is finite and > 0.
  void validate() const;
};

struct DirichletFitOptions {
  std::size_t max_iterations = 1000;
  double tolerance = 1e-8;   // on max |delta alpha| / max(1, alpha)
  double clip = 1e-10;       // components clipped to [clip, 1 - clip] before logs
  std::size_t min_samples = 10;
};

/// Maximum-likelihood Dirichlet fit by Minka's fixed-point iteration,
/// initialized by the method of moments.
/// Throws InputError on too few / invalid / zero-variance samples and
/// ConvergenceError (with the iteration trace) when the iteration stalls.
DirichletParams fit_dirichlet(std::span<const SortedTriple> samples,
                              const DirichletFitOptions& options = {});

/// Tabulated density of the marginal distance under a Dirichlet over
/// (top, second, rest), restricted to top >= second.
class MarginalDistribution {
 public:
  /// Evaluates the density on `grid_size` equally spaced points of [0, 1].
  /// The inner integral over the second-largest component is taken with a
  /// composite midpoint rule of `inner_points` nodes (an open rule, so the
  /// integrable endpoint singularities at alpha < 1 are never evaluated).
  /// The table is then renormalized to unit trapezoid area.
  static MarginalDistribution tabulate(const DirichletParams& alpha, std::size_t grid_size = 2001,
                                       std::size_t inner_points = 2001);

  /// Restores a distribution from its exported form, re-tabulating the density.
  static MarginalDistribution from_json(const nlohmann::json& j);

  const DirichletParams& alpha() const noexcept { return alpha_; }
  const std::vector<double>& grid() const noexcept { return grid_; }
  const std::vector<double>& pdf() const noexcept { return pdf_; }
  const std::vector<double>& cdf() const noexcept { return cdf_; }
  /// Trapezoid area of the density before renormalization.
  double raw_mass() const noexcept { return raw_mass_; }
  std::size_t inner_points() const noexcept { return inner_points_; }

  /// Linear interpolation of the tabulated cdf.
  double cdf_at(double z) const;
  /// Linear interpolation of the normalized density.
  double pdf_at(double z) const;

  /// Smallest grid z with cdf(z) >= level (the lower `level` quantile).
  double threshold(double level) const;

  /// Stores `level` and its threshold for export; see level()/theta().
  void set_level(double level);
  double level() const noexcept { return level_; }
  double theta() const noexcept { return theta_; }

  /// {alpha, level, theta, grid_size, inner_points}
  nlohmann::json to_json() const;

 private:
  DirichletParams alpha_;
  std::vector<double> grid_;
  std::vector<double> pdf_;
  std::vector<double> cdf_;
  double raw_mass_ = 0.0;
  std::size_t inner_points_ = 0;
  double level_ = 0.0;
  double theta_ = 0.0;
};

/// Unnormalized density of the marginal distance (the integral of the ordered
/// Dirichlet density along top - second = z), by the midpoint rule.
double marginal_density_raw(const DirichletParams& alpha, double z, std::size_t inner_points);

/// Lower `level` quantile of `dist`. Querying rule: ask when z < threshold.
double threshold(const MarginalDistribution& dist, double level);

/// Draws n Dirichlet(alpha) triples via normalized Gamma variates, keeps those
/// with top-slot >= second-slot, and returns their differences.
std::vector<double> mc_marginal(const DirichletParams& alpha, std::size_t n, std::uint64_t seed);

/// Raw Dirichlet draws, used by tests and the refit check.
std::vector<SortedTriple> sample_dirichlet(const DirichletParams& alpha, std::size_t n,
                                           std::uint64_t seed);

/// Sum over `bins` equal-width bins of |empirical mass - tabulated mass|.
double histogram_l1(const MarginalDistribution& dist, std::span<const double> samples,
                    std::size_t bins = 100);

}  // namespace exrec
