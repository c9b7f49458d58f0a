#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "coopmcts/scene.hpp"

namespace coopmcts {

using Rng = std::mt19937_64;

/// One-dimensional Gaussian mixture: sum_k phi_k N(x | mu_k, var_k).
struct Gmm1D {
  std::vector<double> phi;
  std::vector<double> mu;
  std::vector<double> var;

  int k() const { return static_cast<int>(phi.size()); }
  /// Throws ConfigError unless the weights sum to 1 and variances are positive.
  void validate() const;
  /// Reorders components by ascending mean.
  void canonicalize();

  static Gmm1D single(double mean, double variance) { return {{1.0}, {mean}, {variance}}; }
  friend bool operator==(const Gmm1D&, const Gmm1D&) = default;
};

/// Axis-factored action mixture: independent mixtures over dv and dy.
struct FactoredActionGmm {
  Gmm1D lon;
  Gmm1D lat;
  friend bool operator==(const FactoredActionGmm&, const FactoredActionGmm&) = default;
};

struct WeightedSamples {
  std::vector<double> values;
  std::vector<double> weights;

  friend bool operator==(const WeightedSamples&, const WeightedSamples&) = default;
};

double normal_pdf(double x, double mean, double variance);
double pdf(const Gmm1D& g, double x);
double log_pdf(const Gmm1D& g, double x);
double joint_density(const FactoredActionGmm& f, const Action& a);

/// Mean of the mixture, sum_k phi_k mu_k.
double mixture_mean(const Gmm1D& g);

/// Draws from `g` inside [lo, hi]: up to 16 redraws on rejection, then the
/// last draw is clamped to the nearest bound.
double sample(const Gmm1D& g, Rng& rng, double lo, double hi);

struct EmOptions {
  int max_iter = 200;
  double tol = 1e-8;       // on the weight-normalized log-likelihood
  double var_min = 1e-4;
  std::uint64_t seed = 0;
};

struct EmResult {
  Gmm1D gmm;
  /// Weight-normalized log-likelihood after initialization and after every
  /// EM iteration.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
};

/// Weighted EM for a K-component mixture with weighted k-means++ seeding.
/// Throws DegenerateInputError if fewer than K distinct values are present.
EmResult fit_em_trace(const WeightedSamples& samples, int k, const EmOptions& opts = {});
Gmm1D fit_em(const WeightedSamples& samples, int k, const EmOptions& opts = {});

}  // namespace coopmcts
