#include "coopmcts/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "coopmcts/error.hpp"

namespace coopmcts {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal_pdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * d * d / variance - 0.5 * std::log(variance) - kLogSqrt2Pi;
}

double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

int draw_index(std::span<const double> weights, double total, Rng& rng) {
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  // u landed on the upper edge through rounding: take the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return static_cast<int>(i);
  return 0;
}

// Weighted k-means++ seeding over scalar values.
std::vector<double> seed_centers(const WeightedSamples& s, int k, Rng& rng) {
  const std::size_t n = s.values.size();
  std::vector<double> centers;
  const double wsum = std::accumulate(s.weights.begin(), s.weights.end(), 0.0);
  centers.push_back(s.values[draw_index(s.weights, wsum, rng)]);
  std::vector<double> score(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = std::numeric_limits<double>::infinity();
      for (double c : centers) d2 = std::min(d2, (s.values[i] - c) * (s.values[i] - c));
      score[i] = s.weights[i] * d2;
      total += score[i];
    }
    centers.push_back(s.values[draw_index(score, total, rng)]);
  }
  return centers;
}

// Weighted log-likelihood per unit weight; fills responsibilities.
double e_step(const WeightedSamples& s, const Gmm1D& g, double wsum, std::vector<double>& resp) {
  const int k = g.k();
  const std::size_t n = s.values.size();
  std::vector<double> lp(k);
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      lp[j] = (g.phi[j] > 0.0 ? std::log(g.phi[j]) : -std::numeric_limits<double>::infinity()) +
              log_normal_pdf(s.values[i], g.mu[j], g.var[j]);
      mx = std::max(mx, lp[j]);
    }
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += std::exp(lp[j] - mx);
    const double lse = mx + std::log(acc);
    for (int j = 0; j < k; ++j) resp[i * k + j] = std::exp(lp[j] - lse);
    ll += s.weights[i] * lse;
  }
  return ll / wsum;
}

void m_step(const WeightedSamples& s, const std::vector<double>& resp, double wsum, double var_min,
            Gmm1D& g) {
  const int k = g.k();
  const std::size_t n = s.values.size();
  for (int j = 0; j < k; ++j) {
    double nk = 0.0, sx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = s.weights[i] * resp[i * k + j];
      nk += r;
      sx += r * s.values[i];
    }
    if (nk <= 0.0) {
      // Empty component keeps its location; its weight vanishes.
      g.phi[j] = 0.0;
      continue;
    }
    const double mean = sx / nk;
    double sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = s.values[i] - mean;
      sxx += s.weights[i] * resp[i * k + j] * d * d;
    }
    g.phi[j] = nk / wsum;
    g.mu[j] = mean;
    g.var[j] = std::max(var_min, sxx / nk);
  }
  const double total = std::accumulate(g.phi.begin(), g.phi.end(), 0.0);
  for (double& p : g.phi) p /= total;
}

}  // namespace

void Gmm1D::validate() const {
  if (phi.empty() || phi.size() != mu.size() || phi.size() != var.size())
    throw ConfigError("mixture parameter arrays must be non-empty and of equal length");
  double total = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!(phi[i] >= 0.0)) throw ConfigError("mixing coefficient must be >= 0");
    if (!(var[i] > 0.0)) throw ConfigError("variance must be > 0");
    if (!std::isfinite(mu[i])) throw ConfigError("mean must be finite");
    total += phi[i];
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("mixing coefficients must sum to 1");
}

void Gmm1D::canonicalize() {
  std::vector<std::size_t> order(phi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mu[a] < mu[b]; });
  Gmm1D sorted;
  for (std::size_t i : order) {
    sorted.phi.push_back(phi[i]);
    sorted.mu.push_back(mu[i]);
    sorted.var.push_back(var[i]);
  }
  *this = std::move(sorted);
}

double normal_pdf(double x, double mean, double variance) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

double pdf(const Gmm1D& g, double x) {
  double p = 0.0;
  for (int k = 0; k < g.k(); ++k) p += g.phi[k] * normal_pdf(x, g.mu[k], g.var[k]);
  return p;
}

double log_pdf(const Gmm1D& g, double x) {
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> lp(g.k());
  for (int k = 0; k < g.k(); ++k) {
    lp[k] = std::log(g.phi[k]) + log_normal_pdf(x, g.mu[k], g.var[k]);
    mx = std::max(mx, lp[k]);
  }
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : lp) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

double joint_density(const FactoredActionGmm& f, const Action& a) {
  return pdf(f.lon, a.dv) * pdf(f.lat, a.dy);
}

double mixture_mean(const Gmm1D& g) {
  double m = 0.0;
  for (int k = 0; k < g.k(); ++k) m += g.phi[k] * g.mu[k];
  return m;
}

double sample(const Gmm1D& g, Rng& rng, double lo, double hi) {
  constexpr int kRedraws = 16;
  const double total = std::accumulate(g.phi.begin(), g.phi.end(), 0.0);
  double x = 0.0;
  for (int attempt = 0; attempt <= kRedraws; ++attempt) {
    const int k = draw_index(g.phi, total, rng);
    std::normal_distribution<double> normal(g.mu[k], std::sqrt(g.var[k]));
    x = normal(rng);
    if (x >= lo && x <= hi) return x;
  }
  return std::clamp(x, lo, hi);
}

EmResult fit_em_trace(const WeightedSamples& samples, int k, const EmOptions& opts) {
  if (k < 1) throw ConfigError("component count must be >= 1");
  if (samples.values.empty() || samples.values.size() != samples.weights.size())
    throw DegenerateInputError("weighted samples must be non-empty with one weight per value");
  for (double w : samples.weights)
    if (!(w > 0.0)) throw DegenerateInputError("sample weights must be positive");
  const std::set<double> distinct(samples.values.begin(), samples.values.end());
  if (static_cast<int>(distinct.size()) < k)
    throw DegenerateInputError("need at least " + std::to_string(k) + " distinct values, got " +
                               std::to_string(distinct.size()));

  const double wsum = std::accumulate(samples.weights.begin(), samples.weights.end(), 0.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < samples.values.size(); ++i) mean += samples.weights[i] * samples.values[i];
  mean /= wsum;
  double variance = 0.0;
  for (std::size_t i = 0; i < samples.values.size(); ++i) {
    const double d = samples.values[i] - mean;
    variance += samples.weights[i] * d * d;
  }
  variance = std::max(opts.var_min, variance / wsum);

  Rng rng(opts.seed);
  EmResult result;
  Gmm1D& g = result.gmm;
  g.mu = seed_centers(samples, k, rng);
  g.phi.assign(k, 1.0 / k);
  g.var.assign(k, variance);

  std::vector<double> resp(samples.values.size() * k);
  double ll = e_step(samples, g, wsum, resp);
  result.log_likelihood.push_back(ll);
  for (int it = 0; it < opts.max_iter; ++it) {
    m_step(samples, resp, wsum, opts.var_min, g);
    const double next = e_step(samples, g, wsum, resp);
    result.log_likelihood.push_back(next);
    result.iterations = it + 1;
    if (std::abs(next - ll) < opts.tol) {
      result.converged = true;
      break;
    }
    ll = next;
  }
  g.canonicalize();
  return result;
}

Gmm1D fit_em(const WeightedSamples& samples, int k, const EmOptions& opts) {
  return fit_em_trace(samples, k, opts).gmm;
}

}  // namespace coopmcts
