#include "streambayes/exponential_family.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "streambayes/error.hpp"
#include "streambayes/special_functions.hpp"

namespace streambayes {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_size(Family f, std::span<const double> v, std::size_t n) {
  if (v.size() != n)
    fail(ErrorCode::Domain, std::string(family_name(f)) + " expects " + std::to_string(n) + " parameters");
}

std::size_t fixed_size(Family f) {
  switch (f) {
    case Family::Gaussian:
    case Family::Gamma: return 2;
    case Family::NormalGamma: return 4;
    default: return 0;
  }
}

}  // namespace

const char* family_name(Family f) noexcept {
  switch (f) {
    case Family::Multinomial: return "Multinomial";
    case Family::Dirichlet: return "Dirichlet";
    case Family::Gaussian: return "Gaussian";
    case Family::Gamma: return "Gamma";
    case Family::NormalGamma: return "NormalGamma";
  }
  return "?";
}

void check_natural(Family family, std::span<const double> eta) {
  if (auto n = fixed_size(family)) require_size(family, eta, n);
  switch (family) {
    case Family::Multinomial: {
      if (eta.size() < 2) fail(ErrorCode::Domain, "Multinomial needs at least 2 categories");
      bool any = false;
      for (double e : eta) {
        if (std::isnan(e) || e == kInf) fail(ErrorCode::Domain, "Multinomial log-probability is NaN or +inf");
        any = any || std::isfinite(e);
      }
      if (!any) fail(ErrorCode::Domain, "Multinomial has no category with positive probability");
      return;
    }
    case Family::Dirichlet:
      if (eta.size() < 2) fail(ErrorCode::Domain, "Dirichlet needs at least 2 categories");
      for (double e : eta)
        if (!(e > -1.0) || !std::isfinite(e)) fail(ErrorCode::Domain, "Dirichlet concentration must be positive");
      return;
    case Family::Gaussian:
      if (!std::isfinite(eta[0]) || !(eta[1] < 0.0) || !std::isfinite(eta[1]))
        fail(ErrorCode::Domain, "Gaussian needs eta2 < 0");
      return;
    case Family::Gamma:
      if (!(eta[0] > -1.0) || !(eta[1] < 0.0) || !std::isfinite(eta[0]) || !std::isfinite(eta[1]))
        fail(ErrorCode::Domain, "Gamma needs positive shape and rate");
      return;
    case Family::NormalGamma: {
      for (double e : eta)
        if (!std::isfinite(e)) fail(ErrorCode::Domain, "NormalGamma parameter is not finite");
      const double kappa = -2.0 * eta[1];
      if (!(kappa > 0.0)) fail(ErrorCode::Domain, "NormalGamma needs kappa > 0");
      const double mu = eta[0] / kappa;
      const double a = eta[3] + 0.5;
      const double b = -eta[2] - 0.5 * kappa * mu * mu;
      if (!(a > 0.0) || !(b > 0.0)) fail(ErrorCode::Domain, "NormalGamma needs positive shape and rate");
      return;
    }
  }
}

std::vector<double> to_natural(Family family, std::span<const double> m) {
  if (auto n = fixed_size(family)) require_size(family, m, n);
  std::vector<double> eta;
  switch (family) {
    case Family::Multinomial: {
      double sum = 0.0;
      for (double p : m) {
        if (!(p >= 0.0) || !std::isfinite(p)) fail(ErrorCode::Domain, "probability must be non-negative");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) fail(ErrorCode::Domain, "probabilities must sum to 1");
      for (double p : m) eta.push_back(std::log(p));
      break;
    }
    case Family::Dirichlet:
      for (double a : m) eta.push_back(a - 1.0);
      break;
    case Family::Gaussian:
      if (!(m[1] > 0.0)) fail(ErrorCode::Domain, "Gaussian variance must be positive");
      eta = {m[0] / m[1], -0.5 / m[1]};
      break;
    case Family::Gamma:
      if (!(m[0] > 0.0) || !(m[1] > 0.0)) fail(ErrorCode::Domain, "Gamma shape and rate must be positive");
      eta = {m[0] - 1.0, -m[1]};
      break;
    case Family::NormalGamma:
      if (!(m[1] > 0.0) || !(m[2] > 0.0) || !(m[3] > 0.0))
        fail(ErrorCode::Domain, "NormalGamma kappa, shape and rate must be positive");
      eta = {m[1] * m[0], -0.5 * m[1], -m[3] - 0.5 * m[1] * m[0] * m[0], m[2] - 0.5};
      break;
  }
  check_natural(family, eta);
  return eta;
}

std::vector<double> to_moment(Family family, std::span<const double> eta) {
  check_natural(family, eta);
  switch (family) {
    case Family::Multinomial: {
      const double z = log_sum_exp(eta);
      std::vector<double> p;
      for (double e : eta) p.push_back(std::exp(e - z));
      return p;
    }
    case Family::Dirichlet: {
      std::vector<double> a;
      for (double e : eta) a.push_back(e + 1.0);
      return a;
    }
    case Family::Gaussian: {
      const double v = -0.5 / eta[1];
      return {eta[0] * v, v};
    }
    case Family::Gamma:
      return {eta[0] + 1.0, -eta[1]};
    case Family::NormalGamma: {
      const double kappa = -2.0 * eta[1];
      const double mu = eta[0] / kappa;
      return {mu, kappa, eta[3] + 0.5, -eta[2] - 0.5 * kappa * mu * mu};
    }
  }
  return {};
}

double log_normalizer(Family family, std::span<const double> eta) {
  check_natural(family, eta);
  switch (family) {
    case Family::Multinomial:
      return log_sum_exp(eta);
    case Family::Dirichlet: {
      double total = 0.0, sum_alpha = 0.0;
      for (double e : eta) {
        total += std::lgamma(e + 1.0);
        sum_alpha += e + 1.0;
      }
      return total - std::lgamma(sum_alpha);
    }
    case Family::Gaussian:
      return -eta[0] * eta[0] / (4.0 * eta[1]) - 0.5 * std::log(-2.0 * eta[1]) + 0.5 * kLog2Pi;
    case Family::Gamma:
      return std::lgamma(eta[0] + 1.0) - (eta[0] + 1.0) * std::log(-eta[1]);
    case Family::NormalGamma: {
      const auto m = to_moment(family, eta);
      return std::lgamma(m[2]) - m[2] * std::log(m[3]) - 0.5 * std::log(m[1]) + 0.5 * kLog2Pi;
    }
  }
  return 0.0;
}

EFDistribution::EFDistribution(Family family, std::vector<double> natural)
    : family_(family), natural_(std::move(natural)) {
  check_natural(family_, natural_);
}

EFDistribution EFDistribution::from_moment(Family family, std::span<const double> moment) {
  return EFDistribution(family, to_natural(family, moment));
}

EFDistribution EFDistribution::multinomial(std::span<const double> p) { return from_moment(Family::Multinomial, p); }
EFDistribution EFDistribution::dirichlet(std::span<const double> a) { return from_moment(Family::Dirichlet, a); }

EFDistribution EFDistribution::gaussian(double mean, double variance) {
  const double m[] = {mean, variance};
  return from_moment(Family::Gaussian, m);
}

EFDistribution EFDistribution::gamma(double shape, double rate) {
  const double m[] = {shape, rate};
  return from_moment(Family::Gamma, m);
}

EFDistribution EFDistribution::normal_gamma(double mean, double kappa, double shape, double rate) {
  const double m[] = {mean, kappa, shape, rate};
  return from_moment(Family::NormalGamma, m);
}

std::vector<double> expected_sufficient_statistics(const EFDistribution& d) {
  const auto m = d.moment();
  switch (d.family()) {
    case Family::Multinomial:
      return m;
    case Family::Dirichlet: {
      const double total = std::accumulate(m.begin(), m.end(), 0.0);
      const double psi_total = digamma(total);
      std::vector<double> out;
      for (double a : m) out.push_back(digamma(a) - psi_total);
      return out;
    }
    case Family::Gaussian:
      return {m[0], m[0] * m[0] + m[1]};
    case Family::Gamma:
      return {digamma(m[0]) - std::log(m[1]), m[0] / m[1]};
    case Family::NormalGamma: {
      const double e_tau = m[2] / m[3];
      return {m[0] * e_tau, 1.0 / m[1] + m[0] * m[0] * e_tau, e_tau, digamma(m[2]) - std::log(m[3])};
    }
  }
  return {};
}

SufficientStatistics& SufficientStatistics::operator+=(const SufficientStatistics& other) {
  if (values.empty() && count == 0.0) {
    *this = other;
    return *this;
  }
  if (other.target != target || other.values.size() != values.size())
    fail(ErrorCode::Conjugacy, "cannot add statistics of different families");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  count += other.count;
  return *this;
}

SufficientStatistics SufficientStatistics::scaled(double factor) const {
  SufficientStatistics s = *this;
  for (double& v : s.values) v *= factor;
  s.count *= factor;
  return s;
}

SufficientStatistics dirichlet_counts(std::span<const double> counts) {
  SufficientStatistics s{Family::Dirichlet, {counts.begin(), counts.end()}, 0.0};
  for (double c : counts) {
    if (!(c >= 0.0)) fail(ErrorCode::Domain, "counts must be non-negative");
    s.count += c;
  }
  return s;
}

SufficientStatistics gaussian_mean_stats(std::span<const double> xs, double known_variance) {
  if (!(known_variance > 0.0)) fail(ErrorCode::Domain, "known variance must be positive");
  double sum = 0.0;
  for (double x : xs) sum += x;
  const auto n = static_cast<double>(xs.size());
  return {Family::Gaussian, {sum / known_variance, -0.5 * n / known_variance}, n};
}

SufficientStatistics gamma_precision_stats(std::span<const double> xs, double known_mean) {
  double ss = 0.0;
  for (double x : xs) ss += (x - known_mean) * (x - known_mean);
  const auto n = static_cast<double>(xs.size());
  return {Family::Gamma, {0.5 * n, -0.5 * ss}, n};
}

SufficientStatistics normal_gamma_stats(double count, double sum, double sum_squares) {
  if (!(count >= 0.0)) fail(ErrorCode::Domain, "count must be non-negative");
  return {Family::NormalGamma, {sum, -0.5 * count, -0.5 * sum_squares, 0.5 * count}, count};
}

EFDistribution conjugate_posterior_update(const EFDistribution& prior, const SufficientStatistics& stats) {
  if (prior.family() == Family::Multinomial)
    fail(ErrorCode::Conjugacy, "a Multinomial is not a conjugate prior");
  if (stats.values.empty() && stats.count == 0.0) return prior;
  if (stats.target != prior.family() || stats.values.size() != prior.dimension())
    fail(ErrorCode::Conjugacy, std::string("statistics for ") + family_name(stats.target) +
                                   " cannot update a " + family_name(prior.family()) + " prior");
  auto eta = prior.natural();
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] += stats.values[i];
  return EFDistribution(prior.family(), std::move(eta));
}

double kl_divergence(const EFDistribution& q, const EFDistribution& p) {
  if (q.family() != p.family() || q.dimension() != p.dimension())
    fail(ErrorCode::Domain, "KL divergence needs two distributions of the same family and dimension");
  if (q.family() == Family::Multinomial) {
    const auto pq = q.moment();
    const auto pp = p.moment();
    double kl = 0.0;
    for (std::size_t k = 0; k < pq.size(); ++k) {
      if (pq[k] == 0.0) continue;
      if (pp[k] == 0.0) return kInf;
      kl += pq[k] * (std::log(pq[k]) - std::log(pp[k]));
    }
    return std::max(0.0, kl);
  }
  const auto t = expected_sufficient_statistics(q);
  double kl = p.log_normalizer() - q.log_normalizer();
  for (std::size_t i = 0; i < t.size(); ++i) kl -= (p.natural()[i] - q.natural()[i]) * t[i];
  return std::max(0.0, kl);
}

}  // namespace streambayes
