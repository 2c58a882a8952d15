#pragma once

#include <span>
#include <string>
#include <vector>

namespace streambayes {

enum class Family { Multinomial, Dirichlet, Gaussian, Gamma, NormalGamma };

const char* family_name(Family f) noexcept;

// Natural-parameter conventions, with the matching standard ("moment") parameterization:
//   Multinomial  p_1..p_K              eta_k = log p_k                      t(x) = one-hot(x)
//   Dirichlet    alpha_1..alpha_K      eta_k = alpha_k - 1                  t(p) = log p
//   Gaussian     (mean, variance)      eta = (m/v, -1/(2v))                 t(x) = (x, x^2)
//   Gamma        (shape, rate)         eta = (a - 1, -b)                    t(x) = (log x, x)
//   NormalGamma  (mu0, kappa, a, b)    eta = (k*mu0, -k/2, -b - k*mu0^2/2, a - 1/2)
//                over (m, tau):                                            t = (tau*m, tau*m^2, tau, log tau)
std::vector<double> to_natural(Family family, std::span<const double> moment);
std::vector<double> to_moment(Family family, std::span<const double> natural);
/// Throws DomainError when `natural` is outside the family's natural parameter space.
void check_natural(Family family, std::span<const double> natural);
double log_normalizer(Family family, std::span<const double> natural);

class EFDistribution {
 public:
  EFDistribution(Family family, std::vector<double> natural);

  static EFDistribution from_moment(Family family, std::span<const double> moment);
  static EFDistribution multinomial(std::span<const double> probabilities);
  static EFDistribution dirichlet(std::span<const double> concentrations);
  static EFDistribution gaussian(double mean, double variance);
  static EFDistribution gamma(double shape, double rate);
  static EFDistribution normal_gamma(double mean, double kappa, double shape, double rate);

  [[nodiscard]] Family family() const noexcept { return family_; }
  [[nodiscard]] const std::vector<double>& natural() const noexcept { return natural_; }
  [[nodiscard]] std::size_t dimension() const noexcept { return natural_.size(); }
  [[nodiscard]] std::vector<double> moment() const { return to_moment(family_, natural_); }
  [[nodiscard]] double log_normalizer() const { return streambayes::log_normalizer(family_, natural_); }

  friend bool operator==(const EFDistribution&, const EFDistribution&) = default;

 private:
  Family family_;
  std::vector<double> natural_;
};

/// Expected sufficient statistics E[t(x)], i.e. the gradient of the log-normalizer.
std::vector<double> expected_sufficient_statistics(const EFDistribution& d);

/// Data summaries expressed in the natural coordinates of the conjugate prior they update.
struct SufficientStatistics {
  Family target = Family::Dirichlet;
  std::vector<double> values;
  double count = 0.0;

  SufficientStatistics& operator+=(const SufficientStatistics& other);
  [[nodiscard]] SufficientStatistics scaled(double factor) const;
};

SufficientStatistics dirichlet_counts(std::span<const double> counts);
/// Observations of a Gaussian with known variance, for a Gaussian prior on its mean.
SufficientStatistics gaussian_mean_stats(std::span<const double> xs, double known_variance);
/// Observations of a Gaussian with known mean, for a Gamma prior on its precision.
SufficientStatistics gamma_precision_stats(std::span<const double> xs, double known_mean);
/// (count, sum x, sum x^2) of Gaussian observations, for a NormalGamma prior on (mean, precision).
SufficientStatistics normal_gamma_stats(double count, double sum, double sum_squares);

/// Posterior natural parameters = prior natural parameters + statistics.
EFDistribution conjugate_posterior_update(const EFDistribution& prior, const SufficientStatistics& stats);

/// KL(q || p) for two members of the same family.
double kl_divergence(const EFDistribution& q, const EFDistribution& p);

}  // namespace streambayes
