#include <cmath>
#include <numeric>

#include "doctest.h"
#include "streambayes/exponential_family.hpp"
#include "streambayes/special_functions.hpp"
#include "support.hpp"

using namespace streambayes;
using namespace sbtest;

namespace {

std::vector<double> random_moment(Family f, Rng& rng) {
  switch (f) {
    case Family::Multinomial: return random_simplex(rng, 2 + static_cast<int>(rng.next() % 4));
    case Family::Dirichlet: {
      std::vector<double> a(2 + rng.next() % 4);
      for (auto& x : a) x = 0.05 + 20 * rng.uniform();
      return a;
    }
    case Family::Gaussian: return {rng.normal(0.0, 25.0), 0.01 + 10 * rng.uniform()};
    case Family::Gamma: return {0.05 + 20 * rng.uniform(), 0.05 + 20 * rng.uniform()};
    case Family::NormalGamma:
      return {rng.normal(0.0, 25.0), 0.05 + 10 * rng.uniform(), 0.1 + 10 * rng.uniform(), 0.1 + 10 * rng.uniform()};
  }
  return {};
}

constexpr Family kFamilies[] = {Family::Multinomial, Family::Dirichlet, Family::Gaussian, Family::Gamma,
                                Family::NormalGamma};

}  // namespace

TEST_CASE("natural parameter maps") {
  CHECK(to_natural(Family::Gaussian, std::vector<double>{0.0, 1.0}) == std::vector<double>{0.0, -0.5});
  CHECK(to_natural(Family::Dirichlet, std::vector<double>{1.0, 1.0}) == std::vector<double>{0.0, 0.0});
  CHECK(to_moment(Family::Dirichlet, std::vector<double>{0.0, 0.0}) == std::vector<double>{1.0, 1.0});
  SB_CHECK_CODE(to_moment(Family::Gaussian, std::vector<double>{0.0, 0.0}), ErrorCode::Domain);
  SB_CHECK_CODE(to_moment(Family::Gaussian, std::vector<double>{0.0, 0.5}), ErrorCode::Domain);
  SB_CHECK_CODE(EFDistribution::gamma(-1.0, 1.0), ErrorCode::Domain);
  SB_CHECK_CODE(EFDistribution::dirichlet(std::vector<double>{1.0, 0.0}), ErrorCode::Domain);
  SB_CHECK_CODE(EFDistribution::multinomial(std::vector<double>{0.5, 0.6}), ErrorCode::Domain);
}

TEST_CASE("to_moment inverts to_natural") {
  Rng rng(1);
  for (Family f : kFamilies) {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const auto m = random_moment(f, rng);
      const auto back = to_moment(f, to_natural(f, m));
      REQUIRE(back.size() == m.size());
      for (std::size_t k = 0; k < m.size(); ++k) worst = std::max(worst, rel_diff(back[k], m[k]));
    }
    CHECK_MESSAGE(worst < 1e-12, std::string(family_name(f)));
  }
}

TEST_CASE("expected sufficient statistics") {
  CHECK(expected_sufficient_statistics(EFDistribution::gaussian(0.0, 1.0)) == std::vector<double>{0.0, 1.0});
  const auto m = expected_sufficient_statistics(EFDistribution::multinomial(std::vector<double>{0.3, 0.7}));
  CHECK(m[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(m[1] == doctest::Approx(0.7).epsilon(1e-15));
  const auto d = expected_sufficient_statistics(EFDistribution::dirichlet(std::vector<double>{2.0, 2.0}));
  CHECK(d[0] == doctest::Approx(-5.0 / 6.0).epsilon(1e-13));
  CHECK(d[1] == doctest::Approx(-5.0 / 6.0).epsilon(1e-13));
}

TEST_CASE("digamma against closed forms") {
  constexpr double gamma_e = 0.57721566490153286061;
  CHECK(digamma(1.0) == doctest::Approx(-gamma_e).epsilon(1e-14));
  CHECK(digamma(0.5) == doctest::Approx(-gamma_e - 2 * std::log(2.0)).epsilon(1e-14));
  CHECK(digamma(4.0) == doctest::Approx(11.0 / 6.0 - gamma_e).epsilon(1e-14));
  // psi(x) = -1/x - gamma + (pi^2/6) x + O(x^2) near zero.
  CHECK(digamma(1e-6) == doctest::Approx(-1e6 - gamma_e + 1.6449340668482264e-6).epsilon(1e-12));
  // Recurrence psi(x+1) = psi(x) + 1/x across the series/asymptotic switch.
  for (double x = 0.01; x < 40; x *= 1.37) CHECK(digamma(x + 1) == doctest::Approx(digamma(x) + 1 / x).epsilon(1e-12));
}

TEST_CASE("gradient of the log-normalizer is the expected statistic") {
  Rng rng(2);
  for (Family f : kFamilies) {
    for (int i = 0; i < 20; ++i) {
      const auto d = EFDistribution::from_moment(f, random_moment(f, rng));
      const auto grad = expected_sufficient_statistics(d);
      for (std::size_t k = 0; k < d.dimension(); ++k) {
        auto up = d.natural(), down = d.natural();
        // Small steps: NormalGamma rates near zero make the log-normalizer sharply curved.
        const double h = 1e-7 * std::max(1.0, std::abs(up[k]));
        up[k] += h;
        down[k] -= h;
        const double fd = (log_normalizer(f, up) - log_normalizer(f, down)) / (2 * h);
        CHECK_MESSAGE(std::abs(fd - grad[k]) <= 1e-5 * std::max(1.0, std::abs(grad[k])), std::string(family_name(f)), " k=", k, " eta=", d.natural()[k]);
      }
    }
  }
}

TEST_CASE("conjugate updates") {
  SUBCASE("Beta-Binomial") {
    const auto post = conjugate_posterior_update(EFDistribution::dirichlet(std::vector<double>{1, 1}),
                                                 dirichlet_counts(std::vector<double>{7, 3}));
    CHECK(post.moment() == std::vector<double>{8, 4});
    const auto alpha = post.moment();
    CHECK(alpha[0] / (alpha[0] + alpha[1]) == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("Gaussian mean with known variance") {
    const std::vector<double> xs{2.0};
    const auto post = conjugate_posterior_update(EFDistribution::gaussian(0, 1), gaussian_mean_stats(xs, 1.0));
    CHECK(post.moment() == std::vector<double>{1.0, 0.5});
  }
  SUBCASE("zero-count statistics leave the prior") {
    const auto prior = EFDistribution::normal_gamma(0.3, 2.0, 1.5, 0.7);
    CHECK(conjugate_posterior_update(prior, normal_gamma_stats(0, 0, 0)) == prior);
  }
  SUBCASE("NormalGamma matches the textbook update") {
    const std::vector<double> xs{1.0, 2.5, -0.5, 4.0};
    double s = 0, ss = 0;
    for (double x : xs) s += x, ss += x * x;
    const double mu0 = 0.5, k0 = 2.0, a0 = 1.5, b0 = 0.7, n = 4, xbar = s / n;
    const auto m = conjugate_posterior_update(EFDistribution::normal_gamma(mu0, k0, a0, b0), normal_gamma_stats(n, s, ss))
                       .moment();
    CHECK(m[0] == doctest::Approx((k0 * mu0 + s) / (k0 + n)).epsilon(1e-13));
    CHECK(m[1] == doctest::Approx(k0 + n).epsilon(1e-13));
    CHECK(m[2] == doctest::Approx(a0 + n / 2).epsilon(1e-13));
    const double b = b0 + 0.5 * (ss - n * xbar * xbar) + k0 * n * (xbar - mu0) * (xbar - mu0) / (2 * (k0 + n));
    CHECK(m[3] == doctest::Approx(b).epsilon(1e-12));
  }
  SUBCASE("family mismatch") {
    SB_CHECK_CODE(conjugate_posterior_update(EFDistribution::gamma(1, 1), dirichlet_counts(std::vector<double>{1, 1})),
                  ErrorCode::Conjugacy);
  }
  SUBCASE("chunk order does not matter") {
    Rng rng(3);
    std::vector<SufficientStatistics> chunks;
    for (int i = 0; i < 6; ++i) chunks.push_back(dirichlet_counts(std::vector<double>{
        static_cast<double>(rng.next() % 50), static_cast<double>(rng.next() % 50), static_cast<double>(rng.next() % 50)}));
    const auto prior = EFDistribution::dirichlet(std::vector<double>{1, 2, 3});
    SufficientStatistics sum = chunks[0];
    for (std::size_t i = 1; i < chunks.size(); ++i) sum += chunks[i];
    const auto once = conjugate_posterior_update(prior, sum);
    auto forward = prior, backward = prior;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      forward = conjugate_posterior_update(forward, chunks[i]);
      backward = conjugate_posterior_update(backward, chunks[chunks.size() - 1 - i]);
    }
    CHECK(forward == once);
    CHECK(backward == once);
  }
}

TEST_CASE("KL divergence") {
  const auto g = EFDistribution::gaussian(0.3, 2.0);
  CHECK(kl_divergence(g, g) == 0.0);
  CHECK(kl_divergence(EFDistribution::gaussian(0, 1), EFDistribution::gaussian(1, 1)) == doctest::Approx(0.5).epsilon(1e-14));
  SB_CHECK_CODE(kl_divergence(g, EFDistribution::gamma(1, 1)), ErrorCode::Domain);

  SUBCASE("Dirichlet(8,4) vs uniform by quadrature") {
    // KL(Beta(8,4) || Beta(1,1)) = integral of q log q.
    const double log_b = std::lgamma(8.0) + std::lgamma(4.0) - std::lgamma(12.0);
    const auto q = [&](double x) { return std::exp(7 * std::log(x) + 3 * std::log1p(-x) - log_b); };
    const int m = 200000;
    const double h = 1.0 / m;
    double s = 0.0;
    for (int i = 1; i < m; ++i) {
      const double x = i * h, qx = q(x);
      s += (i % 2 ? 4 : 2) * qx * std::log(qx);
    }
    const double quad = s * h / 3;
    const double kl = kl_divergence(EFDistribution::dirichlet(std::vector<double>{8, 4}),
                                    EFDistribution::dirichlet(std::vector<double>{1, 1}));
    CHECK(std::abs(kl - quad) < 1e-6);
  }

  SUBCASE("non-negative, zero only at equality") {
    Rng rng(4);
    for (Family f : kFamilies) {
      for (int i = 0; i < 1000; ++i) {
        auto mq = random_moment(f, rng);
        auto mp = random_moment(f, rng);
        // Same dimension for the vector families.
        if (mq.size() != mp.size()) mp = f == Family::Multinomial ? random_simplex(rng, static_cast<int>(mq.size())) : mq;
        if (mp == mq) mp[0] = f == Family::Multinomial ? mp[0] : mp[0] * 1.5 + 0.1;
        if (f == Family::Multinomial && mp == mq) continue;
        const auto q = EFDistribution::from_moment(f, mq), p = EFDistribution::from_moment(f, mp);
        CHECK(kl_divergence(q, p) > 0.0);
        CHECK(kl_divergence(q, q) == doctest::Approx(0.0));
      }
    }
  }
}
