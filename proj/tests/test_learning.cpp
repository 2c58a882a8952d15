#include <cmath>
#include <numeric>

#include "doctest.h"
#include "streambayes/learning.hpp"
#include "support.hpp"

using namespace streambayes;
using namespace sbtest;

namespace {

BayesianNetwork one_bit() { return discrete_net({2}, {{}}, {{{0.5, 0.5}}}); }

std::vector<DataInstance> bits(int ones, int zeros) {
  std::vector<DataInstance> rows;
  for (int i = 0; i < ones; ++i) rows.push_back({1.0});
  for (int i = 0; i < zeros; ++i) rows.push_back({0.0});
  return rows;
}

std::vector<double> alphas(const LearnableModel& m, std::size_t block) {
  return m.posterior().at(block).distribution.moment();
}

std::vector<Attribute> real_attributes(int n) {
  std::vector<Attribute> attrs;
  for (int i = 0; i < n; ++i) attrs.push_back({i, "GaussianVar" + std::to_string(i), StateSpace::real(), SpecialAttribute::None});
  return attrs;
}

bool same_natural(const LearnableModel& a, const LearnableModel& b) {
  if (a.posterior().size() != b.posterior().size()) return false;
  for (std::size_t i = 0; i < a.posterior().size(); ++i)
    if (a.posterior()[i].distribution.natural() != b.posterior()[i].distribution.natural()) return false;
  return true;
}

double max_rel_natural(const LearnableModel& a, const LearnableModel& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.posterior().size(); ++i) {
    const auto& x = a.posterior()[i].distribution.natural();
    const auto& y = b.posterior()[i].distribution.natural();
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, rel_diff(x[k], y[k]));
  }
  return worst;
}

// log of the Dirichlet-multinomial evidence of `counts` under concentrations `alpha`.
double log_dirichlet_evidence(const std::vector<double>& alpha, const std::vector<double>& counts) {
  const double a = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  double out = std::lgamma(a) - std::lgamma(a + n);
  for (std::size_t k = 0; k < alpha.size(); ++k) out += std::lgamma(alpha[k] + counts[k]) - std::lgamma(alpha[k]);
  return out;
}

}  // namespace

TEST_CASE("build_learner") {
  SUBCASE("one block per variable and configuration") {
    const auto bn = discrete_net({2, 3, 2}, {{}, {0}, {0, 1}}, {});
    const auto m = build_learner(bn);
    CHECK(m.posterior().size() == 1 + 2 + 6);
    for (const auto& b : m.posterior()) CHECK(b.distribution.family() == Family::Dirichlet);
    CHECK(m.block_offset(2) == 3);
  }
  SUBCASE("Gaussian mixture blocks") {
    const auto m = gaussian_mixture(real_attributes(3), 2);
    int dirichlet = 0, normal_gamma = 0;
    for (const auto& b : m.posterior()) {
      dirichlet += b.distribution.family() == Family::Dirichlet;
      normal_gamma += b.distribution.family() == Family::NormalGamma;
    }
    CHECK(dirichlet == 1);
    CHECK(normal_gamma == 6);
    const auto hidden = m.structure().variables().id_of("HiddenVar");
    CHECK(m.posterior()[m.block_offset(hidden)].distribution.moment() == std::vector<double>{1.0, 1.0});
  }
  SUBCASE("no observable variables") {
    VariableRegistry reg;
    reg.add("H", StateSpace::finite(2), Role::Latent);
    SB_CHECK_CODE(build_learner(default_network(reg, {{}})), ErrorCode::EmptyModel);
  }
  SUBCASE("overrides are stored verbatim") {
    PriorSpec p;
    const auto prior = EFDistribution::dirichlet(std::vector<double>{10, 10});
    p.overrides.push_back({"V0", std::nullopt, -1, prior});
    const auto m = build_learner(one_bit(), p);
    CHECK(m.prior()[0].distribution == prior);
    CHECK(m.posterior()[0].distribution == prior);
  }
  SUBCASE("override of the wrong family") {
    PriorSpec p;
    p.overrides.push_back({"V0", std::nullopt, -1, EFDistribution::gamma(1, 1)});
    SB_CHECK_CODE(build_learner(one_bit(), p), ErrorCode::Conjugacy);
  }
}

TEST_CASE("streaming updates chain exactly on counting models") {
  auto m = build_learner(one_bit());
  update_model(m, bits(7, 3));
  update_model(m, bits(0, 10));
  CHECK(alphas(m, 0) == std::vector<double>{14.0, 8.0});

  auto once = build_learner(one_bit());
  auto all = bits(7, 3);
  const auto more = bits(0, 10);
  all.insert(all.end(), more.begin(), more.end());
  update_model(once, all);
  CHECK(same_natural(m, once));

  auto untouched = build_learner(one_bit());
  update_model(untouched, {});
  CHECK(alphas(untouched, 0) == std::vector<double>{1.0, 1.0});
  CHECK(evidence_lower_bound_trace(untouched).empty());
}

TEST_CASE("batch splits give identical posteriors for fully observed data") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto bn = random_binary_net(rng, 4, 2);
    const auto rows = sample_rows(bn, 1000, 100 + static_cast<std::uint64_t>(trial));
    auto whole = build_learner(bn);
    update_model(whole, rows);
    double total = 0.0;
    for (const auto& b : whole.posterior()) {
      const auto a = b.distribution.moment();
      total += std::accumulate(a.begin(), a.end(), 0.0);
    }
    // Each instance adds exactly one count to one row of every variable.
    CHECK(total == static_cast<double>(whole.posterior().size()) * 2.0 + 4 * 1000.0);
    for (std::size_t k : {2u, 5u, 10u}) {
      auto split = build_learner(bn);
      for (const auto& batch : batches(rows, (rows.size() + k - 1) / k)) update_model(split, batch.instances);
      CHECK(same_natural(split, whole));
    }
  }
}

TEST_CASE("parallel updates match sequential ones") {
  SUBCASE("integer statistics are exact") {
    Rng rng(6);
    const auto bn = random_binary_net(rng, 5, 2);
    const auto rows = sample_rows(bn, 999, 7);
    auto seq = build_learner(bn);
    update_model(seq, rows);
    for (int w : {1, 2, 4, 8}) {
      auto par = build_learner(bn);
      update_model_parallel(par, rows, w);
      CHECK(same_natural(par, seq));
    }
  }
  SUBCASE("Gaussian statistics within reassociation error") {
    Rng rng(7);
    const auto bn = random_clg_net(rng, 6, 2);
    const auto rows = sample_rows(bn, 1000, 8);
    auto seq = build_learner(bn);
    update_model(seq, rows);
    auto one = build_learner(bn);
    update_model_parallel(one, rows, 1);
    CHECK(same_natural(one, seq));
    auto four = build_learner(bn);
    update_model_parallel(four, rows, 4);
    CHECK(max_rel_natural(four, seq) < 1e-10);
  }
  SUBCASE("mixture with latent variables") {
    std::vector<DataInstance> rows;
    Rng rng(9);
    for (int i = 0; i < 400; ++i) rows.push_back({rng.normal(i % 2 ? 3.0 : -3.0, 1.0), std::numeric_limits<double>::quiet_NaN()});
    auto seq = gaussian_mixture(real_attributes(1), 2);
    auto par = seq;
    update_model(seq, rows);
    update_model_parallel(par, rows, 4);
    CHECK(max_rel_natural(par, seq) < 1e-10);
  }
  SUBCASE("schema mismatch") {
    auto m = build_learner(one_bit());
    SB_CHECK_CODE(update_model(m, std::vector<DataInstance>{{1.0, 0.0}}), ErrorCode::Schema);
    SB_CHECK_CODE(update_model(m, std::vector<DataInstance>{{2.0}}), ErrorCode::Schema);
  }
}

TEST_CASE("Gaussian mixture recovers separated components") {
  Rng rng(2024);
  std::vector<DataInstance> rows;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < 5000; ++i) rows.push_back({rng.normal(rng.uniform() < 0.5 ? -5.0 : 5.0, 1.0), nan});
  auto m = gaussian_mixture(real_attributes(1), 2);
  LearningConfig cfg;
  for (const auto& batch : batches(rows, 1000)) update_model(m, batch.instances, cfg);
  const auto est = extract_point_estimate(m);
  auto means = std::vector<double>{est.cpd(0).gaussians[0].intercept, est.cpd(0).gaussians[1].intercept};
  std::sort(means.begin(), means.end());
  CHECK(std::abs(means[0] + 5.0) < 0.3);
  CHECK(std::abs(means[1] - 5.0) < 0.3);
  const auto text = render_network(est);
  CHECK(text.find("P(GaussianVar0 | HiddenVar) follows a Normal|Multinomial") != std::string::npos);
}

TEST_CASE("point estimates") {
  SUBCASE("Dirichlet mean") {
    auto m = build_learner(one_bit());
    update_model(m, bits(3, 7));
    const auto est = extract_point_estimate(m);
    CHECK(est.cpd(0).rows[0][0] == doctest::Approx(8.0 / 12.0).epsilon(1e-15));
    CHECK(est.cpd(0).rows[0][1] == doctest::Approx(4.0 / 12.0).epsilon(1e-15));
  }
  SUBCASE("untouched discrete model gives prior means") {
    const auto est = extract_point_estimate(build_learner(discrete_net({3}, {{}}, {{{0.2, 0.3, 0.5}}})));
    for (double p : est.cpd(0).rows[0]) CHECK(p == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("NormalGamma shape at most one") {
    const auto bn = default_network(registry({0}), {{}});
    SB_CHECK_CODE(extract_point_estimate(build_learner(bn)), ErrorCode::UndefinedVarianceMean);
    PriorSpec p;
    p.defaults.gamma_shape = 3.0;
    p.defaults.gamma_rate = 4.0;
    const auto est = extract_point_estimate(build_learner(bn, p));
    CHECK(est.cpd(0).gaussians[0].variance == doctest::Approx(2.0));
  }
  SUBCASE("Bayesian linear regression recovers the slope") {
    Rng rng(3);
    std::vector<DataInstance> rows;
    for (int i = 0; i < 1000; ++i) {
      const double x = rng.normal(0.0, 1.0);
      rows.push_back({x, 2.0 * x + rng.normal(0.0, 0.01)});
    }
    auto m = bayesian_linear_regression(real_attributes(2), "GaussianVar1");
    update_model(m, rows);
    const auto est = extract_point_estimate(m);
    CHECK(std::abs(est.cpd(1).gaussians[0].coeffs[0] - 2.0) < 0.1);
    CHECK(std::abs(est.cpd(1).gaussians[0].intercept) < 0.1);
  }
}

TEST_CASE("SVI") {
  SviConfig s;
  s.kappa = 0.75;
  s.tau = 1.0;
  CHECK(svi_step_size(0, s) == 1.0);
  s.kappa = 1.0;
  s.tau = 0.0;
  for (long t = 1; t < 10; ++t) CHECK(svi_step_size(t, s) == doctest::Approx(1.0 / t).epsilon(1e-15));

  auto m = build_learner(one_bit());
  SB_CHECK_CODE(svi_update(m, bits(1, 1), 0, 10, LearningConfig{}), ErrorCode::Config);
  LearningConfig bad;
  bad.svi = SviConfig{0.4, 1.0, 0};
  SB_CHECK_CODE(svi_update(m, bits(1, 1), 0, 10, bad), ErrorCode::Config);

  SUBCASE("first step with rho 1 lands on the scaled target") {
    LearningConfig cfg;
    cfg.svi = SviConfig{0.75, 1.0, 0};
    auto fresh = build_learner(one_bit());
    svi_update(fresh, bits(3, 1), 0, 40, cfg);
    CHECK(alphas(fresh, 0) == std::vector<double>{11.0, 31.0});
  }
}

TEST_CASE("ELBO trace as a drift signal") {
  const auto variance = [](const std::vector<double>& v, std::size_t from) {
    double mu = 0, var = 0;
    for (std::size_t i = from; i < from + 10; ++i) mu += v[i] / 10;
    for (std::size_t i = from; i < from + 10; ++i) var += (v[i] - mu) * (v[i] - mu) / 10;
    return var;
  };
  SUBCASE("stationary stream settles") {
    // Many parameters: the early per-batch KL cost dominates the sampling noise.
    Rng rng(12);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto bn = random_binary_net(rng, 8, 3);
      const auto rows = sample_rows(bn, 40 * 50, seed);
      auto m = build_learner(bn);
      for (const auto& batch : batches(rows, 50)) update_model(m, batch.instances);
      std::vector<double> per_instance;
      for (double e : evidence_lower_bound_trace(m)) per_instance.push_back(e / 50);
      REQUIRE(per_instance.size() == 40);
      CHECK(m.log().back().batch_index == 39);
      CHECK(m.log().back().instance_count == 50);
      CHECK(variance(per_instance, 30) < variance(per_instance, 0));
    }
  }
  SUBCASE("a mean shift shows up as a drop") {
    const auto bn = default_network(registry({0}), {{}});
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      auto m = build_learner(bn);
      for (int b = 0; b < 40; ++b) {
        std::vector<DataInstance> rows;
        for (int i = 0; i < 50; ++i) rows.push_back({rng.normal(b < 20 ? 0.0 : 5.0, 1.0)});
        update_model(m, rows);
      }
      const auto& trace = m.elbo_trace();
      CHECK(trace[20] < trace[19] - 50.0);
    }
  }
}

TEST_CASE("latent-model batch ELBO lower-bounds the exact evidence") {
  // H -> X1, H -> X2, all binary; the exact evidence sums Dirichlet-multinomial terms over every
  // latent completion of the batch.
  const auto bn = discrete_net({2, 2, 2}, {{}, {0}, {0}}, {});
  VariableRegistry reg;
  reg.add("H", StateSpace::finite(2), Role::Latent);
  reg.add("X1", StateSpace::finite(2));
  reg.add("X2", StateSpace::finite(2));
  const BayesianNetwork latent(reg, bn.parent_sets(), bn.cpds());
  Rng rng(23);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<DataInstance> rows;
    for (int i = 0; i < 8; ++i)
      rows.push_back({nan, static_cast<double>(rng.next() % 2), static_cast<double>(rng.next() % 2)});
    auto m = build_learner(latent);
    update_model(m, rows);
    double top = -HUGE_VAL;
    std::vector<double> terms;
    for (unsigned h = 0; h < (1u << rows.size()); ++h) {
      std::vector<double> ch(2, 0.0), c1(4, 0.0), c2(4, 0.0);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const unsigned hi = (h >> i) & 1u;
        ch[hi] += 1;
        c1[2 * hi + static_cast<unsigned>(rows[i][1])] += 1;
        c2[2 * hi + static_cast<unsigned>(rows[i][2])] += 1;
      }
      double t = log_dirichlet_evidence({1, 1}, ch);
      for (unsigned hi = 0; hi < 2; ++hi) {
        t += log_dirichlet_evidence({1, 1}, {c1[2 * hi], c1[2 * hi + 1]});
        t += log_dirichlet_evidence({1, 1}, {c2[2 * hi], c2[2 * hi + 1]});
      }
      terms.push_back(t);
      top = std::max(top, t);
    }
    double z = 0.0;
    for (double t : terms) z += std::exp(t - top);
    const double exact = top + std::log(z);
    CHECK(m.elbo_trace().back() <= exact + 1e-9);
    CHECK(m.elbo_trace().back() > exact - 5.0);
  }
}

TEST_CASE("learned model JSON") {
  auto m = build_learner(one_bit());
  update_model(m, bits(3, 7));
  const auto j = learned_model_to_json(m);
  CHECK(j.contains("posterior"));
  CHECK(deserialize_model(j.dump()) == extract_point_estimate(m));
}
