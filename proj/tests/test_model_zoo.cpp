#include <cmath>

#include "doctest.h"
#include "streambayes/model_io.hpp"
#include "streambayes/model_zoo.hpp"
#include "support.hpp"

using namespace streambayes;
using namespace sbtest;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<Attribute> reals(int n, const std::string& prefix = "GaussianVar") {
  std::vector<Attribute> out;
  for (int i = 0; i < n; ++i) out.push_back({i, prefix + std::to_string(i), StateSpace::real(), SpecialAttribute::None});
  return out;
}

std::vector<Attribute> mixed() {
  return {{0, "DiscreteVar0", StateSpace::finite(2), SpecialAttribute::None},
          {1, "GaussianVar0", StateSpace::real(), SpecialAttribute::None},
          {2, "DiscreteVar1", StateSpace::finite(3), SpecialAttribute::None},
          {3, "Class", StateSpace::finite({"a", "b"}), SpecialAttribute::None}};
}

std::size_t edge_count(const BayesianNetwork& bn) {
  std::size_t e = 0;
  for (VarId v = 0; v < static_cast<VarId>(bn.size()); ++v) e += bn.parents(v).size();
  return e;
}

std::size_t latent_count(const BayesianNetwork& bn) {
  std::size_t n = 0;
  for (const auto& v : bn.variables()) n += v.role == Role::Latent;
  return n;
}

// Rows for the model's variables: attributes sampled from the template, latents left missing.
std::vector<DataInstance> synthetic_rows(const LearnableModel& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto& bn = m.structure();
  std::vector<DataInstance> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = ancestral_sample(bn, rng);
    DataInstance row;
    for (const auto& v : bn.variables()) row.push_back(v.role == Role::Latent ? kNaN : a[v.id]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<DynamicDataInstance> synthetic_sequences(const DynamicLearnableModel& m, int sequences, int T,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  const auto& dbn = m.structure();
  const auto flat = unroll(dbn, T);
  const std::size_t n = dbn.slice_size();
  std::vector<DynamicDataInstance> rows;
  for (int s = 0; s < sequences; ++s) {
    const auto a = ancestral_sample(flat, rng);
    for (int t = 0; t < T; ++t) {
      DataInstance row;
      for (std::size_t i = 0; i < n; ++i)
        row.push_back(dbn.variables()[static_cast<VarId>(i)].role == Role::Latent ? kNaN
                                                                                  : a[static_cast<VarId>(t * n + i)]);
      rows.push_back({s, t, row});
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("Gaussian mixture template") {
  const auto m = gaussian_mixture(reals(10), 2);
  const auto& bn = m.structure();
  CHECK(validate_network(bn).ok);
  CHECK(edge_count(bn) == 10);
  CHECK(latent_count(bn) == 1);
  CHECK(bn.variables()[bn.variables().id_of("HiddenVar")].space.cardinality() == 2);
  CHECK(m.posterior().size() == 2 * 10 + 1);
  for (VarId v = 0; v < 10; ++v) CHECK(bn.cpd(v).kind == DistributionKind::Normal_Multinomial);

  SB_CHECK_CODE(gaussian_mixture(reals(3), 1), ErrorCode::Config);
  SB_CHECK_CODE(gaussian_mixture(mixed(), 2), ErrorCode::Type);
}

TEST_CASE("naive Bayes template") {
  const auto m = naive_bayes(mixed(), "Class");
  const auto& bn = m.structure();
  CHECK(validate_network(bn).ok);
  CHECK(edge_count(bn) == 3);
  CHECK(bn.parents(3).empty());
  CHECK(bn.cpd(0).kind == DistributionKind::Multinomial_Multinomial);
  CHECK(bn.cpd(1).kind == DistributionKind::Normal_Multinomial);
  CHECK(bn.cpd(2).kind == DistributionKind::Multinomial_Multinomial);
  SB_CHECK_CODE(naive_bayes(mixed(), "GaussianVar0"), ErrorCode::Type);
  SB_CHECK_CODE(naive_bayes(mixed(), "Nope"), ErrorCode::Schema);
}

TEST_CASE("Bayesian linear regression template") {
  const auto m = bayesian_linear_regression(reals(4), "GaussianVar3");
  CHECK(m.structure().parents(3).size() == 3);
  CHECK(m.structure().cpd(3).gaussians[0].coeffs.size() == 3);
  SB_CHECK_CODE(bayesian_linear_regression(mixed(), "GaussianVar0"), ErrorCode::Type);

  const auto alone = bayesian_linear_regression(reals(1), "GaussianVar0");
  CHECK(alone.structure().cpd(0).kind == DistributionKind::Normal);
  CHECK(alone.structure().cpd(0).gaussians[0].coeffs.empty());
}

TEST_CASE("factor analysis template") {
  const auto m = factor_analysis(reals(5), 2);
  const auto& bn = m.structure();
  CHECK(validate_network(bn).ok);
  CHECK(edge_count(bn) == 10);
  CHECK(latent_count(bn) == 2);
  const auto f0 = bn.variables().id_of("FactorVar0");
  CHECK(bn.cpd(f0).gaussians[0].intercept == 0.0);
  CHECK(bn.cpd(f0).gaussians[0].variance == 1.0);
  SB_CHECK_CODE(factor_analysis(reals(2), 2), ErrorCode::Config);
  SB_CHECK_CODE(factor_analysis(reals(3), 0), ErrorCode::Config);

  SUBCASE("one-factor loadings share a sign") {
    // x_i = f + noise; the fit may flip the factor, never individual loadings.
    Rng rng(5);
    std::vector<DataInstance> rows;
    for (int i = 0; i < 2000; ++i) {
      const double f = rng.normal(0.0, 1.0);
      rows.push_back({f + rng.normal(0.0, 0.25), f + rng.normal(0.0, 0.25), f + rng.normal(0.0, 0.25), kNaN});
    }
    auto fa = factor_analysis(reals(3), 1);
    LearningConfig cfg;
    for (const auto& b : batches(rows, 500)) update_model(fa, b.instances, cfg);
    const auto est = extract_point_estimate(fa);
    const double l0 = est.cpd(0).gaussians[0].coeffs[0];
    for (VarId v = 0; v < 3; ++v) {
      const double l = est.cpd(v).gaussians[0].coeffs[0];
      CHECK(l * l0 > 0.0);
      CHECK(std::abs(std::abs(l) - 1.0) < 0.2);
    }
  }
}

TEST_CASE("hidden Markov model template") {
  const auto m = hidden_markov_model(mixed(), 3);
  const auto& dbn = m.structure();
  const auto h = dbn.variables().id_of("HiddenVar");
  CHECK(dbn.interface_variables() == std::vector<VarId>{h});
  CHECK(dbn.transition_cpd(h).rows.size() == 3);
  CHECK(dbn.time0().parents(h).empty());
  for (VarId v = 0; v < 4; ++v) CHECK(dbn.time0().parents(v) == std::vector<VarId>{h});
  CHECK(validate_network(unroll(dbn, 3)).ok);
  // Transition parameters: one Dirichlet row per previous state.
  std::size_t rows = 0;
  for (const auto& b : m.transition().posterior())
    if (b.variable == h) ++rows;
  CHECK(rows == 3);
  SB_CHECK_CODE(hidden_markov_model(mixed(), 1), ErrorCode::Config);

  SUBCASE("self-transition recovered by counting when the chain is observed") {
    // Fully observed variant: the hidden chain is given as a column.
    VariableRegistry reg;
    reg.add("S", StateSpace::finite(2));
    reg.add("E", StateSpace::finite(2));
    const auto time0 = default_network(reg, {{}, {0}});
    auto tc = defaults(reg, {{0}, {0}});
    tc[0].kind = DistributionKind::Multinomial_Multinomial;
    tc[0].rows = {{0.9, 0.1}, {0.1, 0.9}};
    tc[1].rows = {{0.8, 0.2}, {0.3, 0.7}};
    const auto truth = define_dbn(time0, {{{0, true}}, {{0, false}}}, tc);
    auto learner = build_dynamic_learner(define_dbn(time0, {{{0, true}}, {{0, false}}}, defaults(reg, {{0}, {0}})));
    const auto data = synthetic_sequences(build_dynamic_learner(truth), 50, 40, 17);
    learn_dynamic(learner, data);
    const auto est = extract_dynamic_point_estimate(learner);
    CHECK(std::abs(est.transition_cpd(0).rows[0][0] - 0.9) < 0.1);
    CHECK(std::abs(est.transition_cpd(0).rows[1][1] - 0.9) < 0.1);
  }
}

TEST_CASE("Kalman filter template") {
  const auto m = kalman_filter(reals(3), 2);
  const auto& dbn = m.structure();
  CHECK(dbn.interface_variables().size() == 2);
  CHECK(dbn.variables()[dbn.interface_variables()[0]].name == "gaussianHiddenVar0");
  for (VarId v = 0; v < 3; ++v) CHECK(dbn.transition_parents(v).size() == 2);
  CHECK(validate_network(unroll(dbn, 2)).ok);
  SB_CHECK_CODE(kalman_filter(mixed(), 2), ErrorCode::Type);
  SB_CHECK_CODE(kalman_filter(reals(2), 0), ErrorCode::Config);
}

TEST_CASE("custom builder") {
  SUBCASE("global plus per-attribute local latents") {
    CustomModelBuilder b(reals(10));
    b.add_global_latent("GlobalHidden", SpaceKind::FiniteSet, 2)
        .add_local_latent_per_attribute("LocalHidden", SpaceKind::Real)
        .link_to_attributes("GlobalHidden");
    const auto m = b.build();
    const auto& bn = m.structure();
    CHECK(validate_network(bn).ok);
    CHECK(bn.size() == 21);
    CHECK(latent_count(bn) == 11);
    CHECK(edge_count(bn) == 20);
    CHECK(bn.variables().find("LocalHidden7"));
    for (VarId v = 0; v < 10; ++v) CHECK(bn.parents(v).size() == 2);
  }
  SUBCASE("no latents and no links") {
    const auto bn = CustomModelBuilder(mixed()).network();
    CHECK(edge_count(bn) == 0);
    CHECK(bn.size() == 4);
  }
  SUBCASE("structural errors") {
    CustomModelBuilder b(reals(2));
    b.add_global_latent("G", SpaceKind::Real).link("G", "GaussianVar0").link("GaussianVar0", "G");
    SB_CHECK_CODE(b.build(), ErrorCode::Structure);
    CustomModelBuilder clg(mixed());
    clg.link("GaussianVar0", "DiscreteVar0");
    SB_CHECK_CODE(clg.build(), ErrorCode::Structure);
    CustomModelBuilder dup(reals(2));
    SB_CHECK_CODE(dup.add_global_latent("GaussianVar0", SpaceKind::Real), ErrorCode::Structure);
  }
  SUBCASE("spec text") {
    const auto spec =
        "# comment\n"
        "global GlobalHidden finite 2\n"
        "local LocalHidden real\n"
        "link GlobalHidden *\n";
    const auto bn = parse_custom_spec(spec, reals(4)).network();
    CHECK(edge_count(bn) == 8);
    CHECK(bn.variables()[bn.variables().id_of("GlobalHidden")].space.cardinality() == 2);
    try {
      parse_custom_spec("global A finite 2\nfrobnicate A\n", reals(2));
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Parse);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    SB_CHECK_CODE(parse_custom_spec("link Nope GaussianVar0\n", reals(2)), ErrorCode::UnknownVariable);
    SB_CHECK_CODE(parse_custom_spec("global A finite two\n", reals(2)), ErrorCode::Config);
  }
}

TEST_CASE("make_template") {
  const auto attrs = reals(4);
  CHECK(std::get<LearnableModel>(make_template("gmm:k=3", attrs).model).posterior().size() == 4 * 3 + 1);
  CHECK(std::get<LearnableModel>(make_template("fa", attrs).model).structure().size() == 5);
  CHECK(std::get<LearnableModel>(make_template("blr", attrs).model).structure().parents(3).size() == 3);
  CHECK(std::holds_alternative<DynamicLearnableModel>(make_template("kf:hidden=1", attrs).model));
  CHECK(is_dynamic_template("hmm"));
  CHECK(is_dynamic_template("kf:hidden=3"));
  CHECK_FALSE(is_dynamic_template("gmm"));
  SB_CHECK_CODE(make_template("lda", attrs), ErrorCode::Usage);
  SB_CHECK_CODE(make_template("gmm:k=two", attrs), ErrorCode::Config);
  SB_CHECK_CODE(make_template("gmm:states=3", attrs), ErrorCode::Config);
  SB_CHECK_CODE(make_template("gmm:k", attrs), ErrorCode::Config);
  SB_CHECK_CODE(make_template("custom", attrs), ErrorCode::Usage);
  SB_CHECK_CODE(make_template("custom:/nonexistent/spec.txt", attrs), ErrorCode::Io);

  // Pure in its inputs.
  const auto a = std::get<LearnableModel>(make_template("gmm:k=2", attrs).model);
  const auto b = std::get<LearnableModel>(make_template("gmm:k=2", attrs).model);
  CHECK(a.structure() == b.structure());
  CHECK(a.prior() == b.prior());
}

TEST_CASE("every template completes an update on matching data") {
  const auto attrs = reals(4);
  for (const char* id : {"gmm", "blr", "fa"}) {
    auto m = std::get<LearnableModel>(make_template(id, attrs).model);
    const auto rows = synthetic_rows(m, 300, 3);
    CHECK_NOTHROW(update_model(m, rows));
    CHECK(m.elbo_trace().size() == 1);
    CHECK(validate_network(extract_point_estimate(m)).ok);
  }
  {
    auto m = std::get<LearnableModel>(make_template("nb:class=Class", mixed()).model);
    CHECK_NOTHROW(update_model(m, synthetic_rows(m, 300, 4)));
  }
  {
    CustomModelBuilder b(attrs);
    b.add_global_latent("GlobalHidden", SpaceKind::FiniteSet, 2)
        .add_local_latent_per_attribute("LocalHidden", SpaceKind::Real)
        .link_to_attributes("GlobalHidden");
    auto m = b.build();
    CHECK_NOTHROW(update_model(m, synthetic_rows(m, 300, 5)));
  }
  for (const char* id : {"hmm", "kf"}) {
    auto m = std::get<DynamicLearnableModel>(make_template(id, id == std::string("hmm") ? mixed() : attrs).model);
    CHECK_NOTHROW(learn_dynamic(m, synthetic_sequences(m, 10, 20, 6)));
    CHECK(m.elbo_trace().size() == 1);
  }
}

TEST_CASE("mixture weight follows a single-component stream") {
  for (int k : {2, 3, 4}) {
    auto m = gaussian_mixture(reals(1), k);
    Rng rng(static_cast<std::uint64_t>(k));
    std::vector<DataInstance> rows;
    for (int i = 0; i < 500; ++i) rows.push_back({rng.normal(0.0, 1.0), kNaN});
    update_model(m, rows);
    const auto h = m.structure().variables().id_of("HiddenVar");
    const auto alpha = m.posterior()[m.block_offset(h)].distribution.moment();
    const auto top = std::max_element(alpha.begin(), alpha.end());
    for (auto it = alpha.begin(); it != alpha.end(); ++it)
      if (it != top) CHECK(*it < *top);
  }
}
