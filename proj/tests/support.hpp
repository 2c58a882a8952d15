#pragma once

// Network builders and random generators shared by the unit, acceptance and memory tests.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "streambayes/core_model.hpp"
#include "streambayes/data_stream.hpp"
#include "streambayes/error.hpp"
#include "streambayes/dynamic.hpp"
#include "streambayes/inference.hpp"
#include "streambayes/model_zoo.hpp"
#include "streambayes/random.hpp"

namespace sbtest {

using namespace streambayes;

inline VariableRegistry registry(const std::vector<int>& cards) {
  VariableRegistry reg;
  for (std::size_t i = 0; i < cards.size(); ++i)
    reg.add("V" + std::to_string(i), cards[i] > 0 ? StateSpace::finite(cards[i]) : StateSpace::real());
  return reg;
}

inline std::vector<ConditionalDistribution> defaults(const VariableRegistry& reg,
                                                     const std::vector<std::vector<VarId>>& parents) {
  return default_network(reg, parents).cpds();
}

/// `cards[i] == 0` marks a real variable. Rows are given per variable, in configuration order.
inline BayesianNetwork discrete_net(const std::vector<int>& cards, const std::vector<std::vector<VarId>>& parents,
                                    const std::vector<std::vector<std::vector<double>>>& rows) {
  auto reg = registry(cards);
  auto cpds = defaults(reg, parents);
  for (std::size_t i = 0; i < rows.size(); ++i) cpds[i].rows = rows[i];
  return BayesianNetwork(reg, parents, cpds);
}

inline std::vector<double> random_simplex(Rng& rng, int k) {
  std::vector<double> p(static_cast<std::size_t>(k));
  double s = 0.0;
  for (auto& x : p) s += (x = rng.gamma(1.0) + 0.05);
  for (auto& x : p) x /= s;
  return p;
}

/// Random DAG over `n` variables with parents drawn from earlier ids (at most `max_parents`).
inline std::vector<std::vector<VarId>> random_parents(Rng& rng, int n, int max_parents,
                                                      const std::vector<int>& cards) {
  std::vector<std::vector<VarId>> parents(static_cast<std::size_t>(n));
  for (int i = 1; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (static_cast<int>(parents[i].size()) >= max_parents) break;
      // CLG: finite children only take finite parents.
      if (cards[i] > 0 && cards[j] == 0) continue;
      if (rng.uniform() < 0.5) parents[i].push_back(j);
    }
  }
  return parents;
}

inline void randomize(BayesianNetwork& bn, Rng& rng) {
  auto cpds = bn.cpds();
  for (std::size_t i = 0; i < cpds.size(); ++i) {
    const int k = bn.variable(static_cast<VarId>(i)).space.cardinality();
    for (auto& row : cpds[i].rows) row = random_simplex(rng, k);
    for (auto& g : cpds[i].gaussians) {
      g.intercept = rng.normal(0.0, 1.0);
      for (auto& c : g.coeffs) c = rng.normal(0.0, 0.5);
      g.variance = 0.3 + rng.uniform() * 1.5;
    }
  }
  bn = BayesianNetwork(bn.variables(), bn.parent_sets(), cpds);
}

/// Random all-binary network.
inline BayesianNetwork random_binary_net(Rng& rng, int n, int max_parents = 2) {
  std::vector<int> cards(static_cast<std::size_t>(n), 2);
  auto parents = random_parents(rng, n, max_parents, cards);
  auto reg = registry(cards);
  BayesianNetwork bn(reg, parents, defaults(reg, parents));
  randomize(bn, rng);
  return bn;
}

/// Random CLG network mixing finite (2 or 3 states) and real variables.
inline BayesianNetwork random_clg_net(Rng& rng, int n, int max_parents = 2) {
  std::vector<int> cards(static_cast<std::size_t>(n));
  for (auto& c : cards) c = rng.uniform() < 0.5 ? 0 : (rng.uniform() < 0.7 ? 2 : 3);
  auto parents = random_parents(rng, n, max_parents, cards);
  auto reg = registry(cards);
  BayesianNetwork bn(reg, parents, defaults(reg, parents));
  randomize(bn, rng);
  return bn;
}

/// X_t | X_{t-1} ~ N(a x, q), Y_t | X_t ~ N(x, r); X_0 ~ N(0, p0).
inline DynamicBayesianNetwork lds(double a = 1.0, double q = 1.0, double r = 1.0, double p0 = 1.0) {
  VariableRegistry reg;
  reg.add("X", StateSpace::real(), Role::Latent);
  reg.add("Y", StateSpace::real());
  std::vector<std::vector<VarId>> p0s{{}, {0}};
  auto cpds = defaults(reg, p0s);
  cpds[0].gaussians[0] = {0.0, {}, p0};
  cpds[1].gaussians[0] = {0.0, {1.0}, r};
  BayesianNetwork time0(reg, p0s, cpds);
  std::vector<std::vector<TemporalParent>> tp{{{0, true}}, {{0, false}}};
  auto tc = cpds;
  tc[0].kind = DistributionKind::Normal_Normal;
  tc[0].gaussians[0] = {0.0, {a}, q};
  return define_dbn(time0, tp, tc);
}

/// Two-state HMM with a binary emission.
inline DynamicBayesianNetwork binary_hmm(std::vector<double> init, std::vector<std::vector<double>> trans,
                                         std::vector<std::vector<double>> emit) {
  VariableRegistry reg;
  reg.add("H", StateSpace::finite(2), Role::Latent);
  reg.add("E", StateSpace::finite(2));
  std::vector<std::vector<VarId>> p0s{{}, {0}};
  auto cpds = defaults(reg, p0s);
  cpds[0].rows = {init};
  cpds[1].rows = emit;
  BayesianNetwork time0(reg, p0s, cpds);
  std::vector<std::vector<TemporalParent>> tp{{{0, true}}, {{0, false}}};
  auto tc = cpds;
  tc[0].kind = DistributionKind::Multinomial_Multinomial;
  tc[0].rows = trans;
  return define_dbn(time0, tp, tc);
}

inline Assignment assignment(const std::vector<double>& values) {
  Assignment a(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) a.set(static_cast<VarId>(i), values[i]);
  return a;
}

/// Odometer over all joint states of finite cardinalities.
inline bool next_config(std::vector<double>& values, const std::vector<int>& cards) {
  for (std::size_t i = values.size(); i-- > 0;) {
    if (values[i] + 1 < cards[i]) {
      values[i] += 1;
      return true;
    }
    values[i] = 0;
  }
  return false;
}

/// Exact posterior of the single unobserved variable `x`, all others fixed in `values`. A real `x` has
/// a log joint that is exactly quadratic in x, recovered from three evaluations.
inline Marginal single_latent_oracle(const BayesianNetwork& bn, std::vector<double> values, VarId x) {
  const auto& v = bn.variable(x);
  const auto at = [&](double value) {
    values[static_cast<std::size_t>(x)] = value;
    Assignment a(bn.size());
    for (VarId i = 0; i < static_cast<VarId>(bn.size()); ++i) a.set(i, values[static_cast<std::size_t>(i)]);
    return log_probability(bn, a);
  };
  if (v.is_finite()) {
    std::vector<double> lp;
    double top = -HUGE_VAL;
    for (int k = 0; k < v.space.cardinality(); ++k) top = std::max(top, lp.emplace_back(at(k)));
    double z = 0.0;
    for (double& l : lp) z += (l = std::exp(l - top));
    for (double& l : lp) l /= z;
    return Marginal::categorical(x, v.name, lp);
  }
  const double f0 = at(0.0), fp = at(1.0), fm = at(-1.0);
  const double precision = -(fp - 2 * f0 + fm);
  const double linear = (fp - fm) / 2;
  return Marginal::gaussian(x, v.name, linear / precision, 1.0 / precision);
}

/// Largest absolute difference between two marginals of the same variable.
inline double marginal_gap(const Marginal& a, const Marginal& b) {
  if (a.discrete != b.discrete) return HUGE_VAL;
  if (!a.discrete) return std::max(std::abs(a.mean - b.mean), std::abs(a.variance - b.variance));
  if (a.probabilities.size() != b.probabilities.size()) return HUGE_VAL;
  double gap = 0.0;
  for (std::size_t k = 0; k < a.probabilities.size(); ++k)
    gap = std::max(gap, std::abs(a.probabilities[k] - b.probabilities[k]));
  return gap;
}

inline double rel_diff(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

inline std::vector<DataInstance> sample_rows(const BayesianNetwork& bn, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DataInstance> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = ancestral_sample(bn, rng);
    rows.emplace_back(a.values().begin(), a.values().end());
  }
  return rows;
}

struct Gauss {
  double mean, var;
};

/// Scalar Kalman filter for lds(a, q, r, p0); NaN observations skip the update.
inline std::vector<Gauss> kalman(double a, double q, double r, double p0, const std::vector<double>& ys) {
  std::vector<Gauss> out;
  Gauss g{0.0, p0};
  for (std::size_t t = 0; t < ys.size(); ++t) {
    if (t > 0) g = {a * g.mean, a * a * g.var + q};
    if (!std::isnan(ys[t])) {
      const double k = g.var / (g.var + r);
      g = {g.mean + k * (ys[t] - g.mean), (1 - k) * g.var};
    }
    out.push_back(g);
  }
  return out;
}

/// Bitwise equality with NaN matching NaN.
inline bool same_values(const DataInstance& a, const DataInstance& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (is_missing(a[i]) != is_missing(b[i])) return false;
    if (!is_missing(a[i]) && std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

inline std::string random_label(Rng& rng) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCZ0123456789_-. ,";
  std::string s;
  const auto len = 1 + rng.next() % 6;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.next() % (sizeof(alphabet) - 1)];
  // The reader trims cells and treats a bare "?" as missing.
  if (s.front() == ' ' || s.back() == ' ') s = "x" + s + "x";
  return s;
}

inline double random_real(Rng& rng) {
  switch (rng.next() % 4) {
    case 0: return rng.normal(0.0, 1.0);
    case 1: return rng.normal(0.0, 1.0) * std::pow(10.0, static_cast<double>(rng.next() % 600) - 300.0);
    case 2: return static_cast<double>(static_cast<long>(rng.next() % 2001) - 1000);
    default: return std::ldexp(static_cast<double>(rng.next() >> 11), -static_cast<int>(rng.next() % 80));
  }
}

inline ArffHeader random_header(Rng& rng) {
  ArffHeader h;
  h.relation = rng.uniform() < 0.5 ? "rel" : "my relation";
  const int n = 1 + static_cast<int>(rng.next() % 6);
  for (int i = 0; i < n; ++i) {
    Attribute a;
    a.index = i;
    a.name = (rng.uniform() < 0.3 ? "attr " : "A") + std::to_string(i);
    if (rng.uniform() < 0.5) {
      std::vector<std::string> labels;
      const auto k = 2 + rng.next() % 4;
      while (labels.size() < k) {
        auto l = random_label(rng);
        if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
      }
      a.space = StateSpace::finite(labels);
    }
    h.attributes.push_back(a);
  }
  return h;
}

inline DataInstance random_row(Rng& rng, const ArffHeader& h) {
  DataInstance row;
  for (const auto& a : h.attributes) {
    if (rng.uniform() < 0.1) row.push_back(std::numeric_limits<double>::quiet_NaN());
    else if (a.space.is_finite()) row.push_back(static_cast<double>(rng.next() % static_cast<std::uint64_t>(a.space.cardinality())));
    else row.push_back(random_real(rng));
  }
  return row;
}


}  // namespace sbtest

#define SB_CHECK_CODE(expr, expected)                                      \
  do {                                                                     \
    bool sb_thrown_ = false;                                               \
    try {                                                                  \
      (void)(expr);                                                        \
    } catch (const ::streambayes::Error& e) {                              \
      sb_thrown_ = true;                                                   \
      CHECK_MESSAGE(e.code() == (expected), e.what());                     \
    }                                                                      \
    CHECK_MESSAGE(sb_thrown_, "expected " #expected " from " #expr);       \
  } while (false)
