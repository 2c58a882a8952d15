#include "streambayes/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include "streambayes/error.hpp"
#include "streambayes/special_functions.hpp"

namespace streambayes {

StateSpace StateSpace::finite(std::vector<std::string> labels) {
  return StateSpace(SpaceKind::FiniteSet, std::move(labels));
}

StateSpace StateSpace::finite(int cardinality) {
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(std::max(cardinality, 0)));
  for (int i = 0; i < cardinality; ++i) labels.push_back(std::to_string(i));
  return finite(std::move(labels));
}

std::optional<int> StateSpace::label_index(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == label) return static_cast<int>(i);
  return std::nullopt;
}

VarId VariableRegistry::add(std::string name, StateSpace space, Role role) {
  if (find(name)) fail(ErrorCode::Structure, "duplicate variable name '" + name + "'");
  const auto id = static_cast<VarId>(vars_.size());
  vars_.push_back(Variable{id, std::move(name), std::move(space), role});
  return id;
}

std::optional<VarId> VariableRegistry::find(std::string_view name) const {
  for (const auto& v : vars_)
    if (v.name == name) return v.id;
  return std::nullopt;
}

VarId VariableRegistry::id_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  fail(ErrorCode::UnknownVariable, "no variable named '" + std::string(name) + "'");
}

const char* distribution_kind_name(DistributionKind kind) noexcept {
  switch (kind) {
    case DistributionKind::Multinomial: return "Multinomial";
    case DistributionKind::Multinomial_Multinomial: return "Multinomial_Multinomial";
    case DistributionKind::Normal: return "Normal";
    case DistributionKind::Normal_Normal: return "Normal_Normal";
    case DistributionKind::Normal_Multinomial: return "Normal_Multinomial";
    case DistributionKind::Normal_MultinomialNormal: return "Normal_MultinomialNormal";
  }
  return "?";
}

std::optional<DistributionKind> parse_distribution_kind(std::string_view name) {
  for (auto k : {DistributionKind::Multinomial, DistributionKind::Multinomial_Multinomial,
                 DistributionKind::Normal, DistributionKind::Normal_Normal,
                 DistributionKind::Normal_Multinomial, DistributionKind::Normal_MultinomialNormal})
    if (name == distribution_kind_name(k)) return k;
  return std::nullopt;
}

DistributionKind expected_kind(bool finite_child, bool has_discrete_parents, bool has_continuous_parents) {
  if (finite_child)
    return has_discrete_parents ? DistributionKind::Multinomial_Multinomial : DistributionKind::Multinomial;
  if (has_discrete_parents)
    return has_continuous_parents ? DistributionKind::Normal_MultinomialNormal
                                  : DistributionKind::Normal_Multinomial;
  return has_continuous_parents ? DistributionKind::Normal_Normal : DistributionKind::Normal;
}

std::size_t ParentSignature::config_of(std::span<const double> values) const {
  std::size_t cfg = 0;
  for (std::size_t i = 0; i < discrete.size(); ++i)
    cfg += strides[i] * static_cast<std::size_t>(values[static_cast<std::size_t>(discrete[i])]);
  return cfg;
}

BayesianNetwork::BayesianNetwork(VariableRegistry variables, std::vector<std::vector<VarId>> parents,
                                 std::vector<ConditionalDistribution> cpds)
    : vars_(std::move(variables)), parents_(std::move(parents)), cpds_(std::move(cpds)) {
  const std::size_t n = vars_.size();
  parents_.resize(n);
  cpds_.resize(n);
  signatures_.resize(n);
  children_.resize(n);
  bool refs_ok = true;
  for (std::size_t i = 0; i < n; ++i) {
    auto& sig = signatures_[i];
    for (VarId p : parents_[i]) {
      if (p < 0 || static_cast<std::size_t>(p) >= n) {
        refs_ok = false;
        continue;
      }
      children_[static_cast<std::size_t>(p)].push_back(static_cast<VarId>(i));
      if (vars_[p].is_finite()) {
        sig.discrete.push_back(p);
        sig.cardinalities.push_back(vars_[p].space.cardinality());
      } else {
        sig.continuous.push_back(p);
      }
    }
    sig.strides.assign(sig.discrete.size(), 1);
    std::size_t count = 1;
    for (std::size_t k = sig.discrete.size(); k-- > 0;) {
      sig.strides[k] = count;
      count *= static_cast<std::size_t>(std::max(sig.cardinalities[k], 1));
    }
    sig.config_count = count;
  }
  if (!refs_ok) return;

  // Kahn's algorithm, smallest id first so the order is canonical.
  std::vector<int> indegree(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (VarId p : parents_[i])
      if (p != static_cast<VarId>(i)) ++indegree[i];
      else indegree[i] = std::numeric_limits<int>::max() / 2;
  std::priority_queue<VarId, std::vector<VarId>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(static_cast<VarId>(i));
  std::vector<VarId> order;
  order.reserve(n);
  while (!ready.empty()) {
    const VarId v = ready.top();
    ready.pop();
    order.push_back(v);
    for (VarId c : children_[static_cast<std::size_t>(v)])
      if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push(c);
  }
  if (order.size() == n) topo_ = std::move(order);
}

std::size_t BayesianNetwork::edge_count() const noexcept {
  std::size_t e = 0;
  for (const auto& p : parents_) e += p.size();
  return e;
}

Assignment::Assignment(std::size_t variable_count)
    : values_(variable_count, std::numeric_limits<double>::quiet_NaN()) {}

void Assignment::set(VarId id, double value) {
  if (is_missing(value) || !std::isfinite(value))
    fail(ErrorCode::InvalidParameter, "assignment value for variable " + std::to_string(id) + " is not finite");
  values_.at(static_cast<std::size_t>(id)) = value;
}

void Assignment::clear(VarId id) { values_.at(static_cast<std::size_t>(id)) = std::numeric_limits<double>::quiet_NaN(); }

bool Assignment::has(VarId id) const { return !is_missing(values_.at(static_cast<std::size_t>(id))); }

bool Assignment::complete() const {
  return std::none_of(values_.begin(), values_.end(), [](double v) { return is_missing(v); });
}

namespace {

ValidationReport violation(VarId v, std::string rule, std::string message) {
  return ValidationReport{false, v, std::move(rule), std::move(message)};
}

bool finite_value(double x) { return std::isfinite(x); }

}  // namespace

ValidationReport validate_network(const BayesianNetwork& bn) {
  const auto& vars = bn.variables();
  const auto n = static_cast<VarId>(bn.size());
  for (VarId i = 0; i < n; ++i) {
    const auto& name = vars[i].name;
    std::set<VarId> seen;
    for (VarId p : bn.parents(i)) {
      if (p < 0 || p >= n) return violation(i, "unknown parent", "variable '" + name + "' has an unknown parent id");
      if (p == i) return violation(i, "self-parent", "variable '" + name + "' is its own parent");
      if (!seen.insert(p).second)
        return violation(i, "duplicate parent", "variable '" + name + "' lists parent '" + vars[p].name + "' twice");
    }
  }
  if (bn.topological_order().size() != bn.size()) {
    // Report the smallest id that Kahn's algorithm could not place.
    std::vector<bool> placed(bn.size(), false);
    for (VarId v : bn.topological_order()) placed[static_cast<std::size_t>(v)] = true;
    VarId first = 0;
    while (first < n && placed[static_cast<std::size_t>(first)]) ++first;
    return violation(first, "cycle", "the graph contains a cycle through '" + vars[first].name + "'");
  }

  for (VarId i = 0; i < n; ++i) {
    const auto& var = vars[i];
    const auto& name = var.name;
    if (var.is_finite()) {
      const auto& labels = var.space.labels();
      if (labels.size() < 2)
        return violation(i, "state space", "finite variable '" + name + "' needs at least 2 states");
      std::set<std::string> uniq(labels.begin(), labels.end());
      if (uniq.size() != labels.size())
        return violation(i, "state space", "finite variable '" + name + "' has duplicate labels");
    } else if (!var.space.labels().empty()) {
      return violation(i, "state space", "real variable '" + name + "' carries labels");
    }
    const auto& sig = bn.signature(i);
    if (var.is_finite() && !sig.continuous.empty())
      return violation(i, "CLG restriction",
                       "discrete variable '" + name + "' has continuous parent '" + vars[sig.continuous.front()].name + "'");
    const auto& cpd = bn.cpd(i);
    const auto want = expected_kind(var.is_finite(), !sig.discrete.empty(), !sig.continuous.empty());
    if (cpd.kind != want)
      return violation(i, "kind", "variable '" + name + "' carries " + distribution_kind_name(cpd.kind) +
                                      " but its signature requires " + distribution_kind_name(want));
    if (!is_normal_kind(cpd.kind)) {
      if (cpd.rows.size() != sig.config_count)
        return violation(i, "row count", "variable '" + name + "' needs " + std::to_string(sig.config_count) + " rows");
      for (std::size_t r = 0; r < cpd.rows.size(); ++r) {
        const auto& row = cpd.rows[r];
        if (row.size() != static_cast<std::size_t>(var.space.cardinality()))
          return violation(i, "row length", "variable '" + name + "' row " + std::to_string(r) + " has wrong length");
        double sum = 0.0;
        for (double p : row) {
          if (!finite_value(p) || p < 0.0)
            return violation(i, "simplex", "variable '" + name + "' row " + std::to_string(r) + " has a negative or non-finite entry");
          sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12)
          return violation(i, "simplex", "variable '" + name + "' row " + std::to_string(r) + " sums to " + std::to_string(sum));
      }
    } else {
      if (cpd.gaussians.size() != sig.config_count)
        return violation(i, "row count", "variable '" + name + "' needs " + std::to_string(sig.config_count) + " Gaussian configurations");
      for (std::size_t r = 0; r < cpd.gaussians.size(); ++r) {
        const auto& g = cpd.gaussians[r];
        if (g.coeffs.size() != sig.continuous.size())
          return violation(i, "coefficient length", "variable '" + name + "' configuration " + std::to_string(r) +
                                                      " has " + std::to_string(g.coeffs.size()) + " coefficients");
        if (!finite_value(g.intercept) || !std::all_of(g.coeffs.begin(), g.coeffs.end(), finite_value))
          return violation(i, "finite parameter", "variable '" + name + "' has a non-finite regression parameter");
        if (!(g.variance > 0.0) || !finite_value(g.variance))
          return violation(i, "variance", "variable '" + name + "' configuration " + std::to_string(r) + " has non-positive variance");
      }
    }
  }
  return {};
}

void require_valid(const BayesianNetwork& bn) {
  const auto report = validate_network(bn);
  if (!report) fail(ErrorCode::Validation, report.rule + ": " + report.message);
}

void check_assignment(const BayesianNetwork& bn, const Assignment& a) {
  if (a.size() != bn.size()) fail(ErrorCode::InvalidParameter, "assignment size does not match the network");
  for (const auto& v : bn.variables()) {
    if (!a.has(v.id)) continue;
    const double x = a[v.id];
    if (v.is_finite()) {
      if (x != std::floor(x) || x < 0 || x >= v.space.cardinality())
        fail(ErrorCode::InvalidParameter, "value " + std::to_string(x) + " out of domain for '" + v.name + "'");
    }
  }
}

double clg_log_density(const ConditionalDistribution& dist, double z, std::size_t config,
                       std::span<const double> continuous_parents) {
  if (!is_normal_kind(dist.kind)) fail(ErrorCode::InvalidParameter, "clg_log_density needs a Normal-family distribution");
  if (config >= dist.gaussians.size()) fail(ErrorCode::InvalidParameter, "discrete configuration out of range");
  const auto& g = dist.gaussians[config];
  if (!(g.variance > 0.0)) fail(ErrorCode::InvalidParameter, "variance must be positive");
  if (continuous_parents.size() != g.coeffs.size())
    fail(ErrorCode::InvalidParameter, "continuous parent count does not match the coefficient vector");
  double mean = g.intercept;
  for (std::size_t j = 0; j < g.coeffs.size(); ++j) mean += g.coeffs[j] * continuous_parents[j];
  const double r = z - mean;
  return -0.5 * (kLog2Pi + std::log(g.variance) + r * r / g.variance);
}

double log_conditional(const BayesianNetwork& bn, VarId id, std::span<const double> values) {
  const auto& sig = bn.signature(id);
  const auto& cpd = bn.cpd(id);
  const std::size_t cfg = sig.config_of(values);
  const double x = values[static_cast<std::size_t>(id)];
  if (!is_normal_kind(cpd.kind)) return std::log(cpd.rows[cfg][static_cast<std::size_t>(x)]);
  double buf[16];
  std::vector<double> heap;
  double* xc = buf;
  if (sig.continuous.size() > 16) {
    heap.resize(sig.continuous.size());
    xc = heap.data();
  }
  for (std::size_t j = 0; j < sig.continuous.size(); ++j) xc[j] = values[static_cast<std::size_t>(sig.continuous[j])];
  return clg_log_density(cpd, x, cfg, std::span<const double>(xc, sig.continuous.size()));
}

double log_probability(const BayesianNetwork& bn, const Assignment& a) {
  for (const auto& v : bn.variables())
    if (!a.has(v.id)) fail(ErrorCode::MissingValue, "no value for variable '" + v.name + "'");
  check_assignment(bn, a);
  double total = 0.0;
  for (VarId i = 0; i < static_cast<VarId>(bn.size()); ++i) total += log_conditional(bn, i, a.values());
  return total;
}

double sample_conditional(const BayesianNetwork& bn, VarId id, std::span<const double> values, Rng& rng) {
  const auto& sig = bn.signature(id);
  const auto& cpd = bn.cpd(id);
  const std::size_t cfg = sig.config_of(values);
  if (!is_normal_kind(cpd.kind)) {
    const auto& row = cpd.rows[cfg];
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (row[k] > 0.0) last_positive = k;
      acc += row[k];
      if (u < acc && row[k] > 0.0) return static_cast<double>(k);
    }
    return static_cast<double>(last_positive);
  }
  const auto& g = cpd.gaussians[cfg];
  double mean = g.intercept;
  for (std::size_t j = 0; j < sig.continuous.size(); ++j)
    mean += g.coeffs[j] * values[static_cast<std::size_t>(sig.continuous[j])];
  return rng.normal(mean, g.variance);
}

Assignment ancestral_sample(const BayesianNetwork& bn, Rng& rng) {
  std::vector<double> values(bn.size(), 0.0);
  for (VarId v : bn.topological_order()) values[static_cast<std::size_t>(v)] = sample_conditional(bn, v, values, rng);
  Assignment a(bn.size());
  for (VarId v = 0; v < static_cast<VarId>(bn.size()); ++v) a.set(v, values[static_cast<std::size_t>(v)]);
  return a;
}

Assignment ancestral_sample(const BayesianNetwork& bn, std::uint64_t seed) {
  Rng rng(seed);
  return ancestral_sample(bn, rng);
}

}  // namespace streambayes
