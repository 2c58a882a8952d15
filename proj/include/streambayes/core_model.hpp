#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streambayes/random.hpp"

namespace streambayes {

using VarId = int;

enum class SpaceKind { FiniteSet, Real };

class StateSpace {
 public:
  static StateSpace finite(std::vector<std::string> labels);
  /// Labels "0".."n-1".
  static StateSpace finite(int cardinality);
  static StateSpace real() { return StateSpace(SpaceKind::Real, {}); }

  [[nodiscard]] SpaceKind kind() const noexcept { return kind_; }
  [[nodiscard]] bool is_finite() const noexcept { return kind_ == SpaceKind::FiniteSet; }
  [[nodiscard]] int cardinality() const noexcept { return static_cast<int>(labels_.size()); }
  [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }
  [[nodiscard]] std::optional<int> label_index(std::string_view label) const;

  friend bool operator==(const StateSpace&, const StateSpace&) = default;

 private:
  StateSpace(SpaceKind kind, std::vector<std::string> labels)
      : kind_(kind), labels_(std::move(labels)) {}

  SpaceKind kind_;
  std::vector<std::string> labels_;
};

enum class Role { Observable, Latent };

struct Variable {
  VarId id = 0;
  std::string name;
  StateSpace space = StateSpace::real();
  Role role = Role::Observable;

  [[nodiscard]] bool is_finite() const noexcept { return space.is_finite(); }
  friend bool operator==(const Variable&, const Variable&) = default;
};

class VariableRegistry {
 public:
  VarId add(std::string name, StateSpace space, Role role = Role::Observable);

  [[nodiscard]] std::size_t size() const noexcept { return vars_.size(); }
  [[nodiscard]] const Variable& operator[](VarId id) const { return vars_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] std::optional<VarId> find(std::string_view name) const;
  /// Throws UnknownVariable.
  [[nodiscard]] VarId id_of(std::string_view name) const;
  [[nodiscard]] auto begin() const noexcept { return vars_.begin(); }
  [[nodiscard]] auto end() const noexcept { return vars_.end(); }

  friend bool operator==(const VariableRegistry&, const VariableRegistry&) = default;

 private:
  std::vector<Variable> vars_;
};

enum class DistributionKind {
  Multinomial,
  Multinomial_Multinomial,
  Normal,
  Normal_Normal,
  Normal_Multinomial,
  Normal_MultinomialNormal,
};

const char* distribution_kind_name(DistributionKind kind) noexcept;
std::optional<DistributionKind> parse_distribution_kind(std::string_view name);
[[nodiscard]] inline bool is_normal_kind(DistributionKind k) noexcept {
  return k != DistributionKind::Multinomial && k != DistributionKind::Multinomial_Multinomial;
}
/// The kind a variable with this space and parent signature must carry.
DistributionKind expected_kind(bool finite_child, bool has_discrete_parents, bool has_continuous_parents);

/// Linear-Gaussian regression for one discrete-parent configuration. `variance` is a variance, not a
/// standard deviation.
struct GaussianParams {
  double intercept = 0.0;
  std::vector<double> coeffs;
  double variance = 1.0;

  friend bool operator==(const GaussianParams&, const GaussianParams&) = default;
};

struct ConditionalDistribution {
  DistributionKind kind = DistributionKind::Multinomial;
  /// Multinomial kinds: one probability row per discrete-parent configuration.
  std::vector<std::vector<double>> rows;
  /// Normal kinds: one regression per discrete-parent configuration.
  std::vector<GaussianParams> gaussians;

  friend bool operator==(const ConditionalDistribution&, const ConditionalDistribution&) = default;
};

/// Parents of one variable split by space. Discrete configurations are indexed row-major over
/// `discrete` in parent-list order (the last discrete parent varies fastest).
struct ParentSignature {
  std::vector<VarId> discrete;
  std::vector<int> cardinalities;
  std::vector<std::size_t> strides;
  std::vector<VarId> continuous;
  std::size_t config_count = 1;

  [[nodiscard]] std::size_t config_of(std::span<const double> values) const;
};

struct ValidationReport {
  bool ok = true;
  VarId variable = -1;
  std::string rule;
  std::string message;

  explicit operator bool() const noexcept { return ok; }
};

class BayesianNetwork {
 public:
  BayesianNetwork() = default;
  BayesianNetwork(VariableRegistry variables, std::vector<std::vector<VarId>> parents,
                  std::vector<ConditionalDistribution> cpds);

  [[nodiscard]] const VariableRegistry& variables() const noexcept { return vars_; }
  [[nodiscard]] std::size_t size() const noexcept { return vars_.size(); }
  [[nodiscard]] const Variable& variable(VarId id) const { return vars_[id]; }
  [[nodiscard]] const std::vector<VarId>& parents(VarId id) const { return parents_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<std::vector<VarId>>& parent_sets() const noexcept { return parents_; }
  [[nodiscard]] const ConditionalDistribution& cpd(VarId id) const { return cpds_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<ConditionalDistribution>& cpds() const noexcept { return cpds_; }
  [[nodiscard]] const ParentSignature& signature(VarId id) const { return signatures_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<VarId>& children(VarId id) const { return children_.at(static_cast<std::size_t>(id)); }
  /// Empty when the graph is cyclic or references unknown variables.
  [[nodiscard]] const std::vector<VarId>& topological_order() const noexcept { return topo_; }
  [[nodiscard]] std::size_t edge_count() const noexcept;

  friend bool operator==(const BayesianNetwork& a, const BayesianNetwork& b) {
    return a.vars_ == b.vars_ && a.parents_ == b.parents_ && a.cpds_ == b.cpds_;
  }

 private:
  VariableRegistry vars_;
  std::vector<std::vector<VarId>> parents_;
  std::vector<ConditionalDistribution> cpds_;
  std::vector<ParentSignature> signatures_;
  std::vector<std::vector<VarId>> children_;
  std::vector<VarId> topo_;
};

/// Partial map from variable id to value; finite-state values are 0-based indices.
class Assignment {
 public:
  Assignment() = default;
  explicit Assignment(std::size_t variable_count);

  void set(VarId id, double value);
  void clear(VarId id);
  [[nodiscard]] bool has(VarId id) const;
  [[nodiscard]] double operator[](VarId id) const { return values_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] bool complete() const;
  /// Unassigned entries are NaN.
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::vector<double> values_;
};

inline bool is_missing(double v) noexcept { return v != v; }

ValidationReport validate_network(const BayesianNetwork& bn);
/// Throws Validation with the report message when validation fails.
void require_valid(const BayesianNetwork& bn);
/// Throws when an assigned value is out of its variable's domain.
void check_assignment(const BayesianNetwork& bn, const Assignment& a);

double clg_log_density(const ConditionalDistribution& dist, double z, std::size_t config,
                       std::span<const double> continuous_parents);

/// log p(a) for a complete assignment.
double log_probability(const BayesianNetwork& bn, const Assignment& a);
/// log p(x_i | pa(x_i)) for one variable whose value and parents are assigned in `values`.
double log_conditional(const BayesianNetwork& bn, VarId id, std::span<const double> values);

Assignment ancestral_sample(const BayesianNetwork& bn, std::uint64_t seed);
Assignment ancestral_sample(const BayesianNetwork& bn, Rng& rng);
/// Draws x_i given its (already assigned) parents.
double sample_conditional(const BayesianNetwork& bn, VarId id, std::span<const double> values, Rng& rng);

}  // namespace streambayes
