#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "streambayes/core_model.hpp"
#include "streambayes/inference.hpp"

namespace streambayes {

/// A parent reference inside the transition slice: the variable at t, or its copy at t-1.
struct TemporalParent {
  VarId variable = 0;
  bool previous = false;

  friend bool operator==(const TemporalParent&, const TemporalParent&) = default;
};

/// Suffix naming the t-1 copy of a slice variable, e.g. "X[t-1]".
inline constexpr const char* kPreviousSuffix = "[t-1]";

/// Two-timeslice network: a time-0 network plus a transition slice whose parents may include
/// copies of slice variables from t-1.
class DynamicBayesianNetwork {
 public:
  DynamicBayesianNetwork() = default;

  [[nodiscard]] const BayesianNetwork& time0() const noexcept { return time0_; }
  [[nodiscard]] const VariableRegistry& variables() const noexcept { return time0_.variables(); }
  [[nodiscard]] std::size_t slice_size() const noexcept { return time0_.size(); }
  [[nodiscard]] const std::vector<TemporalParent>& transition_parents(VarId id) const {
    return transition_parents_.at(static_cast<std::size_t>(id));
  }
  [[nodiscard]] const std::vector<std::vector<TemporalParent>>& transition_parent_sets() const noexcept {
    return transition_parents_;
  }
  [[nodiscard]] const ConditionalDistribution& transition_cpd(VarId id) const {
    return transition_net_.cpd(id);
  }
  /// Variables with an outgoing temporal edge, ascending.
  [[nodiscard]] const std::vector<VarId>& interface_variables() const noexcept { return interface_; }
  /// Static view of the transition: ids [0, n) are slice-t variables; ids n.. are the t-1 copies of
  /// the interface variables (latent roots with placeholder CPDs).
  [[nodiscard]] const BayesianNetwork& transition_network() const noexcept { return transition_net_; }
  /// Transition-network id of the t-1 copy of `slice_var`, or -1 when it is not an interface variable.
  [[nodiscard]] VarId previous_copy(VarId slice_var) const;

  friend DynamicBayesianNetwork define_dbn(BayesianNetwork time0,
                                           std::vector<std::vector<TemporalParent>> transition_parents,
                                           std::vector<ConditionalDistribution> transition_cpds);

  friend bool operator==(const DynamicBayesianNetwork& a, const DynamicBayesianNetwork& b) {
    return a.time0_ == b.time0_ && a.transition_net_ == b.transition_net_;
  }

 private:
  BayesianNetwork time0_;
  std::vector<std::vector<TemporalParent>> transition_parents_;
  std::vector<VarId> interface_;
  std::vector<VarId> previous_copy_;
  BayesianNetwork transition_net_;
};

/// Validates both slices; throws Structure for a bad temporal reference or intra-slice cycle.
DynamicBayesianNetwork define_dbn(BayesianNetwork time0, std::vector<std::vector<TemporalParent>> transition_parents,
                                  std::vector<ConditionalDistribution> transition_cpds);

/// Static network over T slice copies named "<name>[t]".
BayesianNetwork unroll(const DynamicBayesianNetwork& dbn, int T);

enum class FilterAlgorithm { Vmp, ImportanceSampling };

/// Factored marginals over the slice variables at `time`; time -1 means no evidence seen yet.
struct BeliefState {
  int time = -1;
  std::vector<Marginal> marginals;
};

struct DynamicEvidence {
  long time_id = 0;
  Assignment assignment;
};

/// One filtering step: builds the slice network with the previous belief as root priors and runs
/// the chosen static algorithm on it. Gaps in time ids are bridged by evidence-free steps.
BeliefState ff_filter_step(const DynamicBayesianNetwork& dbn, const BeliefState& belief, const DynamicEvidence& evidence,
                           FilterAlgorithm algo, const InferenceConfig& cfg = {});

/// Marginal of `target` at the belief's time; the time-0 prior when nothing has been filtered yet.
Marginal filtered_posterior(const DynamicBayesianNetwork& dbn, const BeliefState& state, VarId target,
                            FilterAlgorithm algo = FilterAlgorithm::Vmp, const InferenceConfig& cfg = {});

/// Rolls the belief forward `horizon` evidence-free steps and returns the target marginal.
Marginal predictive_posterior(const DynamicBayesianNetwork& dbn, const BeliefState& state, VarId target, int horizon,
                              FilterAlgorithm algo = FilterAlgorithm::Vmp, const InferenceConfig& cfg = {});

/// The network one filtering step runs on. Interface copies become roots carrying the belief;
/// copies with a single child of matching type are summed into that child exactly. `prev_values`
/// spans the returned network: point-mass beliefs of kept copies become evidence, all else is NaN.
struct SliceNetwork {
  BayesianNetwork network;
  std::vector<double> prev_values;
};
SliceNetwork build_slice_network(const DynamicBayesianNetwork& dbn, const BeliefState& belief, bool absorb);

/// Filters a single sequence, carrying its belief between calls.
class DynamicFilter {
 public:
  DynamicFilter(const DynamicBayesianNetwork& dbn, FilterAlgorithm algo, InferenceConfig cfg = {});

  void add_evidence(const DynamicEvidence& evidence);
  [[nodiscard]] const BeliefState& belief() const noexcept { return belief_; }
  [[nodiscard]] Marginal filtered(VarId target) const;
  [[nodiscard]] Marginal predictive(VarId target, int horizon) const;

 private:
  DynamicBayesianNetwork dbn_;
  FilterAlgorithm algo_;
  InferenceConfig cfg_;
  BeliefState belief_;
};

}  // namespace streambayes
