#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "streambayes/core_model.hpp"
#include "streambayes/exponential_family.hpp"

namespace streambayes {

struct InferenceConfig {
  int max_iterations = 100;
  double elbo_rel_tol = 1e-4;
  std::uint64_t seed = 0;
  long sample_count = 10000;
  int worker_count = 1;
  /// Extra VMP runs from seed-jittered initializations; the highest final ELBO wins.
  int restarts = 0;

  /// Throws Config when a field is out of range.
  void validate() const;
};

/// Posterior marginal of one variable: a probability vector or a Gaussian (variance 0 is a point mass).
struct Marginal {
  VarId variable = -1;
  std::string name;
  bool discrete = true;
  std::vector<double> probabilities;
  double mean = 0.0;
  double variance = 0.0;

  static Marginal categorical(VarId id, std::string name, std::vector<double> probabilities);
  static Marginal gaussian(VarId id, std::string name, double mean, double variance);
  /// Point mass for an observed value.
  static Marginal point(const Variable& v, double value);

  /// Multinomial or Gaussian EFDistribution; throws Domain for a continuous point mass.
  [[nodiscard]] EFDistribution distribution() const;

  friend bool operator==(const Marginal&, const Marginal&) = default;
};

using VariationalPosterior = std::vector<Marginal>;

struct InferenceReport {
  VariationalPosterior posteriors;
  std::vector<double> elbo_trace;
  double effective_sample_size = 0.0;
  bool converged = false;
  int iterations_used = 0;
};

/// Builds evidence from (name, text) pairs; finite values may be labels or 0-based indices.
Assignment parse_evidence(const BayesianNetwork& bn, const std::vector<std::pair<std::string, std::string>>& items);
std::vector<VarId> resolve_targets(const BayesianNetwork& bn, const std::vector<std::string>& names);

InferenceReport vmp_infer(const BayesianNetwork& bn, const Assignment& evidence, const std::vector<VarId>& targets,
                          const InferenceConfig& cfg = {});

/// E_q[log p(x, evidence)] + H(q); `q` must hold a factor for every unobserved variable.
double compute_elbo(const BayesianNetwork& bn, const VariationalPosterior& q, const Assignment& evidence);

/// Likelihood weighting, sharded in fixed blocks of samples so results do not depend on worker_count.
InferenceReport importance_sampling_infer(const BayesianNetwork& bn, const Assignment& evidence,
                                          const std::vector<VarId>& targets, const InferenceConfig& cfg = {});

inline constexpr long kSamplesPerShard = 1000;
inline constexpr double kMaxEnumerationStates = 1e7;

struct EnumerationResult {
  VariationalPosterior posteriors;
  double log_evidence = 0.0;
};

/// Exact marginals of an all-discrete network by summing the joint over every completion.
EnumerationResult exact_enumeration_oracle(const BayesianNetwork& bn, const Assignment& evidence,
                                           const std::vector<VarId>& targets);

}  // namespace streambayes
