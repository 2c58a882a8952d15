#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "streambayes/core_model.hpp"
#include "streambayes/data_stream.hpp"
#include "streambayes/dynamic.hpp"
#include "streambayes/exponential_family.hpp"
#include "streambayes/inference.hpp"
#include "streambayes/mean_field.hpp"
#include "streambayes/model_io.hpp"

namespace streambayes {

struct SviConfig {
  double kappa = 0.75;
  double tau = 1.0;
  /// Assumed stream length; 0 means 10 * batch_size.
  long total_n = 0;
};

struct LearningConfig {
  std::size_t batch_size = 1000;
  int worker_count = 1;
  /// Per-instance latent inference.
  InferenceConfig local_vmp;
  /// Alternations of local inference and global update within one batch. The first pass of the
  /// first batch starts local inference from a parameter draw to break label symmetry.
  int max_global_iterations = 100;
  double global_rel_tol = 1e-8;
  std::optional<SviConfig> svi;

  void validate() const;
};

/// What a parameter block governs.
enum class BlockRole {
  Table,              // Dirichlet over one probability row
  InterceptPrecision, // NormalGamma over (intercept, precision) of one configuration
  Coefficient,        // Gaussian over one regression coefficient of one configuration
};

struct ParameterBlock {
  VarId variable = 0;
  std::size_t config = 0;
  BlockRole role = BlockRole::Table;
  int coefficient = -1;
  EFDistribution distribution;

  friend bool operator==(const ParameterBlock&, const ParameterBlock&) = default;
};

struct PriorDefaults {
  double dirichlet_alpha = 1.0;
  double normal_mean = 0.0;
  double normal_kappa = 1.0;
  double gamma_shape = 1.0;
  double gamma_rate = 1.0;
  double coefficient_mean = 0.0;
  double coefficient_variance = 1.0;
};

/// Replaces the default prior of matching blocks. `config` and `coefficient` narrow the match;
/// unset means every configuration (coefficient -1 targets Table/InterceptPrecision blocks).
struct PriorOverride {
  std::string variable;
  std::optional<std::size_t> config;
  int coefficient = -1;
  EFDistribution prior;
};

struct PriorSpec {
  PriorDefaults defaults;
  std::vector<PriorOverride> overrides;
  /// Variables whose template distribution is kept as a fixed point value (e.g. latent N(0,1) factors).
  std::vector<std::string> fixed;
  /// Dynamic models: additionally fixed in the time-0 slice only (anchors the scale of latent chains).
  std::vector<std::string> fixed_initial;
  /// Roots whose distribution is supplied per instance (t-1 copies carrying a filtering belief).
  std::vector<std::string> external;
};

/// Expected sufficient statistics of one batch under mean-field local posteriors.
struct BatchStatistics {
  /// Per variable, row-major: tables hold counts[config][state]; Gaussians hold per configuration the
  /// (d+2)x(d+2) moment matrix of z = (1, parents..., x).
  std::vector<std::vector<double>> values;
  double entropy = 0.0;
  /// Expected log-density of external roots; independent of theta.
  double external = 0.0;
  double instances = 0.0;
  bool any_latent = false;

  BatchStatistics& operator+=(const BatchStatistics& other);
};

struct BatchLogEntry {
  long batch_index = 0;
  std::size_t instance_count = 0;
  double elbo = 0.0;
};

/// Template network plus conjugate parameter posteriors q(theta), one block per parameter group.
class LearnableModel {
 public:
  LearnableModel() = default;
  LearnableModel(BayesianNetwork structure, const PriorSpec& priors);

  [[nodiscard]] const BayesianNetwork& structure() const noexcept { return structure_; }
  [[nodiscard]] const std::vector<ParameterBlock>& prior() const noexcept { return prior_; }
  [[nodiscard]] const std::vector<ParameterBlock>& posterior() const noexcept { return posterior_; }
  [[nodiscard]] bool is_fixed(VarId v) const { return fixed_.at(static_cast<std::size_t>(v)); }
  [[nodiscard]] bool is_external(VarId v) const { return external_.at(static_cast<std::size_t>(v)); }
  /// Index of the first block of `v` (tables: config; Gaussians: config * (1 + d) + (0 | 1 + j)).
  [[nodiscard]] std::size_t block_offset(VarId v) const { return offset_.at(static_cast<std::size_t>(v)); }

  [[nodiscard]] const std::vector<double>& elbo_trace() const noexcept { return elbo_trace_; }
  [[nodiscard]] const std::vector<BatchLogEntry>& log() const noexcept { return log_; }
  [[nodiscard]] long batches_seen() const noexcept { return batches_seen_; }
  [[nodiscard]] long instances_seen() const noexcept { return instances_seen_; }

  /// Expected natural parameters of every CPD under `blocks` (fixed variables use point values).
  [[nodiscard]] std::vector<FactorMoments> moments(const std::vector<ParameterBlock>& blocks) const;
  [[nodiscard]] std::vector<FactorMoments> moments() const { return moments(posterior_); }
  /// Point moments of one draw from `blocks`.
  [[nodiscard]] std::vector<FactorMoments> sampled_moments(const std::vector<ParameterBlock>& blocks, Rng& rng) const;

  [[nodiscard]] BatchStatistics empty_statistics() const;
  /// Adds the engine's current factors (one instance) to `stats`.
  void accumulate(const MeanFieldEngine& engine, BatchStatistics& stats) const;
  /// Blocks maximizing the bound given `stats`, starting from `base` (the batch prior) and using
  /// `current` for the coupled coefficient/intercept factors.
  [[nodiscard]] std::vector<ParameterBlock> conjugate_update(const std::vector<ParameterBlock>& base,
                                                             const std::vector<ParameterBlock>& current,
                                                             const BatchStatistics& stats, double scale = 1.0) const;
  /// E_q[log p(data, latents | theta)] implied by `stats`.
  [[nodiscard]] double expected_log_likelihood(const std::vector<FactorMoments>& moments, const BatchStatistics& stats) const;
  [[nodiscard]] double kl_blocks(const std::vector<ParameterBlock>& q, const std::vector<ParameterBlock>& p) const;

  void set_posterior(std::vector<ParameterBlock> blocks) { posterior_ = std::move(blocks); }
  void record_batch(long batch_index, std::size_t instances, double elbo);

 private:
  BayesianNetwork structure_;
  std::vector<bool> fixed_;
  std::vector<bool> external_;
  std::vector<std::size_t> offset_;
  std::vector<ParameterBlock> prior_;
  std::vector<ParameterBlock> posterior_;
  std::vector<double> elbo_trace_;
  std::vector<BatchLogEntry> log_;
  long batches_seen_ = 0;
  long instances_seen_ = 0;
};

/// Throws EmptyModel without observable variables, Conjugacy for an override of the wrong family.
LearnableModel build_learner(const BayesianNetwork& template_network, const PriorSpec& priors = {});

/// Streaming variational Bayes on one batch (rows in network-id order, NaN = missing).
void update_model(LearnableModel& m, std::span<const DataInstance> batch, const LearningConfig& cfg = {});
void update_model_parallel(LearnableModel& m, std::span<const DataInstance> batch, int worker_count,
                           const LearningConfig& cfg = {});
/// One natural-gradient step with rho = (t + tau)^-kappa; throws Config without cfg.svi.
void svi_update(LearnableModel& m, std::span<const DataInstance> minibatch, long t, long total_n,
                const LearningConfig& cfg);
double svi_step_size(long t, const SviConfig& svi);

/// Posterior-mean network; throws UndefinedVarianceMean when a NormalGamma block has shape <= 1.
BayesianNetwork extract_point_estimate(const LearnableModel& m);
std::vector<double> evidence_lower_bound_trace(const LearnableModel& m);

/// Rows of an ARFF batch reordered to network ids; throws Schema on a mismatch.
std::vector<DataInstance> align_batch(const BayesianNetwork& bn, const ArffHeader& header,
                                      std::span<const DataInstance> rows);

/// Model JSON for the point estimate plus a "posterior" member listing every block's hyperparameters.
Json learned_model_to_json(const LearnableModel& m);
Json blocks_to_json(const BayesianNetwork& bn, const std::vector<ParameterBlock>& blocks);

/// Dynamic learner: time-0 and transition parameter sets plus per-sequence beliefs carried across batches.
class DynamicLearnableModel {
 public:
  DynamicLearnableModel(DynamicBayesianNetwork dbn, const PriorSpec& priors);

  [[nodiscard]] const DynamicBayesianNetwork& structure() const noexcept { return dbn_; }
  [[nodiscard]] const LearnableModel& time0() const noexcept { return time0_; }
  [[nodiscard]] const LearnableModel& transition() const noexcept { return transition_; }
  LearnableModel& time0() noexcept { return time0_; }
  LearnableModel& transition() noexcept { return transition_; }
  [[nodiscard]] const std::vector<double>& elbo_trace() const noexcept { return elbo_trace_; }
  [[nodiscard]] const std::vector<BatchLogEntry>& log() const noexcept { return log_; }

  struct SequenceState {
    BeliefState belief;
  };
  std::map<long, SequenceState>& sequences() noexcept { return sequences_; }
  [[nodiscard]] const std::map<long, SequenceState>& sequences() const noexcept { return sequences_; }
  void record_batch(long batch_index, std::size_t instances, double elbo);
  [[nodiscard]] long batches_seen() const noexcept { return batches_seen_; }

 private:
  DynamicBayesianNetwork dbn_;
  LearnableModel time0_;
  LearnableModel transition_;
  std::map<long, SequenceState> sequences_;
  std::vector<double> elbo_trace_;
  std::vector<BatchLogEntry> log_;
  long batches_seen_ = 0;
};

DynamicLearnableModel build_dynamic_learner(const DynamicBayesianNetwork& dbn, const PriorSpec& priors = {});

/// One batch of a dynamic stream (values in slice-variable order). Sequences may span batches.
void learn_dynamic(DynamicLearnableModel& m, std::span<const DynamicDataInstance> batch, const LearningConfig& cfg = {});
DynamicBayesianNetwork extract_dynamic_point_estimate(const DynamicLearnableModel& m);

std::vector<DynamicDataInstance> align_dynamic_batch(const DynamicBayesianNetwork& dbn, const ArffHeader& header,
                                                     std::span<const DynamicDataInstance> rows);
Json learned_dynamic_model_to_json(const DynamicLearnableModel& m);

}  // namespace streambayes
