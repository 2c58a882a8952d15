#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "streambayes/core_model.hpp"
#include "streambayes/random.hpp"

namespace streambayes {

/// Expectations of one Gaussian regression's parameters (alpha, beta, precision tau) under the
/// current parameter belief. For fixed parameters these collapse to point values.
struct GaussianFactorMoments {
  double e_tau = 1.0;
  double e_tau_alpha = 0.0;
  double e_tau_alpha2 = 0.0;
  double e_log_tau = 0.0;
  std::vector<double> e_beta;
  std::vector<double> e_beta2;
};

/// Everything mean-field updates need from one conditional distribution.
struct FactorMoments {
  /// E[log theta] per discrete-parent configuration (multinomial kinds); may hold -inf.
  std::vector<std::vector<double>> log_rows;
  /// Per discrete-parent configuration (normal kinds).
  std::vector<GaussianFactorMoments> gaussians;
};

FactorMoments point_moments(const ConditionalDistribution& cpd);
std::vector<FactorMoments> point_moments(const BayesianNetwork& bn);

struct SweepResult {
  std::vector<double> elbo_trace;
  bool converged = false;
  int iterations = 0;
};

/// Coordinate-ascent mean-field inference over a CLG network structure. Each unobserved variable
/// carries one factor (Multinomial or Gaussian); every update resets a factor to the optimum given all
/// others, so the ELBO never decreases across sweeps.
///
/// Barren variables (unobserved, with no observed descendant) integrate out exactly: they take no part
/// in the updates or the ELBO, and their factors are the forward-propagated moments of their parents'
/// factors.
class MeanFieldEngine {
 public:
  /// `structure` provides variables, parents and signatures; its CPDs are not read. Both arguments
  /// must outlive the engine.
  MeanFieldEngine(const BayesianNetwork& structure, std::span<const FactorMoments> moments);

  /// Resets every factor: evidence entries become point masses, NaN entries latent.
  void set_evidence(std::span<const double> values);
  /// Uniform discrete factors; Gaussian factors at the prior-predictive mean with unit variance.
  void initialize_default();
  /// Random discrete factors and Gaussian factors with N(0,1)-drawn means and unit variance.
  void initialize_random(Rng& rng);
  void set_discrete(VarId id, std::span<const double> probabilities);
  void set_gaussian(VarId id, double mean, double variance);

  void update(VarId id);
  /// One update of every latent variable in topological order.
  void sweep();
  /// Sweeps until the relative ELBO change drops below `rel_tol` or `max_iterations` is reached.
  SweepResult run(int max_iterations, double rel_tol);

  /// Replaces the factorized Gaussian block by the joint Gaussian over all latent continuous variables
  /// that is optimal given the current discrete factors (means included). Learning calls it after
  /// local inference so that statistics keep the posterior correlations between latent parents and
  /// children. Any later update or reset drops the coupling. No-op above kMaxCoupled variables.
  void couple_gaussians();
  [[nodiscard]] bool coupled() const noexcept { return coupled_; }
  /// Posterior covariance; zero between distinct variables unless coupled.
  [[nodiscard]] double covariance(VarId a, VarId b) const;

  static constexpr std::size_t kMaxCoupled = 64;

  [[nodiscard]] double elbo() const;
  [[nodiscard]] double expected_log_factor(VarId id) const;
  [[nodiscard]] double entropy(VarId id) const;
  [[nodiscard]] double total_entropy() const;

  [[nodiscard]] bool observed(VarId id) const { return observed_[static_cast<std::size_t>(id)]; }
  [[nodiscard]] bool barren(VarId id) const { return barren_[static_cast<std::size_t>(id)]; }
  /// True when some unobserved variable is not barren.
  [[nodiscard]] bool has_latent() const noexcept { return !latent_order_.empty(); }
  [[nodiscard]] const std::vector<double>& probabilities(VarId id) const { return probs_[static_cast<std::size_t>(id)]; }
  [[nodiscard]] double mean(VarId id) const { return mean_[static_cast<std::size_t>(id)]; }
  [[nodiscard]] double variance(VarId id) const { return var_[static_cast<std::size_t>(id)]; }
  [[nodiscard]] double second_moment(VarId id) const {
    const auto i = static_cast<std::size_t>(id);
    return mean_[i] * mean_[i] + var_[i];
  }
  [[nodiscard]] const BayesianNetwork& structure() const noexcept { return bn_; }

  /// Calls f(config_index, weight) for every discrete-parent configuration of `id` with non-zero
  /// weight under the current factors. When `fixed_pos` names a discrete-parent position, that
  /// parent is pinned to `fixed_state` with weight 1.
  template <class F>
  void for_each_config(VarId id, F&& f, std::size_t fixed_pos = npos, int fixed_state = 0) const {
    const auto& sig = bn_.signature(id);
    enumerate(sig, 0, 0, 1.0, fixed_pos, fixed_state, f);
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

 private:
  template <class F>
  void enumerate(const ParentSignature& sig, std::size_t pos, std::size_t cfg, double w, std::size_t fixed_pos,
                 int fixed_state, F& f) const {
    if (pos == sig.discrete.size()) {
      f(cfg, w);
      return;
    }
    if (pos == fixed_pos) {
      enumerate(sig, pos + 1, cfg + sig.strides[pos] * static_cast<std::size_t>(fixed_state), w, fixed_pos,
                fixed_state, f);
      return;
    }
    const auto& q = probs_[static_cast<std::size_t>(sig.discrete[pos])];
    for (std::size_t k = 0; k < q.size(); ++k)
      if (q[k] > 0.0) enumerate(sig, pos + 1, cfg + sig.strides[pos] * k, w * q[k], fixed_pos, fixed_state, f);
  }

  /// E[tau (x_id - alpha - beta^T x_C)^2] at one configuration.
  [[nodiscard]] double expected_scaled_residual(VarId id, std::size_t cfg) const;
  [[nodiscard]] double gaussian_log_term(VarId id, std::size_t cfg) const;
  [[nodiscard]] double discrete_log_term(VarId id, std::size_t cfg) const;
  void update_discrete(VarId id);
  void update_gaussian(VarId id);
  void propagate_barren();

  const BayesianNetwork& bn_;
  std::span<const FactorMoments> moments_;
  std::vector<bool> observed_;
  std::vector<std::vector<double>> probs_;
  std::vector<double> mean_;
  std::vector<double> var_;
  std::vector<VarId> latent_order_;
  std::vector<bool> barren_;
  std::vector<VarId> barren_order_;
  // (child, position of the parent within the child's discrete or continuous parent list)
  std::vector<std::vector<std::pair<VarId, std::size_t>>> child_slots_;
  std::vector<double> logits_;
  bool coupled_ = false;
  std::vector<int> joint_pos_;
  std::vector<VarId> joint_ids_;
  std::vector<double> joint_cov_;
  double joint_entropy_ = 0.0;
};

}  // namespace streambayes
