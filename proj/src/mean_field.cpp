#include "streambayes/mean_field.hpp"

#include <algorithm>
#include <cmath>

#include "streambayes/error.hpp"
#include "streambayes/special_functions.hpp"

namespace streambayes {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

FactorMoments point_moments(const ConditionalDistribution& cpd) {
  FactorMoments m;
  if (!is_normal_kind(cpd.kind)) {
    m.log_rows.reserve(cpd.rows.size());
    for (const auto& row : cpd.rows) {
      std::vector<double> lr;
      lr.reserve(row.size());
      for (double p : row) lr.push_back(std::log(p));
      m.log_rows.push_back(std::move(lr));
    }
    return m;
  }
  m.gaussians.reserve(cpd.gaussians.size());
  for (const auto& g : cpd.gaussians) {
    GaussianFactorMoments gm;
    gm.e_tau = 1.0 / g.variance;
    gm.e_tau_alpha = g.intercept / g.variance;
    gm.e_tau_alpha2 = g.intercept * g.intercept / g.variance;
    gm.e_log_tau = -std::log(g.variance);
    gm.e_beta = g.coeffs;
    for (double b : g.coeffs) gm.e_beta2.push_back(b * b);
    m.gaussians.push_back(std::move(gm));
  }
  return m;
}

std::vector<FactorMoments> point_moments(const BayesianNetwork& bn) {
  std::vector<FactorMoments> out;
  out.reserve(bn.size());
  for (const auto& cpd : bn.cpds()) out.push_back(point_moments(cpd));
  return out;
}

MeanFieldEngine::MeanFieldEngine(const BayesianNetwork& structure, std::span<const FactorMoments> moments)
    : bn_(structure), moments_(moments) {
  const std::size_t n = bn_.size();
  if (moments_.size() != n) fail(ErrorCode::InvalidParameter, "one FactorMoments per variable is required");
  observed_.assign(n, false);
  barren_.assign(n, false);
  probs_.resize(n);
  mean_.assign(n, 0.0);
  var_.assign(n, 1.0);
  child_slots_.resize(n);
  for (VarId c = 0; c < static_cast<VarId>(n); ++c) {
    const auto& sig = bn_.signature(c);
    for (std::size_t p = 0; p < sig.discrete.size(); ++p)
      child_slots_[static_cast<std::size_t>(sig.discrete[p])].emplace_back(c, p);
    for (std::size_t p = 0; p < sig.continuous.size(); ++p)
      child_slots_[static_cast<std::size_t>(sig.continuous[p])].emplace_back(c, p);
  }
  joint_pos_.assign(n, -1);
  for (VarId v = 0; v < static_cast<VarId>(n); ++v)
    if (bn_.variable(v).is_finite()) probs_[static_cast<std::size_t>(v)].assign(static_cast<std::size_t>(bn_.variable(v).space.cardinality()), 0.0);
}

void MeanFieldEngine::set_evidence(std::span<const double> values) {
  if (values.size() != bn_.size()) fail(ErrorCode::InvalidParameter, "evidence size does not match the network");
  coupled_ = false;
  latent_order_.clear();
  barren_order_.clear();
  const auto& topo = bn_.topological_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const auto i = static_cast<std::size_t>(*it);
    observed_[i] = !is_missing(values[i]);
    barren_[i] = !observed_[i] && std::all_of(bn_.children(*it).begin(), bn_.children(*it).end(),
                                              [&](VarId c) { return barren_[static_cast<std::size_t>(c)]; });
  }
  for (VarId v : topo) {
    const auto i = static_cast<std::size_t>(v);
    const double x = values[i];
    if (barren_[i]) {
      barren_order_.push_back(v);
      continue;
    }
    if (!observed_[i]) {
      latent_order_.push_back(v);
      continue;
    }
    if (bn_.variable(v).is_finite()) {
      std::fill(probs_[i].begin(), probs_[i].end(), 0.0);
      probs_[i].at(static_cast<std::size_t>(x)) = 1.0;
    } else {
      mean_[i] = x;
      var_[i] = 0.0;
    }
  }
}

void MeanFieldEngine::initialize_default() {
  coupled_ = false;
  for (VarId v : latent_order_) {
    const auto i = static_cast<std::size_t>(v);
    if (bn_.variable(v).is_finite()) {
      std::fill(probs_[i].begin(), probs_[i].end(), 1.0 / static_cast<double>(probs_[i].size()));
      continue;
    }
    // Prior-predictive mean under the factors initialized so far (topological order).
    const auto& sig = bn_.signature(v);
    const auto& gms = moments_[i].gaussians;
    double m = 0.0;
    for_each_config(v, [&](std::size_t cfg, double w) {
      const auto& gm = gms[cfg];
      double mu = gm.e_tau_alpha / gm.e_tau;
      for (std::size_t j = 0; j < sig.continuous.size(); ++j) mu += gm.e_beta[j] * mean_[static_cast<std::size_t>(sig.continuous[j])];
      m += w * mu;
    });
    mean_[i] = m;
    var_[i] = 1.0;
  }
  propagate_barren();
}

void MeanFieldEngine::initialize_random(Rng& rng) {
  coupled_ = false;
  for (VarId v : latent_order_) {
    const auto i = static_cast<std::size_t>(v);
    if (bn_.variable(v).is_finite()) {
      double total = 0.0;
      for (double& p : probs_[i]) total += (p = 0.05 + rng.uniform());
      for (double& p : probs_[i]) p /= total;
    } else {
      mean_[i] = rng.normal();
      var_[i] = 1.0;
    }
  }
  propagate_barren();
}

void MeanFieldEngine::set_discrete(VarId id, std::span<const double> probabilities) {
  auto& q = probs_.at(static_cast<std::size_t>(id));
  if (probabilities.size() != q.size()) fail(ErrorCode::InvalidParameter, "probability vector has the wrong length");
  coupled_ = false;
  std::copy(probabilities.begin(), probabilities.end(), q.begin());
}

void MeanFieldEngine::set_gaussian(VarId id, double mean, double variance) {
  coupled_ = false;
  mean_.at(static_cast<std::size_t>(id)) = mean;
  var_.at(static_cast<std::size_t>(id)) = variance;
}

double MeanFieldEngine::expected_scaled_residual(VarId id, std::size_t cfg) const {
  const auto& sig = bn_.signature(id);
  const auto& gm = moments_[static_cast<std::size_t>(id)].gaussians[cfg];
  const auto i = static_cast<std::size_t>(id);
  double eu = mean_[i];
  double spread = var_[i];
  for (std::size_t j = 0; j < sig.continuous.size(); ++j) {
    const auto p = static_cast<std::size_t>(sig.continuous[j]);
    const double m = mean_[p];
    eu -= gm.e_beta[j] * m;
    spread += gm.e_beta2[j] * (m * m + var_[p]) - gm.e_beta[j] * gm.e_beta[j] * m * m;
  }
  if (coupled_) {
    for (std::size_t j = 0; j < sig.continuous.size(); ++j) {
      spread -= 2.0 * gm.e_beta[j] * covariance(id, sig.continuous[j]);
      for (std::size_t l = 0; l < sig.continuous.size(); ++l)
        if (l != j) spread += gm.e_beta[j] * gm.e_beta[l] * covariance(sig.continuous[j], sig.continuous[l]);
    }
  }
  const double eu2 = eu * eu + spread;
  return gm.e_tau * eu2 - 2.0 * gm.e_tau_alpha * eu + gm.e_tau_alpha2;
}

double MeanFieldEngine::gaussian_log_term(VarId id, std::size_t cfg) const {
  const auto& gm = moments_[static_cast<std::size_t>(id)].gaussians[cfg];
  return 0.5 * gm.e_log_tau - 0.5 * kLog2Pi - 0.5 * expected_scaled_residual(id, cfg);
}

double MeanFieldEngine::discrete_log_term(VarId id, std::size_t cfg) const {
  const auto& q = probs_[static_cast<std::size_t>(id)];
  const auto& row = moments_[static_cast<std::size_t>(id)].log_rows[cfg];
  double s = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k)
    if (q[k] > 0.0) s += q[k] * row[k];
  return s;
}

void MeanFieldEngine::update_discrete(VarId id) {
  const auto i = static_cast<std::size_t>(id);
  const std::size_t card = probs_[i].size();
  logits_.assign(card, 0.0);
  const auto& rows = moments_[i].log_rows;
  for_each_config(id, [&](std::size_t cfg, double w) {
    for (std::size_t k = 0; k < card; ++k) logits_[k] += w * rows[cfg][k];
  });
  for (const auto& [child, pos] : child_slots_[i]) {
    if (barren_[static_cast<std::size_t>(child)]) continue;
    const bool finite_child = bn_.variable(child).is_finite();
    for (std::size_t k = 0; k < card; ++k) {
      if (logits_[k] == kNegInf) continue;
      double acc = 0.0;
      for_each_config(
          child,
          [&](std::size_t cfg, double w) {
            acc += w * (finite_child ? discrete_log_term(child, cfg) : gaussian_log_term(child, cfg));
          },
          pos, static_cast<int>(k));
      logits_[k] += acc;
    }
  }
  const double z = log_sum_exp(logits_);
  if (!std::isfinite(z))
    fail(ErrorCode::Numerical, "no state of '" + bn_.variable(id).name + "' is compatible with the evidence");
  for (std::size_t k = 0; k < card; ++k) probs_[i][k] = std::exp(logits_[k] - z);
}

void MeanFieldEngine::update_gaussian(VarId id) {
  const auto i = static_cast<std::size_t>(id);
  const auto& sig = bn_.signature(id);
  double eta1 = 0.0, eta2 = 0.0;
  const auto& gms = moments_[i].gaussians;
  for_each_config(id, [&](std::size_t cfg, double w) {
    const auto& gm = gms[cfg];
    double lin = 0.0;
    for (std::size_t j = 0; j < sig.continuous.size(); ++j) lin += gm.e_beta[j] * mean_[static_cast<std::size_t>(sig.continuous[j])];
    eta1 += w * (gm.e_tau_alpha + gm.e_tau * lin);
    eta2 -= w * 0.5 * gm.e_tau;
  });
  for (const auto& [child, pos] : child_slots_[i]) {
    if (barren_[static_cast<std::size_t>(child)]) continue;
    const auto& csig = bn_.signature(child);
    const auto& cgms = moments_[static_cast<std::size_t>(child)].gaussians;
    const double child_mean = mean_[static_cast<std::size_t>(child)];
    for_each_config(child, [&](std::size_t cfg, double w) {
      const auto& gm = cgms[cfg];
      double rest = 0.0;
      for (std::size_t l = 0; l < csig.continuous.size(); ++l)
        if (l != pos) rest += gm.e_beta[l] * mean_[static_cast<std::size_t>(csig.continuous[l])];
      eta1 += w * gm.e_beta[pos] * (gm.e_tau * (child_mean - rest) - gm.e_tau_alpha);
      eta2 -= w * 0.5 * gm.e_tau * gm.e_beta2[pos];
    });
  }
  if (!(eta2 < 0.0) || !std::isfinite(eta1))
    fail(ErrorCode::Numerical, "Gaussian factor of '" + bn_.variable(id).name + "' lost positive precision");
  var_[i] = -0.5 / eta2;
  mean_[i] = eta1 * var_[i];
}

void MeanFieldEngine::propagate_barren() {
  for (VarId v : barren_order_) {
    const auto i = static_cast<std::size_t>(v);
    if (bn_.variable(v).is_finite()) {
      auto& q = probs_[i];
      std::fill(q.begin(), q.end(), 0.0);
      const auto& rows = moments_[i].log_rows;
      for_each_config(v, [&](std::size_t cfg, double w) {
        const double z = log_sum_exp(rows[cfg]);
        for (std::size_t k = 0; k < q.size(); ++k) q[k] += w * std::exp(rows[cfg][k] - z);
      });
      continue;
    }
    // Mixture over configurations, matched in mean and variance.
    const auto& sig = bn_.signature(v);
    const auto& gms = moments_[i].gaussians;
    double m1 = 0.0, m2 = 0.0;
    for_each_config(v, [&](std::size_t cfg, double w) {
      const auto& gm = gms[cfg];
      double mu = gm.e_tau_alpha / gm.e_tau;
      double var = 1.0 / gm.e_tau;
      for (std::size_t j = 0; j < sig.continuous.size(); ++j) {
        const auto p = static_cast<std::size_t>(sig.continuous[j]);
        mu += gm.e_beta[j] * mean_[p];
        var += gm.e_beta2[j] * (mean_[p] * mean_[p] + var_[p]) - gm.e_beta[j] * gm.e_beta[j] * mean_[p] * mean_[p];
      }
      m1 += w * mu;
      m2 += w * (var + mu * mu);
    });
    mean_[i] = m1;
    var_[i] = std::max(m2 - m1 * m1, 0.0);
  }
}

void MeanFieldEngine::update(VarId id) {
  if (observed(id) || barren(id)) return;
  coupled_ = false;
  if (bn_.variable(id).is_finite()) update_discrete(id);
  else update_gaussian(id);
}

void MeanFieldEngine::sweep() {
  for (VarId v : latent_order_) update(v);
  propagate_barren();
}

double MeanFieldEngine::expected_log_factor(VarId id) const {
  double total = 0.0;
  const bool finite = bn_.variable(id).is_finite();
  for_each_config(id, [&](std::size_t cfg, double w) {
    total += w * (finite ? discrete_log_term(id, cfg) : gaussian_log_term(id, cfg));
  });
  return total;
}

double MeanFieldEngine::entropy(VarId id) const {
  if (observed(id) || barren(id)) return 0.0;
  const auto i = static_cast<std::size_t>(id);
  if (bn_.variable(id).is_finite()) {
    double h = 0.0;
    for (double p : probs_[i])
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }
  return 0.5 * (kLog2Pi + 1.0 + std::log(var_[i]));
}

double MeanFieldEngine::total_entropy() const {
  double h = coupled_ ? joint_entropy_ : 0.0;
  for (VarId v : latent_order_)
    if (!coupled_ || joint_pos_[static_cast<std::size_t>(v)] < 0) h += entropy(v);
  return h;
}

double MeanFieldEngine::covariance(VarId a, VarId b) const {
  if (a == b) return var_[static_cast<std::size_t>(a)];
  if (!coupled_) return 0.0;
  const int pa = joint_pos_[static_cast<std::size_t>(a)], pb = joint_pos_[static_cast<std::size_t>(b)];
  if (pa < 0 || pb < 0) return 0.0;
  return joint_cov_[static_cast<std::size_t>(pa) * joint_ids_.size() + static_cast<std::size_t>(pb)];
}

void MeanFieldEngine::couple_gaussians() {
  for (VarId v : joint_ids_) joint_pos_[static_cast<std::size_t>(v)] = -1;
  joint_ids_.clear();
  coupled_ = false;
  for (VarId v : latent_order_)
    if (!bn_.variable(v).is_finite()) {
      joint_pos_[static_cast<std::size_t>(v)] = static_cast<int>(joint_ids_.size());
      joint_ids_.push_back(v);
    }
  const std::size_t k = joint_ids_.size();
  // One latent Gaussian is already exact; too many would make the dense solve dominate.
  if (k < 2 || k > kMaxCoupled) return;

  // Natural parameters of the joint: -1/2 x'Lx + h'x, summed over every non-barren Gaussian factor.
  std::vector<double> lam(k * k, 0.0), h(k, 0.0);
  std::vector<VarId> ids;
  std::vector<double> coef;
  for (VarId v = 0; v < static_cast<VarId>(bn_.size()); ++v) {
    if (barren(v) || bn_.variable(v).is_finite()) continue;
    const auto& sig = bn_.signature(v);
    ids.assign(1, v);
    ids.insert(ids.end(), sig.continuous.begin(), sig.continuous.end());
    const auto& gms = moments_[static_cast<std::size_t>(v)].gaussians;
    for_each_config(v, [&](std::size_t cfg, double w) {
      const auto& gm = gms[cfg];
      // Residual x_v - alpha - beta'x_C, written as coef'z with z = (x_v, x_C).
      coef.assign(1, 1.0);
      for (double b : gm.e_beta) coef.push_back(-b);
      const auto second = [&](std::size_t a, std::size_t b) {
        if (a == b) return a == 0 ? 1.0 : gm.e_beta2[a - 1];
        return coef[a] * coef[b];
      };
      for (std::size_t a = 0; a < ids.size(); ++a) {
        const int pa = joint_pos_[static_cast<std::size_t>(ids[a])];
        if (pa < 0) continue;
        h[static_cast<std::size_t>(pa)] += w * gm.e_tau_alpha * coef[a];
        for (std::size_t b = 0; b < ids.size(); ++b) {
          const int pb = joint_pos_[static_cast<std::size_t>(ids[b])];
          const double m = w * gm.e_tau * second(a, b);
          if (pb >= 0) lam[static_cast<std::size_t>(pa) * k + static_cast<std::size_t>(pb)] += m;
          else h[static_cast<std::size_t>(pa)] -= m * mean_[static_cast<std::size_t>(ids[b])];
        }
      }
    });
  }

  // Cholesky L L' = lam, then the inverse column by column.
  std::vector<double> chol(k * k, 0.0);
  double log_det = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double d = lam[j * k + j];
    for (std::size_t l = 0; l < j; ++l) d -= chol[j * k + l] * chol[j * k + l];
    if (!(d > 0.0) || !std::isfinite(d)) return;  // keep the factorized solution
    chol[j * k + j] = std::sqrt(d);
    log_det += std::log(d);
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = lam[i * k + j];
      for (std::size_t l = 0; l < j; ++l) s -= chol[i * k + l] * chol[j * k + l];
      chol[i * k + j] = s / chol[j * k + j];
    }
  }
  const auto solve = [&](std::vector<double> y) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t l = 0; l < i; ++l) y[i] -= chol[i * k + l] * y[l];
      y[i] /= chol[i * k + i];
    }
    for (std::size_t i = k; i-- > 0;) {
      for (std::size_t l = i + 1; l < k; ++l) y[i] -= chol[l * k + i] * y[l];
      y[i] /= chol[i * k + i];
    }
    return y;
  };
  joint_cov_.assign(k * k, 0.0);
  std::vector<double> e(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const auto col = solve(e);
    for (std::size_t i = 0; i < k; ++i) joint_cov_[i * k + j] = col[i];
  }
  const auto mu = solve(h);
  for (std::size_t i = 0; i < k; ++i) {
    const auto v = static_cast<std::size_t>(joint_ids_[i]);
    mean_[v] = mu[i];
    var_[v] = joint_cov_[i * k + i];
  }
  joint_entropy_ = 0.5 * (static_cast<double>(k) * (kLog2Pi + 1.0) - log_det);
  coupled_ = true;
  propagate_barren();
}

double MeanFieldEngine::elbo() const {
  double total = total_entropy();
  for (VarId v = 0; v < static_cast<VarId>(bn_.size()); ++v)
    if (!barren(v)) total += expected_log_factor(v);
  return total;
}

SweepResult MeanFieldEngine::run(int max_iterations, double rel_tol) {
  SweepResult result;
  double previous = elbo();
  if (latent_order_.empty()) {
    if (!std::isfinite(previous)) fail(ErrorCode::Numerical, "ELBO is not finite");
    result.elbo_trace.push_back(previous);
    result.converged = true;
    return result;
  }
  for (int it = 0; it < max_iterations; ++it) {
    sweep();
    const double current = elbo();
    if (!std::isfinite(current)) fail(ErrorCode::Numerical, "ELBO is not finite");
    result.elbo_trace.push_back(current);
    result.iterations = it + 1;
    if (std::isfinite(previous) && std::abs(current - previous) <= rel_tol * std::abs(current)) {
      result.converged = true;
      break;
    }
    previous = current;
  }
  return result;
}

}  // namespace streambayes
