#include "streambayes/learning.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "streambayes/error.hpp"
#include "streambayes/special_functions.hpp"
#include "learning_internal.hpp"

namespace streambayes {

namespace {

// Coupled intercept/precision and coefficient factors are alternated until this relative change.
constexpr double kBlockTol = 1e-14;
constexpr int kBlockMaxIterations = 500;

std::size_t gaussian_stride(std::size_t d) { return 1 + d; }
std::size_t moment_dim(std::size_t d) { return d + 2; }

bool relative_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

struct NormalGammaMoments {
  double e_tau, e_tau_alpha, e_tau_alpha2, e_log_tau;
};

NormalGammaMoments ng_moments(const EFDistribution& ng) {
  const auto m = ng.moment();  // (mu0, kappa, a, b)
  const double e_tau = m[2] / m[3];
  return {e_tau, m[0] * e_tau, 1.0 / m[1] + m[0] * m[0] * e_tau, digamma(m[2]) - std::log(m[3])};
}

// Local inference for `rows` against frozen `moments`, statistics summed in chunk order.
BatchStatistics local_step(const LearnableModel& m, std::span<const FactorMoments> moments,
                           std::span<const DataInstance> rows, int workers, const LearningConfig& cfg) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  std::vector<BatchStatistics> partial(w, m.empty_statistics());
  detail::fan_out(rows.size(), workers, [&](std::size_t k, std::size_t begin, std::size_t end) {
    MeanFieldEngine engine(m.structure(), moments);
    for (std::size_t i = begin; i < end; ++i) {
      engine.set_evidence(rows[i]);
      if (engine.has_latent()) {
        engine.initialize_default();
        engine.run(cfg.local_vmp.max_iterations, cfg.local_vmp.elbo_rel_tol);
        engine.couple_gaussians();
      }
      m.accumulate(engine, partial[k]);
    }
  });
  BatchStatistics total = std::move(partial[0]);
  for (std::size_t k = 1; k < w; ++k) total += partial[k];
  return total;
}

std::vector<ParameterBlock> blend(const std::vector<ParameterBlock>& cur, const std::vector<ParameterBlock>& target,
                                  double rho) {
  std::vector<ParameterBlock> out;
  out.reserve(cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i) {
    const auto& a = cur[i].distribution.natural();
    const auto& b = target[i].distribution.natural();
    std::vector<double> eta(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) eta[k] = (1.0 - rho) * a[k] + rho * b[k];
    ParameterBlock blk = cur[i];
    blk.distribution = EFDistribution(cur[i].distribution.family(), std::move(eta));
    out.push_back(std::move(blk));
  }
  return out;
}

// Statistics are PSD by construction, so an invalid update means the numbers ran away.
EFDistribution checked(Family f, std::vector<double> eta, const std::string& variable) {
  try {
    return EFDistribution(f, std::move(eta));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Domain) throw;
    fail(ErrorCode::Numerical, "parameter update for '" + variable + "' left its domain: " + e.what());
  }
}

const char* role_name(BlockRole r) {
  switch (r) {
    case BlockRole::Table: return "table";
    case BlockRole::InterceptPrecision: return "intercept_precision";
    case BlockRole::Coefficient: return "coefficient";
  }
  return "?";
}

}  // namespace

namespace detail {

void check_rows(const LearnableModel& m, std::span<const DataInstance> rows) {
  const auto& bn = m.structure();
  for (const auto& row : rows) {
    if (row.size() != bn.size())
      fail(ErrorCode::Schema, "instance has " + std::to_string(row.size()) + " values; the model has " +
                                  std::to_string(bn.size()) + " variables");
    for (const auto& v : bn.variables()) {
      const double x = row[static_cast<std::size_t>(v.id)];
      if (is_missing(x)) continue;
      if (v.is_finite() ? (x != std::floor(x) || x < 0 || x >= v.space.cardinality()) : !std::isfinite(x))
        fail(ErrorCode::Schema, "value " + format_double(x) + " is outside the domain of '" + v.name + "'");
    }
  }
}

}  // namespace detail

void LearningConfig::validate() const {
  if (batch_size < 1) fail(ErrorCode::Config, "batch_size must be positive");
  if (worker_count < 1) fail(ErrorCode::Config, "worker_count must be positive");
  if (max_global_iterations < 1) fail(ErrorCode::Config, "max_global_iterations must be positive");
  if (!(global_rel_tol > 0.0)) fail(ErrorCode::Config, "global_rel_tol must be positive");
  local_vmp.validate();
  if (svi) {
    if (!(svi->kappa > 0.5 && svi->kappa <= 1.0)) fail(ErrorCode::Config, "SVI kappa must lie in (0.5, 1]");
    if (!(svi->tau >= 0.0)) fail(ErrorCode::Config, "SVI tau must be non-negative");
    if (svi->total_n < 0) fail(ErrorCode::Config, "SVI total_n must be non-negative");
  }
}

BatchStatistics& BatchStatistics::operator+=(const BatchStatistics& other) {
  if (values.size() != other.values.size()) fail(ErrorCode::InvalidParameter, "statistics shapes differ");
  for (std::size_t v = 0; v < values.size(); ++v)
    for (std::size_t k = 0; k < values[v].size(); ++k) values[v][k] += other.values[v][k];
  entropy += other.entropy;
  external += other.external;
  instances += other.instances;
  any_latent = any_latent || other.any_latent;
  return *this;
}

LearnableModel::LearnableModel(BayesianNetwork structure, const PriorSpec& priors) : structure_(std::move(structure)) {
  require_valid(structure_);
  const auto& vars = structure_.variables();
  if (std::none_of(vars.begin(), vars.end(), [](const Variable& v) { return v.role == Role::Observable; }))
    fail(ErrorCode::EmptyModel, "the model has no observable variables");
  fixed_.assign(structure_.size(), false);
  external_.assign(structure_.size(), false);
  for (const auto& name : priors.fixed) fixed_[static_cast<std::size_t>(vars.id_of(name))] = true;
  for (const auto& name : priors.external) {
    const auto i = static_cast<std::size_t>(vars.id_of(name));
    if (!structure_.parents(static_cast<VarId>(i)).empty())
      fail(ErrorCode::Structure, "external variable '" + name + "' must be a root");
    fixed_[i] = external_[i] = true;
  }

  const auto& d = priors.defaults;
  offset_.assign(structure_.size(), 0);
  for (const auto& v : vars) {
    offset_[static_cast<std::size_t>(v.id)] = prior_.size();
    if (fixed_[static_cast<std::size_t>(v.id)]) continue;
    const auto& sig = structure_.signature(v.id);
    for (std::size_t c = 0; c < sig.config_count; ++c) {
      if (v.is_finite()) {
        const std::vector<double> alpha(static_cast<std::size_t>(v.space.cardinality()), d.dirichlet_alpha);
        prior_.push_back({v.id, c, BlockRole::Table, -1, EFDistribution::dirichlet(alpha)});
        continue;
      }
      prior_.push_back({v.id, c, BlockRole::InterceptPrecision, -1,
                        EFDistribution::normal_gamma(d.normal_mean, d.normal_kappa, d.gamma_shape, d.gamma_rate)});
      for (std::size_t j = 0; j < sig.continuous.size(); ++j)
        prior_.push_back({v.id, c, BlockRole::Coefficient, static_cast<int>(j),
                          EFDistribution::gaussian(d.coefficient_mean, d.coefficient_variance)});
    }
  }

  for (const auto& o : priors.overrides) {
    const VarId id = vars.id_of(o.variable);
    bool matched = false;
    for (auto& blk : prior_) {
      if (blk.variable != id || (o.config && *o.config != blk.config) || blk.coefficient != o.coefficient) continue;
      if (blk.distribution.family() != o.prior.family() || blk.distribution.dimension() != o.prior.dimension())
        fail(ErrorCode::Conjugacy, "prior override for '" + o.variable + "' is a " + family_name(o.prior.family()) +
                                       " of dimension " + std::to_string(o.prior.dimension()) + "; the block needs a " +
                                       family_name(blk.distribution.family()) + " of dimension " +
                                       std::to_string(blk.distribution.dimension()));
      blk.distribution = o.prior;
      matched = true;
    }
    if (!matched) fail(ErrorCode::Conjugacy, "prior override for '" + o.variable + "' matches no parameter block");
  }
  posterior_ = prior_;
}

std::vector<FactorMoments> LearnableModel::moments(const std::vector<ParameterBlock>& blocks) const {
  std::vector<FactorMoments> out(structure_.size());
  for (const auto& v : structure_.variables()) {
    auto& fm = out[static_cast<std::size_t>(v.id)];
    if (fixed_[static_cast<std::size_t>(v.id)]) {
      fm = point_moments(structure_.cpd(v.id));
      continue;
    }
    const auto& sig = structure_.signature(v.id);
    const std::size_t off = offset_[static_cast<std::size_t>(v.id)];
    if (v.is_finite()) {
      for (std::size_t c = 0; c < sig.config_count; ++c) {
        const auto& eta = blocks[off + c].distribution.natural();
        double total = 0.0;
        for (double e : eta) total += e + 1.0;
        const double dg = digamma(total);
        std::vector<double> row;
        row.reserve(eta.size());
        for (double e : eta) row.push_back(digamma(e + 1.0) - dg);
        fm.log_rows.push_back(std::move(row));
      }
      continue;
    }
    const std::size_t d = sig.continuous.size();
    for (std::size_t c = 0; c < sig.config_count; ++c) {
      const std::size_t base = off + c * gaussian_stride(d);
      const auto ng = ng_moments(blocks[base].distribution);
      GaussianFactorMoments gm{ng.e_tau, ng.e_tau_alpha, ng.e_tau_alpha2, ng.e_log_tau, {}, {}};
      for (std::size_t j = 0; j < d; ++j) {
        const auto mv = blocks[base + 1 + j].distribution.moment();
        gm.e_beta.push_back(mv[0]);
        gm.e_beta2.push_back(mv[0] * mv[0] + mv[1]);
      }
      fm.gaussians.push_back(std::move(gm));
    }
  }
  return out;
}

std::vector<FactorMoments> LearnableModel::sampled_moments(const std::vector<ParameterBlock>& blocks, Rng& rng) const {
  auto out = moments(blocks);
  for (const auto& v : structure_.variables()) {
    if (fixed_[static_cast<std::size_t>(v.id)]) continue;
    auto& fm = out[static_cast<std::size_t>(v.id)];
    const auto& sig = structure_.signature(v.id);
    const std::size_t off = offset_[static_cast<std::size_t>(v.id)];
    if (v.is_finite()) {
      for (std::size_t c = 0; c < sig.config_count; ++c) {
        const auto& eta = blocks[off + c].distribution.natural();
        std::vector<double> g;
        double total = 0.0;
        for (double e : eta) total += g.emplace_back(std::max(rng.gamma(e + 1.0), 1e-300));
        for (std::size_t k = 0; k < g.size(); ++k) fm.log_rows[c][k] = std::log(g[k] / total);
      }
      continue;
    }
    const std::size_t d = sig.continuous.size();
    for (std::size_t c = 0; c < sig.config_count; ++c) {
      const std::size_t base = off + c * gaussian_stride(d);
      const auto p = blocks[base].distribution.moment();  // (mu0, kappa, a, b)
      const double tau = std::max(rng.gamma(p[2]) / p[3], 1e-300);
      const double alpha = rng.normal(p[0], 1.0 / (p[1] * tau));
      auto& gm = fm.gaussians[c];
      gm.e_tau = tau;
      gm.e_tau_alpha = tau * alpha;
      gm.e_tau_alpha2 = tau * alpha * alpha;
      gm.e_log_tau = std::log(tau);
      for (std::size_t j = 0; j < d; ++j) {
        const auto mv = blocks[base + 1 + j].distribution.moment();
        const double beta = rng.normal(mv[0], mv[1]);
        gm.e_beta[j] = beta;
        gm.e_beta2[j] = beta * beta;
      }
    }
  }
  return out;
}

BatchStatistics LearnableModel::empty_statistics() const {
  BatchStatistics s;
  s.values.resize(structure_.size());
  for (const auto& v : structure_.variables()) {
    const auto& sig = structure_.signature(v.id);
    const std::size_t per = v.is_finite() ? static_cast<std::size_t>(v.space.cardinality())
                                          : moment_dim(sig.continuous.size()) * moment_dim(sig.continuous.size());
    s.values[static_cast<std::size_t>(v.id)].assign(sig.config_count * per, 0.0);
  }
  return s;
}

void LearnableModel::accumulate(const MeanFieldEngine& engine, BatchStatistics& stats) const {
  std::vector<double> mean, second;
  std::vector<VarId> ids;
  for (const auto& v : structure_.variables()) {
    if (external_[static_cast<std::size_t>(v.id)]) {
      stats.external += engine.expected_log_factor(v.id);
      continue;
    }
    if (engine.barren(v.id)) continue;  // integrates out; carries no information about theta
    auto& out = stats.values[static_cast<std::size_t>(v.id)];
    const auto& sig = structure_.signature(v.id);
    if (v.is_finite()) {
      const auto& q = engine.probabilities(v.id);
      const std::size_t k = q.size();
      engine.for_each_config(v.id, [&](std::size_t cfg, double w) {
        for (std::size_t s = 0; s < k; ++s) out[cfg * k + s] += w * q[s];
      });
      continue;
    }
    const std::size_t d = sig.continuous.size();
    const std::size_t dim = moment_dim(d);
    // E[z z'] for z = (1, parents..., x); covariances vanish unless the engine is coupled.
    ids.assign(sig.continuous.begin(), sig.continuous.end());
    ids.push_back(v.id);
    mean.assign(dim, 1.0);
    for (std::size_t j = 0; j < ids.size(); ++j) mean[1 + j] = engine.mean(ids[j]);
    second.assign(dim * dim, 0.0);
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b)
        second[a * dim + b] = mean[a] * mean[b] + (a && b ? engine.covariance(ids[a - 1], ids[b - 1]) : 0.0);
    engine.for_each_config(v.id, [&](std::size_t cfg, double w) {
      double* mat = out.data() + cfg * dim * dim;
      for (std::size_t a = 0; a < dim * dim; ++a) mat[a] += w * second[a];
    });
  }
  stats.entropy += engine.total_entropy();
  stats.instances += 1.0;
  stats.any_latent = stats.any_latent || engine.has_latent();
}

std::vector<ParameterBlock> LearnableModel::conjugate_update(const std::vector<ParameterBlock>& base,
                                                             const std::vector<ParameterBlock>& current,
                                                             const BatchStatistics& stats, double scale) const {
  std::vector<ParameterBlock> out = current;
  for (const auto& v : structure_.variables()) {
    if (fixed_[static_cast<std::size_t>(v.id)]) continue;
    const auto& sig = structure_.signature(v.id);
    const std::size_t off = offset_[static_cast<std::size_t>(v.id)];
    const auto& sv = stats.values[static_cast<std::size_t>(v.id)];
    if (v.is_finite()) {
      const auto k = static_cast<std::size_t>(v.space.cardinality());
      for (std::size_t c = 0; c < sig.config_count; ++c) {
        auto eta = base[off + c].distribution.natural();
        for (std::size_t s = 0; s < k; ++s) eta[s] += scale * sv[c * k + s];
        out[off + c].distribution = EFDistribution(Family::Dirichlet, std::move(eta));
      }
      continue;
    }
    const std::size_t d = sig.continuous.size();
    const std::size_t dim = moment_dim(d);
    const std::size_t y = d + 1;
    for (std::size_t c = 0; c < sig.config_count; ++c) {
      const std::size_t b0 = off + c * gaussian_stride(d);
      const double* mat = sv.data() + c * dim * dim;
      const auto M = [&](std::size_t a, std::size_t b) { return scale * mat[a * dim + b]; };
      std::vector<double> bm(d), bs(d);
      for (std::size_t j = 0; j < d; ++j) {
        const auto mv = out[b0 + 1 + j].distribution.moment();
        bm[j] = mv[0];
        bs[j] = mv[1];
      }
      for (int it = 0; it < kBlockMaxIterations; ++it) {
        // Intercept/precision given the coefficient factors.
        double s1 = M(0, y), s2 = M(y, y);
        for (std::size_t j = 0; j < d; ++j) {
          s1 -= bm[j] * M(0, 1 + j);
          s2 -= 2.0 * bm[j] * M(1 + j, y);
          for (std::size_t l = 0; l < d; ++l)
            s2 += (j == l ? bm[j] * bm[j] + bs[j] : bm[j] * bm[l]) * M(1 + j, 1 + l);
        }
        const double n = M(0, 0);
        auto eta = base[b0].distribution.natural();
        eta[0] += s1;
        eta[1] -= 0.5 * n;
        eta[2] -= 0.5 * s2;
        eta[3] += 0.5 * n;
        out[b0].distribution = checked(Family::NormalGamma, std::move(eta), v.name);
        if (d == 0) break;

        const auto ng = ng_moments(out[b0].distribution);
        bool settled = true;
        for (std::size_t j = 0; j < d; ++j) {
          const auto prior = base[b0 + 1 + j].distribution.natural();  // (m/s, -1/(2s))
          double rest = M(1 + j, y);
          for (std::size_t l = 0; l < d; ++l)
            if (l != j) rest -= bm[l] * M(1 + j, 1 + l);
          const double h = prior[0] + ng.e_tau * rest - ng.e_tau_alpha * M(0, 1 + j);
          const double prec = -2.0 * prior[1] + ng.e_tau * M(1 + j, 1 + j);
          const double m_new = h / prec;
          const double s_new = 1.0 / prec;
          if (!relative_close(m_new, bm[j], kBlockTol) || !relative_close(s_new, bs[j], kBlockTol)) settled = false;
          bm[j] = m_new;
          bs[j] = s_new;
          out[b0 + 1 + j].distribution = checked(Family::Gaussian, {h, -0.5 * prec}, v.name);
        }
        if (settled && it > 0) break;
      }
    }
  }
  return out;
}

double LearnableModel::expected_log_likelihood(const std::vector<FactorMoments>& moments,
                                               const BatchStatistics& stats) const {
  double total = 0.0;
  for (const auto& v : structure_.variables()) {
    if (external_[static_cast<std::size_t>(v.id)]) continue;
    const auto& sig = structure_.signature(v.id);
    const auto& sv = stats.values[static_cast<std::size_t>(v.id)];
    const auto& fm = moments[static_cast<std::size_t>(v.id)];
    if (v.is_finite()) {
      const auto k = static_cast<std::size_t>(v.space.cardinality());
      for (std::size_t c = 0; c < sig.config_count; ++c)
        for (std::size_t s = 0; s < k; ++s)
          if (sv[c * k + s] != 0.0) total += sv[c * k + s] * fm.log_rows[c][s];
      continue;
    }
    const std::size_t d = sig.continuous.size();
    const std::size_t dim = moment_dim(d);
    const std::size_t y = d + 1;
    for (std::size_t c = 0; c < sig.config_count; ++c) {
      const double* mat = sv.data() + c * dim * dim;
      const auto M = [&](std::size_t a, std::size_t b) { return mat[a * dim + b]; };
      const double n = M(0, 0);
      if (n == 0.0) continue;
      const auto& gm = fm.gaussians[c];
      double q = gm.e_tau * M(y, y) - 2.0 * gm.e_tau_alpha * M(0, y) + gm.e_tau_alpha2 * n;
      for (std::size_t j = 0; j < d; ++j) {
        q += -2.0 * gm.e_tau * gm.e_beta[j] * M(1 + j, y) + 2.0 * gm.e_tau_alpha * gm.e_beta[j] * M(0, 1 + j);
        for (std::size_t l = 0; l < d; ++l)
          q += gm.e_tau * (j == l ? gm.e_beta2[j] : gm.e_beta[j] * gm.e_beta[l]) * M(1 + j, 1 + l);
      }
      total += 0.5 * n * (gm.e_log_tau - kLog2Pi) - 0.5 * q;
    }
  }
  return total;
}

double LearnableModel::kl_blocks(const std::vector<ParameterBlock>& q, const std::vector<ParameterBlock>& p) const {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += kl_divergence(q[i].distribution, p[i].distribution);
  return total;
}

void LearnableModel::record_batch(long batch_index, std::size_t instances, double elbo) {
  elbo_trace_.push_back(elbo);
  log_.push_back({batch_index, instances, elbo});
  ++batches_seen_;
  instances_seen_ += static_cast<long>(instances);
}

LearnableModel build_learner(const BayesianNetwork& template_network, const PriorSpec& priors) {
  return LearnableModel(template_network, priors);
}

void update_model(LearnableModel& m, std::span<const DataInstance> batch, const LearningConfig& cfg) {
  update_model_parallel(m, batch, cfg.worker_count, cfg);
}

void update_model_parallel(LearnableModel& m, std::span<const DataInstance> batch, int worker_count,
                           const LearningConfig& cfg) {
  cfg.validate();
  if (worker_count < 1) fail(ErrorCode::Config, "worker_count must be positive");
  if (batch.empty()) return;
  detail::check_rows(m, batch);

  const auto base = m.posterior();
  auto current = base;
  const bool first_batch = m.batches_seen() == 0;
  double elbo = 0.0;
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int it = 0; it < cfg.max_global_iterations; ++it) {
    const bool sampled = first_batch && it == 0;
    std::vector<FactorMoments> moments;
    if (sampled) {
      Rng rng(derive_seed(cfg.local_vmp.seed, 0));
      moments = m.sampled_moments(current, rng);
    } else {
      moments = m.moments(current);
    }
    const auto stats = local_step(m, moments, batch, worker_count, cfg);
    current = m.conjugate_update(base, current, stats);
    elbo = m.expected_log_likelihood(m.moments(current), stats) + stats.entropy + stats.external - m.kl_blocks(current, base);
    if (!std::isfinite(elbo)) fail(ErrorCode::Numerical, "batch ELBO is not finite");
    if (!stats.any_latent) break;
    if (!sampled && it > 0 && !(first_batch && it == 1) &&
        std::abs(elbo - previous) <= cfg.global_rel_tol * std::abs(elbo))
      break;
    previous = elbo;
  }
  m.set_posterior(std::move(current));
  m.record_batch(m.batches_seen(), batch.size(), elbo);
}

double svi_step_size(long t, const SviConfig& svi) {
  return std::pow(static_cast<double>(t) + svi.tau, -svi.kappa);
}

void svi_update(LearnableModel& m, std::span<const DataInstance> minibatch, long t, long total_n,
                const LearningConfig& cfg) {
  if (!cfg.svi) fail(ErrorCode::Config, "SVI settings are required for svi_update");
  cfg.validate();
  if (t < 0) fail(ErrorCode::Config, "SVI step index must be non-negative");
  if (minibatch.empty()) return;
  detail::check_rows(m, minibatch);
  if (total_n <= 0) total_n = cfg.svi->total_n > 0 ? cfg.svi->total_n : 10 * static_cast<long>(cfg.batch_size);

  std::vector<FactorMoments> moments;
  if (m.batches_seen() == 0) {
    Rng rng(derive_seed(cfg.local_vmp.seed, 0));
    moments = m.sampled_moments(m.posterior(), rng);
  } else {
    moments = m.moments();
  }
  const auto stats = local_step(m, moments, minibatch, cfg.worker_count, cfg);
  const double scale = static_cast<double>(total_n) / static_cast<double>(minibatch.size());
  const auto target = m.conjugate_update(m.prior(), m.posterior(), stats, scale);
  const double rho = svi_step_size(t, *cfg.svi);
  auto next = blend(m.posterior(), target, rho);
  const double elbo = m.expected_log_likelihood(m.moments(next), stats) + stats.entropy + stats.external -
                      m.kl_blocks(next, m.prior()) / scale;
  if (!std::isfinite(elbo)) fail(ErrorCode::Numerical, "minibatch ELBO is not finite");
  m.set_posterior(std::move(next));
  m.record_batch(m.batches_seen(), minibatch.size(), elbo);
}

BayesianNetwork extract_point_estimate(const LearnableModel& m) {
  const auto& bn = m.structure();
  std::vector<ConditionalDistribution> cpds;
  const auto& blocks = m.posterior();
  for (const auto& v : bn.variables()) {
    if (m.is_fixed(v.id)) {
      cpds.push_back(bn.cpd(v.id));
      continue;
    }
    const auto& sig = bn.signature(v.id);
    const std::size_t off = m.block_offset(v.id);
    ConditionalDistribution cpd;
    cpd.kind = bn.cpd(v.id).kind;
    if (v.is_finite()) {
      for (std::size_t c = 0; c < sig.config_count; ++c) {
        const auto& eta = blocks[off + c].distribution.natural();
        double total = 0.0;
        for (double e : eta) total += e + 1.0;
        std::vector<double> row;
        for (double e : eta) row.push_back((e + 1.0) / total);
        cpd.rows.push_back(std::move(row));
      }
    } else {
      const std::size_t d = sig.continuous.size();
      for (std::size_t c = 0; c < sig.config_count; ++c) {
        const std::size_t b0 = off + c * gaussian_stride(d);
        const auto p = blocks[b0].distribution.moment();
        if (!(p[2] > 1.0))
          fail(ErrorCode::UndefinedVarianceMean, "variable '" + v.name + "' configuration " + std::to_string(c) +
                                                     " has NormalGamma shape " + format_double(p[2]) +
                                                     " <= 1, so its posterior variance mean is undefined");
        GaussianParams g;
        g.intercept = p[0];
        g.variance = p[3] / (p[2] - 1.0);
        for (std::size_t j = 0; j < d; ++j) g.coeffs.push_back(blocks[b0 + 1 + j].distribution.moment()[0]);
        cpd.gaussians.push_back(std::move(g));
      }
    }
    cpds.push_back(std::move(cpd));
  }
  BayesianNetwork out(bn.variables(), bn.parent_sets(), std::move(cpds));
  require_valid(out);
  return out;
}

std::vector<double> evidence_lower_bound_trace(const LearnableModel& m) { return m.elbo_trace(); }

std::vector<DataInstance> align_batch(const BayesianNetwork& bn, const ArffHeader& header,
                                      std::span<const DataInstance> rows) {
  const auto cols = bind_columns(bn, header);
  std::vector<DataInstance> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (row.size() != header.attributes.size()) fail(ErrorCode::Schema, "row does not match the header");
    DataInstance r(cols.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] >= 0) r[i] = row[static_cast<std::size_t>(cols[i])];
    out.push_back(std::move(r));
  }
  return out;
}

Json blocks_to_json(const BayesianNetwork& bn, const std::vector<ParameterBlock>& blocks) {
  Json arr = Json::array();
  for (const auto& b : blocks) {
    Json j;
    j["variable"] = bn.variable(b.variable).name;
    j["config"] = b.config;
    j["role"] = role_name(b.role);
    if (b.role == BlockRole::Coefficient) j["coefficient"] = b.coefficient;
    j["family"] = family_name(b.distribution.family());
    j["parameters"] = b.distribution.moment();
    arr.push_back(std::move(j));
  }
  return arr;
}

Json learned_model_to_json(const LearnableModel& m) {
  Json doc = model_to_json(extract_point_estimate(m));
  doc["posterior"] = blocks_to_json(m.structure(), m.posterior());
  return doc;
}

}  // namespace streambayes
