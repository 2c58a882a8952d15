#include "streambayes/inference.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>
#include <thread>

#include "streambayes/error.hpp"
#include "streambayes/mean_field.hpp"

namespace streambayes {

void InferenceConfig::validate() const {
  if (max_iterations < 1) fail(ErrorCode::Config, "max_iterations must be positive");
  if (!(elbo_rel_tol > 0.0 && elbo_rel_tol < 1.0)) fail(ErrorCode::Config, "elbo_rel_tol must lie in (0, 1)");
  if (sample_count < 1) fail(ErrorCode::Config, "sample_count must be positive");
  if (worker_count < 1) fail(ErrorCode::Config, "worker_count must be positive");
  if (restarts < 0) fail(ErrorCode::Config, "restarts must be non-negative");
}

Marginal Marginal::categorical(VarId id, std::string name, std::vector<double> probabilities) {
  Marginal m;
  m.variable = id;
  m.name = std::move(name);
  m.discrete = true;
  m.probabilities = std::move(probabilities);
  return m;
}

Marginal Marginal::gaussian(VarId id, std::string name, double mean, double variance) {
  Marginal m;
  m.variable = id;
  m.name = std::move(name);
  m.discrete = false;
  m.mean = mean;
  m.variance = variance;
  return m;
}

Marginal Marginal::point(const Variable& v, double value) {
  if (!v.is_finite()) return gaussian(v.id, v.name, value, 0.0);
  std::vector<double> p(static_cast<std::size_t>(v.space.cardinality()), 0.0);
  p.at(static_cast<std::size_t>(value)) = 1.0;
  return categorical(v.id, v.name, std::move(p));
}

EFDistribution Marginal::distribution() const {
  if (discrete) return EFDistribution::multinomial(probabilities);
  return EFDistribution::gaussian(mean, variance);
}

Assignment parse_evidence(const BayesianNetwork& bn, const std::vector<std::pair<std::string, std::string>>& items) {
  Assignment a(bn.size());
  for (const auto& [name, text] : items) {
    const VarId id = bn.variables().id_of(name);
    const auto& var = bn.variable(id);
    if (var.is_finite()) {
      if (auto idx = var.space.label_index(text)) {
        a.set(id, *idx);
        continue;
      }
    }
    double value = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
      fail(ErrorCode::Parse, "cannot read value '" + text + "' for variable '" + name + "'");
    a.set(id, value);
  }
  check_assignment(bn, a);
  return a;
}

std::vector<VarId> resolve_targets(const BayesianNetwork& bn, const std::vector<std::string>& names) {
  std::vector<VarId> ids;
  ids.reserve(names.size());
  for (const auto& n : names) ids.push_back(bn.variables().id_of(n));
  return ids;
}

namespace {

void check_inputs(const BayesianNetwork& bn, const Assignment& evidence, const std::vector<VarId>& targets) {
  if (evidence.size() != bn.size())
    fail(ErrorCode::UnknownVariable, "evidence refers to variables outside the network");
  for (VarId t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= bn.size())
      fail(ErrorCode::UnknownVariable, "target id " + std::to_string(t) + " is not in the network");
  check_assignment(bn, evidence);
}

Marginal factor_of(const MeanFieldEngine& engine, const Variable& v) {
  if (v.is_finite()) return Marginal::categorical(v.id, v.name, engine.probabilities(v.id));
  return Marginal::gaussian(v.id, v.name, engine.mean(v.id), engine.variance(v.id));
}

}  // namespace

InferenceReport vmp_infer(const BayesianNetwork& bn, const Assignment& evidence, const std::vector<VarId>& targets,
                          const InferenceConfig& cfg) {
  cfg.validate();
  require_valid(bn);
  check_inputs(bn, evidence, targets);
  const auto moments = point_moments(bn);

  MeanFieldEngine engine(bn, moments);
  engine.set_evidence(evidence.values());
  engine.initialize_default();
  SweepResult best = engine.run(cfg.max_iterations, cfg.elbo_rel_tol);
  std::vector<Marginal> best_factors;
  const auto snapshot = [&] {
    best_factors.clear();
    for (const auto& v : bn.variables()) best_factors.push_back(factor_of(engine, v));
  };
  snapshot();
  for (int r = 0; r < cfg.restarts && engine.has_latent(); ++r) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    engine.set_evidence(evidence.values());
    engine.initialize_random(rng);
    auto result = engine.run(cfg.max_iterations, cfg.elbo_rel_tol);
    if (result.elbo_trace.back() > best.elbo_trace.back()) {
      best = std::move(result);
      snapshot();
    }
  }

  InferenceReport report;
  report.elbo_trace = std::move(best.elbo_trace);
  report.converged = best.converged;
  report.iterations_used = best.iterations;
  for (VarId t : targets) {
    const auto& v = bn.variable(t);
    report.posteriors.push_back(evidence.has(t) ? Marginal::point(v, evidence[t]) : best_factors[static_cast<std::size_t>(t)]);
  }
  return report;
}

double compute_elbo(const BayesianNetwork& bn, const VariationalPosterior& q, const Assignment& evidence) {
  require_valid(bn);
  check_inputs(bn, evidence, {});
  const auto moments = point_moments(bn);
  MeanFieldEngine engine(bn, moments);
  engine.set_evidence(evidence.values());
  std::vector<bool> covered(bn.size(), false);
  for (const auto& m : q) {
    if (m.variable < 0 || static_cast<std::size_t>(m.variable) >= bn.size())
      fail(ErrorCode::UnknownVariable, "posterior factor for an unknown variable");
    if (evidence.has(m.variable)) continue;
    if (m.discrete) engine.set_discrete(m.variable, m.probabilities);
    else engine.set_gaussian(m.variable, m.mean, m.variance);
    covered[static_cast<std::size_t>(m.variable)] = true;
  }
  for (const auto& v : bn.variables())
    if (!evidence.has(v.id) && !covered[static_cast<std::size_t>(v.id)])
      fail(ErrorCode::InvalidParameter, "no posterior factor for unobserved variable '" + v.name + "'");
  return engine.elbo();
}

namespace {

// Per-shard weighted sums, scaled by exp(-log_scale) to stay in floating range.
struct ShardSums {
  double log_scale = -std::numeric_limits<double>::infinity();
  double weight = 0.0;
  double weight_sq = 0.0;
  std::vector<std::vector<double>> counts;  // discrete targets
  std::vector<double> sum_x;                // continuous targets
  std::vector<double> sum_xx;

  void rescale(double factor) {
    weight *= factor;
    weight_sq *= factor * factor;
    for (auto& c : counts)
      for (double& x : c) x *= factor;
    for (double& x : sum_x) x *= factor;
    for (double& x : sum_xx) x *= factor;
  }
};

ShardSums run_shard(const BayesianNetwork& bn, const Assignment& evidence, const std::vector<VarId>& targets,
                    std::uint64_t seed, long samples) {
  ShardSums s;
  s.counts.resize(targets.size());
  s.sum_x.assign(targets.size(), 0.0);
  s.sum_xx.assign(targets.size(), 0.0);
  for (std::size_t t = 0; t < targets.size(); ++t)
    if (bn.variable(targets[t]).is_finite())
      s.counts[t].assign(static_cast<std::size_t>(bn.variable(targets[t]).space.cardinality()), 0.0);

  Rng rng(seed);
  std::vector<double> values(bn.size(), 0.0);
  for (long n = 0; n < samples; ++n) {
    double log_w = 0.0;
    for (VarId v : bn.topological_order()) {
      const auto i = static_cast<std::size_t>(v);
      if (evidence.has(v)) {
        values[i] = evidence[v];
        log_w += log_conditional(bn, v, values);
      } else {
        values[i] = sample_conditional(bn, v, values, rng);
      }
    }
    if (log_w == -std::numeric_limits<double>::infinity()) continue;
    if (log_w > s.log_scale) {
      if (s.weight > 0.0) s.rescale(std::exp(s.log_scale - log_w));
      s.log_scale = log_w;
    }
    const double w = std::exp(log_w - s.log_scale);
    s.weight += w;
    s.weight_sq += w * w;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const double x = values[static_cast<std::size_t>(targets[t])];
      if (!s.counts[t].empty()) {
        s.counts[t][static_cast<std::size_t>(x)] += w;
      } else {
        s.sum_x[t] += w * x;
        s.sum_xx[t] += w * x * x;
      }
    }
  }
  return s;
}

}  // namespace

InferenceReport importance_sampling_infer(const BayesianNetwork& bn, const Assignment& evidence,
                                          const std::vector<VarId>& targets, const InferenceConfig& cfg) {
  cfg.validate();
  require_valid(bn);
  check_inputs(bn, evidence, targets);

  const long shard_count = (cfg.sample_count + kSamplesPerShard - 1) / kSamplesPerShard;
  std::vector<ShardSums> shards(static_cast<std::size_t>(shard_count));
  const auto shard_samples = [&](long s) { return std::min(kSamplesPerShard, cfg.sample_count - s * kSamplesPerShard); };

  const int workers = static_cast<int>(std::min<long>(cfg.worker_count, shard_count));
  if (workers <= 1) {
    for (long s = 0; s < shard_count; ++s)
      shards[static_cast<std::size_t>(s)] = run_shard(bn, evidence, targets, cfg.seed + static_cast<std::uint64_t>(s), shard_samples(s));
  } else {
    std::atomic<long> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (long s = next++; s < shard_count; s = next++)
            shards[static_cast<std::size_t>(s)] = run_shard(bn, evidence, targets, cfg.seed + static_cast<std::uint64_t>(s), shard_samples(s));
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Reduce in shard order onto a common scale.
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& s : shards) top = std::max(top, s.log_scale);
  if (top == -std::numeric_limits<double>::infinity())
    fail(ErrorCode::DegenerateEvidence, "every sample has zero weight under the evidence");
  ShardSums total;
  total.counts.resize(targets.size());
  total.sum_x.assign(targets.size(), 0.0);
  total.sum_xx.assign(targets.size(), 0.0);
  for (std::size_t t = 0; t < targets.size(); ++t) total.counts[t].assign(shards.front().counts[t].size(), 0.0);
  for (auto& s : shards) {
    if (s.weight == 0.0) continue;
    s.rescale(std::exp(s.log_scale - top));
    total.weight += s.weight;
    total.weight_sq += s.weight_sq;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      for (std::size_t k = 0; k < s.counts[t].size(); ++k) total.counts[t][k] += s.counts[t][k];
      total.sum_x[t] += s.sum_x[t];
      total.sum_xx[t] += s.sum_xx[t];
    }
  }

  InferenceReport report;
  report.converged = true;
  report.effective_sample_size = total.weight * total.weight / total.weight_sq;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto& v = bn.variable(targets[t]);
    if (evidence.has(v.id)) {
      report.posteriors.push_back(Marginal::point(v, evidence[v.id]));
    } else if (v.is_finite()) {
      std::vector<double> p = total.counts[t];
      for (double& x : p) x /= total.weight;
      report.posteriors.push_back(Marginal::categorical(v.id, v.name, std::move(p)));
    } else {
      const double mean = total.sum_x[t] / total.weight;
      const double var = std::max(0.0, total.sum_xx[t] / total.weight - mean * mean);
      report.posteriors.push_back(Marginal::gaussian(v.id, v.name, mean, var));
    }
  }
  return report;
}

EnumerationResult exact_enumeration_oracle(const BayesianNetwork& bn, const Assignment& evidence,
                                           const std::vector<VarId>& targets) {
  require_valid(bn);
  check_inputs(bn, evidence, targets);
  std::vector<VarId> free_vars;
  double states = 1.0;
  for (const auto& v : bn.variables()) {
    if (!v.is_finite()) fail(ErrorCode::InvalidParameter, "enumeration needs an all-discrete network");
    states *= v.space.cardinality();
    if (!evidence.has(v.id)) free_vars.push_back(v.id);
  }
  if (states > kMaxEnumerationStates) fail(ErrorCode::TooLarge, "joint state space exceeds 10^7 configurations");

  std::vector<double> values(bn.size(), 0.0);
  for (const auto& v : bn.variables())
    if (evidence.has(v.id)) values[static_cast<std::size_t>(v.id)] = evidence[v.id];
  std::vector<std::vector<double>> mass(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t)
    mass[t].assign(static_cast<std::size_t>(bn.variable(targets[t]).space.cardinality()), 0.0);

  double total = 0.0;
  while (true) {
    double log_p = 0.0;
    for (VarId v = 0; v < static_cast<VarId>(bn.size()) && log_p > -std::numeric_limits<double>::infinity(); ++v)
      log_p += log_conditional(bn, v, values);
    const double p = std::exp(log_p);
    total += p;
    for (std::size_t t = 0; t < targets.size(); ++t) mass[t][static_cast<std::size_t>(values[static_cast<std::size_t>(targets[t])])] += p;
    // Odometer over the free variables.
    std::size_t k = 0;
    for (; k < free_vars.size(); ++k) {
      auto& x = values[static_cast<std::size_t>(free_vars[k])];
      if (x + 1 < bn.variable(free_vars[k]).space.cardinality()) {
        x += 1;
        break;
      }
      x = 0;
    }
    if (k == free_vars.size()) break;
  }
  if (!(total > 0.0)) fail(ErrorCode::DegenerateEvidence, "evidence has probability zero");

  EnumerationResult result;
  result.log_evidence = std::log(total);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (double& x : mass[t]) x /= total;
    result.posteriors.push_back(Marginal::categorical(targets[t], bn.variable(targets[t]).name, std::move(mass[t])));
  }
  return result;
}

}  // namespace streambayes
