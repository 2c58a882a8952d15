#include "streambayes/dynamic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "streambayes/error.hpp"

namespace streambayes {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_valid_as(const BayesianNetwork& bn, const std::string& part) {
  const auto report = validate_network(bn);
  if (report) return;
  const bool structural = report.rule == "cycle" || report.rule == "unknown parent" || report.rule == "self-parent" ||
                          report.rule == "duplicate parent";
  fail(structural ? ErrorCode::Structure : ErrorCode::Validation, part + ": " + report.rule + ": " + report.message);
}

ConditionalDistribution placeholder_cpd(const Variable& v) {
  ConditionalDistribution cpd;
  if (v.is_finite()) {
    const auto k = static_cast<std::size_t>(v.space.cardinality());
    cpd.kind = DistributionKind::Multinomial;
    cpd.rows.assign(1, std::vector<double>(k, 1.0 / static_cast<double>(k)));
  } else {
    cpd.kind = DistributionKind::Normal;
    cpd.gaussians.assign(1, GaussianParams{});
  }
  return cpd;
}

bool is_point_mass(const Marginal& m) {
  if (!m.discrete) return !(m.variance > 0.0);
  return std::count(m.probabilities.begin(), m.probabilities.end(), 1.0) == 1;
}

double point_value(const Marginal& m) {
  if (!m.discrete) return m.mean;
  return static_cast<double>(std::find(m.probabilities.begin(), m.probabilities.end(), 1.0) - m.probabilities.begin());
}

ConditionalDistribution belief_cpd(const Marginal& m) {
  ConditionalDistribution cpd;
  if (m.discrete) {
    cpd.kind = DistributionKind::Multinomial;
    auto row = m.probabilities;
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    for (double& p : row) p /= s;
    cpd.rows.push_back(std::move(row));
  } else {
    cpd.kind = DistributionKind::Normal;
    // A point-mass belief keeps a unit-variance placeholder; the copy is then observed.
    cpd.gaussians.push_back(GaussianParams{m.mean, {}, m.variance > 0.0 ? m.variance : 1.0});
  }
  return cpd;
}

std::size_t position_of(const std::vector<VarId>& list, VarId v) {
  return static_cast<std::size_t>(std::find(list.begin(), list.end(), v) - list.begin());
}

// Folds a Gaussian copy with belief N(m, v) into its only child's regression.
ConditionalDistribution absorb_gaussian(const BayesianNetwork& net, VarId child, VarId copy, const Marginal& belief) {
  const auto& sig = net.signature(child);
  const auto j = position_of(sig.continuous, copy);
  auto cpd = net.cpd(child);
  const double v = belief.variance > 0.0 ? belief.variance : 0.0;
  for (auto& g : cpd.gaussians) {
    const double beta = g.coeffs[j];
    g.intercept += beta * belief.mean;
    g.variance += beta * beta * v;
    g.coeffs.erase(g.coeffs.begin() + static_cast<std::ptrdiff_t>(j));
  }
  const bool has_continuous = sig.continuous.size() > 1;
  cpd.kind = expected_kind(false, !sig.discrete.empty(), has_continuous);
  return cpd;
}

// Marginalizes a discrete copy out of its only (discrete) child's table.
ConditionalDistribution absorb_discrete(const BayesianNetwork& net, VarId child, VarId copy, const Marginal& belief) {
  const auto& sig = net.signature(child);
  const auto j = position_of(sig.discrete, copy);
  const auto& src = net.cpd(child);
  const auto card = static_cast<std::size_t>(sig.cardinalities[j]);
  const std::size_t stride = sig.strides[j];
  const std::size_t reduced = sig.config_count / card;
  ConditionalDistribution cpd;
  cpd.kind = expected_kind(net.variable(child).is_finite(), sig.discrete.size() > 1, !sig.continuous.empty());
  for (std::size_t r = 0; r < reduced; ++r) {
    // Reduced index r splits into (high, low) around the removed position.
    const std::size_t high = r / stride;
    const std::size_t low = r % stride;
    std::vector<double> row;
    for (std::size_t k = 0; k < card; ++k) {
      const double w = belief.probabilities[k];
      if (w == 0.0) continue;
      const std::size_t full = high * stride * card + k * stride + low;
      const auto& src_row = src.rows[full];
      if (row.empty()) row.assign(src_row.size(), 0.0);
      for (std::size_t s = 0; s < src_row.size(); ++s) row[s] += w * src_row[s];
    }
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    for (double& p : row) p /= sum;
    cpd.rows.push_back(std::move(row));
  }
  return cpd;
}

std::vector<VarId> slice_targets(std::size_t n) {
  std::vector<VarId> t(n);
  std::iota(t.begin(), t.end(), 0);
  return t;
}

// Runs the static algorithm on `net` and keeps the marginals of the first n variables.
BeliefState run_slice(const BayesianNetwork& net, std::span<const double> values, std::size_t n, int time,
                      FilterAlgorithm algo, const InferenceConfig& cfg) {
  Assignment ev(net.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!is_missing(values[i])) ev.set(static_cast<VarId>(i), values[i]);
  InferenceConfig step_cfg = cfg;
  step_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(time));
  const auto targets = slice_targets(n);
  InferenceReport report = algo == FilterAlgorithm::Vmp ? vmp_infer(net, ev, targets, step_cfg)
                                                        : importance_sampling_infer(net, ev, targets, step_cfg);
  BeliefState out;
  out.time = time;
  out.marginals = std::move(report.posteriors);
  return out;
}

BeliefState step(const DynamicBayesianNetwork& dbn, const BeliefState& belief, std::span<const double> slice_values,
                 int time, FilterAlgorithm algo, const InferenceConfig& cfg) {
  const std::size_t n = dbn.slice_size();
  if (belief.time < 0) return run_slice(dbn.time0(), slice_values, n, time, algo, cfg);
  auto slice = build_slice_network(dbn, belief, true);
  std::vector<double> values = std::move(slice.prev_values);
  for (std::size_t i = 0; i < n; ++i) values[i] = slice_values.empty() ? kNaN : slice_values[i];
  return run_slice(slice.network, values, n, time, algo, cfg);
}

void check_target(const DynamicBayesianNetwork& dbn, VarId target) {
  if (target < 0 || static_cast<std::size_t>(target) >= dbn.slice_size())
    fail(ErrorCode::UnknownVariable, "target id " + std::to_string(target) + " is not a slice variable");
}

}  // namespace

VarId DynamicBayesianNetwork::previous_copy(VarId slice_var) const {
  if (slice_var < 0 || static_cast<std::size_t>(slice_var) >= previous_copy_.size()) return -1;
  return previous_copy_[static_cast<std::size_t>(slice_var)];
}

DynamicBayesianNetwork define_dbn(BayesianNetwork time0, std::vector<std::vector<TemporalParent>> transition_parents,
                                  std::vector<ConditionalDistribution> transition_cpds) {
  require_valid_as(time0, "time-0 slice");
  const std::size_t n = time0.size();
  if (transition_parents.size() != n || transition_cpds.size() != n)
    fail(ErrorCode::Structure, "transition slice must define parents and a distribution for every slice variable");

  DynamicBayesianNetwork dbn;
  dbn.previous_copy_.assign(n, -1);
  std::vector<bool> is_interface(n, false);
  for (const auto& ps : transition_parents)
    for (const auto& p : ps) {
      if (p.variable < 0 || static_cast<std::size_t>(p.variable) >= n)
        fail(ErrorCode::Structure, "transition references an undeclared variable id " + std::to_string(p.variable));
      if (p.previous) is_interface[static_cast<std::size_t>(p.variable)] = true;
    }

  VariableRegistry vars;
  for (const auto& v : time0.variables()) vars.add(v.name, v.space, v.role);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_interface[i]) continue;
    const auto& v = time0.variable(static_cast<VarId>(i));
    dbn.interface_.push_back(static_cast<VarId>(i));
    dbn.previous_copy_[i] = vars.add(v.name + kPreviousSuffix, v.space, Role::Latent);
  }

  std::vector<std::vector<VarId>> parents(vars.size());
  std::vector<ConditionalDistribution> cpds = std::move(transition_cpds);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& p : transition_parents[i])
      parents[i].push_back(p.previous ? dbn.previous_copy_[static_cast<std::size_t>(p.variable)] : p.variable);
  for (std::size_t c = n; c < vars.size(); ++c) cpds.push_back(placeholder_cpd(vars[static_cast<VarId>(c)]));

  dbn.transition_net_ = BayesianNetwork(std::move(vars), std::move(parents), std::move(cpds));
  require_valid_as(dbn.transition_net_, "transition slice");
  dbn.time0_ = std::move(time0);
  dbn.transition_parents_ = std::move(transition_parents);
  return dbn;
}

BayesianNetwork unroll(const DynamicBayesianNetwork& dbn, int T) {
  if (T < 1) fail(ErrorCode::InvalidParameter, "unroll needs T >= 1");
  const auto n = static_cast<VarId>(dbn.slice_size());
  VariableRegistry vars;
  std::vector<std::vector<VarId>> parents;
  std::vector<ConditionalDistribution> cpds;
  for (int t = 0; t < T; ++t) {
    for (VarId i = 0; i < n; ++i) {
      const auto& v = dbn.variables()[i];
      vars.add(v.name + "[" + std::to_string(t) + "]", v.space, v.role);
      std::vector<VarId> ps;
      if (t == 0) {
        ps = dbn.time0().parents(i);
        cpds.push_back(dbn.time0().cpd(i));
      } else {
        for (const auto& p : dbn.transition_parents(i)) ps.push_back((p.previous ? t - 1 : t) * n + p.variable);
        cpds.push_back(dbn.transition_cpd(i));
      }
      parents.push_back(std::move(ps));
    }
  }
  BayesianNetwork bn(std::move(vars), std::move(parents), std::move(cpds));
  require_valid(bn);
  return bn;
}

SliceNetwork build_slice_network(const DynamicBayesianNetwork& dbn, const BeliefState& belief, bool absorb) {
  const std::size_t n = dbn.slice_size();
  if (belief.time < 0) return {dbn.time0(), std::vector<double>(n, kNaN)};
  if (belief.marginals.size() != n) fail(ErrorCode::InvalidParameter, "belief state does not cover the slice");
  const auto& net = dbn.transition_network();

  std::vector<VarId> owner(net.size(), -1);
  std::vector<ConditionalDistribution> cpds = net.cpds();
  std::vector<VarId> absorbed;
  for (VarId v : dbn.interface_variables()) {
    const VarId copy = dbn.previous_copy(v);
    owner[static_cast<std::size_t>(copy)] = v;
    const auto& b = belief.marginals[static_cast<std::size_t>(v)];
    const auto& kids = net.children(copy);
    // A discrete copy under a Gaussian child would turn it into a mixture, so only same-type pairs fold.
    if (absorb && kids.size() == 1 && (!b.discrete || net.variable(kids.front()).is_finite()))
      absorbed.push_back(copy);
    else
      cpds[static_cast<std::size_t>(copy)] = belief_cpd(b);
  }

  BayesianNetwork cur(net.variables(), net.parent_sets(), std::move(cpds));
  std::vector<VarId> alive(net.size());
  std::iota(alive.begin(), alive.end(), 0);
  for (VarId copy : absorbed) {
    const auto& b = belief.marginals[static_cast<std::size_t>(owner[static_cast<std::size_t>(copy)])];
    const auto at = static_cast<VarId>(position_of(alive, copy));
    const VarId child = cur.children(at).front();
    auto folded = b.discrete ? absorb_discrete(cur, child, at, b) : absorb_gaussian(cur, child, at, b);

    VariableRegistry nv;
    std::vector<std::vector<VarId>> np;
    std::vector<ConditionalDistribution> nc;
    for (VarId i = 0; i < static_cast<VarId>(cur.size()); ++i) {
      if (i == at) continue;
      const auto& var = cur.variable(i);
      nv.add(var.name, var.space, var.role);
      std::vector<VarId> ps;
      for (VarId p : cur.parents(i))
        if (p != at) ps.push_back(p > at ? p - 1 : p);
      np.push_back(std::move(ps));
      nc.push_back(i == child ? std::move(folded) : cur.cpd(i));
    }
    cur = BayesianNetwork(std::move(nv), std::move(np), std::move(nc));
    alive.erase(alive.begin() + at);
  }

  SliceNetwork out{std::move(cur), std::vector<double>(alive.size(), kNaN)};
  for (std::size_t i = n; i < alive.size(); ++i) {
    const auto& b = belief.marginals[static_cast<std::size_t>(owner[static_cast<std::size_t>(alive[i])])];
    if (is_point_mass(b)) out.prev_values[i] = point_value(b);
  }
  require_valid(out.network);
  return out;
}

BeliefState ff_filter_step(const DynamicBayesianNetwork& dbn, const BeliefState& belief, const DynamicEvidence& evidence,
                           FilterAlgorithm algo, const InferenceConfig& cfg) {
  cfg.validate();
  const std::size_t n = dbn.slice_size();
  if (belief.time >= 0 && evidence.time_id <= belief.time)
    fail(ErrorCode::Order, "time id " + std::to_string(evidence.time_id) + " does not follow " + std::to_string(belief.time));
  if (evidence.time_id < 0 || evidence.time_id > std::numeric_limits<int>::max())
    fail(ErrorCode::Order, "time id " + std::to_string(evidence.time_id) + " is out of range");
  std::span<const double> values = evidence.assignment.values();
  if (!values.empty()) {
    if (values.size() != n) fail(ErrorCode::UnknownVariable, "evidence does not match the slice variables");
    check_assignment(dbn.time0(), evidence.assignment);
  }
  const int target_time = static_cast<int>(evidence.time_id);
  BeliefState cur = belief;
  if (cur.time >= 0)
    while (cur.time + 1 < target_time) cur = step(dbn, cur, {}, cur.time + 1, algo, cfg);
  return step(dbn, cur, values, target_time, algo, cfg);
}

Marginal filtered_posterior(const DynamicBayesianNetwork& dbn, const BeliefState& state, VarId target,
                            FilterAlgorithm algo, const InferenceConfig& cfg) {
  check_target(dbn, target);
  if (state.time >= 0) return state.marginals.at(static_cast<std::size_t>(target));
  const auto prior = step(dbn, state, {}, 0, algo, cfg);
  return prior.marginals.at(static_cast<std::size_t>(target));
}

Marginal predictive_posterior(const DynamicBayesianNetwork& dbn, const BeliefState& state, VarId target, int horizon,
                              FilterAlgorithm algo, const InferenceConfig& cfg) {
  check_target(dbn, target);
  if (horizon < 1) fail(ErrorCode::InvalidParameter, "prediction horizon must be at least 1");
  cfg.validate();
  BeliefState cur = state;
  for (int h = 0; h < horizon; ++h) cur = step(dbn, cur, {}, cur.time + 1, algo, cfg);
  return cur.marginals.at(static_cast<std::size_t>(target));
}

DynamicFilter::DynamicFilter(const DynamicBayesianNetwork& dbn, FilterAlgorithm algo, InferenceConfig cfg)
    : dbn_(dbn), algo_(algo), cfg_(cfg) {
  cfg_.validate();
}

void DynamicFilter::add_evidence(const DynamicEvidence& evidence) {
  belief_ = ff_filter_step(dbn_, belief_, evidence, algo_, cfg_);
}

Marginal DynamicFilter::filtered(VarId target) const { return filtered_posterior(dbn_, belief_, target, algo_, cfg_); }

Marginal DynamicFilter::predictive(VarId target, int horizon) const {
  return predictive_posterior(dbn_, belief_, target, horizon, algo_, cfg_);
}

}  // namespace streambayes
