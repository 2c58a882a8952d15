#include <cmath>
#include <limits>
#include <map>

#include "learning_internal.hpp"
#include "streambayes/error.hpp"
#include "streambayes/learning.hpp"

namespace streambayes {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

PriorSpec transition_priors(const DynamicBayesianNetwork& dbn, PriorSpec priors) {
  for (VarId v : dbn.interface_variables())
    priors.external.push_back(dbn.transition_network().variable(dbn.previous_copy(v)).name);
  return priors;
}

PriorSpec initial_priors(PriorSpec priors) {
  priors.fixed.insert(priors.fixed.end(), priors.fixed_initial.begin(), priors.fixed_initial.end());
  return priors;
}

bool point_mass(const Marginal& m) {
  if (!m.discrete) return !(m.variance > 0.0);
  return std::count(m.probabilities.begin(), m.probabilities.end(), 1.0) == 1;
}

double point_of(const Marginal& m) {
  if (!m.discrete) return m.mean;
  return static_cast<double>(std::find(m.probabilities.begin(), m.probabilities.end(), 1.0) - m.probabilities.begin());
}

FactorMoments belief_moments(const Marginal& m) {
  FactorMoments fm;
  if (m.discrete) {
    std::vector<double> row;
    for (double p : m.probabilities) row.push_back(std::log(p));
    fm.log_rows.push_back(std::move(row));
    return fm;
  }
  // Point masses are observed; their density term is a unit-variance constant.
  const double v = m.variance > 0.0 ? m.variance : 1.0;
  fm.gaussians.push_back(GaussianFactorMoments{1.0 / v, m.mean / v, m.mean * m.mean / v, -std::log(v), {}, {}});
  return fm;
}

BeliefState belief_from(const MeanFieldEngine& engine, std::size_t n, std::span<const double> values, int time) {
  BeliefState b;
  b.time = time;
  const auto& bn = engine.structure();
  for (VarId v = 0; v < static_cast<VarId>(n); ++v) {
    const auto& var = bn.variable(v);
    const double x = values[static_cast<std::size_t>(v)];
    if (!is_missing(x))
      b.marginals.push_back(Marginal::point(var, x));
    else if (var.is_finite())
      b.marginals.push_back(Marginal::categorical(v, var.name, engine.probabilities(v)));
    else
      b.marginals.push_back(Marginal::gaussian(v, var.name, engine.mean(v), engine.variance(v)));
  }
  return b;
}

struct SliceWorker {
  const DynamicBayesianNetwork& dbn;
  const DynamicLearnableModel& model;
  const LearningConfig& cfg;
  std::vector<FactorMoments> moments0;
  std::vector<FactorMoments> moments_t;
  MeanFieldEngine engine0;
  MeanFieldEngine engine_t;
  BatchStatistics stats0;
  BatchStatistics stats_t;
  std::vector<double> values;

  SliceWorker(const DynamicLearnableModel& m, const LearningConfig& c, std::vector<FactorMoments> m0,
              std::vector<FactorMoments> mt)
      : dbn(m.structure()),
        model(m),
        cfg(c),
        moments0(std::move(m0)),
        moments_t(std::move(mt)),
        engine0(m.time0().structure(), moments0),
        engine_t(m.transition().structure(), moments_t),
        stats0(m.time0().empty_statistics()),
        stats_t(m.transition().empty_statistics()),
        values(m.transition().structure().size(), kNaN) {}

  void infer(MeanFieldEngine& e) {
    if (!e.has_latent()) return;
    e.initialize_default();
    e.run(cfg.local_vmp.max_iterations, cfg.local_vmp.elbo_rel_tol);
    e.couple_gaussians();
  }

  BeliefState first(std::span<const double> row, int time) {
    engine0.set_evidence(row);
    infer(engine0);
    model.time0().accumulate(engine0, stats0);
    return belief_from(engine0, dbn.slice_size(), row, time);
  }

  BeliefState next(const BeliefState& belief, std::span<const double> row, int time) {
    const std::size_t n = dbn.slice_size();
    std::fill(values.begin(), values.end(), kNaN);
    for (std::size_t i = 0; i < n && !row.empty(); ++i) values[i] = row[i];
    for (VarId v : dbn.interface_variables()) {
      const auto copy = static_cast<std::size_t>(dbn.previous_copy(v));
      const auto& b = belief.marginals[static_cast<std::size_t>(v)];
      moments_t[copy] = belief_moments(b);
      if (point_mass(b)) values[copy] = point_of(b);
    }
    engine_t.set_evidence(values);
    infer(engine_t);
    model.transition().accumulate(engine_t, stats_t);
    return belief_from(engine_t, n, values, time);
  }
};

}  // namespace

DynamicLearnableModel::DynamicLearnableModel(DynamicBayesianNetwork dbn, const PriorSpec& priors)
    : dbn_(std::move(dbn)),
      time0_(dbn_.time0(), initial_priors(priors)),
      transition_(dbn_.transition_network(), transition_priors(dbn_, priors)) {}

void DynamicLearnableModel::record_batch(long batch_index, std::size_t instances, double elbo) {
  elbo_trace_.push_back(elbo);
  log_.push_back({batch_index, instances, elbo});
  ++batches_seen_;
}

DynamicLearnableModel build_dynamic_learner(const DynamicBayesianNetwork& dbn, const PriorSpec& priors) {
  return DynamicLearnableModel(dbn, priors);
}

void learn_dynamic(DynamicLearnableModel& m, std::span<const DynamicDataInstance> batch, const LearningConfig& cfg) {
  cfg.validate();
  if (batch.empty()) return;
  const std::size_t n = m.structure().slice_size();

  // Sequences in order of first appearance; rows keep stream order within a sequence.
  std::vector<long> order;
  std::map<long, std::vector<std::size_t>> rows_of;
  std::vector<DataInstance> flat;
  flat.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& inst = batch[i];
    if (inst.values.size() != n)
      fail(ErrorCode::Schema, "instance has " + std::to_string(inst.values.size()) + " values; the slice has " +
                                  std::to_string(n) + " variables");
    if (inst.time_id < 0 || inst.time_id > std::numeric_limits<int>::max())
      fail(ErrorCode::Order, "time id " + std::to_string(inst.time_id) + " is out of range");
    auto [it, fresh] = rows_of.try_emplace(inst.sequence_id);
    if (fresh) order.push_back(inst.sequence_id);
    long last = -1;
    if (!it->second.empty()) {
      last = batch[it->second.back()].time_id;
    } else if (auto s = m.sequences().find(inst.sequence_id); s != m.sequences().end()) {
      last = s->second.belief.time;
    }
    if (last >= 0 && inst.time_id <= last)
      fail(ErrorCode::Order, "sequence " + std::to_string(inst.sequence_id) + ": time id " +
                                 std::to_string(inst.time_id) + " does not exceed " + std::to_string(last));
    it->second.push_back(i);
    flat.push_back(inst.values);
  }
  detail::check_rows(m.time0(), flat);

  std::vector<BeliefState> start(order.size());
  for (std::size_t s = 0; s < order.size(); ++s)
    if (auto it = m.sequences().find(order[s]); it != m.sequences().end()) start[s] = it->second.belief;

  const auto base0 = m.time0().posterior();
  const auto base_t = m.transition().posterior();
  auto cur0 = base0;
  auto cur_t = base_t;
  const bool first_batch = m.batches_seen() == 0;
  std::vector<BeliefState> finals(order.size());
  double elbo = 0.0;
  double previous = kNaN;
  const auto w = static_cast<std::size_t>(cfg.worker_count);

  for (int it = 0; it < cfg.max_global_iterations; ++it) {
    const bool sampled = first_batch && it == 0;
    std::vector<FactorMoments> mom0, mom_t;
    if (sampled) {
      Rng rng(derive_seed(cfg.local_vmp.seed, 0));
      mom0 = m.time0().sampled_moments(cur0, rng);
      mom_t = m.transition().sampled_moments(cur_t, rng);
    } else {
      mom0 = m.time0().moments(cur0);
      mom_t = m.transition().moments(cur_t);
    }

    std::vector<BatchStatistics> part0(w, m.time0().empty_statistics());
    std::vector<BatchStatistics> part_t(w, m.transition().empty_statistics());
    detail::fan_out(order.size(), cfg.worker_count, [&](std::size_t k, std::size_t begin, std::size_t end) {
      SliceWorker worker(m, cfg, mom0, mom_t);
      for (std::size_t s = begin; s < end; ++s) {
        BeliefState belief = start[s];
        for (std::size_t idx : rows_of[order[s]]) {
          const auto& inst = batch[idx];
          const int time = static_cast<int>(inst.time_id);
          if (belief.time < 0) {
            belief = worker.first(inst.values, time);
            continue;
          }
          while (belief.time + 1 < time) belief = worker.next(belief, {}, belief.time + 1);
          belief = worker.next(belief, inst.values, time);
        }
        finals[s] = std::move(belief);
      }
      part0[k] = std::move(worker.stats0);
      part_t[k] = std::move(worker.stats_t);
    });
    BatchStatistics s0 = std::move(part0[0]);
    BatchStatistics st = std::move(part_t[0]);
    for (std::size_t k = 1; k < w; ++k) {
      s0 += part0[k];
      st += part_t[k];
    }

    cur0 = m.time0().conjugate_update(base0, cur0, s0);
    cur_t = m.transition().conjugate_update(base_t, cur_t, st);
    elbo = m.time0().expected_log_likelihood(m.time0().moments(cur0), s0) +
           m.transition().expected_log_likelihood(m.transition().moments(cur_t), st) + s0.entropy + st.entropy +
           s0.external + st.external - m.time0().kl_blocks(cur0, base0) - m.transition().kl_blocks(cur_t, base_t);
    if (!std::isfinite(elbo)) fail(ErrorCode::Numerical, "batch ELBO is not finite");
    const bool latent = s0.any_latent || st.any_latent;
    if (!latent) break;
    if (!sampled && it > 0 && !(first_batch && it == 1) &&
        std::abs(elbo - previous) <= cfg.global_rel_tol * std::abs(elbo))
      break;
    previous = elbo;
  }

  m.time0().set_posterior(std::move(cur0));
  m.transition().set_posterior(std::move(cur_t));
  for (std::size_t s = 0; s < order.size(); ++s) m.sequences()[order[s]].belief = std::move(finals[s]);
  m.record_batch(m.batches_seen(), batch.size(), elbo);
}

DynamicBayesianNetwork extract_dynamic_point_estimate(const DynamicLearnableModel& m) {
  auto time0 = extract_point_estimate(m.time0());
  const auto trans = extract_point_estimate(m.transition());
  const std::size_t n = m.structure().slice_size();
  std::vector<ConditionalDistribution> cpds(trans.cpds().begin(), trans.cpds().begin() + static_cast<std::ptrdiff_t>(n));
  return define_dbn(std::move(time0), m.structure().transition_parent_sets(), std::move(cpds));
}

std::vector<DynamicDataInstance> align_dynamic_batch(const DynamicBayesianNetwork& dbn, const ArffHeader& header,
                                                     std::span<const DynamicDataInstance> rows) {
  const auto cols = bind_columns(dbn.time0(), header);
  std::vector<DynamicDataInstance> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (row.values.size() != header.attributes.size()) fail(ErrorCode::Schema, "row does not match the header");
    DynamicDataInstance r{row.sequence_id, row.time_id, DataInstance(cols.size(), kNaN)};
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] >= 0) r.values[i] = row.values[static_cast<std::size_t>(cols[i])];
    out.push_back(std::move(r));
  }
  return out;
}

Json learned_dynamic_model_to_json(const DynamicLearnableModel& m) {
  Json doc = dynamic_model_to_json(extract_dynamic_point_estimate(m));
  Json post;
  post["time0"] = blocks_to_json(m.time0().structure(), m.time0().posterior());
  post["transition"] = blocks_to_json(m.transition().structure(), m.transition().posterior());
  doc["posterior"] = std::move(post);
  return doc;
}

}  // namespace streambayes
