#include "streambayes/streambayes.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <variant>

#include "streambayes/error.hpp"
#include "streambayes/model_io.hpp"
#include "streambayes/model_zoo.hpp"

using namespace streambayes;

struct sb_model {
  std::variant<BayesianNetwork, DynamicBayesianNetwork> net;
};

struct sb_stream {
  std::variant<ArffReader, DynamicArffReader> reader;
};

struct sb_learner {
  TemplateModel model;
};

struct sb_posterior {
  std::string evidence_label;
  std::vector<Marginal> marginals;
};

struct sb_filter {
  DynamicBayesianNetwork dbn;
  FilterAlgorithm algo = FilterAlgorithm::Vmp;
  InferenceConfig cfg;
  VarId target = 0;
  std::vector<int> columns;
  std::map<long, std::unique_ptr<DynamicFilter>> sequences;
  bool started = false;
  long current_sequence = 0;
};

namespace {

thread_local std::string g_last_error;

sb_status status_of(ErrorCode code) { return static_cast<sb_status>(static_cast<int>(code) + 1); }

// Runs `body`, converting exceptions to status codes and recording the message.
template <class F>
sb_status guarded(F&& body) {
  try {
    body();
    return SB_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SB_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SB_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) fail(ErrorCode::Usage, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

InferenceConfig to_inference_config(const sb_infer_config* c) {
  InferenceConfig cfg;
  if (c == nullptr) return cfg;
  cfg.sample_count = c->samples;
  cfg.seed = c->seed;
  cfg.worker_count = c->workers;
  cfg.max_iterations = c->max_iterations;
  cfg.elbo_rel_tol = c->tolerance;
  cfg.validate();
  return cfg;
}

FilterAlgorithm to_algorithm(const sb_infer_config* c) {
  if (c == nullptr || c->algorithm == SB_ALGO_VMP) return FilterAlgorithm::Vmp;
  if (c->algorithm == SB_ALGO_IS) return FilterAlgorithm::ImportanceSampling;
  fail(ErrorCode::Config, "unknown inference algorithm");
}

const std::vector<Attribute>& attributes_of(const sb_stream& s) {
  return std::visit([](const auto& r) -> const std::vector<Attribute>& { return r.header().attributes; }, s.reader);
}

const ArffHeader& header_of(const sb_stream& s) {
  return std::visit([](const auto& r) -> const ArffHeader& { return r.header(); }, s.reader);
}

}  // namespace

extern "C" {

const char* sb_status_name(sb_status status) {
  if (status == SB_OK) return "Ok";
  if (status == SB_INTERNAL) return "InternalError";
  if (status > SB_OK && status < SB_INTERNAL) return error_code_name(static_cast<ErrorCode>(static_cast<int>(status) - 1));
  return "UnknownStatus";
}

const char* sb_last_error(void) { return g_last_error.c_str(); }

void sb_string_free(char* s) { std::free(s); }

sb_status sb_model_parse(const char* json_text, sb_model** out) {
  return guarded([&] {
    require(json_text, "json_text");
    require(out, "out");
    *out = nullptr;
    const std::string_view text(json_text);
    auto m = std::make_unique<sb_model>();
    if (peek_model_kind(text) == ModelFileKind::Dynamic)
      m->net = deserialize_dynamic_model(text);
    else
      m->net = deserialize_model(text);
    *out = m.release();
  });
}

sb_status sb_model_load(const char* path, sb_model** out) {
  return guarded([&] {
    require(path, "path");
    const auto text = read_file(path);
    if (const auto st = sb_model_parse(text.c_str(), out); st != SB_OK) throw Error(static_cast<ErrorCode>(st - 1), std::string(path) + ": " + g_last_error);
  });
}

int sb_model_is_dynamic(const sb_model* model) {
  return model != nullptr && std::holds_alternative<DynamicBayesianNetwork>(model->net);
}

sb_status sb_model_to_json(const sb_model* model, char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = dup_string(std::visit(
        [](const auto& n) {
          if constexpr (std::is_same_v<std::decay_t<decltype(n)>, BayesianNetwork>)
            return serialize_model(n);
          else
            return serialize_dynamic_model(n);
        },
        model->net));
  });
}

sb_status sb_model_render(const sb_model* model, char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = dup_string(std::visit(
        [](const auto& n) {
          if constexpr (std::is_same_v<std::decay_t<decltype(n)>, BayesianNetwork>)
            return render_network(n);
          else
            return render_dynamic_network(n);
        },
        model->net));
  });
}

void sb_model_free(sb_model* model) { delete model; }

sb_status sb_stream_open(const char* path, int dynamic, sb_stream** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    if (dynamic)
      *out = new sb_stream{DynamicArffReader::open(path)};
    else
      *out = new sb_stream{ArffReader::open(path)};
  });
}

int sb_stream_is_dynamic(const sb_stream* stream) {
  return stream != nullptr && std::holds_alternative<DynamicArffReader>(stream->reader);
}

void sb_stream_free(sb_stream* stream) { delete stream; }

void sb_learn_config_init(sb_learn_config* cfg) {
  if (cfg == nullptr) return;
  const LearningConfig d;
  const SviConfig s;
  *cfg = sb_learn_config{d.batch_size, d.worker_count, d.local_vmp.seed, 0, s.kappa, s.tau, s.total_n};
}

int sb_template_is_dynamic(const char* template_id) {
  return template_id != nullptr && is_dynamic_template(template_id);
}

sb_status sb_learner_new(const char* template_id, const sb_stream* stream, sb_learner** out) {
  return guarded([&] {
    require(template_id, "template_id");
    require(stream, "stream");
    require(out, "out");
    *out = nullptr;
    auto t = make_template(template_id, attributes_of(*stream));
    const bool dynamic_model = std::holds_alternative<DynamicLearnableModel>(t.model);
    if (dynamic_model != sb_stream_is_dynamic(stream))
      fail(ErrorCode::Type, std::string("template '") + template_id + "' needs a " + (dynamic_model ? "dynamic" : "static") +
                                " data stream");
    *out = new sb_learner{std::move(t.model)};
  });
}

sb_status sb_learner_step(sb_learner* learner, sb_stream* stream, const sb_learn_config* c, int* done, long* batch_index,
                          size_t* instances, double* elbo) {
  return guarded([&] {
    require(learner, "learner");
    require(stream, "stream");
    require(c, "cfg");
    require(done, "done");
    LearningConfig cfg;
    cfg.batch_size = c->batch_size;
    cfg.worker_count = c->workers;
    cfg.local_vmp.seed = c->seed;
    if (c->use_svi) cfg.svi = SviConfig{c->svi_kappa, c->svi_tau, c->svi_total_n};
    cfg.validate();
    require_batch_size(cfg.batch_size);

    *done = 0;
    std::size_t n = 0;
    long index = 0;
    double value = 0.0;
    if (auto* lm = std::get_if<LearnableModel>(&learner->model)) {
      auto& reader = std::get<ArffReader>(stream->reader);
      std::vector<DataInstance> rows;
      while (rows.size() < cfg.batch_size) {
        auto row = reader.next();
        if (!row) break;
        rows.push_back(std::move(*row));
      }
      if (rows.empty()) {
        *done = 1;
        return;
      }
      const auto aligned = align_batch(lm->structure(), reader.header(), rows);
      index = lm->batches_seen();
      if (cfg.svi) {
        const long total = cfg.svi->total_n > 0 ? cfg.svi->total_n : 10 * static_cast<long>(cfg.batch_size);
        svi_update(*lm, aligned, index, total, cfg);
      } else {
        update_model(*lm, aligned, cfg);
      }
      n = rows.size();
      value = lm->elbo_trace().back();
    } else {
      auto& dm = std::get<DynamicLearnableModel>(learner->model);
      if (cfg.svi) fail(ErrorCode::Config, "SVI is not available for dynamic templates");
      auto& reader = std::get<DynamicArffReader>(stream->reader);
      std::vector<DynamicDataInstance> rows;
      while (rows.size() < cfg.batch_size) {
        auto row = reader.next();
        if (!row) break;
        rows.push_back(std::move(*row));
      }
      if (rows.empty()) {
        *done = 1;
        return;
      }
      const auto aligned = align_dynamic_batch(dm.structure(), reader.header(), rows);
      index = dm.batches_seen();
      learn_dynamic(dm, aligned, cfg);
      n = rows.size();
      value = dm.elbo_trace().back();
    }
    if (batch_index) *batch_index = index;
    if (instances) *instances = n;
    if (elbo) *elbo = value;
  });
}

sb_status sb_learner_to_json(const sb_learner* learner, char** out) {
  return guarded([&] {
    require(learner, "learner");
    require(out, "out");
    const Json doc = std::visit(
        [](const auto& m) {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, LearnableModel>)
            return learned_model_to_json(m);
          else
            return learned_dynamic_model_to_json(m);
        },
        learner->model);
    *out = dup_string(doc.dump(2) + "\n");
  });
}

sb_status sb_learner_render(const sb_learner* learner, char** out) {
  return guarded([&] {
    require(learner, "learner");
    require(out, "out");
    *out = dup_string(std::visit(
        [](const auto& m) {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, LearnableModel>)
            return render_network(extract_point_estimate(m));
          else
            return render_dynamic_network(extract_dynamic_point_estimate(m));
        },
        learner->model));
  });
}

void sb_learner_free(sb_learner* learner) { delete learner; }

void sb_infer_config_init(sb_infer_config* cfg) {
  if (cfg == nullptr) return;
  const InferenceConfig d;
  *cfg = sb_infer_config{SB_ALGO_VMP, d.sample_count, d.seed, d.worker_count, d.max_iterations, d.elbo_rel_tol};
}

sb_status sb_infer(const sb_model* model, const char* evidence, const char* targets, const sb_infer_config* c,
                   sb_posterior** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = nullptr;
    const auto* bn = std::get_if<BayesianNetwork>(&model->net);
    if (bn == nullptr) fail(ErrorCode::Type, "inference needs a static model; use filtering for dynamic models");
    const auto cfg = to_inference_config(c);
    const auto algo = to_algorithm(c);

    std::vector<std::pair<std::string, std::string>> items;
    std::string label;
    for (const auto& item : split(evidence ? evidence : "", ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) fail(ErrorCode::Parse, "evidence item '" + item + "' is not name=value");
      items.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
      label += (label.empty() ? "" : ", ") + items.back().first + "=" + items.back().second;
    }
    const auto assignment = parse_evidence(*bn, items);

    std::vector<std::string> names;
    for (const auto& t : split(targets ? targets : "", ',')) names.push_back(trim(t));
    std::vector<VarId> ids = resolve_targets(*bn, names);
    if (ids.empty())
      for (const auto& v : bn->variables())
        if (!assignment.has(v.id)) ids.push_back(v.id);

    auto report = algo == FilterAlgorithm::Vmp ? vmp_infer(*bn, assignment, ids, cfg)
                                               : importance_sampling_infer(*bn, assignment, ids, cfg);
    *out = new sb_posterior{std::move(label), std::move(report.posteriors)};
  });
}

size_t sb_posterior_count(const sb_posterior* p) { return p == nullptr ? 0 : p->marginals.size(); }

sb_status sb_posterior_get(const sb_posterior* p, size_t index, const char** name, int* discrete,
                           const double** probabilities, size_t* states, double* mean, double* variance) {
  return guarded([&] {
    require(p, "posterior");
    if (index >= p->marginals.size()) fail(ErrorCode::InvalidParameter, "posterior index out of range");
    const auto& m = p->marginals[index];
    if (name) *name = m.name.c_str();
    if (discrete) *discrete = m.discrete ? 1 : 0;
    if (probabilities) *probabilities = m.discrete ? m.probabilities.data() : nullptr;
    if (states) *states = m.discrete ? m.probabilities.size() : 0;
    if (mean) *mean = m.mean;
    if (variance) *variance = m.variance;
  });
}

sb_status sb_posterior_render(const sb_posterior* p, int json, char** out) {
  return guarded([&] {
    require(p, "posterior");
    require(out, "out");
    if (json) {
      Json doc;
      doc["evidence"] = p->evidence_label;
      doc["posteriors"] = Json::array();
      for (const auto& m : p->marginals) doc["posteriors"].push_back(marginal_to_json(m));
      *out = dup_string(doc.dump(2) + "\n");
      return;
    }
    std::string text;
    for (const auto& m : p->marginals)
      text += "P(" + m.name + (p->evidence_label.empty() ? "" : "|" + p->evidence_label) + ") = " + render_marginal(m) + "\n";
    *out = dup_string(text);
  });
}

void sb_posterior_free(sb_posterior* p) { delete p; }

sb_status sb_filter_new(const sb_model* model, const sb_stream* stream, const char* target, const sb_infer_config* c,
                        sb_filter** out) {
  return guarded([&] {
    require(model, "model");
    require(stream, "stream");
    require(target, "target");
    require(out, "out");
    *out = nullptr;
    const auto* dbn = std::get_if<DynamicBayesianNetwork>(&model->net);
    if (dbn == nullptr) fail(ErrorCode::Type, "filtering needs a dynamic model");
    if (!sb_stream_is_dynamic(stream)) fail(ErrorCode::Type, "filtering needs a dynamic data stream");
    auto f = std::make_unique<sb_filter>();
    f->dbn = *dbn;
    f->algo = to_algorithm(c);
    f->cfg = to_inference_config(c);
    f->target = dbn->variables().id_of(target);
    f->columns = bind_columns(dbn->time0(), header_of(*stream));
    *out = f.release();
  });
}

sb_status sb_filter_step(sb_filter* filter, sb_stream* stream, int horizon, int json, char** out, int* done) {
  return guarded([&] {
    require(filter, "filter");
    require(stream, "stream");
    require(out, "out");
    require(done, "done");
    *out = nullptr;
    *done = 0;
    if (horizon < 0) fail(ErrorCode::InvalidParameter, "horizon must be non-negative");
    auto* reader = std::get_if<DynamicArffReader>(&stream->reader);
    if (reader == nullptr) fail(ErrorCode::Type, "filtering needs a dynamic data stream");
    auto row = reader->next();
    if (!row) {
      *done = 1;
      return;
    }
    auto& slot = filter->sequences[row->sequence_id];
    if (!slot) slot = std::make_unique<DynamicFilter>(filter->dbn, filter->algo, filter->cfg);
    const auto assignment = to_assignment(row->values, filter->columns);
    slot->add_evidence(DynamicEvidence{row->time_id, assignment});

    const auto filtered = slot->filtered(filter->target);
    std::string text;
    if (json) {
      Json line;
      line["sequence"] = row->sequence_id;
      line["time"] = row->time_id;
      line["filtered"] = marginal_to_json(filtered);
      if (horizon > 0) {
        line["predictive"] = marginal_to_json(slot->predictive(filter->target, horizon));
        line["predictive"]["horizon"] = horizon;
      }
      text = line.dump() + "\n";
    } else {
      // A new sequence after the first is announced on its own line.
      if (filter->started && row->sequence_id != filter->current_sequence)
        text += std::string(kSequenceIdName) + "=" + std::to_string(row->sequence_id) + "\n";
      const auto t = std::to_string(row->time_id);
      text += "t=" + t + " " + render_marginal(filtered) + "\n";
      if (horizon > 0)
        text += "t=" + t + "+" + std::to_string(horizon) + " " +
                render_marginal(slot->predictive(filter->target, horizon)) + "\n";
    }
    filter->started = true;
    filter->current_sequence = row->sequence_id;
    *out = dup_string(text);
  });
}

void sb_filter_free(sb_filter* filter) { delete filter; }

sb_status sb_sample_to_file(const sb_model* model, size_t n, uint64_t seed, const char* path) {
  const auto st = guarded([&] {
    require(model, "model");
    require(path, "path");
    const auto* bn = std::get_if<BayesianNetwork>(&model->net);
    if (bn == nullptr) fail(ErrorCode::Type, "sampling needs a static model");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, std::string("cannot write '") + path + "'");
    ArffWriter writer(out, header_for(*bn, "samples"));
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = ancestral_sample(*bn, rng);
      writer.write(a.values());
    }
    out.flush();
    if (!out) fail(ErrorCode::Io, std::string("failed writing '") + path + "'");
  });
  if (st != SB_OK && path != nullptr) std::remove(path);
  return st;
}

}  // extern "C"
