#include "streambayes/model_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "streambayes/error.hpp"

namespace streambayes {

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

namespace {

Json variables_to_json(const VariableRegistry& vars) {
  Json out = Json::array();
  for (const auto& v : vars) {
    Json j;
    j["name"] = v.name;
    j["kind"] = v.is_finite() ? "finite" : "real";
    if (v.is_finite()) j["labels"] = v.space.labels();
    j["role"] = v.role == Role::Latent ? "latent" : "observable";
    out.push_back(std::move(j));
  }
  return out;
}

Json cpd_to_json(const ConditionalDistribution& cpd) {
  Json j;
  j["kind"] = distribution_kind_name(cpd.kind);
  if (!is_normal_kind(cpd.kind)) {
    j["rows"] = cpd.rows;
    return j;
  }
  Json params = Json::object();
  for (std::size_t c = 0; c < cpd.gaussians.size(); ++c) {
    const auto& g = cpd.gaussians[c];
    params[std::to_string(c)] = Json{{"intercept", g.intercept}, {"coeffs", g.coeffs}, {"variance", g.variance}};
  }
  j["params"] = std::move(params);
  return j;
}

[[noreturn]] void parse_fail(const std::string& where, const std::string& what) {
  fail(ErrorCode::Parse, "at " + where + ": " + what);
}

const Json& member(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) parse_fail(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) parse_fail(where, std::string("missing key '") + key + "'");
  return *it;
}

double number(const Json& j, const std::string& where) {
  if (!j.is_number()) parse_fail(where, "expected a number");
  return j.get<double>();
}

std::string string_at(const Json& j, const std::string& where) {
  if (!j.is_string()) parse_fail(where, "expected a string");
  return j.get<std::string>();
}

Json parse_document(std::string_view text, const char* format) {
  Json doc;
  try {
    doc = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Parse, "byte " + std::to_string(e.byte) + ": " + e.what());
  }
  const auto tag = string_at(member(doc, "format", "$"), "$.format");
  if (tag != format) parse_fail("$.format", "expected '" + std::string(format) + "', found '" + tag + "'");
  return doc;
}

VariableRegistry variables_from_json(const Json& arr) {
  if (!arr.is_array()) parse_fail("$.variables", "expected an array");
  VariableRegistry vars;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "$.variables[" + std::to_string(i) + "]";
    const auto& v = arr[i];
    const auto name = string_at(member(v, "name", where), where + ".name");
    const auto kind = string_at(member(v, "kind", where), where + ".kind");
    Role role = Role::Observable;
    if (auto it = v.find("role"); it != v.end()) {
      const auto r = string_at(*it, where + ".role");
      if (r == "latent") role = Role::Latent;
      else if (r != "observable") parse_fail(where + ".role", "unknown role '" + r + "'");
    }
    StateSpace space = StateSpace::real();
    if (kind == "finite") {
      const auto& labels = member(v, "labels", where);
      if (!labels.is_array()) parse_fail(where + ".labels", "expected an array");
      std::vector<std::string> ls;
      for (std::size_t k = 0; k < labels.size(); ++k)
        ls.push_back(string_at(labels[k], where + ".labels[" + std::to_string(k) + "]"));
      space = StateSpace::finite(std::move(ls));
    } else if (kind != "real") {
      parse_fail(where + ".kind", "unknown kind '" + kind + "'");
    }
    try {
      vars.add(name, std::move(space), role);
    } catch (const Error& e) {
      parse_fail(where + ".name", e.what());
    }
  }
  return vars;
}

ConditionalDistribution cpd_from_json(const Json& j, const std::string& where) {
  ConditionalDistribution cpd;
  const auto kind_name = string_at(member(j, "kind", where), where + ".kind");
  auto kind = parse_distribution_kind(kind_name);
  if (!kind) parse_fail(where + ".kind", "unknown distribution kind '" + kind_name + "'");
  cpd.kind = *kind;
  if (!is_normal_kind(cpd.kind)) {
    const auto& rows = member(j, "rows", where);
    if (!rows.is_array()) parse_fail(where + ".rows", "expected an array");
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string rw = where + ".rows[" + std::to_string(r) + "]";
      if (!rows[r].is_array()) parse_fail(rw, "expected an array");
      std::vector<double> row;
      for (std::size_t k = 0; k < rows[r].size(); ++k) row.push_back(number(rows[r][k], rw + "[" + std::to_string(k) + "]"));
      // Rows within 1e-9 of the simplex are renormalized; rows within 1e-12 are kept bit-exact.
      const double sum = std::accumulate(row.begin(), row.end(), 0.0);
      if (std::abs(sum - 1.0) > 1e-12 && std::abs(sum - 1.0) <= 1e-9)
        for (double& p : row) p /= sum;
      cpd.rows.push_back(std::move(row));
    }
    return cpd;
  }
  const auto& params = member(j, "params", where);
  if (!params.is_object()) parse_fail(where + ".params", "expected an object keyed by configuration index");
  cpd.gaussians.resize(params.size());
  std::vector<bool> seen(params.size(), false);
  for (auto it = params.begin(); it != params.end(); ++it) {
    const std::string pw = where + ".params." + it.key();
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(it.key().data(), it.key().data() + it.key().size(), idx);
    if (ec != std::errc() || ptr != it.key().data() + it.key().size() || idx >= params.size() || seen[idx])
      parse_fail(pw, "configuration keys must be the indices 0..n-1");
    seen[idx] = true;
    auto& g = cpd.gaussians[idx];
    g.intercept = number(member(it.value(), "intercept", pw), pw + ".intercept");
    g.variance = number(member(it.value(), "variance", pw), pw + ".variance");
    const auto& coeffs = member(it.value(), "coeffs", pw);
    if (!coeffs.is_array()) parse_fail(pw + ".coeffs", "expected an array");
    for (std::size_t k = 0; k < coeffs.size(); ++k) g.coeffs.push_back(number(coeffs[k], pw + ".coeffs"));
  }
  return cpd;
}

std::vector<std::string> name_list(const Json& j, const std::string& where) {
  if (!j.is_array()) parse_fail(where, "expected an array of names");
  std::vector<std::string> out;
  for (std::size_t k = 0; k < j.size(); ++k) out.push_back(string_at(j[k], where + "[" + std::to_string(k) + "]"));
  return out;
}

// Parses {"parents": ..., "cpds": ...}; `resolve` maps a parent name to its reference.
template <class Parent, class Resolve>
void slice_from_json(const Json& slice, const std::string& where, const VariableRegistry& vars, Resolve resolve,
                     std::vector<std::vector<Parent>>& parents, std::vector<ConditionalDistribution>& cpds) {
  parents.assign(vars.size(), {});
  cpds.assign(vars.size(), {});
  if (auto it = slice.find("parents"); it != slice.end()) {
    if (!it->is_object()) parse_fail(where + ".parents", "expected an object");
    for (auto p = it->begin(); p != it->end(); ++p) {
      auto child = vars.find(p.key());
      if (!child) parse_fail(where + ".parents", "unknown variable '" + p.key() + "'");
      for (const auto& name : name_list(p.value(), where + ".parents." + p.key()))
        parents[static_cast<std::size_t>(*child)].push_back(resolve(name, where + ".parents." + p.key()));
    }
  }
  const auto& cpd_obj = member(slice, "cpds", where);
  if (!cpd_obj.is_object()) parse_fail(where + ".cpds", "expected an object");
  for (const auto& v : vars) {
    auto it = cpd_obj.find(v.name);
    if (it == cpd_obj.end()) parse_fail(where + ".cpds", "missing distribution for '" + v.name + "'");
    cpds[static_cast<std::size_t>(v.id)] = cpd_from_json(*it, where + ".cpds." + v.name);
  }
  if (cpd_obj.size() != vars.size()) parse_fail(where + ".cpds", "distribution for an unknown variable");
}

std::string config_suffix(const BayesianNetwork& bn, VarId id, std::size_t cfg) {
  const auto& sig = bn.signature(id);
  if (sig.discrete.empty()) return "";
  std::string s = " | {";
  for (std::size_t k = 0; k < sig.discrete.size(); ++k) {
    const auto state = (cfg / sig.strides[k]) % static_cast<std::size_t>(sig.cardinalities[k]);
    const auto& pv = bn.variable(sig.discrete[k]);
    if (k) s += ", ";
    s += pv.name + " = " + pv.space.labels()[state];
  }
  return s + "}";
}

void render_cpd(std::ostringstream& out, const BayesianNetwork& bn, VarId id) {
  const auto& var = bn.variable(id);
  const auto& cpd = bn.cpd(id);
  out << "P(" << var.name;
  const auto& parents = bn.parents(id);
  for (std::size_t k = 0; k < parents.size(); ++k) out << (k ? ", " : " | ") << bn.variable(parents[k]).name;
  std::string kind = distribution_kind_name(cpd.kind);
  std::replace(kind.begin(), kind.end(), '_', '|');
  out << ") follows a " << kind << "\n";
  if (!is_normal_kind(cpd.kind)) {
    for (std::size_t c = 0; c < cpd.rows.size(); ++c) {
      out << "[ ";
      for (std::size_t k = 0; k < cpd.rows[c].size(); ++k) out << (k ? ", " : "") << format_double(cpd.rows[c][k]);
      out << " ]" << config_suffix(bn, id, c) << "\n";
    }
  } else {
    const auto& sig = bn.signature(id);
    for (std::size_t c = 0; c < cpd.gaussians.size(); ++c) {
      const auto& g = cpd.gaussians[c];
      if (sig.continuous.empty()) {
        out << "Normal [ mu = " << format_double(g.intercept);
      } else {
        out << "Normal [ alpha = " << format_double(g.intercept);
        for (std::size_t k = 0; k < g.coeffs.size(); ++k)
          out << ", beta_" << bn.variable(sig.continuous[k]).name << " = " << format_double(g.coeffs[k]);
      }
      out << ", var = " << format_double(g.variance) << " ]" << config_suffix(bn, id, c) << "\n";
    }
  }
  out << "\n";
}

}  // namespace

Json model_to_json(const BayesianNetwork& bn) {
  Json doc;
  doc["format"] = kStaticFormat;
  doc["variables"] = variables_to_json(bn.variables());
  Json parents = Json::object();
  Json cpds = Json::object();
  for (const auto& v : bn.variables()) {
    if (!bn.parents(v.id).empty()) {
      Json names = Json::array();
      for (VarId p : bn.parents(v.id)) names.push_back(bn.variable(p).name);
      parents[v.name] = std::move(names);
    }
    cpds[v.name] = cpd_to_json(bn.cpd(v.id));
  }
  doc["parents"] = std::move(parents);
  doc["cpds"] = std::move(cpds);
  return doc;
}

std::string serialize_model(const BayesianNetwork& bn) { return model_to_json(bn).dump(2) + "\n"; }

BayesianNetwork deserialize_model(std::string_view text) {
  const Json doc = parse_document(text, kStaticFormat);
  auto vars = variables_from_json(member(doc, "variables", "$"));
  std::vector<std::vector<VarId>> parents;
  std::vector<ConditionalDistribution> cpds;
  const auto resolve = [&](const std::string& name, const std::string& where) {
    auto id = vars.find(name);
    if (!id) parse_fail(where, "unknown parent '" + name + "'");
    return *id;
  };
  slice_from_json<VarId>(doc, "$", vars, resolve, parents, cpds);
  BayesianNetwork bn(std::move(vars), std::move(parents), std::move(cpds));
  require_valid(bn);
  return bn;
}

Json dynamic_model_to_json(const DynamicBayesianNetwork& dbn) {
  Json doc;
  doc["format"] = kDynamicFormat;
  doc["variables"] = variables_to_json(dbn.variables());
  auto time0 = model_to_json(dbn.time0());
  Json t0;
  t0["parents"] = std::move(time0["parents"]);
  t0["cpds"] = std::move(time0["cpds"]);
  doc["time0"] = std::move(t0);
  Json parents = Json::object();
  Json cpds = Json::object();
  for (const auto& v : dbn.variables()) {
    const auto& tp = dbn.transition_parents(v.id);
    if (!tp.empty()) {
      Json names = Json::array();
      for (const auto& p : tp) names.push_back(dbn.variables()[p.variable].name + (p.previous ? kPreviousSuffix : ""));
      parents[v.name] = std::move(names);
    }
    cpds[v.name] = cpd_to_json(dbn.transition_cpd(v.id));
  }
  Json tr;
  tr["parents"] = std::move(parents);
  tr["cpds"] = std::move(cpds);
  doc["transition"] = std::move(tr);
  return doc;
}

std::string serialize_dynamic_model(const DynamicBayesianNetwork& dbn) {
  return dynamic_model_to_json(dbn).dump(2) + "\n";
}

DynamicBayesianNetwork deserialize_dynamic_model(std::string_view text) {
  const Json doc = parse_document(text, kDynamicFormat);
  auto vars = variables_from_json(member(doc, "variables", "$"));
  std::vector<std::vector<VarId>> parents0;
  std::vector<ConditionalDistribution> cpds0;
  const auto resolve0 = [&](const std::string& name, const std::string& where) {
    auto id = vars.find(name);
    if (!id) parse_fail(where, "unknown parent '" + name + "'");
    return *id;
  };
  slice_from_json<VarId>(member(doc, "time0", "$"), "$.time0", vars, resolve0, parents0, cpds0);

  const std::string suffix = kPreviousSuffix;
  const auto resolve_t = [&](const std::string& name, const std::string& where) {
    TemporalParent p;
    std::string base = name;
    if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
      base.resize(base.size() - suffix.size());
      p.previous = true;
    }
    auto id = vars.find(base);
    if (!id) fail(ErrorCode::Structure, "at " + where + ": transition references undeclared variable '" + name + "'");
    p.variable = *id;
    return p;
  };
  std::vector<std::vector<TemporalParent>> parents_t;
  std::vector<ConditionalDistribution> cpds_t;
  slice_from_json<TemporalParent>(member(doc, "transition", "$"), "$.transition", vars, resolve_t, parents_t, cpds_t);

  BayesianNetwork time0(std::move(vars), std::move(parents0), std::move(cpds0));
  return define_dbn(std::move(time0), std::move(parents_t), std::move(cpds_t));
}

ModelFileKind peek_model_kind(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Parse, "byte " + std::to_string(e.byte) + ": " + e.what());
  }
  const auto tag = string_at(member(doc, "format", "$"), "$.format");
  if (tag == kStaticFormat) return ModelFileKind::Static;
  if (tag == kDynamicFormat) return ModelFileKind::Dynamic;
  parse_fail("$.format", "unknown model format '" + tag + "'");
}

std::string render_network(const BayesianNetwork& bn) {
  std::ostringstream out;
  out << "Bayesian Network:\n";
  for (VarId v = 0; v < static_cast<VarId>(bn.size()); ++v) render_cpd(out, bn, v);
  return out.str();
}

std::string render_dynamic_network(const DynamicBayesianNetwork& dbn) {
  std::ostringstream out;
  out << "Dynamic Bayesian Network Time 0:\n";
  for (VarId v = 0; v < static_cast<VarId>(dbn.slice_size()); ++v) render_cpd(out, dbn.time0(), v);
  out << "Dynamic Bayesian Network Time T:\n";
  for (VarId v = 0; v < static_cast<VarId>(dbn.slice_size()); ++v) render_cpd(out, dbn.transition_network(), v);
  return out.str();
}

std::string render_marginal(const Marginal& m) {
  std::string out;
  if (m.discrete) {
    out = "[ ";
    for (std::size_t k = 0; k < m.probabilities.size(); ++k) out += (k ? ", " : "") + format_double(m.probabilities[k]);
    return out + " ]";
  }
  return "Normal [ mu = " + format_double(m.mean) + ", var = " + format_double(m.variance) + " ]";
}

Json marginal_to_json(const Marginal& m) {
  Json j;
  j["variable"] = m.name;
  if (m.discrete) {
    j["family"] = "Multinomial";
    j["probabilities"] = m.probabilities;
  } else {
    j["family"] = "Normal";
    j["mean"] = m.mean;
    j["variance"] = m.variance;
  }
  return j;
}

}  // namespace streambayes
