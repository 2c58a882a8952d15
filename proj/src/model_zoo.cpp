#include "streambayes/model_zoo.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "streambayes/error.hpp"

namespace streambayes {

namespace {

void require_real(std::span<const Attribute> attributes, const char* model) {
  for (const auto& a : attributes)
    if (a.space.is_finite()) fail(ErrorCode::Type, std::string(model) + " needs real attributes; '" + a.name + "' is finite");
}

void require_attributes(std::span<const Attribute> attributes, const char* model) {
  if (attributes.empty()) fail(ErrorCode::Schema, std::string(model) + " needs at least one attribute");
}

VariableRegistry registry_of(std::span<const Attribute> attributes) {
  VariableRegistry reg;
  for (const auto& a : attributes) {
    if (a.special != SpecialAttribute::None) continue;
    if (reg.find(a.name)) fail(ErrorCode::Structure, "duplicate variable name '" + a.name + "'");
    reg.add(a.name, a.space);
  }
  return reg;
}

std::size_t find_attribute(std::span<const Attribute> attributes, std::string_view name) {
  for (std::size_t i = 0; i < attributes.size(); ++i)
    if (attributes[i].name == name) return i;
  fail(ErrorCode::Schema, "attribute '" + std::string(name) + "' is not in the data");
}

bool has_cycle(const std::vector<std::vector<VarId>>& parents) {
  enum : char { Fresh, Open, Done };
  std::vector<char> state(parents.size(), Fresh);
  std::function<bool(VarId)> visit = [&](VarId v) {
    auto& s = state[static_cast<std::size_t>(v)];
    if (s == Open) return true;
    if (s == Done) return false;
    s = Open;
    for (VarId p : parents[static_cast<std::size_t>(v)])
      if (visit(p)) return true;
    state[static_cast<std::size_t>(v)] = Done;
    return false;
  };
  for (std::size_t v = 0; v < parents.size(); ++v)
    if (visit(static_cast<VarId>(v))) return true;
  return false;
}

// Template CPDs for the transition slice: parents resolve to the slice variable itself (a t-1 copy
// shares the space of its original).
std::vector<ConditionalDistribution> transition_defaults(const VariableRegistry& vars,
                                                         const std::vector<std::vector<TemporalParent>>& parents) {
  std::vector<ConditionalDistribution> out;
  for (const auto& v : vars) {
    std::vector<const Variable*> ps;
    for (const auto& p : parents[static_cast<std::size_t>(v.id)]) ps.push_back(&vars[p.variable]);
    out.push_back(default_cpd(v, ps));
  }
  return out;
}

int parse_int_knob(const std::string& key, const std::string& value) {
  int out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) fail(ErrorCode::Config, "knob '" + key + "' needs an integer, got '" + value + "'");
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

ConditionalDistribution default_cpd(const Variable& child, const std::vector<const Variable*>& parents) {
  std::size_t configs = 1;
  std::size_t continuous = 0;
  for (const auto* p : parents) {
    if (p->is_finite())
      configs *= static_cast<std::size_t>(p->space.cardinality());
    else
      ++continuous;
  }
  ConditionalDistribution cpd;
  const bool discrete = std::any_of(parents.begin(), parents.end(), [](const Variable* p) { return p->is_finite(); });
  cpd.kind = expected_kind(child.is_finite(), discrete, continuous > 0);
  if (child.is_finite()) {
    const auto k = static_cast<std::size_t>(child.space.cardinality());
    cpd.rows.assign(configs, std::vector<double>(k, 1.0 / static_cast<double>(k)));
  } else {
    cpd.gaussians.assign(configs, GaussianParams{0.0, std::vector<double>(continuous, 0.0), 1.0});
  }
  return cpd;
}

BayesianNetwork default_network(VariableRegistry variables, std::vector<std::vector<VarId>> parents) {
  std::vector<ConditionalDistribution> cpds;
  for (const auto& v : variables) {
    std::vector<const Variable*> ps;
    for (VarId p : parents.at(static_cast<std::size_t>(v.id))) ps.push_back(&variables[p]);
    cpds.push_back(default_cpd(v, ps));
  }
  return BayesianNetwork(std::move(variables), std::move(parents), std::move(cpds));
}

LearnableModel gaussian_mixture(std::span<const Attribute> attributes, int k, const PriorSpec& priors) {
  if (k < 2) fail(ErrorCode::Config, "a mixture needs at least 2 components, got " + std::to_string(k));
  require_attributes(attributes, "gaussian_mixture");
  require_real(attributes, "gaussian_mixture");
  auto vars = registry_of(attributes);
  const std::size_t n = vars.size();
  const VarId h = vars.add("HiddenVar", StateSpace::finite(k), Role::Latent);
  std::vector<std::vector<VarId>> parents(n, std::vector<VarId>{h});
  parents.emplace_back();
  return build_learner(default_network(std::move(vars), std::move(parents)), priors);
}

LearnableModel naive_bayes(std::span<const Attribute> attributes, std::string_view class_attribute,
                           const PriorSpec& priors) {
  const auto c = static_cast<VarId>(find_attribute(attributes, class_attribute));
  if (!attributes[static_cast<std::size_t>(c)].space.is_finite())
    fail(ErrorCode::Type, "class attribute '" + std::string(class_attribute) + "' must be finite");
  auto vars = registry_of(attributes);
  std::vector<std::vector<VarId>> parents(vars.size());
  for (std::size_t i = 0; i < parents.size(); ++i)
    if (static_cast<VarId>(i) != c) parents[i] = {c};
  return build_learner(default_network(std::move(vars), std::move(parents)), priors);
}

LearnableModel bayesian_linear_regression(std::span<const Attribute> attributes, std::string_view target,
                                          const PriorSpec& priors) {
  const auto y = static_cast<VarId>(find_attribute(attributes, target));
  require_real(attributes, "bayesian_linear_regression");
  auto vars = registry_of(attributes);
  std::vector<std::vector<VarId>> parents(vars.size());
  for (std::size_t i = 0; i < parents.size(); ++i)
    if (static_cast<VarId>(i) != y) parents[static_cast<std::size_t>(y)].push_back(static_cast<VarId>(i));
  return build_learner(default_network(std::move(vars), std::move(parents)), priors);
}

LearnableModel factor_analysis(std::span<const Attribute> attributes, int n_factors, const PriorSpec& priors) {
  require_attributes(attributes, "factor_analysis");
  require_real(attributes, "factor_analysis");
  if (n_factors < 1) fail(ErrorCode::Config, "factor analysis needs at least one factor");
  if (static_cast<std::size_t>(n_factors) >= attributes.size())
    fail(ErrorCode::Config, std::to_string(n_factors) + " factors for " + std::to_string(attributes.size()) +
                                " attributes; use fewer factors than attributes");
  auto vars = registry_of(attributes);
  const std::size_t n = vars.size();
  std::vector<VarId> factors;
  PriorSpec p = priors;
  for (int i = 0; i < n_factors; ++i) {
    const std::string name = "FactorVar" + std::to_string(i);
    factors.push_back(vars.add(name, StateSpace::real(), Role::Latent));
    p.fixed.push_back(name);
  }
  std::vector<std::vector<VarId>> parents(n, factors);
  parents.resize(vars.size());
  return build_learner(default_network(std::move(vars), std::move(parents)), p);
}

DynamicLearnableModel hidden_markov_model(std::span<const Attribute> attributes, int n_states, const PriorSpec& priors) {
  if (n_states < 2) fail(ErrorCode::Config, "an HMM needs at least 2 states, got " + std::to_string(n_states));
  require_attributes(attributes, "hidden_markov_model");
  auto vars = registry_of(attributes);
  const std::size_t n = vars.size();
  const VarId h = vars.add("HiddenVar", StateSpace::finite(n_states), Role::Latent);
  std::vector<std::vector<VarId>> parents(n, std::vector<VarId>{h});
  parents.emplace_back();
  std::vector<std::vector<TemporalParent>> trans(n, std::vector<TemporalParent>{{h, false}});
  trans.push_back({{h, true}});
  auto cpds = transition_defaults(vars, trans);
  auto dbn = define_dbn(default_network(std::move(vars), std::move(parents)), std::move(trans), std::move(cpds));
  return build_dynamic_learner(dbn, priors);
}

DynamicLearnableModel kalman_filter(std::span<const Attribute> attributes, int n_hidden, const PriorSpec& priors) {
  if (n_hidden < 1) fail(ErrorCode::Config, "a Kalman filter needs at least one hidden variable");
  require_attributes(attributes, "kalman_filter");
  require_real(attributes, "kalman_filter");
  auto vars = registry_of(attributes);
  const std::size_t n = vars.size();
  std::vector<VarId> hidden;
  PriorSpec p = priors;
  for (int i = 0; i < n_hidden; ++i) {
    const std::string name = "gaussianHiddenVar" + std::to_string(i);
    hidden.push_back(vars.add(name, StateSpace::real(), Role::Latent));
    p.fixed_initial.push_back(name);
  }
  std::vector<std::vector<VarId>> parents(n, hidden);
  parents.resize(vars.size());
  std::vector<std::vector<TemporalParent>> trans(n);
  for (std::size_t i = 0; i < n; ++i)
    for (VarId h : hidden) trans[i].push_back({h, false});
  for (VarId h : hidden) trans.push_back({{h, true}});
  auto cpds = transition_defaults(vars, trans);
  auto dbn = define_dbn(default_network(std::move(vars), std::move(parents)), std::move(trans), std::move(cpds));
  return build_dynamic_learner(dbn, p);
}

CustomModelBuilder::CustomModelBuilder(std::span<const Attribute> attributes) : vars_(registry_of(attributes)) {
  attribute_count_ = vars_.size();
  parents_.resize(attribute_count_);
}

VarId CustomModelBuilder::add(std::string name, StateSpace space, Role role) {
  if (vars_.find(name)) fail(ErrorCode::Structure, "duplicate variable name '" + name + "'");
  parents_.emplace_back();
  return vars_.add(std::move(name), std::move(space), role);
}

CustomModelBuilder& CustomModelBuilder::add_global_latent(std::string name, SpaceKind kind, int cardinality) {
  if (kind == SpaceKind::FiniteSet && cardinality < 2)
    fail(ErrorCode::Config, "latent '" + name + "' needs at least 2 states");
  add(std::move(name), kind == SpaceKind::FiniteSet ? StateSpace::finite(cardinality) : StateSpace::real(), Role::Latent);
  return *this;
}

CustomModelBuilder& CustomModelBuilder::add_local_latent_per_attribute(const std::string& prefix, SpaceKind kind,
                                                                       int cardinality) {
  if (kind == SpaceKind::FiniteSet && cardinality < 2)
    fail(ErrorCode::Config, "latent '" + prefix + "' needs at least 2 states");
  for (std::size_t i = 0; i < attribute_count_; ++i) {
    const VarId h = add(prefix + std::to_string(i),
                        kind == SpaceKind::FiniteSet ? StateSpace::finite(cardinality) : StateSpace::real(), Role::Latent);
    parents_[i].push_back(h);
  }
  return *this;
}

CustomModelBuilder& CustomModelBuilder::link(std::string_view parent, std::string_view child) {
  const VarId p = vars_.id_of(parent);
  const VarId c = vars_.id_of(child);
  auto& ps = parents_[static_cast<std::size_t>(c)];
  if (p == c) fail(ErrorCode::Structure, "'" + std::string(child) + "' cannot be its own parent");
  if (std::find(ps.begin(), ps.end(), p) != ps.end())
    fail(ErrorCode::Structure, "'" + std::string(parent) + "' is already a parent of '" + std::string(child) + "'");
  ps.push_back(p);
  return *this;
}

CustomModelBuilder& CustomModelBuilder::link_to_attributes(std::string_view parent) {
  for (std::size_t i = 0; i < attribute_count_; ++i) link(parent, vars_[static_cast<VarId>(i)].name);
  return *this;
}

BayesianNetwork CustomModelBuilder::network() const {
  for (const auto& v : vars_)
    for (VarId p : parents_[static_cast<std::size_t>(v.id)])
      if (v.is_finite() && !vars_[p].is_finite())
        fail(ErrorCode::Structure, "finite variable '" + v.name + "' cannot have the real parent '" + vars_[p].name + "'");
  if (has_cycle(parents_)) fail(ErrorCode::Structure, "the links form a cycle");
  return default_network(vars_, parents_);
}

LearnableModel CustomModelBuilder::build(const PriorSpec& priors) const {
  PriorSpec p = priors;
  for (const auto& v : vars_)
    if (v.role == Role::Latent && !v.is_finite() && parents_[static_cast<std::size_t>(v.id)].empty())
      p.fixed.push_back(v.name);
  return build_learner(network(), p);
}

CustomModelBuilder parse_custom_spec(std::string_view text, std::span<const Attribute> attributes) {
  CustomModelBuilder b(attributes);
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::vector<std::string> w;
    for (std::string s; words >> s;) w.push_back(s);
    if (w.empty()) continue;
    const auto bad = [&](const std::string& why) {
      fail(ErrorCode::Parse, "custom spec line " + std::to_string(number) + ": " + why);
    };
    try {
      if (w[0] == "global" || w[0] == "local") {
        if (w.size() < 3) bad("expected '" + w[0] + " <name> finite <k>' or '" + w[0] + " <name> real'");
        SpaceKind kind;
        int k = 2;
        if (w[2] == "real" && w.size() == 3) {
          kind = SpaceKind::Real;
        } else if (w[2] == "finite" && w.size() == 4) {
          kind = SpaceKind::FiniteSet;
          k = parse_int_knob("k", w[3]);
        } else {
          bad("unknown latent kind '" + w[2] + "' or wrong number of fields");
        }
        if (w[0] == "global")
          b.add_global_latent(w[1], kind, k);
        else
          b.add_local_latent_per_attribute(w[1], kind, k);
      } else if (w[0] == "link") {
        if (w.size() != 3) bad("expected 'link <parent> <child>'");
        if (w[2] == "*")
          b.link_to_attributes(w[1]);
        else
          b.link(w[1], w[2]);
      } else {
        bad("unknown directive '" + w[0] + "'");
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Parse) throw;
      throw Error(e.code(), "custom spec line " + std::to_string(number) + ": " + e.what());
    }
  }
  return b;
}

bool is_dynamic_template(std::string_view id) {
  const auto base = id.substr(0, id.find(':'));
  return base == "hmm" || base == "kf";
}

ModelTemplate make_template(std::string_view id, std::span<const Attribute> attributes, const PriorSpec& priors) {
  const auto colon = id.find(':');
  const std::string base(id.substr(0, colon));
  const std::string rest = colon == std::string_view::npos ? std::string() : std::string(id.substr(colon + 1));
  if (base == "custom") {
    if (rest.empty()) fail(ErrorCode::Usage, "custom templates need a spec file: custom:<path>");
    return {std::string(id), parse_custom_spec(read_text_file(rest), attributes).build(priors)};
  }

  static const std::map<std::string, std::vector<std::string>> kKnobs = {
      {"gmm", {"k"}}, {"nb", {"class"}}, {"blr", {"target"}}, {"fa", {"factors"}}, {"hmm", {"k"}}, {"kf", {"hidden"}}};
  const auto known = kKnobs.find(base);
  if (known == kKnobs.end()) fail(ErrorCode::Usage, "unknown model template '" + base + "'");
  std::map<std::string, std::string> knobs;
  std::istringstream parts(rest);
  for (std::string item; std::getline(parts, item, ',');) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Config, "template knob '" + item + "' is not key=value");
    const auto key = item.substr(0, eq);
    if (std::find(known->second.begin(), known->second.end(), key) == known->second.end())
      fail(ErrorCode::Config, "template '" + base + "' has no knob '" + key + "'");
    knobs[key] = item.substr(eq + 1);
  }
  const auto int_knob = [&](const std::string& key, int fallback) {
    const auto it = knobs.find(key);
    return it == knobs.end() ? fallback : parse_int_knob(key, it->second);
  };
  const auto name_knob = [&](const std::string& key) {
    const auto it = knobs.find(key);
    if (it != knobs.end()) return it->second;
    if (attributes.empty()) fail(ErrorCode::Schema, "the data has no attributes");
    return attributes.back().name;  // the last column, as in ARFF class conventions
  };

  ModelTemplate out{std::string(id), LearnableModel{}};
  if (base == "gmm") out.model = gaussian_mixture(attributes, int_knob("k", 2), priors);
  if (base == "nb") out.model = naive_bayes(attributes, name_knob("class"), priors);
  if (base == "blr") out.model = bayesian_linear_regression(attributes, name_knob("target"), priors);
  if (base == "fa") out.model = factor_analysis(attributes, int_knob("factors", 1), priors);
  if (base == "hmm") out.model = hidden_markov_model(attributes, int_knob("k", 2), priors);
  if (base == "kf") out.model = kalman_filter(attributes, int_knob("hidden", 2), priors);
  return out;
}

}  // namespace streambayes
