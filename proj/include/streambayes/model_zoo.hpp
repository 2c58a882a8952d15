#pragma once

#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "streambayes/data_stream.hpp"
#include "streambayes/learning.hpp"

namespace streambayes {

/// Uniform tables and N(0, 1) regressions with zero coefficients, kinds chosen from the parent spaces.
ConditionalDistribution default_cpd(const Variable& child, const std::vector<const Variable*>& parents);
BayesianNetwork default_network(VariableRegistry variables, std::vector<std::vector<VarId>> parents);

/// One latent Multinomial(k) "HiddenVar" parent of every (real) attribute.
LearnableModel gaussian_mixture(std::span<const Attribute> attributes, int k, const PriorSpec& priors = {});
/// `class_attribute` is the parent of every other attribute.
LearnableModel naive_bayes(std::span<const Attribute> attributes, std::string_view class_attribute,
                           const PriorSpec& priors = {});
/// `target` regressed on every other attribute.
LearnableModel bayesian_linear_regression(std::span<const Attribute> attributes, std::string_view target,
                                          const PriorSpec& priors = {});
/// Latent roots "FactorVar0".. fixed at N(0, 1); every attribute depends on all of them.
LearnableModel factor_analysis(std::span<const Attribute> attributes, int n_factors, const PriorSpec& priors = {});
/// Latent chain "HiddenVar" with n_states; attributes are emitted from the current state.
DynamicLearnableModel hidden_markov_model(std::span<const Attribute> attributes, int n_states,
                                          const PriorSpec& priors = {});
/// Gaussian chains "gaussianHiddenVar0".., each depending on its own previous value; attributes are
/// linear-Gaussian in the current hidden vector. Time-0 hidden values are fixed at N(0, 1).
DynamicLearnableModel kalman_filter(std::span<const Attribute> attributes, int n_hidden,
                                    const PriorSpec& priors = {});

/// Plate-style builder over a set of attributes. Real latent roots are fixed at N(0, 1).
class CustomModelBuilder {
 public:
  explicit CustomModelBuilder(std::span<const Attribute> attributes);

  /// `cardinality` is used only for finite latents (>= 2).
  CustomModelBuilder& add_global_latent(std::string name, SpaceKind kind, int cardinality = 2);
  /// Adds "<prefix><i>" as a parent of attribute i, for every attribute.
  CustomModelBuilder& add_local_latent_per_attribute(const std::string& prefix, SpaceKind kind, int cardinality = 2);
  CustomModelBuilder& link(std::string_view parent, std::string_view child);
  /// Links `parent` to every attribute.
  CustomModelBuilder& link_to_attributes(std::string_view parent);
  /// Throws Structure for a cycle or a finite variable with a real parent.
  [[nodiscard]] LearnableModel build(const PriorSpec& priors = {}) const;
  [[nodiscard]] BayesianNetwork network() const;

 private:
  VarId add(std::string name, StateSpace space, Role role);

  std::size_t attribute_count_ = 0;
  VariableRegistry vars_;
  std::vector<std::vector<VarId>> parents_;
};

/// Line-oriented builder script; '#' starts a comment.
///   global <name> finite <k> | global <name> real
///   local <prefix> finite <k> | local <prefix> real
///   link <parent> <child>        (child "*" means every attribute)
/// Malformed lines throw Parse; builder errors (unknown names, bad links) keep their code. Both
/// messages carry the line number.
CustomModelBuilder parse_custom_spec(std::string_view text, std::span<const Attribute> attributes);

using TemplateModel = std::variant<LearnableModel, DynamicLearnableModel>;

struct ModelTemplate {
  std::string name;
  TemplateModel model;
};

/// Resolves "id[:key=value,...]" for gmm (k), nb (class), blr (target), fa (factors), hmm (k), kf (hidden),
/// or "custom:<spec-file>". Unknown ids throw Usage; bad knobs throw Config.
ModelTemplate make_template(std::string_view id, std::span<const Attribute> attributes, const PriorSpec& priors = {});
/// True for hmm and kf.
bool is_dynamic_template(std::string_view id);

}  // namespace streambayes
