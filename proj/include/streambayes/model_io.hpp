#pragma once

#include <string>
#include <string_view>

#include "json.hpp"
#include "streambayes/core_model.hpp"
#include "streambayes/dynamic.hpp"

namespace streambayes {

inline constexpr const char* kStaticFormat = "streambayes-bn-1";
inline constexpr const char* kDynamicFormat = "streambayes-dbn-1";

using Json = nlohmann::ordered_json;

Json model_to_json(const BayesianNetwork& bn);
Json dynamic_model_to_json(const DynamicBayesianNetwork& dbn);

/// Pretty-printed JSON document; doubles are written in shortest round-trip form.
std::string serialize_model(const BayesianNetwork& bn);
/// Throws Parse (with location) on malformed input and Validation when the model breaks an invariant.
BayesianNetwork deserialize_model(std::string_view text);

std::string serialize_dynamic_model(const DynamicBayesianNetwork& dbn);
DynamicBayesianNetwork deserialize_dynamic_model(std::string_view text);

enum class ModelFileKind { Static, Dynamic };
/// Reads only the format tag.
ModelFileKind peek_model_kind(std::string_view text);

/// Human-readable listing of every conditional distribution.
std::string render_network(const BayesianNetwork& bn);
std::string render_dynamic_network(const DynamicBayesianNetwork& dbn);
/// "[ p0, p1, ... ]" for discrete marginals, "Normal [ mu = m, var = v ]" otherwise.
std::string render_marginal(const Marginal& m);
/// {"variable", "family": "Multinomial"|"Normal", "probabilities" | "mean"+"variance"}.
Json marginal_to_json(const Marginal& m);
/// Shortest decimal form that reads back to the same double.
std::string format_double(double x);

}  // namespace streambayes
