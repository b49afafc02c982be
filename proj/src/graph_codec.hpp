#pragma once
// Internal conversions shared by the graph store, its exporters and the WAL.

#include <nlohmann/json.hpp>

#include "sigmus/graph_store.hpp"

namespace sigmus::detail {

// Literal datatype for a property value (lists report their element type).
std::string datatype_of(const PropertyValue& v);
std::string datatype_of(const Scalar& v);

// Lexical forms; lists produce one literal per element.
std::vector<Term> to_terms(const PropertyValue& v);
Term to_term(const Scalar& v);

// Parses a typed literal. Throws GraphError on malformed lexical forms.
Scalar scalar_from_literal(const Term& literal);
PropertyValue property_from_literal(const Term& literal);

nlohmann::json to_json(const PropertyValue& v);
nlohmann::json to_json(const Scalar& v);
PropertyValue property_from_json(const nlohmann::json& j);
Scalar scalar_from_json(const nlohmann::json& j);

nlohmann::json node_to_json(const Node& n);
Node node_from_json(const nlohmann::json& j);
nlohmann::json edge_to_json(const Edge& e);
Edge edge_from_json(const nlohmann::json& j);

}  // namespace sigmus::detail
