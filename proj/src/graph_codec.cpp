#include "graph_codec.hpp"

#include <charconv>
#include <cmath>

namespace sigmus::detail {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::int64_t parse_int(const std::string& s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw GraphError("bad xsd:integer literal '" + s + "'");
    return v;
}

double parse_double(const std::string& s) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) {
        throw GraphError("bad xsd:double literal '" + s + "'");
    }
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw GraphError("bad xsd:boolean literal '" + s + "'");
}

}  // namespace

std::string datatype_of(const PropertyValue& v) {
    return std::visit(Overloaded{
                          [](const std::string&) { return std::string("xsd:string"); },
                          [](std::int64_t) { return std::string("xsd:integer"); },
                          [](double) { return std::string("xsd:double"); },
                          [](bool) { return std::string("xsd:boolean"); },
                          [](Timestamp) { return std::string("xsd:dateTime"); },
                          [](const std::vector<std::string>&) { return std::string("xsd:string"); },
                      },
                      v);
}

std::string datatype_of(const Scalar& v) {
    return std::visit([](const auto& x) { return datatype_of(PropertyValue(x)); }, v);
}

std::vector<Term> to_terms(const PropertyValue& v) {
    return std::visit(Overloaded{
                          [](const std::string& s) { return std::vector<Term>{Term::literal(s)}; },
                          [](std::int64_t i) { return std::vector<Term>{Term::literal(std::to_string(i), "xsd:integer")}; },
                          [](double d) { return std::vector<Term>{Term::literal(round_trip_double(d), "xsd:double")}; },
                          [](bool b) { return std::vector<Term>{Term::literal(b ? "true" : "false", "xsd:boolean")}; },
                          [](Timestamp t) { return std::vector<Term>{Term::literal(format_timestamp(t), "xsd:dateTime")}; },
                          [](const std::vector<std::string>& l) {
                              std::vector<Term> out;
                              for (const auto& s : l) out.push_back(Term::literal(s));
                              return out;
                          },
                      },
                      v);
}

Term to_term(const Scalar& v) {
    return std::visit([](const auto& x) { return to_terms(PropertyValue(x)).front(); }, v);
}

Scalar scalar_from_literal(const Term& literal) {
    const std::string& dt = literal.datatype;
    if (dt == "xsd:integer") return parse_int(literal.value);
    if (dt == "xsd:double") return parse_double(literal.value);
    if (dt == "xsd:boolean") return parse_bool(literal.value);
    return literal.value;
}

PropertyValue property_from_literal(const Term& literal) {
    if (literal.datatype == "xsd:dateTime") {
        auto ts = parse_timestamp(literal.value);
        if (!ts) throw GraphError("bad xsd:dateTime literal '" + literal.value + "'");
        return *ts;
    }
    return std::visit([](auto&& x) -> PropertyValue { return x; }, scalar_from_literal(literal));
}

nlohmann::json to_json(const PropertyValue& v) {
    return std::visit(Overloaded{
                          [](const std::string& s) { return nlohmann::json{{"s", s}}; },
                          [](std::int64_t i) { return nlohmann::json{{"i", i}}; },
                          [](double d) { return nlohmann::json{{"d", d}}; },
                          [](bool b) { return nlohmann::json{{"b", b}}; },
                          [](Timestamp t) { return nlohmann::json{{"t", format_timestamp(t)}}; },
                          [](const std::vector<std::string>& l) { return nlohmann::json{{"l", l}}; },
                      },
                      v);
}

nlohmann::json to_json(const Scalar& v) {
    return std::visit([](const auto& x) { return to_json(PropertyValue(x)); }, v);
}

PropertyValue property_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.size() != 1) throw GraphError("bad property encoding");
    const auto it = j.begin();
    const std::string& tag = it.key();
    const nlohmann::json& value = it.value();
    if (tag == "s") return value.get<std::string>();
    if (tag == "i") return value.get<std::int64_t>();
    if (tag == "d") return value.get<double>();
    if (tag == "b") return value.get<bool>();
    if (tag == "l") return value.get<std::vector<std::string>>();
    if (tag == "t") {
        auto ts = parse_timestamp(value.get<std::string>());
        if (!ts) throw GraphError("bad timestamp in property encoding");
        return *ts;
    }
    throw GraphError("unknown property tag " + tag);
}

Scalar scalar_from_json(const nlohmann::json& j) {
    auto v = property_from_json(j);
    if (auto* s = std::get_if<std::string>(&v)) return *s;
    if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
    if (auto* d = std::get_if<double>(&v)) return *d;
    if (auto* b = std::get_if<bool>(&v)) return *b;
    throw GraphError("edge property must be scalar");
}

nlohmann::json node_to_json(const Node& n) {
    nlohmann::json props = nlohmann::json::object();
    for (const auto& [k, v] : n.properties) props[k] = to_json(v);
    return {{"id", n.id.str()}, {"class", n.classLabel}, {"props", props}};
}

Node node_from_json(const nlohmann::json& j) {
    Node n;
    n.id = EntityId(j.at("id").get<std::string>());
    n.classLabel = j.at("class").get<std::string>();
    for (const auto& [k, v] : j.at("props").items()) n.properties.emplace(k, property_from_json(v));
    return n;
}

nlohmann::json edge_to_json(const Edge& e) {
    nlohmann::json props = nlohmann::json::object();
    for (const auto& [k, v] : e.properties) props[k] = to_json(v);
    return {{"from", e.from.str()}, {"to", e.to.str()}, {"pred", e.predicate}, {"props", props}};
}

Edge edge_from_json(const nlohmann::json& j) {
    Edge e;
    e.from = EntityId(j.at("from").get<std::string>());
    e.to = EntityId(j.at("to").get<std::string>());
    e.predicate = j.at("pred").get<std::string>();
    for (const auto& [k, v] : j.at("props").items()) e.properties.emplace(k, scalar_from_json(v));
    return e;
}

}  // namespace sigmus::detail
