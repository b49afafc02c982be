#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "graph_codec.hpp"
#include "sigmus/graph_store.hpp"

namespace sigmus {

namespace {

constexpr std::string_view kGraphIri = "urn:sigmus:graph";

void append_nt_escaped(std::string& out, std::string_view s) {
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        switch (ch) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (c < 0x20 || c == 0x7f) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04X", c);
                    out += buf;
                } else {
                    out.push_back(ch);
                }
        }
    }
}

std::string iri_term(std::string_view iri) { return "<" + std::string(iri) + ">"; }

std::string object_term(const Term& t) {
    switch (t.kind) {
        case Term::Kind::Node: return iri_term(entity_iri(EntityId(t.value)));
        case Term::Kind::Iri: return iri_term(expand_curie(t.value));
        case Term::Kind::Literal: {
            std::string out = "\"";
            append_nt_escaped(out, t.value);
            out += "\"";
            if (!t.datatype.empty() && t.datatype != "xsd:string") out += "^^" + iri_term(expand_curie(t.datatype));
            return out;
        }
    }
    return {};
}

std::string blank_label(const Edge& e) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "e%016llx",
                  static_cast<unsigned long long>(fnv1a64(e.from.str() + '\x1f' + e.predicate + '\x1f' + e.to.str())));
    return buf;
}

void quad(std::string& out, const std::string& s, std::string_view p, const std::string& o) {
    out += s;
    out += ' ';
    out += iri_term(expand_curie(p));
    out += ' ';
    out += o;
    out += ' ';
    out += iri_term(kGraphIri);
    out += " .\n";
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default:
                if (c < 0x20 && ch != '\n' && ch != '\t' && ch != '\r') {
                    out += "&#xFFFD;";  // not representable in XML 1.0
                } else if (ch == '\n') {
                    out += "&#10;";
                } else if (ch == '\r') {
                    out += "&#13;";
                } else if (ch == '\t') {
                    out += "&#9;";
                } else {
                    out.push_back(ch);
                }
        }
    }
    return out;
}

std::string graphml_type(const PropertyValue& v) {
    if (std::holds_alternative<std::int64_t>(v)) return "long";
    if (std::holds_alternative<double>(v)) return "double";
    if (std::holds_alternative<bool>(v)) return "boolean";
    return "string";
}

std::string graphml_value(const PropertyValue& v) {
    if (const auto* l = std::get_if<std::vector<std::string>>(&v)) return detail::dump_json(nlohmann::json(*l));
    return detail::to_terms(v).front().value;
}

std::string cypher_string(std::string_view s) {
    std::string out = "'";
    for (char ch : s) {
        switch (ch) {
            case '\'': out += "\\'"; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default: out.push_back(ch);
        }
    }
    return out + "'";
}

std::string cypher_value(const PropertyValue& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return cypher_string(*s);
    if (const auto* t = std::get_if<Timestamp>(&v)) return "datetime(" + cypher_string(format_timestamp(*t)) + ")";
    if (const auto* l = std::get_if<std::vector<std::string>>(&v)) {
        std::string out = "[";
        for (std::size_t i = 0; i < l->size(); ++i) out += (i ? ", " : "") + cypher_string((*l)[i]);
        return out + "]";
    }
    return detail::to_terms(v).front().value;
}

// isPartOf -> IS_PART_OF
std::string relationship_type(std::string_view predicate) {
    std::string local(predicate.substr(predicate.find(':') + 1));
    std::string out;
    for (char c : local) {
        if (std::isupper(static_cast<unsigned char>(c)) && !out.empty()) out.push_back('_');
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

std::string cypher_map(const std::map<std::string, std::string>& kv) {
    std::string out = "{";
    bool first = true;
    for (const auto& [k, v] : kv) {
        out += (first ? "`" : ", `") + k + "`: " + v;
        first = false;
    }
    return out + "}";
}

// ---------------------------------------------------------------------------
// N-Quads line parser

struct ParsedTerm {
    enum class Kind { Iri, Blank, Literal } kind;
    std::string value;
    std::string datatype;  // full IRI, empty for plain strings
};

class LineParser {
public:
    LineParser(std::string_view line, std::size_t line_no) : s_(line), line_no_(line_no) {}

    ParsedTerm term() {
        skip_ws();
        if (pos_ >= s_.size()) fail("unexpected end of line");
        if (s_[pos_] == '<') return {ParsedTerm::Kind::Iri, iri(), {}};
        if (s_.substr(pos_, 2) == "_:") {
            pos_ += 2;
            const std::size_t start = pos_;
            while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            if (pos_ == start) fail("empty blank node label");
            return {ParsedTerm::Kind::Blank, std::string(s_.substr(start, pos_ - start)), {}};
        }
        if (s_[pos_] == '"') return literal();
        fail("unexpected character");
    }

    bool at_graph_or_end() {
        skip_ws();
        return pos_ < s_.size() && (s_[pos_] == '<' || s_.substr(pos_, 2) == "_:");
    }

    void end() {
        skip_ws();
        if (pos_ >= s_.size() || s_[pos_] != '.') fail("missing terminating '.'");
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] != '#') fail("trailing characters");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw GraphError("n-quads line " + std::to_string(line_no_) + ": " + what);
    }

private:
    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    std::string iri() {
        const std::size_t close = s_.find('>', pos_);
        if (close == std::string_view::npos) fail("unterminated IRI");
        std::string out(s_.substr(pos_ + 1, close - pos_ - 1));
        for (char c : out) {
            if (c == ' ' || c == '<' || c == '"') fail("invalid IRI character");
        }
        pos_ = close + 1;
        return out;
    }

    void append_utf8(std::string& out, std::uint32_t cp) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x110000) {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            fail("code point out of range");
        }
    }

    ParsedTerm literal() {
        ++pos_;
        std::string value;
        while (true) {
            if (pos_ >= s_.size()) fail("unterminated literal");
            const char c = s_[pos_++];
            if (c == '"') break;
            if (c != '\\') {
                value.push_back(c);
                continue;
            }
            if (pos_ >= s_.size()) fail("dangling escape");
            const char e = s_[pos_++];
            switch (e) {
                case 't': value.push_back('\t'); break;
                case 'b': value.push_back('\b'); break;
                case 'n': value.push_back('\n'); break;
                case 'r': value.push_back('\r'); break;
                case 'f': value.push_back('\f'); break;
                case '"': value.push_back('"'); break;
                case '\'': value.push_back('\''); break;
                case '\\': value.push_back('\\'); break;
                case 'u':
                case 'U': {
                    const std::size_t n = e == 'u' ? 4 : 8;
                    if (pos_ + n > s_.size()) fail("short unicode escape");
                    std::uint32_t cp = 0;
                    auto [p, ec] = std::from_chars(s_.data() + pos_, s_.data() + pos_ + n, cp, 16);
                    if (ec != std::errc{} || p != s_.data() + pos_ + n) fail("bad unicode escape");
                    pos_ += n;
                    append_utf8(value, cp);
                    break;
                }
                default: fail("unknown escape");
            }
        }
        ParsedTerm t{ParsedTerm::Kind::Literal, std::move(value), {}};
        if (s_.substr(pos_, 2) == "^^") {
            pos_ += 2;
            if (pos_ >= s_.size() || s_[pos_] != '<') fail("datatype must be an IRI");
            t.datatype = iri();
        } else if (pos_ < s_.size() && s_[pos_] == '@') {
            while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        }
        return t;
    }

    std::string_view s_;
    std::size_t line_no_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string GraphStore::export_nquads_locked() const {
    std::string out;
    for (const auto& [id, node] : nodes_) {
        const std::string subject = iri_term(entity_iri(id));
        for (const auto& t : node_triples_locked(node)) quad(out, subject, t.predicate, object_term(t.object));
        for (const auto& e : out_edges_locked(id, {})) {
            if (e.properties.empty()) continue;
            const std::string b = "_:" + blank_label(e);
            quad(out, b, "rdf:type", iri_term(expand_curie("rdf:Statement")));
            quad(out, b, "rdf:subject", subject);
            quad(out, b, "rdf:predicate", iri_term(expand_curie(e.predicate)));
            quad(out, b, "rdf:object", iri_term(entity_iri(e.to)));
            for (const auto& [k, v] : e.properties) quad(out, b, k, object_term(detail::to_term(v)));
        }
    }
    return out;
}

void GraphStore::import_nquads(std::string_view text) {
    struct Statement {
        std::optional<EntityId> subject;
        std::string predicate;
        std::optional<EntityId> object;
        EdgePropertyMap props;
    };
    std::map<EntityId, Node> nodes;
    std::vector<Edge> edges;
    std::map<std::string, Statement> statements;

    auto compact = [](const std::string& iri, const LineParser& p) {
        auto c = compact_iri(iri);
        if (!c) p.fail("IRI outside known namespaces: " + iri);
        return *c;
    };
    auto literal_term = [&](const ParsedTerm& t, const LineParser& p) {
        return Term::literal(t.value, t.datatype.empty() ? "xsd:string" : compact(t.datatype, p));
    };

    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        LineParser p(stripped, line_no);
        const ParsedTerm s = p.term();
        const ParsedTerm pr = p.term();
        const ParsedTerm o = p.term();
        if (p.at_graph_or_end()) p.term();
        p.end();
        if (pr.kind != ParsedTerm::Kind::Iri) p.fail("predicate must be an IRI");
        const std::string pred = compact(pr.value, p);

        if (s.kind == ParsedTerm::Kind::Blank) {
            Statement& st = statements[s.value];
            if (pred == "rdf:type") continue;
            if (pred == "rdf:subject" || pred == "rdf:object") {
                auto id = o.kind == ParsedTerm::Kind::Iri ? entity_from_iri(o.value) : std::nullopt;
                if (!id) p.fail("reified endpoint must be an entity IRI");
                (pred == "rdf:subject" ? st.subject : st.object) = *id;
            } else if (pred == "rdf:predicate") {
                if (o.kind != ParsedTerm::Kind::Iri) p.fail("rdf:predicate must be an IRI");
                st.predicate = compact(o.value, p);
            } else {
                if (o.kind != ParsedTerm::Kind::Literal) p.fail("edge property must be a literal");
                st.props.insert_or_assign(pred, detail::scalar_from_literal(literal_term(o, p)));
            }
            continue;
        }
        if (s.kind != ParsedTerm::Kind::Iri) p.fail("subject must be an IRI or blank node");
        auto sid = entity_from_iri(s.value);
        if (!sid) p.fail("subject is not an entity IRI");
        Node& n = nodes[*sid];
        n.id = *sid;
        if (pred == vocab::kType) {
            if (o.kind != ParsedTerm::Kind::Iri) p.fail("rdf:type must be an IRI");
            const std::string cls = compact(o.value, p);
            if (cls.rfind("sigmus:", 0) != 0) p.fail("unknown class " + cls);
            n.classLabel = cls.substr(7);
        } else if (pred == vocab::kIdentifier) {
            if (o.kind != ParsedTerm::Kind::Literal || o.value != sid->str()) p.fail("identifier mismatch");
        } else if (o.kind == ParsedTerm::Kind::Iri) {
            auto oid = entity_from_iri(o.value);
            if (!oid) p.fail("object IRI is not an entity");
            edges.push_back(Edge{*sid, *oid, pred, {}});
        } else if (o.kind == ParsedTerm::Kind::Literal) {
            PropertyValue v = detail::property_from_literal(literal_term(o, p));
            const VocabEntry* e = find_vocab(pred);
            if (e && e->multiValued) {
                auto [it, inserted] = n.properties.try_emplace(pred, std::vector<std::string>{});
                auto* list = std::get_if<std::vector<std::string>>(&it->second);
                const auto* s_val = std::get_if<std::string>(&v);
                if (!list || !s_val) p.fail("list property must hold strings");
                list->push_back(*s_val);
            } else if (!n.properties.emplace(pred, std::move(v)).second) {
                p.fail("repeated single-valued property " + pred);
            }
        } else {
            p.fail("blank node objects are not supported");
        }
    }

    std::map<std::tuple<EntityId, std::string, EntityId>, EdgePropertyMap> edge_props;
    for (auto& [label, st] : statements) {
        if (!st.subject || !st.object || st.predicate.empty()) throw GraphError("incomplete reified statement _:" + label);
        edge_props[{*st.subject, st.predicate, *st.object}] = std::move(st.props);
    }
    for (auto& e : edges) {
        auto it = edge_props.find({e.from, e.predicate, e.to});
        if (it != edge_props.end()) {
            e.properties = std::move(it->second);
            edge_props.erase(it);
        }
    }
    if (!edge_props.empty()) throw GraphError("reified statement without matching edge");
    for (auto& [id, n] : nodes) {
        if (n.classLabel.empty()) throw GraphError("node without rdf:type: " + id.str());
        upsert_node(std::move(n));
    }
    for (auto& e : edges) upsert_edge(std::move(e));
}

std::string GraphStore::export_graphml_locked() const {
    // key name -> (id, type) for nodes and edges
    std::map<std::string, std::string> node_types;
    std::map<std::string, std::string> edge_types;
    for (const auto& [id, n] : nodes_) {
        for (const auto& [k, v] : n.properties) {
            auto [it, inserted] = node_types.emplace(k, graphml_type(v));
            if (!inserted && it->second != graphml_type(v)) it->second = "string";
        }
    }
    for (const auto& [key, e] : edges_) {
        for (const auto& [k, v] : e.properties) {
            const std::string t = graphml_type(std::visit([](const auto& x) { return PropertyValue(x); }, v));
            auto [it, inserted] = edge_types.emplace(k, t);
            if (!inserted && it->second != t) it->second = "string";
        }
    }
    std::map<std::string, std::string> node_key_ids;
    std::map<std::string, std::string> edge_key_ids;

    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\" "
           "xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" "
           "xsi:schemaLocation=\"http://graphml.graphdrawing.org/xmlns "
           "http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd\">\n";
    out << "  <key id=\"class\" for=\"node\" attr.name=\"class\" attr.type=\"string\"/>\n";
    out << "  <key id=\"predicate\" for=\"edge\" attr.name=\"predicate\" attr.type=\"string\"/>\n";
    int i = 0;
    for (const auto& [k, t] : node_types) {
        const std::string id = "n" + std::to_string(i++);
        node_key_ids[k] = id;
        out << "  <key id=\"" << id << "\" for=\"node\" attr.name=\"" << xml_escape(k) << "\" attr.type=\"" << t
            << "\"/>\n";
    }
    i = 0;
    for (const auto& [k, t] : edge_types) {
        const std::string id = "e" + std::to_string(i++);
        edge_key_ids[k] = id;
        out << "  <key id=\"" << id << "\" for=\"edge\" attr.name=\"" << xml_escape(k) << "\" attr.type=\"" << t
            << "\"/>\n";
    }
    out << "  <graph id=\"sigmus\" edgedefault=\"directed\">\n";
    for (const auto& [id, n] : nodes_) {
        out << "    <node id=\"" << xml_escape(id.str()) << "\">\n";
        out << "      <data key=\"class\">" << xml_escape(n.classLabel) << "</data>\n";
        for (const auto& [k, v] : n.properties) {
            out << "      <data key=\"" << node_key_ids[k] << "\">" << xml_escape(graphml_value(v)) << "</data>\n";
        }
        out << "    </node>\n";
    }
    std::size_t edge_no = 0;
    for (const auto& [key, e] : edges_) {
        out << "    <edge id=\"r" << edge_no++ << "\" source=\"" << xml_escape(e.from.str()) << "\" target=\""
            << xml_escape(e.to.str()) << "\">\n";
        out << "      <data key=\"predicate\">" << xml_escape(e.predicate) << "</data>\n";
        for (const auto& [k, v] : e.properties) {
            out << "      <data key=\"" << edge_key_ids[k] << "\">"
                << xml_escape(detail::to_term(v).value) << "</data>\n";
        }
        out << "    </edge>\n";
    }
    out << "  </graph>\n</graphml>\n";
    return out.str();
}

std::string GraphStore::export_cypher_locked() const {
    std::string out;
    for (const auto& [id, n] : nodes_) {
        std::map<std::string, std::string> props;
        for (const auto& [k, v] : n.properties) props[k] = cypher_value(v);
        out += "MERGE (n:" + n.classLabel + " {id: " + cypher_string(id.str()) + "})";
        if (!props.empty()) out += " SET n += " + cypher_map(props);
        out += ";\n";
    }
    for (const auto& [key, e] : edges_) {
        out += "MATCH (a {id: " + cypher_string(e.from.str()) + "}), (b {id: " + cypher_string(e.to.str()) +
               "}) MERGE (a)-[r:" + relationship_type(e.predicate) + "]->(b)";
        if (!e.properties.empty()) {
            std::map<std::string, std::string> props;
            for (const auto& [k, v] : e.properties) {
                props[k] = cypher_value(std::visit([](const auto& x) { return PropertyValue(x); }, v));
            }
            out += " SET r += " + cypher_map(props);
        }
        out += ";\n";
    }
    return out;
}

}  // namespace sigmus
