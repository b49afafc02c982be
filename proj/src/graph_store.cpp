#include "sigmus/graph_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <mutex>
#include <numbers>

#include "graph_codec.hpp"
#include "json_util.hpp"

namespace sigmus {

std::optional<ExportFormat> parse_export_format(std::string_view text) {
    if (text == "nquads") return ExportFormat::NQuads;
    if (text == "graphml") return ExportFormat::GraphML;
    if (text == "cypher" || text == "cypher_statements") return ExportFormat::Cypher;
    return std::nullopt;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    constexpr double kEarthRadiusKm = 6371.0088;
    constexpr double kDeg = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * kDeg;
    const double dlon = (b.lon - a.lon) * kDeg;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * kDeg) * std::cos(b.lat * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

std::string truncate_utf8(std::string_view text, std::size_t max_bytes) {
    if (text.size() <= max_bytes) return std::string(text);
    std::size_t cut = max_bytes;
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    return std::string(text.substr(0, cut));
}

GraphStore::GraphStore(GraphOptions options) : options_(std::move(options)) {
    if (options_.walPath) {
        replay_wal();
        wal_.open(*options_.walPath, std::ios::binary | std::ios::app);
        if (!wal_) throw GraphError("cannot open write-ahead log " + options_.walPath->string());
    }
}

GraphStore::~GraphStore() {
    if (wal_.is_open()) wal_.flush();
}

void GraphStore::flush() {
    std::unique_lock lock(mutex_);
    if (wal_.is_open()) wal_.flush();
}

// ---------------------------------------------------------------------------
// Write-ahead log: each record is a 4-byte little-endian length followed by
// that many bytes of UTF-8 JSON describing one mutation.

void GraphStore::log(const std::string& record) {
    if (replaying_ || !wal_.is_open()) return;
    const auto len = static_cast<std::uint32_t>(record.size());
    const char header[4] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff),
                            static_cast<char>((len >> 16) & 0xff), static_cast<char>((len >> 24) & 0xff)};
    wal_.write(header, 4);
    wal_.write(record.data(), static_cast<std::streamsize>(record.size()));
    wal_.flush();
}

void GraphStore::replay_wal() {
    std::ifstream in(*options_.walPath, std::ios::binary);
    if (!in) return;
    replaying_ = true;
    std::string payload;
    while (true) {
        unsigned char header[4];
        if (!in.read(reinterpret_cast<char*>(header), 4)) break;
        const std::uint32_t len = header[0] | (header[1] << 8) | (header[2] << 16) | (std::uint32_t(header[3]) << 24);
        payload.resize(len);
        if (!in.read(payload.data(), len)) break;  // torn tail from an interrupted append
        auto rec = nlohmann::json::parse(payload, nullptr, false);
        if (rec.is_discarded()) throw GraphError("corrupt write-ahead log record");
        const auto op = rec.value("op", std::string{});
        if (op == "node") apply_node(detail::node_from_json(rec.at("node")));
        else if (op == "edge") apply_edge(detail::edge_from_json(rec.at("edge")));
        else if (op == "merge")
            apply_merge(EntityId(rec.at("survivor").get<std::string>()), EntityId(rec.at("absorbed").get<std::string>()),
                        rec.at("prop").get<std::string>());
        else throw GraphError("unknown write-ahead log op '" + op + "'");
    }
    replaying_ = false;
}

// ---------------------------------------------------------------------------
// Mutations

void GraphStore::validate_node(const Node& node) const {
    if (node.id.empty()) throw GraphError("node id empty");
    if (!is_ontology_class(node.classLabel)) throw GraphError("unknown ontology class '" + node.classLabel + "'");
    for (const auto& [key, value] : node.properties) {
        const VocabEntry* e = find_vocab(key);
        if (!e || e->role != VocabRole::Property || key == vocab::kType || key == vocab::kIdentifier) {
            throw GraphError("property '" + key + "' not in vocabulary");
        }
        const bool is_list = std::holds_alternative<std::vector<std::string>>(value);
        if (is_list != e->multiValued) throw GraphError("property '" + key + "' arity mismatch");
        if (const auto* d = std::get_if<double>(&value); d && !std::isfinite(*d)) {
            throw GraphError("property '" + key + "' not finite");
        }
    }
}

void GraphStore::validate_edge(const Edge& edge) const {
    const VocabEntry* e = find_vocab(edge.predicate);
    if (!e || e->role != VocabRole::Relation) throw GraphError("predicate '" + edge.predicate + "' not in vocabulary");
    if (!nodes_.contains(edge.from)) throw GraphError("dangling edge endpoint: missing node " + edge.from.str());
    if (!nodes_.contains(edge.to)) throw GraphError("dangling edge endpoint: missing node " + edge.to.str());
    for (const auto& [key, value] : edge.properties) {
        const VocabEntry* p = find_vocab(key);
        if (!p || p->role != VocabRole::Property || p->multiValued) {
            throw GraphError("edge property '" + key + "' not in vocabulary");
        }
        if (const auto* d = std::get_if<double>(&value); d && !std::isfinite(*d)) {
            throw GraphError("edge property '" + key + "' not finite");
        }
    }
}

void GraphStore::apply_node(Node node) {
    auto it = nodes_.find(node.id);
    if (it != nodes_.end() && it->second.classLabel != node.classLabel) {
        throw GraphError("node " + node.id.str() + " already exists with class " + it->second.classLabel);
    }
    const EntityId id = node.id;
    nodes_.insert_or_assign(id, std::move(node));
}

void GraphStore::apply_edge(Edge edge) {
    EdgeKey key{edge.from, edge.predicate, edge.to};
    incoming_[edge.to].insert(key);
    edges_.insert_or_assign(std::move(key), std::move(edge));
}

EntityId GraphStore::upsert_node(Node node) {
    std::unique_lock lock(mutex_);
    validate_node(node);
    auto it = nodes_.find(node.id);
    if (it != nodes_.end() && it->second == node) return node.id;
    const EntityId id = node.id;
    const std::string record = detail::dump_json({{"op", "node"}, {"node", detail::node_to_json(node)}});
    apply_node(std::move(node));
    log(record);
    return id;
}

void GraphStore::upsert_edge(Edge edge) {
    std::unique_lock lock(mutex_);
    validate_edge(edge);
    auto it = edges_.find(EdgeKey{edge.from, edge.predicate, edge.to});
    if (it != edges_.end() && it->second == edge) return;
    const std::string record = detail::dump_json({{"op", "edge"}, {"edge", detail::edge_to_json(edge)}});
    apply_edge(std::move(edge));
    log(record);
}

void GraphStore::set_property(const EntityId& id, std::string_view key, PropertyValue value) {
    auto node = get_node(id);
    if (!node) throw GraphError("no node " + id.str());
    node->properties.insert_or_assign(std::string(key), std::move(value));
    upsert_node(std::move(*node));
}

EntityId GraphStore::insert_entity(const Entity& entity) {
    const auto triples = to_triples(entity);
    std::map<EntityId, Node> nodes;
    std::vector<Edge> edges;
    for (const auto& t : triples) {
        Node& n = nodes[t.subject];
        n.id = t.subject;
        if (t.predicate == vocab::kType) {
            n.classLabel = t.object.value.substr(t.object.value.find(':') + 1);
        } else if (t.predicate == vocab::kIdentifier) {
            continue;
        } else if (t.object.kind == Term::Kind::Node) {
            edges.push_back(Edge{t.subject, EntityId(t.object.value), t.predicate, {}});
        } else {
            PropertyValue v = detail::property_from_literal(t.object);
            const VocabEntry* e = find_vocab(t.predicate);
            if (e && e->multiValued) {
                auto [it, inserted] = n.properties.try_emplace(t.predicate, std::vector<std::string>{});
                std::get<std::vector<std::string>>(it->second).push_back(std::get<std::string>(v));
            } else {
                n.properties.insert_or_assign(t.predicate, std::move(v));
            }
        }
    }
    // Nodes first so containment edges resolve; external endpoints are
    // checked before anything is written.
    {
        std::shared_lock lock(mutex_);
        for (const auto& e : edges) {
            if (!nodes.contains(e.to) && !nodes_.contains(e.to)) {
                throw GraphError("dangling edge endpoint: missing node " + e.to.str());
            }
        }
    }
    for (auto& [id, n] : nodes) upsert_node(std::move(n));
    for (auto& e : edges) upsert_edge(std::move(e));
    return entity_id(entity);
}

void GraphStore::merge_nodes(const EntityId& survivor, const EntityId& absorbed, std::string_view altLabelProperty) {
    std::unique_lock lock(mutex_);
    if (survivor == absorbed) return;
    auto s = nodes_.find(survivor);
    auto a = nodes_.find(absorbed);
    if (s == nodes_.end()) throw GraphError("merge: missing node " + survivor.str());
    if (a == nodes_.end()) throw GraphError("merge: missing node " + absorbed.str());
    if (s->second.classLabel != a->second.classLabel) {
        throw GraphError("merge: class mismatch " + s->second.classLabel + " vs " + a->second.classLabel);
    }
    const VocabEntry* e = find_vocab(altLabelProperty);
    if (!e || !e->multiValued) throw GraphError("merge: '" + std::string(altLabelProperty) + "' is not a list property");
    const std::string record = detail::dump_json({{"op", "merge"},
                                                  {"survivor", survivor.str()},
                                                  {"absorbed", absorbed.str()},
                                                  {"prop", std::string(altLabelProperty)}});
    apply_merge(survivor, absorbed, altLabelProperty);
    log(record);
}

void GraphStore::apply_merge(const EntityId& survivor, const EntityId& absorbed, std::string_view prop) {
    Node& s = nodes_.at(survivor);
    Node absorbedNode = nodes_.at(absorbed);

    std::vector<std::string> alts;
    if (auto it = s.properties.find(prop); it != s.properties.end()) alts = std::get<std::vector<std::string>>(it->second);
    const std::string* survivorLabel = nullptr;
    if (auto it = s.properties.find(vocab::kLabel); it != s.properties.end()) {
        survivorLabel = std::get_if<std::string>(&it->second);
    }
    auto add_alt = [&](const std::string& label) {
        if (label.empty() || (survivorLabel && *survivorLabel == label)) return;
        if (std::find(alts.begin(), alts.end(), label) == alts.end()) alts.push_back(label);
    };
    if (auto it = absorbedNode.properties.find(vocab::kLabel); it != absorbedNode.properties.end()) {
        if (const auto* l = std::get_if<std::string>(&it->second)) add_alt(*l);
    }
    if (auto it = absorbedNode.properties.find(prop); it != absorbedNode.properties.end()) {
        for (const auto& l : std::get<std::vector<std::string>>(it->second)) add_alt(l);
    }
    for (const auto& [k, v] : absorbedNode.properties) {
        if (k != prop) s.properties.try_emplace(k, v);
    }
    if (!alts.empty()) s.properties.insert_or_assign(std::string(prop), std::move(alts));

    auto rehome = [&](const EntityId& id) { return id == absorbed ? survivor : id; };
    std::vector<Edge> moved;
    for (auto it = edges_.lower_bound(EdgeKey{absorbed, "", EntityId{}});
         it != edges_.end() && std::get<0>(it->first) == absorbed;) {
        moved.push_back(it->second);
        incoming_[std::get<2>(it->first)].erase(it->first);
        it = edges_.erase(it);
    }
    if (auto in = incoming_.find(absorbed); in != incoming_.end()) {
        for (const auto& key : in->second) {
            auto it = edges_.find(key);
            if (it == edges_.end()) continue;
            moved.push_back(it->second);
            edges_.erase(it);
        }
        incoming_.erase(in);
    }
    nodes_.erase(absorbed);
    for (auto& edge : moved) {
        edge.from = rehome(edge.from);
        edge.to = rehome(edge.to);
        if (edge.from == edge.to) continue;
        EdgeKey key{edge.from, edge.predicate, edge.to};
        if (auto existing = edges_.find(key); existing != edges_.end()) {
            for (auto& [k, v] : edge.properties) existing->second.properties.try_emplace(k, v);
        } else {
            apply_edge(std::move(edge));
        }
    }
}

// ---------------------------------------------------------------------------
// Reads

std::optional<Node> GraphStore::get_node(const EntityId& id) const {
    std::shared_lock lock(mutex_);
    auto it = nodes_.find(id);
    if (it == nodes_.end()) return std::nullopt;
    return it->second;
}

bool GraphStore::contains(const EntityId& id) const {
    std::shared_lock lock(mutex_);
    return nodes_.contains(id);
}

std::vector<Node> GraphStore::nodes() const {
    std::shared_lock lock(mutex_);
    std::vector<Node> out;
    out.reserve(nodes_.size());
    for (const auto& [id, n] : nodes_) out.push_back(n);
    return out;
}

std::vector<Node> GraphStore::nodes_of_class(std::string_view classLabel) const {
    std::shared_lock lock(mutex_);
    std::vector<Node> out;
    for (const auto& [id, n] : nodes_) {
        if (n.classLabel == classLabel) out.push_back(n);
    }
    return out;
}

std::vector<Edge> GraphStore::edges() const {
    std::shared_lock lock(mutex_);
    std::vector<Edge> out;
    out.reserve(edges_.size());
    for (const auto& [k, e] : edges_) out.push_back(e);
    return out;
}

std::vector<Edge> GraphStore::out_edges_locked(const EntityId& id, std::string_view predicate) const {
    std::vector<Edge> out;
    for (auto it = edges_.lower_bound(EdgeKey{id, "", EntityId{}}); it != edges_.end() && std::get<0>(it->first) == id;
         ++it) {
        if (predicate.empty() || it->second.predicate == predicate) out.push_back(it->second);
    }
    return out;
}

std::vector<Edge> GraphStore::in_edges_locked(const EntityId& id, std::string_view predicate) const {
    std::vector<Edge> out;
    auto in = incoming_.find(id);
    if (in == incoming_.end()) return out;
    for (const auto& key : in->second) {
        const auto& e = edges_.at(key);
        if (predicate.empty() || e.predicate == predicate) out.push_back(e);
    }
    return out;
}

std::vector<Edge> GraphStore::out_edges(const EntityId& id, std::string_view predicate) const {
    std::shared_lock lock(mutex_);
    return out_edges_locked(id, predicate);
}

std::vector<Edge> GraphStore::in_edges(const EntityId& id, std::string_view predicate) const {
    std::shared_lock lock(mutex_);
    return in_edges_locked(id, predicate);
}

std::vector<EntityId> GraphStore::neighbors(const EntityId& id) const {
    std::shared_lock lock(mutex_);
    std::vector<EntityId> out;
    for (const auto& e : out_edges_locked(id, {})) out.push_back(e.to);
    return out;
}

std::size_t GraphStore::node_count() const {
    std::shared_lock lock(mutex_);
    return nodes_.size();
}

std::size_t GraphStore::edge_count() const {
    std::shared_lock lock(mutex_);
    return edges_.size();
}

bool GraphStore::reaches(const EntityId& from, const EntityId& to, std::string_view predicate) const {
    std::shared_lock lock(mutex_);
    std::set<EntityId> seen{from};
    std::deque<EntityId> frontier{from};
    while (!frontier.empty()) {
        EntityId cur = std::move(frontier.front());
        frontier.pop_front();
        if (cur == to) return true;
        for (const auto& e : out_edges_locked(cur, predicate)) {
            if (seen.insert(e.to).second) frontier.push_back(e.to);
        }
    }
    return false;
}

std::vector<Triple> GraphStore::node_triples_locked(const Node& node) const {
    std::vector<Triple> out;
    out.push_back({node.id, std::string(vocab::kType), Term::iri("sigmus:" + node.classLabel)});
    out.push_back({node.id, std::string(vocab::kIdentifier), Term::literal(node.id.str())});
    for (const auto& [key, value] : node.properties) {
        for (auto& term : detail::to_terms(value)) out.push_back({node.id, key, std::move(term)});
    }
    for (const auto& e : out_edges_locked(node.id, {})) out.push_back({node.id, e.predicate, Term::node(e.to)});
    return out;
}

std::vector<Triple> GraphStore::entity_triples_locked(const EntityId& root) const {
    auto it = nodes_.find(root);
    if (it == nodes_.end()) throw GraphError("no node " + root.str());
    std::vector<Triple> out = node_triples_locked(it->second);
    for (std::string_view containment : {vocab::kHasModality, vocab::kHasInference}) {
        for (const auto& e : out_edges_locked(root, containment)) {
            auto child = entity_triples_locked(e.to);
            out.insert(out.end(), std::make_move_iterator(child.begin()), std::make_move_iterator(child.end()));
        }
    }
    return out;
}

std::vector<Triple> GraphStore::entity_triples(const EntityId& root) const {
    std::shared_lock lock(mutex_);
    return entity_triples_locked(root);
}

Entity GraphStore::get_entity(const EntityId& id) const {
    const auto triples = entity_triples(id);
    return from_triples(triples);
}

std::string summarize_report(const Report& report, std::size_t maxLength) {
    std::string text;
    for (const auto& seg : report.segments) {
        if (seg.inferences.empty()) {
            if (!text.empty()) text += " | ";
            text += seg.kind == ModalityKind::Tabular ? seg.property.value_or("") + "=" + seg.value + " " + seg.unit.value_or("")
                                                      : seg.value;
        }
        for (const auto& inf : seg.inferences) {
            if (!text.empty()) text += " | ";
            text += inf.inferenceType + ": " + inf.inferenceResult;
        }
    }
    return truncate_utf8(text, maxLength);
}

std::string GraphStore::summarize_report_locked(const EntityId& id, ReportSummary& out) const {
    const Entity entity = from_triples(entity_triples_locked(id));
    const auto& report = std::get<Report>(entity);
    out.reportId = report.id;
    out.observedAt = report.observedAt;
    out.kind = report.segments.empty() ? ModalityKind::Text : report.segments.front().kind;
    out.summary = summarize_report(report, options_.summaryMaxLength);
    return out.summary;
}

std::vector<IncidentContext> GraphStore::query_incidents(std::optional<TimeInterval> window,
                                                         std::optional<RegionFilter> region) const {
    std::shared_lock lock(mutex_);
    std::vector<IncidentContext> out;
    for (const auto& [id, node] : nodes_) {
        if (node.classLabel != "Incident") continue;
        Entity entity = from_triples(entity_triples_locked(id));
        Incident incident = std::get<Incident>(std::move(entity));
        if (window) {
            const auto& iv = incident.interval;
            if (window->end && iv.start >= *window->end) continue;
            if (iv.end && *iv.end <= window->start) continue;
        }
        if (region && incident.geo && haversine_km(region->center, *incident.geo) > region->radiusKm) continue;

        std::set<EntityId> linked;
        for (const auto& e : in_edges_locked(id, vocab::kEvidenceOf)) linked.insert(e.from);
        for (const auto& e : out_edges_locked(id, vocab::kHasSource)) linked.insert(e.to);
        std::vector<ReportSummary> summaries;
        for (const auto& rid : linked) {
            auto rn = nodes_.find(rid);
            if (rn == nodes_.end() || rn->second.classLabel != "Report") continue;
            ReportSummary s;
            summarize_report_locked(rid, s);
            summaries.push_back(std::move(s));
        }
        std::sort(summaries.begin(), summaries.end(), [](const ReportSummary& a, const ReportSummary& b) {
            return a.observedAt != b.observedAt ? a.observedAt > b.observedAt : a.reportId < b.reportId;
        });
        if (summaries.size() > options_.recentReports) summaries.resize(options_.recentReports);

        IncidentContext ctx;
        ctx.geo = incident.geo;
        ctx.interval = incident.interval;
        ctx.recentReports = std::move(summaries);
        ctx.incident = std::move(incident);
        out.push_back(std::move(ctx));
    }
    std::sort(out.begin(), out.end(), [](const IncidentContext& a, const IncidentContext& b) {
        return a.interval.start != b.interval.start ? a.interval.start > b.interval.start
                                                    : a.incident.id < b.incident.id;
    });
    return out;
}

std::string GraphStore::export_graph(ExportFormat format) const {
    std::shared_lock lock(mutex_);
    switch (format) {
        case ExportFormat::NQuads: return export_nquads_locked();
        case ExportFormat::GraphML: return export_graphml_locked();
        case ExportFormat::Cypher: return export_cypher_locked();
    }
    throw GraphError("unsupported export format");
}

}  // namespace sigmus
