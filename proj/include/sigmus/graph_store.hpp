#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "sigmus/ontology.hpp"

namespace sigmus {

using Scalar = std::variant<std::string, std::int64_t, double, bool>;
// Node property values. Lists are only legal under multi-valued vocabulary
// properties (sigmus:altLabel).
using PropertyValue = std::variant<std::string, std::int64_t, double, bool, Timestamp, std::vector<std::string>>;
using PropertyMap = std::map<std::string, PropertyValue, std::less<>>;
using EdgePropertyMap = std::map<std::string, Scalar, std::less<>>;

struct Node {
    EntityId id;
    std::string classLabel;  // ontology class name without prefix, e.g. "Incident"
    PropertyMap properties;

    bool operator==(const Node&) const = default;
};

struct Edge {
    EntityId from;
    EntityId to;
    std::string predicate;  // compact relation IRI, e.g. "sigmus:isPartOf"
    EdgePropertyMap properties;

    bool operator==(const Edge&) const = default;
};

struct ReportSummary {
    EntityId reportId;
    ModalityKind kind = ModalityKind::Text;
    Timestamp observedAt{};
    std::string summary;
};

struct IncidentContext {
    Incident incident;
    std::vector<ReportSummary> recentReports;  // newest first
    std::optional<GeoPoint> geo;
    TimeInterval interval;
};

struct RegionFilter {
    GeoPoint center;
    double radiusKm = 0.0;
};

enum class ExportFormat { NQuads, GraphML, Cypher };

std::optional<ExportFormat> parse_export_format(std::string_view text);

struct GraphOptions {
    std::size_t recentReports = 5;
    std::size_t summaryMaxLength = 500;
    std::optional<std::filesystem::path> walPath;
};

class GraphError : public Error {
public:
    using Error::Error;
};

double haversine_km(const GeoPoint& a, const GeoPoint& b);

// Truncates to at most max_bytes without splitting a UTF-8 sequence.
std::string truncate_utf8(std::string_view text, std::size_t max_bytes);

// The text used for report summaries: each segment's inference results,
// or its raw value when it has none, joined by " | ".
std::string summarize_report(const Report& report, std::size_t maxLength);

// In-process property graph. Mutations are serialized under an exclusive
// lock (the single writer); readers share a lock and always observe a
// state in which every edge endpoint exists.
class GraphStore {
public:
    explicit GraphStore(GraphOptions options = {});
    ~GraphStore();

    GraphStore(const GraphStore&) = delete;
    GraphStore& operator=(const GraphStore&) = delete;

    const GraphOptions& options() const noexcept { return options_; }

    EntityId upsert_node(Node node);
    void upsert_edge(Edge edge);
    void set_property(const EntityId& id, std::string_view key, PropertyValue value);

    // Writes an ontology instance and its child nodes. Edges to nodes outside
    // the instance (observer, aggregator, sources) must already exist.
    EntityId insert_entity(const Entity& entity);

    std::optional<Node> get_node(const EntityId& id) const;
    bool contains(const EntityId& id) const;
    std::vector<Node> nodes() const;
    std::vector<Node> nodes_of_class(std::string_view classLabel) const;
    std::vector<Edge> edges() const;
    std::vector<Edge> out_edges(const EntityId& id, std::string_view predicate = {}) const;
    std::vector<Edge> in_edges(const EntityId& id, std::string_view predicate = {}) const;
    std::vector<EntityId> neighbors(const EntityId& id) const;
    std::size_t node_count() const;
    std::size_t edge_count() const;

    // True when `to` is reachable from `from` following `predicate` edges.
    bool reaches(const EntityId& from, const EntityId& to, std::string_view predicate) const;

    std::vector<Triple> entity_triples(const EntityId& root) const;
    Entity get_entity(const EntityId& id) const;

    std::vector<IncidentContext> query_incidents(std::optional<TimeInterval> window = std::nullopt,
                                                 std::optional<RegionFilter> region = std::nullopt) const;

    // Rehomes every edge of `absorbed` onto `survivor`, folds absorbed's
    // label and alternate labels into survivor's `altLabelProperty` list,
    // fills survivor properties it lacks, then removes absorbed. Edges that
    // would become self-loops are dropped.
    void merge_nodes(const EntityId& survivor, const EntityId& absorbed, std::string_view altLabelProperty);

    std::string export_graph(ExportFormat format) const;

    // Parses N-Quads produced by export_graph into this (empty) store.
    void import_nquads(std::string_view text);

    void flush();

private:
    using EdgeKey = std::tuple<EntityId, std::string, EntityId>;  // from, predicate, to

    void validate_node(const Node& node) const;
    void validate_edge(const Edge& edge) const;
    void apply_node(Node node);
    void apply_edge(Edge edge);
    void apply_merge(const EntityId& survivor, const EntityId& absorbed, std::string_view prop);
    void log(const std::string& record);
    void replay_wal();

    std::vector<Triple> node_triples_locked(const Node& node) const;
    std::vector<Triple> entity_triples_locked(const EntityId& root) const;
    std::vector<Edge> out_edges_locked(const EntityId& id, std::string_view predicate) const;
    std::vector<Edge> in_edges_locked(const EntityId& id, std::string_view predicate) const;
    std::string summarize_report_locked(const EntityId& id, ReportSummary& out) const;

    std::string export_nquads_locked() const;
    std::string export_graphml_locked() const;
    std::string export_cypher_locked() const;

    GraphOptions options_;
    mutable std::shared_mutex mutex_;
    std::map<EntityId, Node> nodes_;
    std::map<EdgeKey, Edge> edges_;
    std::map<EntityId, std::set<EdgeKey>> incoming_;
    std::ofstream wal_;
    bool replaying_ = false;
};

}  // namespace sigmus
