#pragma once

#include <compare>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sigmus/common.hpp"

namespace sigmus {

// Opaque unique key of an ontology instance (dcterms:identifier).
class EntityId {
public:
    EntityId() = default;
    explicit EntityId(std::string value) : value_(std::move(value)) {}

    const std::string& str() const noexcept { return value_; }
    bool empty() const noexcept { return value_.empty(); }

    auto operator<=>(const EntityId&) const = default;

private:
    std::string value_;
};

struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;
    std::optional<std::string> placeName;

    bool operator==(const GeoPoint&) const = default;
};

// Half-open [start, end); an absent end means ongoing.
struct TimeInterval {
    Timestamp start{};
    std::optional<Timestamp> end;

    bool operator==(const TimeInterval&) const = default;
};

struct InferenceRecord {
    std::string inferenceType;
    std::string inferenceResult;

    bool operator==(const InferenceRecord&) const = default;
};

enum class ModalityKind { Text, Image, Tabular };

std::string_view to_string(ModalityKind kind);
std::optional<ModalityKind> parse_modality_kind(std::string_view text);

struct ModalitySegment {
    ModalityKind kind = ModalityKind::Text;
    std::string value;  // text body, blob path, or serialized measurement
    std::optional<std::string> property;
    std::optional<std::string> unit;
    std::vector<InferenceRecord> inferences;

    bool operator==(const ModalitySegment&) const = default;
};

struct Report {
    EntityId id;
    EntityId aggregatorId;
    EntityId observerId;
    Timestamp observedAt{};
    std::optional<GeoPoint> geo;
    std::vector<ModalitySegment> segments;

    bool operator==(const Report&) const = default;
};

struct Incident {
    EntityId id;
    std::string label;
    std::string description;
    TimeInterval interval;
    std::optional<GeoPoint> geo;
    std::vector<EntityId> sourceReportIds;
    std::vector<std::string> altLabels;

    bool operator==(const Incident&) const = default;
};

struct Observer {
    EntityId id;
    std::string label;

    bool operator==(const Observer&) const = default;
};

struct Aggregator {
    EntityId id;
    std::string label;

    bool operator==(const Aggregator&) const = default;
};

struct ActorRecord {
    EntityId id;
    std::string name;
    std::optional<std::string> cameoActorCode;
    std::vector<std::string> altNames;

    bool operator==(const ActorRecord&) const = default;
};

struct EventRecord {
    EntityId id;
    std::string cameoEventCode;
    std::optional<EntityId> actor1;
    std::optional<EntityId> actor2;
    std::optional<std::string> capCategory;

    bool operator==(const EventRecord&) const = default;
};

using Entity = std::variant<Incident, Report, Observer, Aggregator, ActorRecord, EventRecord>;

// ---------------------------------------------------------------------------
// CAMEO codebook

struct CameoEntry {
    std::string code;
    std::string term;
    std::string description;
};

class CameoCodebook {
public:
    // The 20 CAMEO root event codes, compiled in.
    static const CameoCodebook& embedded();

    // Process-wide codebook used by validation; embedded() until replaced.
    static std::shared_ptr<const CameoCodebook> active();
    static void set_active(std::shared_ptr<const CameoCodebook> codebook);

    // Tab-separated `code<TAB>term<TAB>description`, UTF-8, '#' comments.
    static CameoCodebook load(const std::filesystem::path& path);
    static CameoCodebook parse(std::string_view text);

    std::optional<CameoEntry> lookup(std::string_view code) const;
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<CameoEntry> entries_;  // sorted by code
};

std::optional<CameoEntry> cameo_lookup(std::string_view code);

// The 12 Common Alerting Protocol category tokens.
std::span<const std::string_view> cap_categories();
bool is_cap_category(std::string_view token);

// ---------------------------------------------------------------------------
// Triples and vocabulary

struct Term {
    enum class Kind { Node, Iri, Literal };

    Kind kind = Kind::Literal;
    std::string value;     // entity id, compact IRI, or literal lexical form
    std::string datatype;  // literals only: xsd:string, xsd:double, ...

    static Term node(const EntityId& id) { return {Kind::Node, id.str(), {}}; }
    static Term iri(std::string curie) { return {Kind::Iri, std::move(curie), {}}; }
    static Term literal(std::string lexical, std::string datatype = "xsd:string") {
        return {Kind::Literal, std::move(lexical), std::move(datatype)};
    }

    bool operator==(const Term&) const = default;
};

struct Triple {
    EntityId subject;
    std::string predicate;  // compact IRI from the vocabulary table
    Term object;

    bool operator==(const Triple&) const = default;
};

enum class VocabRole { Class, Property, Relation };

struct VocabEntry {
    std::string_view curie;
    VocabRole role;
    bool multiValued;           // properties only
    std::string_view domain;    // documentation: which class uses it
};

std::span<const VocabEntry> vocabulary();
const VocabEntry* find_vocab(std::string_view curie);
bool is_ontology_class(std::string_view classLabel);  // "Incident", "Report", ...

// Namespace prefixes used by compact IRIs, and entity IRI minting.
std::string expand_curie(std::string_view curie);
std::optional<std::string> compact_iri(std::string_view iri);
std::string entity_iri(const EntityId& id);
std::optional<EntityId> entity_from_iri(std::string_view iri);

namespace vocab {
inline constexpr std::string_view kType = "rdf:type";
inline constexpr std::string_view kIdentifier = "dcterms:identifier";
inline constexpr std::string_view kLabel = "rdfs:label";
inline constexpr std::string_view kComment = "rdfs:comment";
inline constexpr std::string_view kBegin = "time:hasBeginning";
inline constexpr std::string_view kEnd = "time:hasEnd";
inline constexpr std::string_view kLat = "geo:lat";
inline constexpr std::string_view kLong = "geo:long";
inline constexpr std::string_view kPlaceName = "sigmus:placeName";
inline constexpr std::string_view kResultTime = "sosa:resultTime";
inline constexpr std::string_view kPosition = "sigmus:position";
inline constexpr std::string_view kModalityKind = "sigmus:modalityKind";
inline constexpr std::string_view kValue = "qudt:value";
inline constexpr std::string_view kObservedProperty = "sosa:observedProperty";
inline constexpr std::string_view kUnit = "qudt:unit";
inline constexpr std::string_view kInferenceType = "sigmus:inferenceType";
inline constexpr std::string_view kInferenceResult = "sigmus:inferenceResult";
inline constexpr std::string_view kCameoEvent = "sigmus:cameoEvent";
inline constexpr std::string_view kCameoActor = "sigmus:cameoActor";
inline constexpr std::string_view kCapCategory = "sigmus:capCategory";
inline constexpr std::string_view kAltLabel = "sigmus:altLabel";
inline constexpr std::string_view kNeedsReview = "sigmus:needsReview";
inline constexpr std::string_view kIngestFailed = "sigmus:ingestFailed";
inline constexpr std::string_view kFailureReason = "sigmus:failureReason";
inline constexpr std::string_view kRationale = "sigmus:rationale";

inline constexpr std::string_view kProducedBy = "sigmus:producedBy";
inline constexpr std::string_view kCollectedBy = "sigmus:collectedBy";
inline constexpr std::string_view kHasModality = "sigmus:hasModality";
inline constexpr std::string_view kHasInference = "sigmus:hasInference";
inline constexpr std::string_view kEvidenceOf = "sigmus:evidenceOf";
inline constexpr std::string_view kIsPartOf = "sigmus:isPartOf";
inline constexpr std::string_view kHasSource = "sigmus:hasSource";
inline constexpr std::string_view kActor1 = "sigmus:actor1";
inline constexpr std::string_view kActor2 = "sigmus:actor2";
inline constexpr std::string_view kMentions = "sigmus:mentions";
inline constexpr std::string_view kReportedIn = "sigmus:reportedIn";
}  // namespace vocab

// ---------------------------------------------------------------------------
// Validation and triple mapping

class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

std::vector<std::string> validate(const GeoPoint& g);
std::vector<std::string> validate(const TimeInterval& t);
std::vector<std::string> validate(const InferenceRecord& r);
std::vector<std::string> validate(const ModalitySegment& s);
std::vector<std::string> validate(const Report& r);
std::vector<std::string> validate(const Incident& i);
std::vector<std::string> validate(const Observer& o);
std::vector<std::string> validate(const Aggregator& a);
std::vector<std::string> validate(const ActorRecord& a);
std::vector<std::string> validate(const EventRecord& e);
std::vector<std::string> validate(const Entity& e);

const EntityId& entity_id(const Entity& e);
std::string_view class_of(const Entity& e);

// Root subject first, then child nodes (modality segments, inferences) in
// order. Throws ValidationError when validate(e) is non-empty.
std::vector<Triple> to_triples(const Entity& e);

// Inverse of to_triples. Triples about unrelated subjects are ignored; the
// root is the unique subject typed with a top-level class.
Entity from_triples(std::span<const Triple> triples);

}  // namespace sigmus
