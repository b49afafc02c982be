#include "sigmus/ontology.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace sigmus {

std::string_view to_string(ModalityKind kind) {
    switch (kind) {
        case ModalityKind::Text: return "text";
        case ModalityKind::Image: return "image";
        case ModalityKind::Tabular: return "tabular";
    }
    return "text";
}

std::optional<ModalityKind> parse_modality_kind(std::string_view text) {
    if (text == "text") return ModalityKind::Text;
    if (text == "image") return ModalityKind::Image;
    if (text == "tabular") return ModalityKind::Tabular;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// CAMEO

namespace {

constexpr std::array<std::array<std::string_view, 3>, 20> kCameoRoots{{
    {"01", "MAKE PUBLIC STATEMENT", "All public statements expressed verbally or in action"},
    {"02", "APPEAL", "Requests, proposals, suggestions and appeals"},
    {"03", "EXPRESS INTENT TO COOPERATE", "Offer, promise, agree to, or otherwise indicate willingness to cooperate"},
    {"04", "CONSULT", "All consultations and meetings"},
    {"05", "ENGAGE IN DIPLOMATIC COOPERATION", "Initiate, resume, improve, or expand diplomatic relations"},
    {"06", "ENGAGE IN MATERIAL COOPERATION", "Initiate, resume, improve, or expand material cooperation"},
    {"07", "PROVIDE AID", "All provisions and extension of material aid"},
    {"08", "YIELD", "Yielding, conceding, or complying"},
    {"09", "INVESTIGATE", "All non-covert investigations"},
    {"10", "DEMAND", "Demands and orders"},
    {"11", "DISAPPROVE", "Expressions of disapproval, objection, and complaints"},
    {"12", "REJECT", "Rejections and refusals"},
    {"13", "THREATEN", "Threats, coercive or forceful warnings"},
    {"14", "PROTEST", "Civilian demonstrations and other collective actions carried out as protests"},
    {"15", "EXHIBIT FORCE POSTURE", "Military or police moves that fall short of the actual use of force"},
    {"16", "REDUCE RELATIONS", "Reductions in normal, routine, or cooperative relations"},
    {"17", "COERCE", "Repression, violence against civilians, or their rights or properties"},
    {"18", "ASSAULT", "Use of unconventional forms of violence"},
    {"19", "FIGHT", "All uses of conventional force and acts of war"},
    {"20", "USE UNCONVENTIONAL MASS VIOLENCE", "Use of unconventional mass violence"},
}};

std::mutex& active_mutex() {
    static std::mutex m;
    return m;
}

std::shared_ptr<const CameoCodebook>& active_slot() {
    static std::shared_ptr<const CameoCodebook> slot;
    return slot;
}

}  // namespace

const CameoCodebook& CameoCodebook::embedded() {
    static const CameoCodebook book = [] {
        CameoCodebook b;
        for (const auto& row : kCameoRoots) {
            b.entries_.push_back({std::string(row[0]), std::string(row[1]), std::string(row[2])});
        }
        return b;
    }();
    return book;
}

std::shared_ptr<const CameoCodebook> CameoCodebook::active() {
    std::lock_guard lock(active_mutex());
    if (!active_slot()) {
        active_slot() = std::shared_ptr<const CameoCodebook>(&embedded(), [](const CameoCodebook*) {});
    }
    return active_slot();
}

void CameoCodebook::set_active(std::shared_ptr<const CameoCodebook> codebook) {
    std::lock_guard lock(active_mutex());
    active_slot() = std::move(codebook);
}

CameoCodebook CameoCodebook::parse(std::string_view text) {
    CameoCodebook book;
    std::map<std::string, CameoEntry> rows;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line.front() == '#') continue;
        auto cols = split(line, '\t');
        if (cols.size() < 2 || trim(cols[0]).empty()) {
            throw Error("cameo codebook line " + std::to_string(line_no) + ": expected code<TAB>term<TAB>description");
        }
        CameoEntry e{trim(cols[0]), trim(cols[1]), cols.size() > 2 ? trim(cols[2]) : std::string{}};
        rows[e.code] = std::move(e);
    }
    for (auto& [code, entry] : rows) book.entries_.push_back(std::move(entry));
    return book;
}

CameoCodebook CameoCodebook::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open cameo codebook: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::optional<CameoEntry> CameoCodebook::lookup(std::string_view code) const {
    if (code.empty()) return std::nullopt;
    auto it = std::lower_bound(entries_.begin(), entries_.end(), code,
                               [](const CameoEntry& e, std::string_view c) { return e.code < c; });
    if (it == entries_.end() || it->code != code) return std::nullopt;
    return *it;
}

std::optional<CameoEntry> cameo_lookup(std::string_view code) { return CameoCodebook::active()->lookup(code); }

namespace {
constexpr std::array<std::string_view, 12> kCapCategories{
    "Geo", "Met", "Safety", "Security", "Rescue", "Fire", "Health", "Env", "Transport", "Infra", "CBRNE", "Other"};
}

std::span<const std::string_view> cap_categories() { return kCapCategories; }

bool is_cap_category(std::string_view token) {
    return std::find(kCapCategories.begin(), kCapCategories.end(), token) != kCapCategories.end();
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

constexpr std::array<VocabEntry, 44> kVocabulary{{
    {"sigmus:Incident", VocabRole::Class, false, ""},
    {"sigmus:Report", VocabRole::Class, false, ""},
    {"sigmus:Modality", VocabRole::Class, false, ""},
    {"sigmus:Inference", VocabRole::Class, false, ""},
    {"sigmus:Observer", VocabRole::Class, false, ""},
    {"sigmus:Aggregator", VocabRole::Class, false, ""},
    {"sigmus:Actor", VocabRole::Class, false, ""},
    {"sigmus:Event", VocabRole::Class, false, ""},

    {"rdf:type", VocabRole::Property, false, "all"},
    {"dcterms:identifier", VocabRole::Property, false, "all"},
    {"rdfs:label", VocabRole::Property, false, "Incident, Observer, Aggregator, Actor"},
    {"rdfs:comment", VocabRole::Property, false, "Incident"},
    {"time:hasBeginning", VocabRole::Property, false, "Incident"},
    {"time:hasEnd", VocabRole::Property, false, "Incident"},
    {"geo:lat", VocabRole::Property, false, "Incident, Report"},
    {"geo:long", VocabRole::Property, false, "Incident, Report"},
    {"sigmus:placeName", VocabRole::Property, false, "Incident, Report"},
    {"sosa:resultTime", VocabRole::Property, false, "Report"},
    {"sigmus:position", VocabRole::Property, false, "Modality, Inference"},
    {"sigmus:modalityKind", VocabRole::Property, false, "Modality"},
    {"qudt:value", VocabRole::Property, false, "Modality"},
    {"sosa:observedProperty", VocabRole::Property, false, "Modality"},
    {"qudt:unit", VocabRole::Property, false, "Modality"},
    {"sigmus:inferenceType", VocabRole::Property, false, "Inference"},
    {"sigmus:inferenceResult", VocabRole::Property, false, "Inference"},
    {"sigmus:cameoEvent", VocabRole::Property, false, "Event"},
    {"sigmus:cameoActor", VocabRole::Property, false, "Actor"},
    {"sigmus:capCategory", VocabRole::Property, false, "Event"},
    {"sigmus:altLabel", VocabRole::Property, true, "Incident, Actor"},
    {"sigmus:needsReview", VocabRole::Property, false, "Incident, Actor"},
    {"sigmus:ingestFailed", VocabRole::Property, false, "Report"},
    {"sigmus:failureReason", VocabRole::Property, false, "Report"},
    {"sigmus:rationale", VocabRole::Property, false, "edges; Incident, Actor when flagged"},

    {"sigmus:producedBy", VocabRole::Relation, false, "Report -> Observer"},
    {"sigmus:collectedBy", VocabRole::Relation, false, "Report|Observer -> Aggregator"},
    {"sigmus:hasModality", VocabRole::Relation, false, "Report -> Modality"},
    {"sigmus:hasInference", VocabRole::Relation, false, "Modality -> Inference"},
    {"sigmus:evidenceOf", VocabRole::Relation, false, "Report -> Incident"},
    {"sigmus:isPartOf", VocabRole::Relation, false, "Incident -> Incident"},
    {"sigmus:hasSource", VocabRole::Relation, false, "Incident -> Report"},
    {"sigmus:actor1", VocabRole::Relation, false, "Event -> Actor"},
    {"sigmus:actor2", VocabRole::Relation, false, "Event -> Actor"},
    {"sigmus:mentions", VocabRole::Relation, false, "Report -> Actor"},
    {"sigmus:reportedIn", VocabRole::Relation, false, "Event -> Report"},
}};

struct Prefix {
    std::string_view prefix;
    std::string_view iri;
};

constexpr std::array<Prefix, 9> kPrefixes{{
    {"rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"},
    {"rdfs", "http://www.w3.org/2000/01/rdf-schema#"},
    {"xsd", "http://www.w3.org/2001/XMLSchema#"},
    {"dcterms", "http://purl.org/dc/terms/"},
    {"time", "http://www.w3.org/2006/time#"},
    {"geo", "http://www.w3.org/2003/01/geo/wgs84_pos#"},
    {"sosa", "http://www.w3.org/ns/sosa/"},
    {"qudt", "http://qudt.org/schema/qudt/"},
    {"sigmus", "urn:sigmus:ontology#"},
}};

constexpr std::string_view kEntityPrefix = "urn:sigmus:entity:";

bool is_unreserved(unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~' || c == ':' || c == '/';
}

}  // namespace

std::span<const VocabEntry> vocabulary() { return kVocabulary; }

const VocabEntry* find_vocab(std::string_view curie) {
    for (const auto& e : kVocabulary) {
        if (e.curie == curie) return &e;
    }
    return nullptr;
}

bool is_ontology_class(std::string_view classLabel) {
    const auto* e = find_vocab("sigmus:" + std::string(classLabel));
    return e != nullptr && e->role == VocabRole::Class;
}

std::string expand_curie(std::string_view curie) {
    const auto colon = curie.find(':');
    if (colon != std::string_view::npos) {
        const auto prefix = curie.substr(0, colon);
        for (const auto& p : kPrefixes) {
            if (p.prefix == prefix) return std::string(p.iri) + std::string(curie.substr(colon + 1));
        }
    }
    return std::string(curie);
}

std::optional<std::string> compact_iri(std::string_view iri) {
    for (const auto& p : kPrefixes) {
        if (iri.size() > p.iri.size() && iri.substr(0, p.iri.size()) == p.iri) {
            return std::string(p.prefix) + ":" + std::string(iri.substr(p.iri.size()));
        }
    }
    return std::nullopt;
}

std::string entity_iri(const EntityId& id) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out(kEntityPrefix);
    for (char ch : id.str()) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_unreserved(c)) {
            out.push_back(ch);
        } else {
            out.push_back('%');
            out.push_back(kHex[c >> 4]);
            out.push_back(kHex[c & 0xf]);
        }
    }
    return out;
}

std::optional<EntityId> entity_from_iri(std::string_view iri) {
    if (iri.substr(0, kEntityPrefix.size()) != kEntityPrefix) return std::nullopt;
    iri.remove_prefix(kEntityPrefix.size());
    std::string out;
    for (std::size_t i = 0; i < iri.size(); ++i) {
        if (iri[i] == '%') {
            if (i + 2 >= iri.size()) return std::nullopt;
            unsigned v = 0;
            auto [p, ec] = std::from_chars(iri.data() + i + 1, iri.data() + i + 3, v, 16);
            if (ec != std::errc{} || p != iri.data() + i + 3) return std::nullopt;
            out.push_back(static_cast<char>(v));
            i += 2;
        } else {
            out.push_back(iri[i]);
        }
    }
    if (out.empty()) return std::nullopt;
    return EntityId(std::move(out));
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void append(std::vector<std::string>& out, const std::vector<std::string>& more, std::string_view prefix = {}) {
    for (const auto& v : more) out.push_back(std::string(prefix) + v);
}

bool has_control_chars(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x20; });
}

bool is_blob_path(std::string_view path) {
    if (path.empty() || has_control_chars(path) || path.front() == '/') return false;
    for (const auto& part : split(path, '/')) {
        if (part.empty() || part == "..") return false;
    }
    return true;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error([&] {
          std::string msg = "validation failed:";
          for (const auto& v : violations) msg += " [" + v + "]";
          return msg;
      }()),
      violations_(std::move(violations)) {}

std::vector<std::string> validate(const GeoPoint& g) {
    std::vector<std::string> out;
    if (!std::isfinite(g.lat) || g.lat < -90.0 || g.lat > 90.0) out.emplace_back("lat out of range");
    if (!std::isfinite(g.lon) || g.lon < -180.0 || g.lon > 180.0) out.emplace_back("lon out of range");
    return out;
}

std::vector<std::string> validate(const TimeInterval& t) {
    std::vector<std::string> out;
    if (t.end && *t.end < t.start) out.emplace_back("interval end before start");
    return out;
}

std::vector<std::string> validate(const InferenceRecord& r) {
    std::vector<std::string> out;
    if (r.inferenceType.empty()) out.emplace_back("inferenceType empty");
    if (r.inferenceResult.empty()) out.emplace_back("inferenceResult empty");
    return out;
}

std::vector<std::string> validate(const ModalitySegment& s) {
    std::vector<std::string> out;
    if (s.kind == ModalityKind::Tabular) {
        if (!s.property || s.property->empty()) out.emplace_back("tabular segment missing property");
        if (!s.unit || s.unit->empty()) out.emplace_back("tabular segment missing unit");
    }
    if (s.kind == ModalityKind::Image && !is_blob_path(s.value)) out.emplace_back("image segment value is not a blob path");
    for (const auto& inf : s.inferences) append(out, validate(inf));
    return out;
}

std::vector<std::string> validate(const Report& r) {
    std::vector<std::string> out;
    if (r.id.empty()) out.emplace_back("id empty");
    if (r.aggregatorId.empty()) out.emplace_back("aggregatorId empty");
    if (r.observerId.empty()) out.emplace_back("observerId empty");
    if (r.observedAt == Timestamp{}) out.emplace_back("observedAt missing");
    if (r.geo) append(out, validate(*r.geo));
    if (r.segments.empty()) out.emplace_back("segments non-empty");
    for (const auto& s : r.segments) append(out, validate(s));
    return out;
}

std::vector<std::string> validate(const Incident& i) {
    std::vector<std::string> out;
    if (i.id.empty()) out.emplace_back("id empty");
    if (i.label.empty()) out.emplace_back("label non-empty");
    append(out, validate(i.interval));
    if (i.geo) append(out, validate(*i.geo));
    if (i.sourceReportIds.empty()) out.emplace_back("at least one source report id");
    for (const auto& s : i.sourceReportIds) {
        if (s.empty()) out.emplace_back("source report id empty");
    }
    for (const auto& alt : i.altLabels) {
        if (alt.empty() || alt == i.label) out.emplace_back("altLabels excludes label");
    }
    return out;
}

std::vector<std::string> validate(const Observer& o) {
    std::vector<std::string> out;
    if (o.id.empty()) out.emplace_back("id empty");
    if (o.label.empty()) out.emplace_back("label non-empty");
    return out;
}

std::vector<std::string> validate(const Aggregator& a) {
    std::vector<std::string> out;
    if (a.id.empty()) out.emplace_back("id empty");
    if (a.label.empty()) out.emplace_back("label non-empty");
    return out;
}

std::vector<std::string> validate(const ActorRecord& a) {
    std::vector<std::string> out;
    if (a.id.empty()) out.emplace_back("id empty");
    if (a.name.empty()) out.emplace_back("name non-empty");
    for (const auto& alt : a.altNames) {
        if (alt.empty() || alt == a.name) out.emplace_back("altNames excludes name");
    }
    return out;
}

std::vector<std::string> validate(const EventRecord& e) {
    std::vector<std::string> out;
    if (e.id.empty()) out.emplace_back("id empty");
    if (!cameo_lookup(e.cameoEventCode)) out.emplace_back("cameoEventCode not in codebook");
    if (e.capCategory && !is_cap_category(*e.capCategory)) out.emplace_back("capCategory not a CAP category");
    if (e.actor1 && e.actor1->empty()) out.emplace_back("actor1 empty");
    if (e.actor2 && e.actor2->empty()) out.emplace_back("actor2 empty");
    return out;
}

std::vector<std::string> validate(const Entity& e) {
    return std::visit([](const auto& x) { return validate(x); }, e);
}

const EntityId& entity_id(const Entity& e) {
    return std::visit([](const auto& x) -> const EntityId& { return x.id; }, e);
}

std::string_view class_of(const Entity& e) {
    struct V {
        std::string_view operator()(const Incident&) const { return "Incident"; }
        std::string_view operator()(const Report&) const { return "Report"; }
        std::string_view operator()(const Observer&) const { return "Observer"; }
        std::string_view operator()(const Aggregator&) const { return "Aggregator"; }
        std::string_view operator()(const ActorRecord&) const { return "Actor"; }
        std::string_view operator()(const EventRecord&) const { return "Event"; }
    };
    return std::visit(V{}, e);
}

// ---------------------------------------------------------------------------
// Triple mapping

namespace {

class TripleWriter {
public:
    explicit TripleWriter(std::vector<Triple>& out) : out_(out) {}

    void begin(const EntityId& id, std::string_view cls) {
        subject_ = id;
        add(vocab::kType, Term::iri("sigmus:" + std::string(cls)));
        add(vocab::kIdentifier, Term::literal(id.str()));
    }
    void add(std::string_view pred, Term object) { out_.push_back({subject_, std::string(pred), std::move(object)}); }
    void str(std::string_view pred, const std::string& v) { add(pred, Term::literal(v)); }
    void dbl(std::string_view pred, double v) { add(pred, Term::literal(round_trip_double(v), "xsd:double")); }
    void integer(std::string_view pred, long long v) { add(pred, Term::literal(std::to_string(v), "xsd:integer")); }
    void time(std::string_view pred, Timestamp t) { add(pred, Term::literal(format_timestamp(t), "xsd:dateTime")); }
    void node(std::string_view pred, const EntityId& id) { add(pred, Term::node(id)); }
    void geo(const std::optional<GeoPoint>& g) {
        if (!g) return;
        dbl(vocab::kLat, g->lat);
        dbl(vocab::kLong, g->lon);
        if (g->placeName) str(vocab::kPlaceName, *g->placeName);
    }

private:
    std::vector<Triple>& out_;
    EntityId subject_;
};

EntityId segment_id(const EntityId& report, std::size_t i) { return EntityId(report.str() + "/m" + std::to_string(i)); }
EntityId inference_id(const EntityId& seg, std::size_t j) { return EntityId(seg.str() + "/i" + std::to_string(j)); }

void write(TripleWriter& w, const Incident& x) {
    w.begin(x.id, "Incident");
    w.str(vocab::kLabel, x.label);
    w.str(vocab::kComment, x.description);
    w.time(vocab::kBegin, x.interval.start);
    if (x.interval.end) w.time(vocab::kEnd, *x.interval.end);
    w.geo(x.geo);
    for (const auto& alt : x.altLabels) w.str(vocab::kAltLabel, alt);
    for (const auto& r : x.sourceReportIds) w.node(vocab::kHasSource, r);
}

void write(TripleWriter& w, const Report& x) {
    w.begin(x.id, "Report");
    w.time(vocab::kResultTime, x.observedAt);
    w.geo(x.geo);
    w.node(vocab::kProducedBy, x.observerId);
    w.node(vocab::kCollectedBy, x.aggregatorId);
    for (std::size_t i = 0; i < x.segments.size(); ++i) w.node(vocab::kHasModality, segment_id(x.id, i));
    for (std::size_t i = 0; i < x.segments.size(); ++i) {
        const auto& seg = x.segments[i];
        const EntityId sid = segment_id(x.id, i);
        w.begin(sid, "Modality");
        w.integer(vocab::kPosition, static_cast<long long>(i));
        w.str(vocab::kModalityKind, std::string(to_string(seg.kind)));
        w.str(vocab::kValue, seg.value);
        if (seg.property) w.str(vocab::kObservedProperty, *seg.property);
        if (seg.unit) w.str(vocab::kUnit, *seg.unit);
        for (std::size_t j = 0; j < seg.inferences.size(); ++j) w.node(vocab::kHasInference, inference_id(sid, j));
        for (std::size_t j = 0; j < seg.inferences.size(); ++j) {
            w.begin(inference_id(sid, j), "Inference");
            w.integer(vocab::kPosition, static_cast<long long>(j));
            w.str(vocab::kInferenceType, seg.inferences[j].inferenceType);
            w.str(vocab::kInferenceResult, seg.inferences[j].inferenceResult);
        }
    }
}

void write(TripleWriter& w, const Observer& x) {
    w.begin(x.id, "Observer");
    w.str(vocab::kLabel, x.label);
}

void write(TripleWriter& w, const Aggregator& x) {
    w.begin(x.id, "Aggregator");
    w.str(vocab::kLabel, x.label);
}

void write(TripleWriter& w, const ActorRecord& x) {
    w.begin(x.id, "Actor");
    w.str(vocab::kLabel, x.name);
    if (x.cameoActorCode) w.str(vocab::kCameoActor, *x.cameoActorCode);
    for (const auto& alt : x.altNames) w.str(vocab::kAltLabel, alt);
}

void write(TripleWriter& w, const EventRecord& x) {
    w.begin(x.id, "Event");
    w.str(vocab::kCameoEvent, x.cameoEventCode);
    if (x.capCategory) w.str(vocab::kCapCategory, *x.capCategory);
    if (x.actor1) w.node(vocab::kActor1, *x.actor1);
    if (x.actor2) w.node(vocab::kActor2, *x.actor2);
}

}  // namespace

std::vector<Triple> to_triples(const Entity& e) {
    if (auto violations = validate(e); !violations.empty()) throw ValidationError(std::move(violations));
    std::vector<Triple> out;
    TripleWriter w(out);
    std::visit([&](const auto& x) { write(w, x); }, e);
    return out;
}

namespace {

class SubjectView {
public:
    SubjectView(const EntityId& id, std::vector<const Triple*> triples) : id_(id), triples_(std::move(triples)) {}

    const EntityId& id() const { return id_; }

    std::vector<const Term*> all(std::string_view pred) const {
        std::vector<const Term*> out;
        for (const auto* t : triples_) {
            if (t->predicate == pred) out.push_back(&t->object);
        }
        return out;
    }

    const Term* one(std::string_view pred) const {
        const Term* found = nullptr;
        for (const auto* t : triples_) {
            if (t->predicate != pred) continue;
            if (found) throw Error("predicate " + std::string(pred) + " repeated on " + id_.str());
            found = &t->object;
        }
        return found;
    }

    std::string required_str(std::string_view pred) const {
        const Term* t = one(pred);
        if (!t || t->kind != Term::Kind::Literal) throw Error("missing " + std::string(pred) + " on " + id_.str());
        return t->value;
    }

    std::optional<std::string> optional_str(std::string_view pred) const {
        const Term* t = one(pred);
        if (!t) return std::nullopt;
        if (t->kind != Term::Kind::Literal) throw Error("expected literal for " + std::string(pred));
        return t->value;
    }

    Timestamp required_time(std::string_view pred) const {
        auto ts = parse_timestamp(required_str(pred));
        if (!ts) throw Error("bad dateTime for " + std::string(pred) + " on " + id_.str());
        return *ts;
    }

    std::optional<Timestamp> optional_time(std::string_view pred) const {
        auto s = optional_str(pred);
        if (!s) return std::nullopt;
        auto ts = parse_timestamp(*s);
        if (!ts) throw Error("bad dateTime for " + std::string(pred));
        return ts;
    }

    std::optional<double> optional_double(std::string_view pred) const {
        auto s = optional_str(pred);
        if (!s) return std::nullopt;
        double v = 0;
        auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
        if (ec != std::errc{} || p != s->data() + s->size()) throw Error("bad double for " + std::string(pred));
        return v;
    }

    long long required_int(std::string_view pred) const {
        const std::string s = required_str(pred);
        long long v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size()) throw Error("bad integer for " + std::string(pred));
        return v;
    }

    std::vector<EntityId> nodes(std::string_view pred) const {
        std::vector<EntityId> out;
        for (const auto* t : all(pred)) {
            if (t->kind != Term::Kind::Node) throw Error("expected node object for " + std::string(pred));
            out.emplace_back(t->value);
        }
        return out;
    }

    std::optional<EntityId> optional_node(std::string_view pred) const {
        auto n = nodes(pred);
        if (n.size() > 1) throw Error("predicate " + std::string(pred) + " repeated on " + id_.str());
        if (n.empty()) return std::nullopt;
        return n.front();
    }

    std::vector<std::string> strings(std::string_view pred) const {
        std::vector<std::string> out;
        for (const auto* t : all(pred)) {
            if (t->kind != Term::Kind::Literal) throw Error("expected literal for " + std::string(pred));
            out.push_back(t->value);
        }
        return out;
    }

    std::optional<GeoPoint> geo() const {
        auto lat = optional_double(vocab::kLat);
        auto lon = optional_double(vocab::kLong);
        if (!lat && !lon) return std::nullopt;
        if (!lat || !lon) throw Error("incomplete geo on " + id_.str());
        return GeoPoint{*lat, *lon, optional_str(vocab::kPlaceName)};
    }

private:
    EntityId id_;
    std::vector<const Triple*> triples_;
};

class TripleIndex {
public:
    explicit TripleIndex(std::span<const Triple> triples) {
        for (const auto& t : triples) by_subject_[t.subject].push_back(&t);
    }

    SubjectView view(const EntityId& id) const {
        auto it = by_subject_.find(id);
        if (it == by_subject_.end()) throw Error("no triples for " + id.str());
        return SubjectView(id, it->second);
    }

    std::string class_of(const EntityId& id) const {
        const Term* t = view(id).one(vocab::kType);
        if (!t || t->kind != Term::Kind::Iri || t->value.rfind("sigmus:", 0) != 0) {
            throw Error("missing rdf:type on " + id.str());
        }
        return t->value.substr(7);
    }

    EntityId root() const {
        static const std::set<std::string, std::less<>> kTopLevel{"Incident", "Report", "Observer", "Aggregator",
                                                                   "Actor", "Event"};
        std::optional<EntityId> found;
        for (const auto& [id, triples] : by_subject_) {
            for (const auto* t : triples) {
                if (t->predicate != vocab::kType || t->object.kind != Term::Kind::Iri) continue;
                const std::string& v = t->object.value;
                if (v.rfind("sigmus:", 0) == 0 && kTopLevel.contains(v.substr(7))) {
                    if (found && *found != id) throw Error("multiple root entities in triple set");
                    found = id;
                }
            }
        }
        if (!found) throw Error("no root entity in triple set");
        return *found;
    }

private:
    std::map<EntityId, std::vector<const Triple*>> by_subject_;
};

template <typename T, typename Fn>
std::vector<T> ordered_children(const TripleIndex& index, const std::vector<EntityId>& ids, Fn&& build) {
    std::vector<std::pair<long long, T>> items;
    for (const auto& id : ids) {
        SubjectView v = index.view(id);
        items.emplace_back(v.required_int(vocab::kPosition), build(v));
    }
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<T> out;
    out.reserve(items.size());
    for (auto& [pos, item] : items) out.push_back(std::move(item));
    return out;
}

}  // namespace

Entity from_triples(std::span<const Triple> triples) {
    TripleIndex index(triples);
    const EntityId root = index.root();
    const SubjectView v = index.view(root);
    const std::string cls = index.class_of(root);
    EntityId id(v.required_str(vocab::kIdentifier));
    if (id != root) throw Error("identifier does not match subject " + root.str());

    if (cls == "Incident") {
        Incident x;
        x.id = id;
        x.label = v.required_str(vocab::kLabel);
        x.description = v.optional_str(vocab::kComment).value_or("");
        x.interval.start = v.required_time(vocab::kBegin);
        x.interval.end = v.optional_time(vocab::kEnd);
        x.geo = v.geo();
        x.altLabels = v.strings(vocab::kAltLabel);
        x.sourceReportIds = v.nodes(vocab::kHasSource);
        return x;
    }
    if (cls == "Report") {
        Report x;
        x.id = id;
        x.observedAt = v.required_time(vocab::kResultTime);
        x.geo = v.geo();
        x.observerId = v.optional_node(vocab::kProducedBy).value_or(EntityId{});
        x.aggregatorId = v.optional_node(vocab::kCollectedBy).value_or(EntityId{});
        x.segments = ordered_children<ModalitySegment>(index, v.nodes(vocab::kHasModality), [&](const SubjectView& s) {
            ModalitySegment seg;
            auto kind = parse_modality_kind(s.required_str(vocab::kModalityKind));
            if (!kind) throw Error("bad modality kind on " + s.id().str());
            seg.kind = *kind;
            seg.value = s.required_str(vocab::kValue);
            seg.property = s.optional_str(vocab::kObservedProperty);
            seg.unit = s.optional_str(vocab::kUnit);
            seg.inferences =
                ordered_children<InferenceRecord>(index, s.nodes(vocab::kHasInference), [](const SubjectView& i) {
                    return InferenceRecord{i.required_str(vocab::kInferenceType),
                                           i.required_str(vocab::kInferenceResult)};
                });
            return seg;
        });
        return x;
    }
    if (cls == "Observer") return Observer{id, v.required_str(vocab::kLabel)};
    if (cls == "Aggregator") return Aggregator{id, v.required_str(vocab::kLabel)};
    if (cls == "Actor") {
        ActorRecord x;
        x.id = id;
        x.name = v.required_str(vocab::kLabel);
        x.cameoActorCode = v.optional_str(vocab::kCameoActor);
        x.altNames = v.strings(vocab::kAltLabel);
        return x;
    }
    if (cls == "Event") {
        EventRecord x;
        x.id = id;
        x.cameoEventCode = v.required_str(vocab::kCameoEvent);
        x.capCategory = v.optional_str(vocab::kCapCategory);
        x.actor1 = v.optional_node(vocab::kActor1);
        x.actor2 = v.optional_node(vocab::kActor2);
        return x;
    }
    throw Error("unsupported root class " + cls);
}

}  // namespace sigmus
