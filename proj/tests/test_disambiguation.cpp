#include <gtest/gtest.h>

#include <random>

#include "sigmus/disambiguation.hpp"
#include "support.hpp"

using namespace sigmus;
using namespace sigmus::testing;

namespace {

const Timestamp kT = *parse_timestamp("2025-01-07T19:00:00Z");

// ASCII only: the oracle compares bytes.
std::string random_name(std::mt19937_64& rng) {
    static const std::vector<std::string> pool = {"fire", "fires", "los", "angeles", "dept", "department", "lafd",
                                                  "palisades", "pacific", "2025", "wildfire", "eaton", "angel"};
    std::string out;
    for (int n = static_cast<int>(rng() % 5); n > 0; --n) out += (out.empty() ? "" : " ") + pool[rng() % pool.size()];
    return out;
}

bool flagged(const GraphStore& g, const EntityId& id) {
    const auto n = g.get_node(id);
    if (!n) return false;
    const auto it = n->properties.find(vocab::kNeedsReview);
    return it != n->properties.end() && std::get<bool>(it->second);
}

// The graph needs report nodes before incidents can cite them.
void seed_reports(GraphStore& g) {
    g.insert_entity(Aggregator{EntityId("aggregator-1"), "News"});
    g.insert_entity(Observer{EntityId("observer-1"), "Wire"});
    Report r;
    r.id = EntityId("report-1");
    r.aggregatorId = EntityId("aggregator-1");
    r.observerId = EntityId("observer-1");
    r.observedAt = kT;
    r.segments.push_back({ModalityKind::Text, "Palisades Fire grows", std::nullopt, std::nullopt, {}});
    g.insert_entity(r);
}

Incident incident(const std::string& id, const std::string& label, const std::string& desc = "") {
    return Incident{EntityId(id), label, desc, {kT, std::nullopt}, std::nullopt, {EntityId("report-1")}, {}};
}

class CountingBackend : public StubBackend {
public:
    using StubBackend::StubBackend;
    std::string complete(const BackendRequest& req, const std::string& prompt) override {
        ++calls;
        return StubBackend::complete(req, prompt);
    }
    int calls = 0;
};

class DownBackend : public InferenceBackend {
public:
    std::string name() const override { return "down"; }
    std::string complete(const BackendRequest&, const std::string&) override { throw BackendUnavailable("offline"); }
};

}  // namespace

TEST(NameDistance, WorkedValues) {
    EXPECT_DOUBLE_EQ(char_edit_distance("kitten", "sitting"), 3.0 / 7.0);
    EXPECT_DOUBLE_EQ(char_edit_distance("", ""), 0.0);
    EXPECT_DOUBLE_EQ(char_edit_distance("café", "cafe"), 0.25);
    EXPECT_DOUBLE_EQ(token_substitution_cost("dept", "department"), 0.6);
    EXPECT_DOUBLE_EQ(token_substitution_cost("angel", "angeles"), 0.2);
    EXPECT_DOUBLE_EQ(token_substitution_cost("de", "department"), 0.8);
    EXPECT_DOUBLE_EQ(name_distance("", ""), 0.0);
    EXPECT_DOUBLE_EQ(name_distance("", "LAFD"), 1.0);
    EXPECT_DOUBLE_EQ(name_distance("Palisades Fire", "palisades  FIRE"), 0.0);
    EXPECT_DOUBLE_EQ(name_distance("Los Angeles Fire Dept", "Los Angeles Fire Department"), 0.15);
    EXPECT_DOUBLE_EQ(name_distance("Palisades Fire", "2025 Pacific Palisades Wildfire"), (0.4 + 0.4 + 0 + 0.5) / 4);
    EXPECT_EQ(normalize_name("  Los   ANGELES, fire!"), "los angeles fire");
}

TEST(NameDistance, MetricPropertiesAndOracle) {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 300; ++i) {
        const auto a = random_name(rng), b = random_name(rng);
        const double d = name_distance(a, b);
        EXPECT_NEAR(d, oracle::name_distance(a, b), 1e-12) << a << " | " << b;
        EXPECT_DOUBLE_EQ(d, name_distance(b, a));
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
        EXPECT_EQ(name_distance(a, a), 0.0);
    }
}

TEST(NameDistance, CustomParams) {
    NameDistanceParams p;
    p.insertDeleteCost = 1.0;
    EXPECT_DOUBLE_EQ(name_distance("a b", "a", p), 0.5);
    EXPECT_DOUBLE_EQ(token_substitution_cost("angel", "angeles", p), 0.2);
    p.minPrefixLen = 6;
    EXPECT_DOUBLE_EQ(token_substitution_cost("angel", "angeles", p), 2.0 / 7.0);
}

TEST(TopkActors, OrdersByDistanceThenId) {
    GraphStore g;
    g.insert_entity(ActorRecord{EntityId("actor-b"), "Los Angeles Fire Department", "USAGOV", {"LA Fire"}});
    g.insert_entity(ActorRecord{EntityId("actor-a"), "Los Angeles Fire Department", std::nullopt, {}});
    g.insert_entity(ActorRecord{EntityId("actor-c"), "Residents", std::nullopt, {}});
    const auto top = topk_actors(g, "LA Fire", 2);
    ASSERT_EQ(top.size(), 2u);
    EXPECT_EQ(top[0].first.id, EntityId("actor-b"));  // altName matches exactly
    EXPECT_EQ(top[0].second, 0.0);
    EXPECT_EQ(top[1].first.id, EntityId("actor-a"));
    EXPECT_TRUE(topk_actors(g, "x", 0).empty());
    EXPECT_EQ(topk_actors(g, "x", 10).size(), 3u);
}

TEST(Embedding, NormalizedAndDeterministic) {
    const auto v = embed("Palisades fire fire");
    ASSERT_EQ(v.size(), kDefaultEmbeddingDims);
    double norm = 0;
    for (float x : v) norm += static_cast<double>(x) * x;
    EXPECT_NEAR(norm, 1.0, 1e-6);
    EXPECT_EQ(v, embed("palisades FIRE, fire"));
    const auto zero = embed("  ");
    EXPECT_TRUE(std::all_of(zero.begin(), zero.end(), [](float x) { return x == 0.0f; }));
    EXPECT_EQ(cosine(zero, v), 0.0);
    EXPECT_NEAR(cosine(v, v), 1.0, 1e-6);
}

TEST(VectorIndex, TopkUpsertRemoveAndPersistence) {
    VectorIndex idx(64);
    idx.upsert(EntityId("incident-1"), "Palisades Fire wind driven wildfire");
    idx.upsert(EntityId("incident-2"), "Eaton Fire Altadena");
    idx.upsert(EntityId("incident-3"), "Traffic collision on I-405");
    idx.upsert(EntityId("incident-3"), "Freeway collision");  // replaces
    EXPECT_EQ(idx.size(), 3u);
    EXPECT_EQ(idx.get(EntityId("incident-3"))->sourceText, "Freeway collision");

    const auto top = topk_incidents(idx, "wildfire in Palisades", 2);
    ASSERT_EQ(top.size(), 2u);
    EXPECT_EQ(top[0].first, EntityId("incident-1"));
    EXPECT_GE(top[0].second, top[1].second);
    EXPECT_EQ(topk_incidents(idx, "x", 10, kernels::Exec::Serial), topk_incidents(idx, "x", 10, kernels::Exec::Parallel));

    TempDir dir;
    idx.save(dir.path() / "idx.bin");
    const auto back = VectorIndex::load(dir.path() / "idx.bin");
    EXPECT_EQ(back.dims(), 64u);
    ASSERT_EQ(back.size(), 3u);
    for (const auto& e : idx.entries()) {
        const auto other = back.get(e.incidentId);
        ASSERT_TRUE(other);
        EXPECT_EQ(other->vector, e.vector);
        EXPECT_EQ(other->sourceText, e.sourceText);
    }

    EXPECT_TRUE(idx.remove(EntityId("incident-2")));
    EXPECT_FALSE(idx.remove(EntityId("incident-2")));
    EXPECT_EQ(idx.size(), 2u);
    EXPECT_EQ(topk_incidents(idx, "Eaton", 5).size(), 2u);

    spit(dir.path() / "bad.bin", "SGVIjunk");
    EXPECT_THROW(VectorIndex::load(dir.path() / "bad.bin"), VectorIndexError);
    EXPECT_THROW(idx.upsert(VectorIndexEntry{EntityId("incident-9"), EmbeddingVector(3), ""}), VectorIndexError);
}

TEST(VectorIndex, CustomEmbedderIsUsed) {
    VectorIndex idx(2, [](std::string_view t) { return EmbeddingVector{t.size() % 2 ? 1.0f : 0.0f, t.size() % 2 ? 0.0f : 1.0f}; });
    idx.upsert(EntityId("incident-odd"), "a");
    idx.upsert(EntityId("incident-even"), "ab");
    EXPECT_EQ(topk_incidents(idx, "xyz", 1)[0].first, EntityId("incident-odd"));
}

TEST(ResolveActor, ExactNameAndAltNameShortcut) {
    GraphStore g;
    VectorIndex idx;
    Resolver r(g, idx);
    g.insert_entity(ActorRecord{EntityId("actor-1"), "Los Angeles Fire Department", "USAGOV", {"LAFD"}});
    CountingBackend b(StubRules{});
    EXPECT_EQ(r.resolve_actor({EntityId("actor-2"), "los angeles  fire department", std::nullopt, {}}, &b), EntityId("actor-1"));
    EXPECT_EQ(r.resolve_actor({EntityId("actor-3"), "lafd", std::nullopt, {}}, &b), EntityId("actor-1"));
    EXPECT_EQ(b.calls, 0);
    EXPECT_EQ(g.nodes_of_class("Actor").size(), 1u);
}

TEST(ResolveActor, BackendMergeAndOfflineFlag) {
    GraphStore g;
    VectorIndex idx;
    Resolver r(g, idx);
    g.insert_entity(ActorRecord{EntityId("actor-1"), "Los Angeles Fire Department", "USAGOV", {}});
    CountingBackend b(stub_rules_parse("la fire\tsame:Los Angeles Fire Department\n"));
    EXPECT_EQ(r.resolve_actor({EntityId("actor-2"), "LA Fire Dept", std::nullopt, {}}, &b), EntityId("actor-1"));
    EXPECT_EQ(b.calls, 1);
    EXPECT_FALSE(g.contains(EntityId("actor-2")));
    EXPECT_EQ(actor_from_node(*g.get_node(EntityId("actor-1"))).altNames, std::vector<std::string>{"LA Fire Dept"});

    // Distinct answer keeps the new actor; an unreachable backend flags it.
    EXPECT_EQ(r.resolve_actor({EntityId("actor-3"), "Residents", std::nullopt, {}}, &b), EntityId("actor-3"));
    EXPECT_FALSE(flagged(g, EntityId("actor-3")));
    DownBackend down;
    EXPECT_EQ(r.resolve_actor({EntityId("actor-4"), "Displaced Families", std::nullopt, {}}, &down), EntityId("actor-4"));
    EXPECT_TRUE(flagged(g, EntityId("actor-4")));
    EXPECT_EQ(r.resolve_actor({EntityId("actor-5"), "Volunteers", std::nullopt, {}}, nullptr), EntityId("actor-5"));
    EXPECT_TRUE(flagged(g, EntityId("actor-5")));
}

TEST(ResolveIncident, SameAsAndPartOf) {
    GraphStore g;
    seed_reports(g);
    VectorIndex idx;
    Resolver r(g, idx);
    StubBackend b(stub_rules_parse("pacific palisades wildfire\tsame:Palisades Fire\n"
                                   "palisades fire\tpartof:2025 Los Angeles Wildfires\n"));

    const auto parent = r.resolve_incident(incident("incident-la", "2025 Los Angeles Wildfires", "fires across LA"), "fires", &b);
    EXPECT_EQ(parent.id, EntityId("incident-la"));
    EXPECT_FALSE(parent.merged);

    const auto pal = r.resolve_incident(incident("incident-pal", "Palisades Fire", "wildfire"), "Palisades Fire grows", &b);
    EXPECT_EQ(pal.partOf, EntityId("incident-la"));
    EXPECT_TRUE(g.reaches(EntityId("incident-pal"), EntityId("incident-la"), vocab::kIsPartOf));

    const auto dup = r.resolve_incident(incident("incident-dup", "2025 Pacific Palisades Wildfire", "Palisades wildfire"),
                                        "Palisades Fire burning", &b);
    EXPECT_TRUE(dup.merged);
    EXPECT_EQ(dup.id, EntityId("incident-pal"));
    EXPECT_FALSE(g.contains(EntityId("incident-dup")));
    EXPECT_FALSE(idx.contains(EntityId("incident-dup")));

    // Exact label or alt label short-circuits to the same node.
    const auto again = r.resolve_incident(incident("incident-x", "2025 pacific palisades wildfire"), "", &b);
    EXPECT_EQ(again.id, EntityId("incident-pal"));
    EXPECT_EQ(again.partOf, EntityId("incident-la"));
    EXPECT_FALSE(has_part_of_cycle(g));
    EXPECT_EQ(g.nodes_of_class("Incident").size(), 2u);
}

TEST(ResolveIncident, ReplayIsIdempotent) {
    GraphStore g;
    seed_reports(g);
    VectorIndex idx;
    Resolver r(g, idx);
    StubBackend b(stub_rules_parse("palisades fire\tpartof:2025 Los Angeles Wildfires\n"));
    for (int round = 0; round < 2; ++round) {
        r.resolve_incident(incident("incident-la", "2025 Los Angeles Wildfires"), "", &b);
        r.resolve_incident(incident("incident-pal", "Palisades Fire"), "", &b);
    }
    EXPECT_EQ(g.nodes_of_class("Incident").size(), 2u);
    std::size_t partOf = 0;
    for (const auto& e : g.edges()) partOf += e.predicate == vocab::kIsPartOf;
    EXPECT_EQ(partOf, 1u);
}

TEST(ResolveIncident, CycleIsRejectedAndFlagged) {
    GraphStore g;
    seed_reports(g);
    VectorIndex idx;
    Resolver r(g, idx);
    StubBackend b(stub_rules_parse("eaton\tpartof:Palisades Fire\n"));
    r.resolve_incident(incident("incident-pal", "Palisades Fire"), "", nullptr);
    const auto eaton = r.resolve_incident(incident("incident-eaton", "Eaton Fire"), "", &b);
    EXPECT_EQ(eaton.partOf, EntityId("incident-pal"));

    // Eaton is already part of Palisades, so the merged node cannot become part of Eaton.
    class SameThenCycle : public InferenceBackend {
    public:
        std::string name() const override { return "same-then-cycle"; }
        std::string complete(const BackendRequest&, const std::string&) override {
            return "```json\n{\"sameAs\": \"incident-pal\", \"partOf\": \"incident-eaton\"}\n```";
        }
    } cyc;
    const auto bad = r.resolve_incident(incident("incident-pal3", "Pal Blaze"), "", &cyc);
    EXPECT_EQ(bad.id, EntityId("incident-pal"));
    EXPECT_TRUE(bad.flagged);
    EXPECT_FALSE(bad.partOf);
    EXPECT_TRUE(flagged(g, EntityId("incident-pal")));
    EXPECT_FALSE(has_part_of_cycle(g));
}

TEST(ResolveIncident, OfflineFlagsNewIncident) {
    GraphStore g;
    seed_reports(g);
    VectorIndex idx;
    Resolver r(g, idx);
    r.resolve_incident(incident("incident-1", "Palisades Fire"), "", nullptr);
    EXPECT_FALSE(flagged(g, EntityId("incident-1")));  // nothing to adjudicate against
    DownBackend down;
    const auto res = r.resolve_incident(incident("incident-2", "Palisades Fire Update"), "", &down);
    EXPECT_TRUE(res.flagged);
    EXPECT_TRUE(flagged(g, EntityId("incident-2")));
    EXPECT_THROW(r.resolve_incident(Incident{EntityId("incident-3"), "x", "", {kT, std::nullopt}, std::nullopt, {}, {}}, "", nullptr),
                 ValidationError);
}

TEST(PartOfCycle, Detection) {
    GraphStore g;
    seed_reports(g);
    for (const char* id : {"incident-a", "incident-b", "incident-c"}) g.insert_entity(incident(id, id));
    g.upsert_edge(Edge{EntityId("incident-a"), EntityId("incident-b"), std::string(vocab::kIsPartOf), {}});
    g.upsert_edge(Edge{EntityId("incident-b"), EntityId("incident-c"), std::string(vocab::kIsPartOf), {}});
    EXPECT_FALSE(has_part_of_cycle(g));
    g.upsert_edge(Edge{EntityId("incident-c"), EntityId("incident-a"), std::string(vocab::kIsPartOf), {}});
    EXPECT_TRUE(has_part_of_cycle(g));
}
