#include <gtest/gtest.h>

#include <boost/graph/adjacency_list.hpp>
#include <boost/graph/graphml.hpp>

#include <sstream>

#include "sigmus/graph_store.hpp"
#include "support.hpp"

using namespace sigmus;
using namespace sigmus::testing;

namespace {

const Timestamp kT = *parse_timestamp("2025-01-07T19:00:00Z");

struct Seeded {
    GraphStore g;
    EntityId report{"report-1"};

    explicit Seeded(GraphOptions o = {}) : g(std::move(o)) {
        g.insert_entity(Aggregator{EntityId("aggregator-1"), "GDELT"});
        g.insert_entity(Observer{EntityId("observer-1"), "latimes.com"});
        g.insert_entity(Report{report, EntityId("aggregator-1"), EntityId("observer-1"), kT,
                               GeoPoint{34.04, -118.55, "Pacific Palisades"},
                               {{ModalityKind::Text, "Fire near Palisades", std::nullopt, std::nullopt, {}}}});
    }

    EntityId incident(const std::string& label, Timestamp start, std::optional<GeoPoint> geo = std::nullopt,
                      std::optional<Timestamp> end = std::nullopt) {
        Incident i{EntityId(derive_id("incident", {label})), label, "", {start, end}, geo, {report}, {}};
        return g.insert_entity(i);
    }
};

std::string label_of(const Node& n) { return std::get<std::string>(n.properties.at(std::string(vocab::kLabel))); }

}  // namespace

TEST(GraphStore, RejectsUnknownVocabulary) {
    GraphStore g;
    EXPECT_THROW(g.upsert_node({EntityId("x"), "Spaceship", {}}), GraphError);
    EXPECT_THROW(g.upsert_node({EntityId("x"), "Observer", {{"ex:color", std::string("red")}}}), GraphError);
    EXPECT_THROW(g.upsert_node({EntityId("x"), "Observer", {{std::string(vocab::kAltLabel), std::string("scalar")}}}),
                 GraphError);
    EXPECT_THROW(g.upsert_node({EntityId("x"), "Observer", {{std::string(vocab::kLat), std::nan("")}}}), GraphError);
    EXPECT_EQ(g.node_count(), 0u);
}

TEST(GraphStore, EdgesNeedBothEndpoints) {
    Seeded s;
    EXPECT_THROW(s.g.upsert_edge({s.report, EntityId("nowhere"), std::string(vocab::kEvidenceOf), {}}), GraphError);
    const auto inc = s.incident("Palisades Fire", kT);
    EXPECT_THROW(s.g.upsert_edge({s.report, inc, "sigmus:likes", {}}), GraphError);
    s.g.upsert_edge({s.report, inc, std::string(vocab::kEvidenceOf), {}});
    EXPECT_EQ(s.g.in_edges(inc, vocab::kEvidenceOf).size(), 1u);
    // Upserting again replaces rather than duplicates.
    s.g.upsert_edge({s.report, inc, std::string(vocab::kEvidenceOf), {{std::string(vocab::kRationale), std::string("smoke")}}});
    const auto in = s.g.in_edges(inc, vocab::kEvidenceOf);
    ASSERT_EQ(in.size(), 1u);
    EXPECT_EQ(std::get<std::string>(in[0].properties.at(std::string(vocab::kRationale))), "smoke");
}

TEST(GraphStore, ClassOfExistingNodeIsFixed) {
    Seeded s;
    EXPECT_THROW(s.g.upsert_node({s.report, "Observer", {}}), GraphError);
}

TEST(GraphStore, InsertEntityRoundTripsThroughGetEntity) {
    Seeded s;
    const auto id = s.incident("Palisades Fire", kT, GeoPoint{34.04, -118.55, std::nullopt});
    const auto back = std::get<Incident>(s.g.get_entity(id));
    EXPECT_EQ(back.label, "Palisades Fire");
    EXPECT_EQ(back.sourceReportIds, std::vector<EntityId>{s.report});
    const auto report = std::get<Report>(s.g.get_entity(s.report));
    EXPECT_EQ(report.segments.size(), 1u);
    EXPECT_EQ(report.geo->placeName, "Pacific Palisades");
}

TEST(GraphStore, MergeRehomesEdgesAndFoldsLabels) {
    Seeded s;
    const auto parent = s.incident("2025 Los Angeles Wildfires", kT);
    const auto keep = s.incident("Palisades Fire", kT);
    const auto gone = s.incident("2025 Pacific Palisades Wildfire", kT + Duration(60));
    s.g.upsert_edge({gone, parent, std::string(vocab::kIsPartOf), {}});
    s.g.upsert_edge({s.report, gone, std::string(vocab::kEvidenceOf), {}});
    s.g.upsert_edge({gone, keep, std::string(vocab::kIsPartOf), {}});  // becomes a self-loop and is dropped

    s.g.merge_nodes(keep, gone, vocab::kAltLabel);
    EXPECT_FALSE(s.g.contains(gone));
    const auto n = s.g.get_node(keep);
    ASSERT_TRUE(n);
    EXPECT_EQ(std::get<std::vector<std::string>>(n->properties.at(std::string(vocab::kAltLabel))),
              std::vector<std::string>{"2025 Pacific Palisades Wildfire"});
    EXPECT_EQ(label_of(*n), "Palisades Fire");
    EXPECT_EQ(s.g.out_edges(keep, vocab::kIsPartOf).size(), 1u);
    EXPECT_EQ(s.g.out_edges(keep, vocab::kIsPartOf)[0].to, parent);
    EXPECT_EQ(s.g.in_edges(keep, vocab::kEvidenceOf).size(), 1u);
    for (const auto& e : s.g.edges()) {
        EXPECT_NE(e.from, e.to);
        EXPECT_TRUE(s.g.contains(e.from) && s.g.contains(e.to));
    }
}

TEST(GraphStore, ReachesFollowsOnlyThePredicate) {
    Seeded s;
    const auto a = s.incident("a", kT), b = s.incident("b", kT), c = s.incident("c", kT);
    s.g.upsert_edge({a, b, std::string(vocab::kIsPartOf), {}});
    s.g.upsert_edge({b, c, std::string(vocab::kIsPartOf), {}});
    EXPECT_TRUE(s.g.reaches(a, c, vocab::kIsPartOf));
    EXPECT_FALSE(s.g.reaches(c, a, vocab::kIsPartOf));
    EXPECT_FALSE(s.g.reaches(s.report, a, vocab::kIsPartOf));
}

TEST(GraphStore, QueryIncidentsByWindowAndRegion) {
    Seeded s;
    const GeoPoint la{34.05, -118.24, std::nullopt}, sac{38.58, -121.49, std::nullopt};
    const auto early = s.incident("early", kT - std::chrono::hours(48), la, kT - std::chrono::hours(24));
    const auto now = s.incident("now", kT, la);
    const auto far = s.incident("far", kT, sac);
    s.g.upsert_edge({s.report, now, std::string(vocab::kEvidenceOf), {}});

    auto ids = [](const std::vector<IncidentContext>& rows) {
        std::vector<EntityId> out;
        for (const auto& r : rows) out.push_back(r.incident.id);
        return out;
    };
    EXPECT_EQ(s.g.query_incidents().size(), 3u);
    const auto recent = ids(s.g.query_incidents(TimeInterval{kT - std::chrono::hours(1), std::nullopt}));
    EXPECT_EQ(recent.size(), 2u);
    EXPECT_EQ(std::count(recent.begin(), recent.end(), early), 0);
    // A half-open window ending exactly at the start excludes it.
    EXPECT_TRUE(ids(s.g.query_incidents(TimeInterval{kT - std::chrono::hours(20), kT})).empty());
    const auto local = ids(s.g.query_incidents(std::nullopt, RegionFilter{la, 50.0}));
    EXPECT_EQ(std::count(local.begin(), local.end(), far), 0);
    EXPECT_EQ(local.size(), 2u);

    const auto rows = s.g.query_incidents(TimeInterval{kT, std::nullopt}, RegionFilter{la, 50.0});
    ASSERT_EQ(rows.size(), 1u);
    ASSERT_EQ(rows[0].recentReports.size(), 1u);
    EXPECT_EQ(rows[0].recentReports[0].summary, "Fire near Palisades");
}

TEST(GraphStore, WalRecoversState) {
    TempDir dir;
    GraphOptions o;
    o.walPath = dir / "graph.wal";
    std::string before;
    {
        Seeded s(o);
        const auto a = s.incident("Palisades Fire", kT);
        const auto b = s.incident("Pacific Palisades Wildfire", kT);
        s.g.upsert_edge({s.report, b, std::string(vocab::kEvidenceOf), {}});
        s.g.set_property(a, vocab::kNeedsReview, true);
        s.g.merge_nodes(a, b, vocab::kAltLabel);
        s.g.flush();
        before = s.g.export_graph(ExportFormat::NQuads);
    }
    GraphStore reopened(o);
    EXPECT_EQ(reopened.export_graph(ExportFormat::NQuads), before);
}

TEST(GraphStore, TornWalTailIsIgnored) {
    TempDir dir;
    GraphOptions o;
    o.walPath = dir / "graph.wal";
    std::string before;
    {
        Seeded s(o);
        s.g.flush();
        before = s.g.export_graph(ExportFormat::NQuads);
    }
    {
        std::ofstream out(*o.walPath, std::ios::binary | std::ios::app);
        out << "\x40\x00\x00\x00{\"op\":\"node\"";  // length prefix promising more than is there
    }
    GraphStore reopened(o);
    EXPECT_EQ(reopened.export_graph(ExportFormat::NQuads), before);
}

TEST(Export, NQuadsRoundTripProperty) {
    for (std::uint64_t seed = 100; seed < 160; ++seed) {
        GraphStore g;
        random_graph(g, seed);
        const auto text = g.export_graph(ExportFormat::NQuads);
        GraphStore h;
        h.import_nquads(text);
        EXPECT_EQ(h.nodes(), g.nodes()) << seed;
        EXPECT_EQ(h.edges(), g.edges()) << seed;
    }
}

TEST(Export, NQuadsLinesAreWellFormedAndDeterministic) {
    GraphStore g, twin;
    random_graph(g, 7);
    random_graph(twin, 7);
    const auto text = g.export_graph(ExportFormat::NQuads);
    EXPECT_EQ(twin.export_graph(ExportFormat::NQuads), text);
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        EXPECT_TRUE(line.rfind("<urn:sigmus:entity:", 0) == 0 || line.rfind("_:", 0) == 0) << line;
        EXPECT_TRUE(line.ends_with(" <urn:sigmus:graph> .")) << line;
        EXPECT_EQ(line.find('\r'), std::string::npos);
    }
    EXPECT_GT(n, g.node_count());
}

TEST(Export, ImportRejectsMalformedInput) {
    for (const char* bad : {"not a quad\n", "<urn:sigmus:entity:x> <http://x> \"unterminated <urn:sigmus:graph> .\n",
                            "<urn:sigmus:entity:x> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <urn:sigmus:ontology#Nope> <urn:sigmus:graph> .\n"}) {
        GraphStore g;
        EXPECT_THROW(g.import_nquads(bad), Error) << bad;
    }
}

TEST(Export, GraphMLParsesWithBoost) {
    GraphStore g;
    random_graph(g, 21);
    std::string xml = g.export_graph(ExportFormat::GraphML);
    // Boost reads booleans with lexical_cast, which only knows 0 and 1.
    for (const auto& [from, to] : {std::pair<std::string_view, std::string_view>{">true<", ">1<"}, {">false<", ">0<"}}) {
        for (auto pos = xml.find(from); pos != std::string::npos; pos = xml.find(from, pos)) xml.replace(pos, from.size(), to);
    }

    using BGraph = boost::adjacency_list<boost::vecS, boost::vecS, boost::directedS,
                                         boost::property<boost::vertex_name_t, std::string>,
                                         boost::property<boost::edge_name_t, std::string>>;
    BGraph bg;
    boost::dynamic_properties dp(boost::ignore_other_properties);
    dp.property("class", boost::get(boost::vertex_name, bg));
    dp.property("predicate", boost::get(boost::edge_name, bg));
    std::istringstream in(xml);
    boost::read_graphml(in, bg, dp);

    EXPECT_EQ(boost::num_vertices(bg), g.node_count());
    EXPECT_EQ(boost::num_edges(bg), g.edge_count());
    std::map<std::string, int> classes, want;
    for (auto v : boost::make_iterator_range(boost::vertices(bg))) ++classes[boost::get(boost::vertex_name, bg, v)];
    for (const auto& n : g.nodes()) ++want[n.classLabel];
    EXPECT_EQ(classes, want);
    std::map<std::string, int> preds, wantPreds;
    for (auto e : boost::make_iterator_range(boost::edges(bg))) ++preds[boost::get(boost::edge_name, bg, e)];
    for (const auto& e : g.edges()) ++wantPreds[e.predicate];
    EXPECT_EQ(preds, wantPreds);
}

TEST(Export, CypherHasOneStatementPerElement) {
    GraphStore g;
    random_graph(g, 5);
    const auto text = g.export_graph(ExportFormat::Cypher);
    std::size_t merges = 0, lines = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++lines;
        EXPECT_TRUE(line.ends_with(";")) << line;
        merges += line.rfind("MERGE", 0) == 0 || line.rfind("MATCH", 0) == 0;
    }
    EXPECT_EQ(merges, lines);
    EXPECT_EQ(lines, g.node_count() + g.edge_count());
    EXPECT_EQ(g.export_graph(ExportFormat::Cypher), text);
}

TEST(Summaries, PreferInferencesAndTruncateOnCodePoints) {
    Report r;
    r.segments.push_back({ModalityKind::Tabular, "412.6", "PM2.5", "ug/m3", {}});
    r.segments.push_back({ModalityKind::Image, "blobs/x", std::nullopt, std::nullopt, {{"Image Captioning", "Heavy smoke"}}});
    EXPECT_EQ(summarize_report(r, 500), "PM2.5=412.6 ug/m3 | Image Captioning: Heavy smoke");
    EXPECT_EQ(truncate_utf8("Café", 4), "Caf");
    EXPECT_EQ(truncate_utf8("Café", 5), "Café");
    EXPECT_EQ(truncate_utf8("abc", 0), "");
}

TEST(Geo, Haversine) {
    const GeoPoint la{34.0522, -118.2437, std::nullopt}, sf{37.7749, -122.4194, std::nullopt};
    EXPECT_NEAR(haversine_km(la, sf), 559.0, 2.0);
    EXPECT_DOUBLE_EQ(haversine_km(la, la), 0.0);
}
