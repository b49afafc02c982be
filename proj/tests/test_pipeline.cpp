#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "sigmus/pipeline.hpp"
#include "support.hpp"

using namespace sigmus;
using namespace sigmus::testing;
using nlohmann::json;

namespace {

const Timestamp kT = *parse_timestamp("2025-01-07T19:00:00Z");

std::string pems_row(Timestamp at, const std::string& station, double speed) {
    return format_timestamp(at) + "," + station + ",7,,,,,,,,0.05," + fixed(speed, 1) + "\n";
}

// A two-source fixture written into `dir`: PeMS rows and an image manifest.
json small_fixture(const fs::path& dir) {
    std::string pems;
    for (int i = 0; i < 30; ++i) pems += pems_row(kT + std::chrono::minutes(i), "1", 60.0 + (i % 3));
    pems += pems_row(kT + std::chrono::minutes(30), "1", 5.0);  // sudden stop
    spit(dir / "pems" / "day.txt", pems);
    spit(dir / "cams" / "a.png", std::string("\x89PNG\r\n\x1a\n", 8) + "x");
    spit(dir / "cams" / "a.png.tags", "smoke");
    spit(dir / "cams" / "manifest.csv", "timestamp,camera,lat,lon,image\n" + format_timestamp(kT + std::chrono::minutes(31)) +
                                            ",D7-1,34.05,-118.5,a.png\n");
    spit(dir / "rules.tsv",
         "closure\tincident:Freeway Closure|Traffic stopped;cap:Transport\nsmoke\tcaption:Smoke on road.;link:closure\n");
    spit(dir / "news" / "n.csv", "");
    return {{"sources",
             {{{"name", "PeMS"}, {"kind", "pems"}, {"input", "pems"}},
              {{"name", "CCTV"}, {"kind", "cctv"}, {"input", "cams/manifest.csv"}}}},
            {"backend", {{"kind", "stub"}, {"rules", "rules.tsv"}}},
            {"state", "state"}};
}

class SlowBackend : public InferenceBackend {
public:
    std::string name() const override { return "slow"; }
    std::string complete(const BackendRequest&, const std::string&) override {
        const int now = ++inFlight;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --inFlight;
        return "```json\n{\"caption\": \"c\", \"noteworthy\": false, \"tags\": []}\n```";
    }
    std::atomic<int> inFlight{0};
    std::atomic<int> peak{0};
};

class DownBackend : public InferenceBackend {
public:
    std::string name() const override { return "down"; }
    std::string complete(const BackendRequest&, const std::string&) override { throw BackendUnavailable("offline"); }
};

}  // namespace

TEST(AppConfigParse, DefaultsAndOverrides) {
    const auto c = parse_app_config(
        {{"sources", {{{"name", "A"}, {"kind", "pems"}, {"input", "a"}}}},
         {"backend", {{"kind", "none"}, {"retries", 0}, {"parallelism", 2}}},
         {"trend", {{"windows", {"1h", "2d"}}, {"anomalyZ", 4.0}}},
         {"replay", {{"speedup", 100}, {"clockStart", "2025-01-07T19:00:00Z"}}},
         {"service", {{"healthPort", 8080}}},
         {"k", 7}},
        "/cfg");
    EXPECT_EQ(c.sources.at(0).inputLocation, "/cfg/a");
    EXPECT_EQ(c.backend, BackendKind::None);
    EXPECT_EQ(c.resolve.run.retries, 0);
    EXPECT_EQ(c.inferenceParallelism, 2u);
    EXPECT_EQ(c.trendWindows, (std::vector<Duration>{Duration(3600), Duration(172800)}));
    EXPECT_EQ(c.trend.anomalyZ, 4.0);
    EXPECT_EQ(c.replay.speedup, 100.0);
    EXPECT_EQ(c.replay.clockStart, kT);
    EXPECT_EQ(c.service.healthPort, 8080);
    EXPECT_EQ(c.resolve.k, 7u);
    EXPECT_EQ(c.stateDir.filename(), "sigmus-state");
    EXPECT_EQ(c.linkCandidates, 50u);

    const json src = {{"name", "A"}, {"kind", "pems"}, {"input", "a"}};
    const std::vector<json> bad = {
        json::array(),
        {{"sources", 3}},
        {{"sources", {src, src}}},
        {{"sources", {src}}, {"backend", {{"kind", "oracle"}}}},
        {{"sources", {src}}, {"k", 0}},
        {{"sources", {src}}, {"backend", {{"retries", -1}}}},
        {{"sources", {src}}, {"trend", {{"windows", {"0s"}}}}},
        {{"sources", {src}}, {"trend", {{"windows", json::array()}}}},
        {{"sources", {src}}, {"replay", {{"speedup", 0}}}},
        {{"sources", {src}}, {"replay", {{"clockStart", "tomorrow"}}}},
    };
    for (const auto& j : bad) EXPECT_THROW(parse_app_config(j, "/"), ConfigError) << j.dump();
}

TEST(AppConfigParse, LoadAndEnvironmentOverride) {
    TempDir dir;
    spit(dir.path() / "config.json", small_fixture(dir.path()).dump());
    unsetenv("SIGMUS_WAREHOUSE_ROOT");
    EXPECT_EQ(load_app_config(dir.path() / "config.json").stateDir, dir.path() / "state");
    setenv("SIGMUS_WAREHOUSE_ROOT", (dir.path() / "elsewhere").c_str(), 1);
    EXPECT_EQ(load_app_config(dir.path() / "config.json").stateDir, dir.path() / "elsewhere");
    unsetenv("SIGMUS_WAREHOUSE_ROOT");
    spit(dir.path() / "broken.json", "{");
    EXPECT_THROW(load_app_config(dir.path() / "broken.json"), ConfigError);
}

TEST(Backends, FactoryAndConcurrencyBound) {
    AppConfig c;
    c.backend = BackendKind::None;
    EXPECT_EQ(make_backend(c), nullptr);
    c.backend = BackendKind::Http;
    unsetenv("SIGMUS_LLM_ENDPOINT");
    EXPECT_THROW(make_backend(c), ConfigError);
    c.backend = BackendKind::Stub;
    EXPECT_NE(make_backend(c), nullptr);

    auto inner = std::make_unique<SlowBackend>();
    SlowBackend* raw = inner.get();
    auto bounded = bounded_backend(std::move(inner), 2);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&] { bounded->complete({Task::ImageCaption, {{"imagePath", "x"}}, 50}, "p"); });
    }
    for (auto& t : threads) t.join();
    EXPECT_LE(raw->peak.load(), 2);
    EXPECT_GE(raw->peak.load(), 1);
    EXPECT_EQ(bounded_backend(nullptr, 3), nullptr);
}

TEST(Metrics, TableAndTsv) {
    std::vector<IngestMetrics> rows(2);
    rows[0].sourceName = "GDELT";
    rows[0].processingLatencySec.add(0.5);
    rows[0].processingLatencySec.add(1.0);
    rows[0].kgInsertLatencySec.add(0.00004);
    rows[1].sourceName = "A much longer source name";
    const auto table = render_metrics_table(rows);
    const auto lines = split(table, '\n');
    EXPECT_EQ(lines[0], "Data Source               | Processing Latency (s) | KG insert latency (s)");
    const auto cells = split(lines[2], '|');
    ASSERT_EQ(cells.size(), 3u) << table;
    EXPECT_EQ(trim(cells[0]), "GDELT");
    EXPECT_EQ(trim(cells[1]), "0.7500");
    EXPECT_EQ(trim(cells[2]), "0.0000");
    EXPECT_EQ(lines[2].size(), lines[0].size());  // values right-aligned under their headers
    EXPECT_TRUE(lines[3].ends_with("0.0000"));

    const auto back = parse_metrics_tsv(render_metrics_tsv(rows));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].sourceName, "GDELT");
    EXPECT_EQ(back[0].processingLatencySec.mean, 0.75);
    EXPECT_THROW(parse_metrics_tsv("h\nonly\ttwo\n"), Error);

    RunningMean m;
    for (double x : {1.0, 2.0, 3.0, 10.0}) m.add(x);
    EXPECT_DOUBLE_EQ(m.mean, 4.0);
}

TEST(ReplaySpecCheck, Speedup) {
    EXPECT_TRUE(validate(ReplaySpec{"x", 1.0, std::nullopt}).empty());
    EXPECT_FALSE(validate(ReplaySpec{"x", 0.0, std::nullopt}).empty());
    EXPECT_FALSE(validate(ReplaySpec{"x", std::numeric_limits<double>::infinity(), std::nullopt}).empty());
}

TEST(PipelineReplay, TrendLinkAndMetrics) {
    TempDir dir;
    auto config = parse_app_config(small_fixture(dir.path()), dir.path());
    Pipeline p(config, make_backend(config));
    const auto result = p.replay({dir.path(), 1e6, std::nullopt});
    EXPECT_TRUE(result.errors.empty());
    EXPECT_EQ(result.reports, 32u);
    ASSERT_EQ(result.metrics.size(), 2u);
    EXPECT_EQ(result.metrics[0].sourceName, "PeMS");
    EXPECT_EQ(result.metrics[1].sourceName, "CCTV");
    for (const auto& m : result.metrics) {
        EXPECT_GE(m.processingLatencySec.mean, 0.0);
        EXPECT_GE(m.kgInsertLatencySec.mean, 0.0);
        EXPECT_EQ(m.failed, 0u);
    }
    EXPECT_EQ(result.metrics[0].processingLatencySec.count, 31u);

    const auto points = p.warehouse().all_points(series_key("Caltrans PeMS", "VDS 1", "speed"));
    ASSERT_EQ(points.size(), 31u);
    EXPECT_EQ(points.back().value, 5.0);

    // The last PeMS report carries an anomalous trend inference.
    std::optional<Node> last;
    for (const auto& n : p.graph().nodes_of_class("Report")) {
        const Report r = std::get<Report>(p.graph().get_entity(n.id));
        if (r.observedAt == kT + std::chrono::minutes(30)) last = n;
    }
    ASSERT_TRUE(last);
    const Report rep = std::get<Report>(p.graph().get_entity(last->id));
    ASSERT_FALSE(rep.segments[0].inferences.empty());
    EXPECT_EQ(rep.segments[0].inferences[0].inferenceType, kTrendAnalysis);
    EXPECT_TRUE(rep.segments[0].inferences[0].inferenceResult.ends_with("; anomalous"))
        << rep.segments[0].inferences[0].inferenceResult;

    // The camera image is captioned from its tags.
    bool captioned = false;
    for (const auto& n : p.graph().nodes_of_class("Report")) {
        const Report r = std::get<Report>(p.graph().get_entity(n.id));
        if (r.segments[0].kind != ModalityKind::Image) continue;
        ASSERT_EQ(r.segments[0].inferences.size(), 1u);
        EXPECT_EQ(r.segments[0].inferences[0].inferenceType, kImageCaptioning);
        EXPECT_NE(r.segments[0].inferences[0].inferenceResult.find("Smoke on road."), std::string::npos);
        captioned = true;
    }
    EXPECT_TRUE(captioned);

    p.save_state();
    EXPECT_TRUE(fs::exists(config.stateDir / "metrics.json"));
    EXPECT_TRUE(fs::exists(config.stateDir / "graph.wal"));
}

TEST(PipelineReplay, SpeedupPacesReports) {
    TempDir dir;
    std::string rows;
    for (int i = 0; i < 3; ++i) rows += pems_row(kT + std::chrono::seconds(10 * i), "9", 50);
    spit(dir.path() / "p.txt", rows);
    auto config = parse_app_config({{"sources", {{{"name", "P"}, {"kind", "pems"}, {"input", "p.txt"}}}},
                                    {"backend", {{"kind", "none"}}},
                                    {"state", "s"}},
                                   dir.path());
    Pipeline p(config);
    const auto start = std::chrono::steady_clock::now();
    p.replay({dir.path(), 40.0, kT});
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_GE(elapsed, 0.5);  // 20 simulated seconds at 40x
    EXPECT_LT(elapsed, 5.0);

    // Reports before the clock start are released without waiting.
    Pipeline q(config);
    const auto t2 = std::chrono::steady_clock::now();
    q.replay({dir.path(), 1.0, kT + std::chrono::hours(1)});
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t2).count(), 1.0);
}

TEST(PipelineIngest, FailuresAreMarkedNotDropped) {
    TempDir dir;
    auto config = parse_app_config(small_fixture(dir.path()), dir.path());
    Pipeline p(config, std::make_unique<DownBackend>());
    const auto batch = p.poll(*p.find_source("CCTV"), kT);
    ASSERT_EQ(batch.emitted, 1u);
    const auto& id = batch.reports[0].id;
    const auto node = p.graph().get_node(id);
    ASSERT_TRUE(node);
    EXPECT_EQ(std::get<bool>(node->properties.at(std::string(vocab::kIngestFailed))), true);
    EXPECT_NE(std::get<std::string>(node->properties.at(std::string(vocab::kFailureReason))).find("offline"),
              std::string::npos);
    const auto metrics = p.metrics();
    EXPECT_EQ(metrics[1].failed, 1u);
    EXPECT_EQ(metrics[1].processingLatencySec.count, 0u);

    Report invalid = batch.reports[0];
    invalid.segments.clear();
    EXPECT_TRUE(p.ingest_report(invalid, *p.find_source("CCTV")).failed);
    EXPECT_EQ(p.find_source("nope"), nullptr);
}

TEST(PipelineIngest, StatePersistsAcrossRestarts) {
    TempDir dir;
    auto config = parse_app_config(small_fixture(dir.path()), dir.path());
    std::size_t nodes = 0;
    {
        Pipeline p(config, make_backend(config));
        p.replay({dir.path(), 1e6, std::nullopt});
        nodes = p.graph().nodes().size();
        p.save_state();
    }
    Pipeline again(config, make_backend(config));
    EXPECT_EQ(again.graph().nodes().size(), nodes);
    EXPECT_EQ(again.metrics()[0].processingLatencySec.count, 31u);
    EXPECT_EQ(again.index().size(), again.graph().nodes_of_class("Incident").size());
}
