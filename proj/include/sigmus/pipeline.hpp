#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sigmus/analysis.hpp"
#include "sigmus/disambiguation.hpp"
#include "sigmus/graph_store.hpp"
#include "sigmus/inference.hpp"
#include "sigmus/ingestion.hpp"
#include "sigmus/warehouse.hpp"

namespace sigmus {

inline constexpr std::string_view kImageCaptioning = "Image Captioning";
inline constexpr std::string_view kActorEventParsing = "Actor and Event Parsing";

enum class BackendKind { None, Stub, Http };

struct ServiceConfig {
    std::string healthHost = "127.0.0.1";
    int healthPort = 0;  // 0 disables the endpoint
    std::size_t queueCapacity = 256;
};

struct ReplayDefaults {
    double speedup = 1.0;
    std::optional<Timestamp> clockStart;
};

// The top-level JSON config. Relative paths resolve against the config
// file's directory.
struct AppConfig {
    std::filesystem::path baseDir;
    std::vector<SourceConfig> sources;
    std::filesystem::path stateDir;  // warehouse root, also holding the graph WAL, index and metrics; default ./sigmus-state
    BackendKind backend = BackendKind::Stub;
    std::optional<std::filesystem::path> stubRules;
    std::optional<std::filesystem::path> promptsDir;
    std::optional<std::filesystem::path> cameoCodebook;
    std::size_t inferenceParallelism = 4;
    std::size_t linkCandidates = 50;
    ResolveOptions resolve;
    std::vector<Duration> trendWindows = default_trend_windows();
    TrendParams trend;
    ServiceConfig service;
    ReplayDefaults replay;
};

AppConfig parse_app_config(const nlohmann::json& j, const std::filesystem::path& baseDir);
// Reads the file; SIGMUS_WAREHOUSE_ROOT overrides the configured state dir.
AppConfig load_app_config(const std::filesystem::path& path);

// Builds the configured backend; nullptr for BackendKind::None. Http reads
// its endpoint from the environment and throws ConfigError when unset.
std::unique_ptr<InferenceBackend> make_backend(const AppConfig& config);

// Wraps a backend so that at most `limit` requests are in flight.
std::unique_ptr<InferenceBackend> bounded_backend(std::unique_ptr<InferenceBackend> inner, std::size_t limit);

struct RunningMean {
    double mean = 0.0;
    std::size_t count = 0;

    void add(double x) {
        ++count;
        mean += (x - mean) / static_cast<double>(count);
    }
};

struct IngestMetrics {
    std::string sourceName;
    RunningMean processingLatencySec;  // modality processing
    RunningMean kgInsertLatencySec;    // graph insert, disambiguation and linking
    RunningMean actorMergeLatencySec;
    RunningMean incidentMergeLatencySec;
    std::size_t failed = 0;
};

// `Data Source | Processing Latency (s) | KG insert latency (s)`, 4 decimals.
std::string render_metrics_table(const std::vector<IngestMetrics>& rows);
std::string render_metrics_tsv(const std::vector<IngestMetrics>& rows);
std::vector<IngestMetrics> parse_metrics_tsv(std::string_view text);

struct IngestOutcome {
    std::vector<EntityId> touched;  // created or updated entity ids, first-touch order
    bool failed = false;
    std::string failureReason;
};

struct ReplaySpec {
    std::filesystem::path fixtureDir;  // holds config.json unless a config is given
    double speedup = 1.0;
    // Reports observed before clockStart are released immediately; later
    // ones follow their timestamps scaled by speedup. Defaults to the first
    // report's time.
    std::optional<Timestamp> clockStart;
};

std::vector<std::string> validate(const ReplaySpec& spec);

struct ReplayResult {
    std::vector<IngestMetrics> metrics;  // one row per configured source
    std::size_t reports = 0;
    std::vector<std::string> errors;  // per-file fetch or parse problems
};

// Owns the stores and the backend for one state directory.
class Pipeline {
public:
    explicit Pipeline(AppConfig config, std::unique_ptr<InferenceBackend> backend = nullptr);
    ~Pipeline();

    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    const AppConfig& config() const noexcept { return config_; }
    GraphStore& graph() noexcept { return *graph_; }
    Warehouse& warehouse() noexcept { return *warehouse_; }
    VectorIndex& index() noexcept { return *index_; }
    InferenceBackend* backend() noexcept { return backend_.get(); }

    // Upserts the aggregator and observers of a parse batch.
    void register_sources(const ParseResult& batch);

    IngestOutcome ingest_report(const Report& report, const SourceConfig& source);

    // Registers and ingests every report of a batch in order.
    std::size_t ingest_batch(const ParseResult& batch, const SourceConfig& source);

    // Fetches, parses and ingests one source. Throws FetchError.
    ParseResult poll(const SourceConfig& source, Timestamp now);

    // Parses every source of the config, then ingests all reports in global
    // timestamp order (ties keep source order, then record order).
    ReplayResult replay(const ReplaySpec& spec);

    std::vector<IngestMetrics> metrics() const;
    void reset_metrics();

    // Flushes the WAL, saves the vector index and the metrics file.
    void save_state();

    const SourceConfig* find_source(std::string_view name) const;

private:
    IngestMetrics& metrics_for(const std::string& source);
    std::vector<nlohmann::json> link_candidates(Timestamp asOf) const;
    std::string label_of(const EntityId& id) const;

    AppConfig config_;
    std::unique_ptr<InferenceBackend> backend_;
    RunOptions runOptions_;
    std::unique_ptr<PromptSet> prompts_;
    std::unique_ptr<Warehouse> warehouse_;
    std::unique_ptr<GraphStore> graph_;
    std::unique_ptr<VectorIndex> index_;
    std::unique_ptr<Resolver> resolver_;
    mutable std::mutex metricsMutex_;
    std::map<std::string, IngestMetrics> metrics_;
};

// Polls every source on its schedule until SIGTERM/SIGINT or `stop` is set,
// then drains the queue and saves state. Returns the process exit code.
int run_service(Pipeline& pipeline, std::atomic<bool>* stop = nullptr);

}  // namespace sigmus
