#include "sigmus/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json_util.hpp"
#include "log.hpp"

namespace sigmus {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kContextBytes = 1000;
constexpr std::size_t kSummaryBytes = 500;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string node_string(const Node& n, std::string_view key) {
    auto it = n.properties.find(key);
    if (it == n.properties.end()) return {};
    if (auto s = std::get_if<std::string>(&it->second)) return *s;
    return {};
}

std::vector<std::string> node_list(const Node& n, std::string_view key) {
    auto it = n.properties.find(key);
    if (it == n.properties.end()) return {};
    if (auto l = std::get_if<std::vector<std::string>>(&it->second)) return *l;
    return {};
}

std::optional<Timestamp> node_time(const Node& n, std::string_view key) {
    auto it = n.properties.find(key);
    if (it == n.properties.end()) return std::nullopt;
    if (auto t = std::get_if<Timestamp>(&it->second)) return *t;
    return std::nullopt;
}

std::string describe(const ParsedActorsEvents& p) {
    std::string out = "actors: ";
    if (p.actors.empty()) out += "none";
    for (std::size_t i = 0; i < p.actors.size(); ++i) {
        out += (i ? ", " : "") + p.actors[i].name;
        if (p.actors[i].cameoActorCode) out += " (" + *p.actors[i].cameoActorCode + ")";
    }
    out += "; events: ";
    if (p.events.empty()) out += "none";
    for (std::size_t i = 0; i < p.events.size(); ++i) {
        const auto& e = p.events[i];
        out += (i ? ", " : "") + e.cameoEventCode;
        if (auto entry = cameo_lookup(e.cameoEventCode)) out += " " + entry->term;
        if (!e.actor1Name.empty()) out += " (" + e.actor1Name + (e.actor2Name.empty() ? "" : " -> " + e.actor2Name) + ")";
    }
    if (p.capCategory) out += "; CAP: " + *p.capCategory;
    if (p.incidentCandidate) out += "; incident: " + p.incidentCandidate->label;
    return out;
}

std::string describe(const CaptionResult& c) {
    std::string out = c.caption;
    if (c.noteworthy) out += " [noteworthy]";
    if (!c.tags.empty()) {
        out += " Tags:";
        for (std::size_t i = 0; i < c.tags.size(); ++i) out += (i ? ", " : " ") + c.tags[i];
        out += ".";
    }
    return out;
}

class BoundedBackend : public InferenceBackend {
public:
    BoundedBackend(std::unique_ptr<InferenceBackend> inner, std::size_t limit)
        : inner_(std::move(inner)), limit_(std::max<std::size_t>(limit, 1)) {}

    std::string name() const override { return inner_->name(); }

    std::string complete(const BackendRequest& req, const std::string& prompt) override {
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [&] { return inFlight_ < limit_; });
            ++inFlight_;
        }
        struct Release {
            BoundedBackend* self;
            ~Release() {
                {
                    std::lock_guard lock(self->mutex_);
                    --self->inFlight_;
                }
                self->cv_.notify_one();
            }
        } release{this};
        return inner_->complete(req, prompt);
    }

private:
    std::unique_ptr<InferenceBackend> inner_;
    std::size_t limit_;
    std::size_t inFlight_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
};

json metrics_to_json(const std::vector<IngestMetrics>& rows) {
    json out = json::array();
    auto mean = [](const RunningMean& m) { return json{{"mean", m.mean}, {"count", m.count}}; };
    for (const auto& r : rows) {
        out.push_back({{"source", r.sourceName},
                       {"processing", mean(r.processingLatencySec)},
                       {"kgInsert", mean(r.kgInsertLatencySec)},
                       {"actorMerge", mean(r.actorMergeLatencySec)},
                       {"incidentMerge", mean(r.incidentMergeLatencySec)},
                       {"failed", r.failed}});
    }
    return out;
}

std::vector<IngestMetrics> metrics_from_json(const json& j) {
    std::vector<IngestMetrics> out;
    if (!j.is_array()) return out;
    auto mean = [](const json& m) {
        RunningMean r;
        r.mean = m.value("mean", 0.0);
        r.count = m.value("count", std::size_t{0});
        return r;
    };
    for (const auto& row : j) {
        IngestMetrics m;
        m.sourceName = row.value("source", "");
        m.processingLatencySec = mean(row.value("processing", json::object()));
        m.kgInsertLatencySec = mean(row.value("kgInsert", json::object()));
        m.actorMergeLatencySec = mean(row.value("actorMerge", json::object()));
        m.incidentMergeLatencySec = mean(row.value("incidentMerge", json::object()));
        m.failed = row.value("failed", std::size_t{0});
        if (!m.sourceName.empty()) out.push_back(std::move(m));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

AppConfig parse_app_config(const json& j, const fs::path& baseDir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    AppConfig c;
    c.baseDir = baseDir;
    auto path = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : (baseDir / p).lexically_normal(); };
    auto optional_path = [&](const char* key) -> std::optional<fs::path> {
        if (!j.contains(key)) return std::nullopt;
        if (!j.at(key).is_string()) throw ConfigError(std::string(key) + " must be a path string");
        return path(j.at(key).get<std::string>());
    };
    auto count = [&](const json& obj, const char* key, std::size_t fallback) -> std::size_t {
        if (!obj.contains(key)) return fallback;
        const auto& v = obj.at(key);
        if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) throw ConfigError(std::string(key) + " must be a positive integer");
        return static_cast<std::size_t>(v.get<std::int64_t>());
    };

    if (!j.contains("sources") || !j.at("sources").is_array()) throw ConfigError("config needs a sources array");
    std::set<std::string> names;
    for (const auto& s : j.at("sources")) {
        c.sources.push_back(parse_source_config(s, baseDir));
        if (!names.insert(c.sources.back().sourceName).second) {
            throw ConfigError("duplicate source name " + c.sources.back().sourceName);
        }
    }
    c.stateDir = optional_path("state").value_or(fs::current_path() / "sigmus-state");
    c.promptsDir = optional_path("prompts");
    c.cameoCodebook = optional_path("cameoCodebook");

    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        if (!b.is_object()) throw ConfigError("backend must be an object");
        const std::string kind = b.value("kind", "stub");
        if (kind == "stub") {
            c.backend = BackendKind::Stub;
        } else if (kind == "http") {
            c.backend = BackendKind::Http;
        } else if (kind == "none") {
            c.backend = BackendKind::None;
        } else {
            throw ConfigError("unknown backend kind " + kind);
        }
        if (b.contains("rules")) c.stubRules = path(b.at("rules").get<std::string>());
        c.inferenceParallelism = count(b, "parallelism", c.inferenceParallelism);
        if (b.contains("retries")) {
            const auto& r = b.at("retries");
            if (!r.is_number_integer() || r.get<std::int64_t>() < 0 || r.get<std::int64_t>() > 100) {
                throw ConfigError("retries must be an integer in [0, 100]");
            }
            c.resolve.run.retries = b.at("retries").get<int>();
        }
    }
    c.linkCandidates = count(j, "linkCandidates", c.linkCandidates);
    c.resolve.k = count(j, "k", c.resolve.k);

    if (j.contains("trend")) {
        const auto& t = j.at("trend");
        if (!t.is_object()) throw ConfigError("trend must be an object");
        if (t.contains("windows")) {
            c.trendWindows.clear();
            for (const auto& w : t.at("windows")) {
                auto d = w.is_string() ? parse_duration(w.get<std::string>()) : std::nullopt;
                if (!d || *d <= Duration::zero()) throw ConfigError("trend windows must be positive durations");
                c.trendWindows.push_back(*d);
            }
            if (c.trendWindows.empty()) throw ConfigError("trend windows must not be empty");
        }
        c.trend.anomalyZ = t.value("anomalyZ", c.trend.anomalyZ);
        c.trend.flatZ = t.value("flatZ", c.trend.flatZ);
        if (!(c.trend.anomalyZ > 0) || !(c.trend.flatZ >= 0)) throw ConfigError("trend thresholds must be positive");
    }
    if (j.contains("service")) {
        const auto& s = j.at("service");
        c.service.healthHost = s.value("healthHost", c.service.healthHost);
        c.service.healthPort = s.value("healthPort", c.service.healthPort);
        c.service.queueCapacity = count(s, "queueCapacity", c.service.queueCapacity);
    }
    if (j.contains("replay")) {
        const auto& r = j.at("replay");
        c.replay.speedup = r.value("speedup", c.replay.speedup);
        if (r.contains("clockStart")) {
            c.replay.clockStart = parse_timestamp(r.at("clockStart").get<std::string>());
            if (!c.replay.clockStart) throw ConfigError("replay.clockStart is not a timestamp");
        }
        if (!(c.replay.speedup > 0) || !std::isfinite(c.replay.speedup)) throw ConfigError("replay.speedup must be positive");
    }
    return c;
}

AppConfig load_app_config(const fs::path& path) {
    const json j = json::parse(read_text(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
    AppConfig c = parse_app_config(j, fs::absolute(path).parent_path());
    if (std::getenv("SIGMUS_WAREHOUSE_ROOT")) c.stateDir = Warehouse::root_from_env(c.stateDir);
    return c;
}

std::unique_ptr<InferenceBackend> make_backend(const AppConfig& config) {
    std::unique_ptr<InferenceBackend> inner;
    switch (config.backend) {
        case BackendKind::None: return nullptr;
        case BackendKind::Stub:
            inner = std::make_unique<StubBackend>(config.stubRules ? stub_rules_load(*config.stubRules) : StubRules{},
                                                  config.stateDir);
            break;
        case BackendKind::Http: {
            auto http = HttpBackendConfig::from_env();
            if (!http) throw ConfigError("http backend needs SIGMUS_LLM_ENDPOINT and SIGMUS_LLM_MODEL");
            http->blobRoot = config.stateDir;
            inner = std::make_unique<HttpChatBackend>(std::move(*http));
            break;
        }
    }
    return bounded_backend(std::move(inner), config.inferenceParallelism);
}

std::unique_ptr<InferenceBackend> bounded_backend(std::unique_ptr<InferenceBackend> inner, std::size_t limit) {
    if (!inner) return nullptr;
    return std::make_unique<BoundedBackend>(std::move(inner), limit);
}

// ---------------------------------------------------------------------------
// Metrics rendering

std::string render_metrics_table(const std::vector<IngestMetrics>& rows) {
    const std::string h0 = "Data Source", h1 = "Processing Latency (s)", h2 = "KG insert latency (s)";
    std::size_t w0 = h0.size();
    for (const auto& r : rows) w0 = std::max(w0, r.sourceName.size());
    auto pad = [](std::string s, std::size_t w, bool right) {
        const std::string fill(w > s.size() ? w - s.size() : 0, ' ');
        return right ? fill + s : s + fill;
    };
    std::string out = pad(h0, w0, false) + " | " + h1 + " | " + h2 + "\n";
    out += std::string(w0, '-') + "-|-" + std::string(h1.size(), '-') + "-|-" + std::string(h2.size(), '-') + "\n";
    for (const auto& r : rows) {
        out += pad(r.sourceName, w0, false) + " | " + pad(fixed(r.processingLatencySec.mean, 4), h1.size(), true) + " | " +
               pad(fixed(r.kgInsertLatencySec.mean, 4), h2.size(), true) + "\n";
    }
    return out;
}

std::string render_metrics_tsv(const std::vector<IngestMetrics>& rows) {
    std::string out = "Data Source\tProcessing Latency (s)\tKG insert latency (s)\n";
    for (const auto& r : rows) {
        out += r.sourceName + "\t" + fixed(r.processingLatencySec.mean, 4) + "\t" + fixed(r.kgInsertLatencySec.mean, 4) + "\n";
    }
    return out;
}

std::vector<IngestMetrics> parse_metrics_tsv(std::string_view text) {
    std::vector<IngestMetrics> out;
    bool header = true;
    for (const auto& line : split(text, '\n')) {
        if (trim(line).empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        const auto cols = split(line, '\t');
        if (cols.size() != 3) throw Error("metrics row needs 3 columns: " + line);
        IngestMetrics m;
        m.sourceName = cols[0];
        m.processingLatencySec.mean = std::stod(cols[1]);
        m.kgInsertLatencySec.mean = std::stod(cols[2]);
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<std::string> validate(const ReplaySpec& spec) {
    std::vector<std::string> v;
    if (!(spec.speedup > 0) || !std::isfinite(spec.speedup)) v.push_back("speedup must be finite and positive");
    return v;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(AppConfig config, std::unique_ptr<InferenceBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
    fs::create_directories(config_.stateDir);
    if (config_.cameoCodebook) {
        CameoCodebook::set_active(std::make_shared<const CameoCodebook>(CameoCodebook::load(*config_.cameoCodebook)));
    }
    if (config_.promptsDir) {
        prompts_ = std::make_unique<PromptSet>(PromptSet::load(*config_.promptsDir));
    }
    runOptions_ = config_.resolve.run;
    runOptions_.prompts = prompts_.get();
    config_.resolve.run = runOptions_;

    warehouse_ = std::make_unique<Warehouse>(config_.stateDir);
    GraphOptions go;
    go.walPath = config_.stateDir / "graph.wal";
    graph_ = std::make_unique<GraphStore>(go);

    const fs::path indexPath = config_.stateDir / "incidents.sgvi";
    index_ = std::make_unique<VectorIndex>(fs::exists(indexPath) ? VectorIndex::load(indexPath) : VectorIndex());
    // Incidents written before the index file existed are indexed by label
    // and description alone.
    for (const auto& n : graph_->nodes_of_class("Incident")) {
        if (!index_->contains(n.id)) index_->upsert(n.id, node_string(n, vocab::kLabel) + " " + node_string(n, vocab::kComment));
    }
    resolver_ = std::make_unique<Resolver>(*graph_, *index_, config_.resolve);

    const fs::path metricsPath = config_.stateDir / "metrics.json";
    if (fs::exists(metricsPath)) {
        const json j = json::parse(read_text(metricsPath), nullptr, false);
        if (!j.is_discarded()) {
            for (auto& m : metrics_from_json(j)) metrics_[m.sourceName] = std::move(m);
        }
    }
}

Pipeline::~Pipeline() = default;

const SourceConfig* Pipeline::find_source(std::string_view name) const {
    for (const auto& s : config_.sources) {
        if (s.sourceName == name) return &s;
    }
    return nullptr;
}

IngestMetrics& Pipeline::metrics_for(const std::string& source) {
    auto& m = metrics_[source];
    m.sourceName = source;
    return m;
}

std::vector<IngestMetrics> Pipeline::metrics() const {
    std::lock_guard lock(metricsMutex_);
    std::vector<IngestMetrics> out;
    std::set<std::string> seen;
    for (const auto& s : config_.sources) {
        auto it = metrics_.find(s.sourceName);
        IngestMetrics m = it == metrics_.end() ? IngestMetrics{} : it->second;
        m.sourceName = s.sourceName;
        out.push_back(std::move(m));
        seen.insert(s.sourceName);
    }
    for (const auto& [name, m] : metrics_) {
        if (!seen.count(name)) out.push_back(m);
    }
    return out;
}

void Pipeline::reset_metrics() {
    std::lock_guard lock(metricsMutex_);
    metrics_.clear();
}

void Pipeline::save_state() {
    graph_->flush();
    index_->save(config_.stateDir / "incidents.sgvi");
    const std::string text = detail::dump_json(metrics_to_json(metrics()), 2) + "\n";
    const fs::path tmp = config_.stateDir / "metrics.json.tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw Error("cannot write " + tmp.string());
    }
    fs::rename(tmp, config_.stateDir / "metrics.json");
}

void Pipeline::register_sources(const ParseResult& batch) {
    if (!batch.aggregator.id.empty() && !graph_->contains(batch.aggregator.id)) graph_->insert_entity(batch.aggregator);
    for (const auto& o : batch.observers) {
        if (graph_->contains(o.id)) continue;
        graph_->insert_entity(o);
        graph_->upsert_edge(Edge{o.id, batch.aggregator.id, std::string(vocab::kCollectedBy), {}});
    }
}

std::string Pipeline::label_of(const EntityId& id) const {
    auto n = graph_->get_node(id);
    return n ? node_string(*n, vocab::kLabel) : std::string();
}

// Only incidents that had begun by `asOf` qualify, so the candidate set for
// a report does not depend on what was ingested after it.
std::vector<json> Pipeline::link_candidates(Timestamp asOf) const {
    struct Row {
        Timestamp begin;
        Node node;
    };
    std::vector<Row> rows;
    for (auto& n : graph_->nodes_of_class("Incident")) {
        const Timestamp begin = node_time(n, vocab::kBegin).value_or(Timestamp{});
        if (begin <= asOf) rows.push_back({begin, std::move(n)});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return a.begin != b.begin ? a.begin > b.begin : a.node.id < b.node.id;
    });
    if (rows.size() > config_.linkCandidates) rows.resize(config_.linkCandidates);
    std::vector<json> out;
    for (const auto& r : rows) {
        json c{{"id", r.node.id.str()},
               {"label", node_string(r.node, vocab::kLabel)},
               {"description", node_string(r.node, vocab::kComment)},
               {"altLabels", node_list(r.node, vocab::kAltLabel)},
               {"begin", format_timestamp(r.begin)}};
        if (auto place = node_string(r.node, vocab::kPlaceName); !place.empty()) c["place"] = place;
        out.push_back(std::move(c));
    }
    return out;
}

IngestOutcome Pipeline::ingest_report(const Report& input, const SourceConfig& source) {
    IngestOutcome out;
    auto touch = [&](const EntityId& id) {
        if (std::find(out.touched.begin(), out.touched.end(), id) == out.touched.end()) out.touched.push_back(id);
    };
    Report rep = input;
    const std::string place = rep.geo && rep.geo->placeName ? *rep.geo->placeName : std::string();
    const std::string observedAt = format_timestamp(rep.observedAt);
    std::string stage = "modality processing";
    bool inserted = false;
    double actorSec = 0, incidentSec = 0;
    std::size_t actorCount = 0, incidentCount = 0;

    std::optional<ParsedActorsEvents> parsed;
    std::string parseText;
    const auto t0 = Clock::now();
    double processingSec = 0, kgSec = 0;
    try {
        if (auto v = validate(rep); !v.empty()) throw ValidationError(v);
        const std::string observerLabel = label_of(rep.observerId);
        const std::string aggregatorLabel = label_of(rep.aggregatorId);
        for (auto& seg : rep.segments) {
            switch (seg.kind) {
                case ModalityKind::Text: {
                    if (!backend_) break;
                    BackendRequest req{Task::ActorEventParse,
                                       {{"text", seg.value}, {"observedAt", observedAt}, {"place", place}}};
                    parsed = run_as<ParsedActorsEvents>(*backend_, req, runOptions_);
                    parseText = seg.value;
                    // An empty parse would hide the raw text from the link summary.
                    if (!(*parsed == ParsedActorsEvents{})) {
                        seg.inferences.push_back({std::string(kActorEventParsing), describe(*parsed)});
                    }
                    break;
                }
                case ModalityKind::Image: {
                    if (!backend_) break;
                    json ctx{{"imagePath", seg.value}, {"observer", observerLabel}, {"observedAt", observedAt},
                             {"place", place}};
                    const std::string bytes = warehouse_->get_blob(seg.value);
                    if (auto mt = detect_image_media_type(bytes); !mt.empty()) ctx["mediaType"] = mt;
                    const auto cap = run_as<CaptionResult>(*backend_, BackendRequest{Task::ImageCaption, ctx}, runOptions_);
                    seg.inferences.push_back({std::string(kImageCaptioning), describe(cap)});
                    break;
                }
                case ModalityKind::Tabular: {
                    const std::string key = series_key(aggregatorLabel, observerLabel, seg.property.value_or(""));
                    std::size_t used = 0;
                    const double value = std::stod(seg.value, &used);
                    if (used != seg.value.size()) throw Error("tabular value is not a number: " + seg.value);
                    warehouse_->append_point({key, rep.observedAt, value, seg.unit.value_or("")});
                    const auto trend =
                        compute_trend(*warehouse_, key, rep.observedAt, config_.trendWindows, config_.trend);
                    seg.inferences.push_back(render_inference(trend));
                    break;
                }
            }
        }
        processingSec = seconds_since(t0);

        const auto t1 = Clock::now();
        stage = "graph insert";
        graph_->insert_entity(rep);
        inserted = true;
        touch(rep.id);

        if (parsed) {
            stage = "disambiguation";
            const std::string context = truncate_utf8(parseText, kContextBytes);
            std::map<std::string, EntityId> actorIds;
            for (const auto& a : parsed->actors) {
                const auto ta = Clock::now();
                ActorRecord cand{EntityId(derive_id("actor", {normalize_name(a.name)})), a.name, a.cameoActorCode, {}};
                const EntityId id = resolver_->resolve_actor(cand, backend_.get(), context);
                actorSec += seconds_since(ta);
                ++actorCount;
                actorIds.emplace(a.name, id);
                graph_->upsert_edge(Edge{rep.id, id, std::string(vocab::kMentions), {}});
                touch(id);
            }
            for (const auto& e : parsed->events) {
                EventRecord ev;
                ev.id = EntityId(derive_id("event", {rep.id.str(), e.cameoEventCode, e.actor1Name, e.actor2Name}));
                ev.cameoEventCode = e.cameoEventCode;
                if (auto it = actorIds.find(e.actor1Name); it != actorIds.end()) ev.actor1 = it->second;
                if (auto it = actorIds.find(e.actor2Name); it != actorIds.end()) ev.actor2 = it->second;
                ev.capCategory = parsed->capCategory;
                graph_->insert_entity(ev);
                graph_->upsert_edge(Edge{ev.id, rep.id, std::string(vocab::kReportedIn), {}});
                touch(ev.id);
            }
            if (parsed->incidentCandidate) {
                const auto ti = Clock::now();
                Incident inc;
                inc.id = EntityId(derive_id("incident", {normalize_name(parsed->incidentCandidate->label)}));
                inc.label = parsed->incidentCandidate->label;
                inc.description = parsed->incidentCandidate->description;
                inc.interval.start = rep.observedAt;
                inc.geo = rep.geo;
                inc.sourceReportIds = {rep.id};
                const auto res = resolver_->resolve_incident(inc, parseText, backend_.get());
                incidentSec += seconds_since(ti);
                ++incidentCount;
                touch(res.id);
                if (res.partOf) touch(*res.partOf);
            }
        }

        // News reports generate incidents rather than serve as evidence.
        if (source.kind != SourceKind::Gdelt && backend_) {
            stage = "cross-modal linking";
            const auto candidates = link_candidates(rep.observedAt);
            json report{{"id", rep.id.str()},
                        {"kind", std::string(to_string(rep.segments.front().kind))},
                        {"observedAt", observedAt},
                        {"place", place},
                        {"summary", summarize_report(rep, kSummaryBytes)}};
            BackendRequest req{Task::CrossModalLink, {{"report", report}, {"candidates", candidates}},
                               config_.linkCandidates};
            const auto decision = run_as<LinkDecision>(*backend_, req, runOptions_);
            for (const auto& id : decision.linkedIncidentIds) {
                graph_->upsert_edge(
                    Edge{rep.id, id, std::string(vocab::kEvidenceOf), {{std::string(vocab::kRationale), decision.rationale}}});
                touch(id);
            }
        }
        kgSec = seconds_since(t1);
    } catch (const std::exception& e) {
        out.failed = true;
        out.failureReason = stage + ": " + e.what();
    }

    if (out.failed) {
        try {
            if (!inserted && validate(rep).empty() && graph_->contains(rep.observerId) && graph_->contains(rep.aggregatorId)) {
                graph_->insert_entity(rep);
                inserted = true;
                touch(rep.id);
            }
            if (inserted) {
                graph_->set_property(rep.id, vocab::kIngestFailed, true);
                graph_->set_property(rep.id, vocab::kFailureReason, out.failureReason);
            }
        } catch (const std::exception& e) {
            out.failureReason += "; marking failed: " + std::string(e.what());
        }
        detail::log_warn("report " + rep.id.str() + " from " + source.sourceName + " failed at " + out.failureReason);
    }

    std::lock_guard lock(metricsMutex_);
    auto& m = metrics_for(source.sourceName);
    if (out.failed) {
        ++m.failed;
    } else {
        m.processingLatencySec.add(processingSec);
        m.kgInsertLatencySec.add(kgSec);
        if (actorCount) m.actorMergeLatencySec.add(actorSec / static_cast<double>(actorCount));
        if (incidentCount) m.incidentMergeLatencySec.add(incidentSec / static_cast<double>(incidentCount));
    }
    return out;
}

std::size_t Pipeline::ingest_batch(const ParseResult& batch, const SourceConfig& source) {
    register_sources(batch);
    std::size_t ok = 0;
    for (const auto& r : batch.reports) {
        if (!ingest_report(r, source).failed) ++ok;
    }
    return ok;
}

namespace {

std::optional<ArticleTexts> load_articles(const SourceConfig& source, Timestamp now) {
    if (!source.articlesLocation) return std::nullopt;
    SourceConfig tmp = source;
    tmp.inputLocation = *source.articlesLocation;
    ArticleTexts all;
    for (const auto& f : make_fetcher(tmp)->fetch(tmp, now)) all.merge(parse_articles(f.bytes));
    return all;
}

void accumulate(ParseResult& total, ParseResult&& part) {
    total.inputRecords += part.inputRecords;
    total.emitted += part.emitted;
    total.skipped += part.skipped;
    total.filtered += part.filtered;
    for (auto& e : part.errors) {
        if (total.errors.size() < 20) total.errors.push_back(std::move(e));
    }
    for (auto& o : part.observers) {
        if (std::find(total.observers.begin(), total.observers.end(), o) == total.observers.end()) {
            total.observers.push_back(std::move(o));
        }
    }
    total.aggregator = part.aggregator;
    std::move(part.reports.begin(), part.reports.end(), std::back_inserter(total.reports));
}

// Fetches and parses every file of a source; per-file failures are recorded
// in `errors` and the remaining files still parse.
ParseResult collect(const SourceConfig& source, Warehouse& warehouse, Timestamp now, std::vector<std::string>& errors) {
    ParseResult total;
    const auto articles = load_articles(source, now);
    for (auto& file : make_fetcher(source)->fetch(source, now)) {
        try {
            auto part = parse_source(file.bytes, source, warehouse, file.baseDir, articles ? &*articles : nullptr);
            if (part.skipped) {
                errors.push_back(source.sourceName + "/" + file.name + ": skipped " + std::to_string(part.skipped) +
                                 " of " + std::to_string(part.inputRecords) +
                                 (part.errors.empty() ? "" : " (first: " + part.errors.front() + ")"));
            }
            accumulate(total, std::move(part));
        } catch (const std::exception& e) {
            errors.push_back(source.sourceName + "/" + file.name + ": " + e.what());
        }
    }
    return total;
}

}  // namespace

ParseResult Pipeline::poll(const SourceConfig& source, Timestamp now) {
    std::vector<std::string> errors;
    ParseResult batch = collect(source, *warehouse_, now, errors);
    for (const auto& e : errors) detail::log_warn(e);
    ingest_batch(batch, source);
    return batch;
}

ReplayResult Pipeline::replay(const ReplaySpec& spec) {
    if (auto v = validate(spec); !v.empty()) throw ConfigError("replay: " + v.front());
    ReplayResult result;
    reset_metrics();

    struct Item {
        const Report* report;
        std::size_t source;
        std::size_t seq;
    };
    std::vector<ParseResult> batches(config_.sources.size());
    std::vector<Item> items;
    for (std::size_t s = 0; s < config_.sources.size(); ++s) {
        const auto& src = config_.sources[s];
        try {
            batches[s] = collect(src, *warehouse_, detail::now_seconds(), result.errors);
        } catch (const std::exception& e) {
            result.errors.push_back(src.sourceName + ": " + e.what());
            continue;
        }
        register_sources(batches[s]);
        for (std::size_t i = 0; i < batches[s].reports.size(); ++i) items.push_back({&batches[s].reports[i], s, i});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        if (a.report->observedAt != b.report->observedAt) return a.report->observedAt < b.report->observedAt;
        return a.source != b.source ? a.source < b.source : a.seq < b.seq;
    });

    const Timestamp clockStart = spec.clockStart ? *spec.clockStart
                                 : items.empty()  ? Timestamp{}
                                                  : items.front().report->observedAt;
    const auto wallStart = Clock::now();
    for (const auto& item : items) {
        if (item.report->observedAt > clockStart) {
            const double simulated = static_cast<double>((item.report->observedAt - clockStart).count()) / spec.speedup;
            std::this_thread::sleep_until(wallStart + std::chrono::duration_cast<Clock::duration>(
                                                          std::chrono::duration<double>(simulated)));
        }
        ingest_report(*item.report, config_.sources[item.source]);
        ++result.reports;
    }
    result.metrics = metrics();
    return result;
}

}  // namespace sigmus
