// Operator entry point. Exit codes: 0 success, 1 runtime failure, 2 usage.
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sigmus/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sigmus;

namespace {

struct UsageError : Error {
    using Error::Error;
};

struct Common {
    std::string config;
    std::string state;
};

std::optional<fs::path> config_path(const Common& c) {
    if (!c.config.empty()) return fs::path(c.config);
    if (const char* env = std::getenv("SIGMUS_CONFIG"); env && *env) return fs::path(env);
    return std::nullopt;
}

// Config from --config / SIGMUS_CONFIG; commands that only read state may
// run without one.
AppConfig resolve_config(const Common& c, bool required, const std::optional<fs::path>& fallback = std::nullopt) {
    auto path = config_path(c);
    if (!path) path = fallback;
    AppConfig cfg;
    if (path) {
        cfg = load_app_config(*path);
    } else if (required) {
        throw UsageError("no config: pass --config or set SIGMUS_CONFIG");
    } else {
        cfg.backend = BackendKind::None;
        cfg.stateDir = Warehouse::root_from_env("sigmus-state");
        if (!std::getenv("SIGMUS_WAREHOUSE_ROOT") && c.state.empty()) {
            throw UsageError("no state: pass --state, --config, or set SIGMUS_WAREHOUSE_ROOT");
        }
    }
    if (!c.state.empty()) cfg.stateDir = c.state;
    return cfg;
}

// Read-only commands need neither a backend nor sources.
Pipeline open_readonly(const Common& c) {
    AppConfig cfg = resolve_config(c, false);
    cfg.backend = BackendKind::None;
    return Pipeline(std::move(cfg));
}

Timestamp parse_ts_or_throw(const std::string& text, const char* flag) {
    auto t = parse_timestamp(text);
    if (!t) throw UsageError(std::string(flag) + ": not a timestamp: " + text);
    return *t;
}

void write_output(const std::string& text, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + path);
}

std::string label_or_id(const GraphStore& graph, const EntityId& id) {
    if (auto n = graph.get_node(id)) {
        auto it = n->properties.find(vocab::kLabel);
        if (it != n->properties.end()) {
            if (auto s = std::get_if<std::string>(&it->second)) return *s;
        }
    }
    return id.str();
}

std::string incidents_table(const GraphStore& graph, const std::vector<IncidentContext>& rows, bool tsv) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"id", "label", "begin", "end", "place", "partOf", "sources", "evidence", "altLabels", "needsReview"});
    for (const auto& ctx : rows) {
        const auto& inc = ctx.incident;
        std::string parent;
        for (const auto& e : graph.out_edges(inc.id, vocab::kIsPartOf)) {
            parent += (parent.empty() ? "" : ", ") + label_or_id(graph, e.to);
        }
        std::string alts;
        for (const auto& a : inc.altLabels) alts += (alts.empty() ? "" : "; ") + a;
        auto node = graph.get_node(inc.id);
        bool review = false;
        if (node) {
            if (auto it = node->properties.find(vocab::kNeedsReview); it != node->properties.end()) {
                if (auto b = std::get_if<bool>(&it->second)) review = *b;
            }
        }
        cells.push_back({inc.id.str(), inc.label, format_timestamp(inc.interval.start),
                         inc.interval.end ? format_timestamp(*inc.interval.end) : "",
                         inc.geo && inc.geo->placeName ? *inc.geo->placeName : "", parent,
                         std::to_string(inc.sourceReportIds.size()),
                         std::to_string(graph.in_edges(inc.id, vocab::kEvidenceOf).size()), alts,
                         review ? "yes" : "no"});
    }
    std::string out;
    if (tsv) {
        for (const auto& row : cells) {
            for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "\t" : "") + row[i];
            out += "\n";
        }
        return out;
    }
    std::vector<std::size_t> width(cells.front().size(), 0);
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    for (const auto& row : cells) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) {
            line += (i ? " | " : "") + row[i] + std::string(width[i] - row[i].size(), ' ');
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sigmus: multimodal incident knowledge graph"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config, "JSON config (else $SIGMUS_CONFIG)");
    app.add_option("--state", common.state, "state directory (else $SIGMUS_WAREHOUSE_ROOT, else the config's)");

    auto* serve = app.add_subcommand("serve", "poll every source on its schedule until SIGTERM");
    int healthPort = 0;
    serve->add_option("--health-port", healthPort, "health endpoint port (-1 picks a free port)");

    auto* replay = app.add_subcommand("replay", "replay fixtures in timestamp order and print the latency table");
    std::string fixtures, clockStart, replayFormat = "table";
    double speedup = 0;
    replay->add_option("--fixtures", fixtures, "fixture directory holding config.json")->required();
    replay->add_option("--speedup", speedup, "simulated seconds per wall second")->check(CLI::PositiveNumber);
    replay->add_option("--clock-start", clockStart, "release reports before this time immediately");
    replay->add_option("--format", replayFormat)->check(CLI::IsMember({"table", "tsv"}));

    auto* ingest = app.add_subcommand("ingest-file", "parse one file with a configured source and ingest it");
    std::string sourceName, file;
    ingest->add_option("--source", sourceName)->required();
    ingest->add_option("--file", file)->required();

    auto* exportCmd = app.add_subcommand("export", "write the graph as N-Quads, GraphML or Cypher");
    std::string exportFormat = "nquads", output;
    exportCmd->add_option("--format", exportFormat)->check(CLI::IsMember({"nquads", "graphml", "cypher"}));
    exportCmd->add_option("-o,--output", output, "file (default stdout)");

    auto* incidents = app.add_subcommand("incidents", "list incidents");
    std::string since, until, incidentsFormat = "table";
    std::optional<double> lat, lon, radius;
    incidents->add_option("--since", since);
    incidents->add_option("--until", until);
    incidents->add_option("--lat", lat);
    incidents->add_option("--lon", lon);
    incidents->add_option("--radius-km", radius)->check(CLI::PositiveNumber);
    incidents->add_option("--format", incidentsFormat)->check(CLI::IsMember({"table", "tsv"}));

    auto* stats = app.add_subcommand("stats", "print the per-source latency table");
    std::string statsFormat = "table";
    stats->add_option("--format", statsFormat)->check(CLI::IsMember({"table", "tsv"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*serve) {
            AppConfig cfg = resolve_config(common, true);
            if (serve->count("--health-port")) cfg.service.healthPort = healthPort;
            auto backend = make_backend(cfg);
            Pipeline pipeline(std::move(cfg), std::move(backend));
            return run_service(pipeline);
        }
        if (*replay) {
            AppConfig cfg = resolve_config(common, true, fs::path(fixtures) / "config.json");
            ReplaySpec spec{fixtures, speedup > 0 ? speedup : cfg.replay.speedup, cfg.replay.clockStart};
            if (!clockStart.empty()) spec.clockStart = parse_ts_or_throw(clockStart, "--clock-start");
            auto backend = make_backend(cfg);
            Pipeline pipeline(std::move(cfg), std::move(backend));
            const auto result = pipeline.replay(spec);
            pipeline.save_state();
            for (const auto& e : result.errors) std::cerr << "replay: " << e << "\n";
            std::cout << (replayFormat == "tsv" ? render_metrics_tsv(result.metrics) : render_metrics_table(result.metrics));
            return 0;
        }
        if (*ingest) {
            AppConfig cfg = resolve_config(common, true);
            auto backend = make_backend(cfg);
            Pipeline pipeline(std::move(cfg), std::move(backend));
            const SourceConfig* base = pipeline.find_source(sourceName);
            if (!base) throw UsageError("unknown source " + sourceName);
            SourceConfig source = *base;
            source.inputLocation = fs::absolute(file).string();
            const auto batch = pipeline.poll(source, parse_timestamp("1970-01-01").value());
            pipeline.save_state();
            std::cerr << "input " << batch.inputRecords << ", emitted " << batch.emitted << ", skipped " << batch.skipped
                      << ", filtered " << batch.filtered << "\n";
            for (const auto& e : batch.errors) std::cerr << "skipped: " << e << "\n";
            return 0;
        }
        if (*exportCmd) {
            Pipeline pipeline = open_readonly(common);
            write_output(pipeline.graph().export_graph(*parse_export_format(exportFormat)), output);
            return 0;
        }
        if (*incidents) {
            Pipeline pipeline = open_readonly(common);
            std::optional<TimeInterval> window;
            if (!since.empty() || !until.empty()) {
                TimeInterval w;
                if (!since.empty()) w.start = parse_ts_or_throw(since, "--since");
                if (!until.empty()) w.end = parse_ts_or_throw(until, "--until");
                window = w;
            }
            std::optional<RegionFilter> region;
            if (lat || lon || radius) {
                if (!lat || !lon || !radius) throw UsageError("--lat, --lon and --radius-km go together");
                region = RegionFilter{GeoPoint{*lat, *lon, std::nullopt}, *radius};
            }
            const auto rows = pipeline.graph().query_incidents(window, region);
            std::cout << incidents_table(pipeline.graph(), rows, incidentsFormat == "tsv");
            return 0;
        }
        if (*stats) {
            Pipeline pipeline = open_readonly(common);
            const auto rows = pipeline.metrics();
            std::cout << (statsFormat == "tsv" ? render_metrics_tsv(rows) : render_metrics_table(rows));
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
