#include "sigmus/ingestion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sigmus/graph_store.hpp"

namespace sigmus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kMaxErrors = 20;
constexpr std::uintmax_t kMaxImageBytes = 32u << 20;

struct KindDefaults {
    SourceKind kind;
    std::string_view name;
    ModalityKind modality;
    Duration interval;
    std::string_view aggregator;
    char delimiter;
};

constexpr KindDefaults kKinds[] = {
    {SourceKind::Gdelt, "gdelt", ModalityKind::Text, Duration(900), "GDELT", '\t'},
    {SourceKind::Pems, "pems", ModalityKind::Tabular, Duration(86400), "Caltrans PeMS", ','},
    {SourceKind::Weather, "weather", ModalityKind::Tabular, Duration(3600), "OpenWeather", ','},
    {SourceKind::AirQuality, "airquality", ModalityKind::Tabular, Duration(3600), "PurpleAir", ','},
    {SourceKind::CctvManifest, "cctv", ModalityKind::Image, Duration(900), "Caltrans CCTV", ','},
};

const KindDefaults& defaults_for(SourceKind kind) {
    for (const auto& d : kKinds) {
        if (d.kind == kind) return d;
    }
    return kKinds[0];
}

const std::map<std::string, std::string>& default_mapping(SourceKind kind) {
    static const std::map<std::string, std::string> gdelt{
        {"GlobalEventID", "0"},  {"Day", "1"},          {"Actor1Code", "5"},          {"Actor1Name", "6"},
        {"Actor2Code", "15"},    {"Actor2Name", "16"},  {"EventCode", "26"},          {"ActionGeo_FullName", "52"},
        {"ActionGeo_Lat", "56"}, {"ActionGeo_Long", "57"}, {"DATEADDED", "59"},       {"SOURCEURL", "60"},
    };
    static const std::map<std::string, std::string> pems{
        {"timestamp", "0"}, {"station", "1"}, {"district", "2"}, {"occupancy", "10"}, {"speed", "11"},
    };
    static const std::map<std::string, std::string> weather{
        {"records", "list"},
        {"id", "id"},
        {"name", "name"},
        {"time", "dt"},
        {"lat", "coord.lat"},
        {"lon", "coord.lon"},
        {"description", "weather.0.description"},
        {"measure:wind_speed", "wind.speed|m/s"},
        {"measure:precipitation", "rain.1h|mm"},
    };
    static const std::map<std::string, std::string> airquality{
        {"records", "data"}, {"fields", "fields"},    {"id", "sensor_index"},
        {"name", "name"},    {"lat", "latitude"},     {"lon", "longitude"},
        {"time", "time_stamp"}, {"measure:PM2.5", "pm2.5_atm|µg/m³"},
    };
    static const std::map<std::string, std::string> none;
    switch (kind) {
        case SourceKind::Gdelt: return gdelt;
        case SourceKind::Pems: return pems;
        case SourceKind::Weather: return weather;
        case SourceKind::AirQuality: return airquality;
        case SourceKind::CctvManifest: return none;
    }
    return none;
}

std::string mapping(const SourceConfig& c, const std::string& key) {
    if (auto it = c.fieldMapping.find(key); it != c.fieldMapping.end()) return it->second;
    const auto& d = default_mapping(c.kind);
    if (auto it = d.find(key); it != d.end()) return it->second;
    return {};
}

std::size_t column(const SourceConfig& c, const std::string& key) {
    const std::string v = mapping(c, key);
    std::size_t idx = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), idx);
    if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError("mapping for " + key + " must be a column index");
    }
    return idx;
}

std::optional<double> parse_number(std::string_view raw) {
    const std::string s = trim(raw);
    if (s.empty()) return std::nullopt;
    double v = 0;
    const char* b = s.data();
    if (*b == '+') ++b;
    auto [p, ec] = std::from_chars(b, s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::vector<std::string_view> lines_of(std::string_view bytes) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start < bytes.size()) {
        std::size_t end = bytes.find('\n', start);
        if (end == std::string_view::npos) end = bytes.size();
        std::string_view line = bytes.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        start = end + 1;
    }
    return out;
}

bool blank(std::string_view line) { return trim(line).empty(); }

class Builder {
public:
    Builder(const SourceConfig& c, ParseResult& r) : config_(c), result_(r) {
        const std::string label = c.aggregatorLabel.empty() ? std::string(defaults_for(c.kind).aggregator)
                                                            : c.aggregatorLabel;
        r.aggregator = Aggregator{EntityId(derive_id("aggregator", {label})), label};
    }

    EntityId observer(const std::string& rawLabel) {
        const std::string label = sanitize_utf8(trim(rawLabel));
        if (label.empty()) throw Error("observer label empty");
        EntityId id(derive_id("observer", {config_.sourceName, label}));
        if (seen_.insert(id.str()).second) result_.observers.push_back(Observer{id, label});
        return id;
    }

    // Validates and emits, or records the violations as a skip.
    void emit(Report report) {
        report.aggregatorId = result_.aggregator.id;
        if (auto v = validate(report); !v.empty()) {
            result_.skip("invalid report: " + v.front());
            return;
        }
        result_.reports.push_back(std::move(report));
        ++result_.emitted;
    }

    EntityId report_id(std::initializer_list<std::string_view> key) const {
        std::vector<std::string> parts{config_.sourceName};
        for (auto k : key) parts.emplace_back(k);
        std::string joined;
        for (const auto& p : parts) joined += p + '\x1f';
        return EntityId(derive_id("report", {joined}));
    }

private:
    const SourceConfig& config_;
    ParseResult& result_;
    std::set<std::string> seen_;
};

ModalitySegment tabular(std::string property, std::string unit, double value) {
    ModalitySegment s;
    s.kind = ModalityKind::Tabular;
    s.property = std::move(property);
    s.unit = unit.empty() ? std::string("1") : std::move(unit);
    s.value = round_trip_double(value);
    return s;
}

ModalitySegment text_segment(std::string text) {
    ModalitySegment s;
    s.kind = ModalityKind::Text;
    s.value = std::move(text);
    return s;
}

std::optional<GeoPoint> make_geo(std::optional<double> lat, std::optional<double> lon, std::string place) {
    if (!lat || !lon) return std::nullopt;
    GeoPoint g{*lat, *lon, std::nullopt};
    if (!place.empty()) g.placeName = std::move(place);
    return g;
}

// "a.b.0.c" against objects and arrays. A key that itself contains dots
// ("pm2.5_atm") is matched whole first.
const json* at_path(const json& root, std::string_view path) {
    if (root.is_object()) {
        if (auto it = root.find(path); it != root.end()) return &*it;
    }
    const json* cur = &root;
    for (const auto& part : split(path, '.')) {
        if (cur->is_object()) {
            auto it = cur->find(part);
            if (it == cur->end()) return nullptr;
            cur = &*it;
        } else if (cur->is_array()) {
            std::size_t idx = 0;
            auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), idx);
            if (ec != std::errc{} || p != part.data() + part.size() || idx >= cur->size()) return nullptr;
            cur = &(*cur)[idx];
        } else {
            return nullptr;
        }
    }
    return cur;
}

std::optional<double> json_number(const json* v) {
    if (!v) return std::nullopt;
    if (v->is_number()) {
        const double d = v->get<double>();
        return std::isfinite(d) ? std::optional(d) : std::nullopt;
    }
    if (v->is_string()) return parse_number(v->get_ref<const std::string&>());
    return std::nullopt;
}

std::string json_text(const json* v) {
    if (!v || v->is_null()) return {};
    if (v->is_string()) return sanitize_utf8(trim(v->get_ref<const std::string&>()));
    if (v->is_number_integer()) return std::to_string(v->get<std::int64_t>());
    if (v->is_number_unsigned()) return std::to_string(v->get<std::uint64_t>());
    if (v->is_number_float()) return round_trip_double(v->get<double>());
    return {};
}

std::optional<Timestamp> json_time(const json* v) {
    if (!v) return std::nullopt;
    if (v->is_number_integer() || v->is_number_unsigned()) {
        const auto secs = v->get<std::int64_t>();
        // Keep within the range format_timestamp renders as four-digit years.
        if (secs < -62135596800LL || secs > 253402300799LL) return std::nullopt;
        return Timestamp(Duration(secs));
    }
    if (v->is_string()) {
        const std::string s = trim(v->get_ref<const std::string&>());
        if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }) &&
            s.size() <= 11) {
            return Timestamp(Duration(std::stoll(s)));
        }
        return parse_timestamp(s);
    }
    return std::nullopt;
}

struct Measure {
    std::string property;
    std::string path;
    std::string unit;
};

std::vector<Measure> measures(const SourceConfig& c) {
    std::map<std::string, std::string> merged;
    for (const auto& [k, v] : default_mapping(c.kind)) merged[k] = v;
    for (const auto& [k, v] : c.fieldMapping) merged[k] = v;
    std::vector<Measure> out;
    for (const auto& [k, v] : merged) {
        if (k.rfind("measure:", 0) != 0 || v.empty()) continue;
        const std::size_t bar = v.find('|');
        out.push_back({k.substr(8), v.substr(0, bar), bar == std::string::npos ? std::string() : v.substr(bar + 1)});
    }
    return out;
}

// Shared body of the two JSON station feeds. `lookup` resolves a mapped
// field of one record.
template <class Lookup>
void json_station(const SourceConfig& c, Builder& b, ParseResult& r, const Lookup& lookup, bool withDescription) {
    const std::string id = json_text(lookup(mapping(c, "id")));
    const auto at = json_time(lookup(mapping(c, "time")));
    if (id.empty()) return r.skip("record without station id");
    if (!at) return r.skip("record without timestamp");
    const std::string name = json_text(lookup(mapping(c, "name")));
    const auto geo = make_geo(json_number(lookup(mapping(c, "lat"))), json_number(lookup(mapping(c, "lon"))), name);
    if (geo && !validate(*geo).empty()) return r.skip("coordinates out of range");

    Report rep;
    rep.id = b.report_id({id, std::to_string(at->time_since_epoch().count())});
    rep.observerId = b.observer(name.empty() ? id : name + " (" + id + ")");
    rep.observedAt = *at;
    rep.geo = geo;
    for (const auto& m : measures(c)) {
        if (auto v = json_number(lookup(m.path))) rep.segments.push_back(tabular(m.property, m.unit, *v));
    }
    if (withDescription) {
        if (auto d = json_text(lookup(mapping(c, "description"))); !d.empty()) rep.segments.push_back(text_segment(d));
    }
    if (rep.segments.empty()) return r.skip("record without measurements");
    if (c.regionFilter.configured() && !c.regionFilter.matches(name, geo)) {
        ++r.filtered;
        return;
    }
    b.emit(std::move(rep));
}

std::string unescape_article(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            const char n = s[++i];
            out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

std::string host_of(std::string_view url) {
    const std::size_t scheme = url.find("://");
    std::string_view rest = scheme == std::string_view::npos ? url : url.substr(scheme + 3);
    rest = rest.substr(0, rest.find_first_of("/?#"));
    std::string host = to_lower_ascii(rest);
    if (host.rfind("www.", 0) == 0) host.erase(0, 4);
    return host;
}

std::string read_small_file(const fs::path& p, std::uintmax_t limit, std::string& error) {
    std::error_code ec;
    const auto size = fs::file_size(p, ec);
    if (ec) {
        error = "missing file " + p.string();
        return {};
    }
    if (size > limit) {
        error = "file too large " + p.string();
        return {};
    }
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        error = "unreadable file " + p.string();
        return {};
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string_view to_string(SourceKind kind) { return defaults_for(kind).name; }

std::optional<SourceKind> parse_source_kind(std::string_view text) {
    const std::string t = to_lower_ascii(text);
    for (const auto& d : kKinds) {
        if (d.name == t) return d.kind;
    }
    return std::nullopt;
}

bool SourceRegion::matches(std::string_view placeName, const std::optional<GeoPoint>& geo) const {
    if (!configured()) return true;
    if (!place.empty()) {
        if (contains_ci(placeName, place)) return true;
        if (geo && geo->placeName && contains_ci(*geo->placeName, place)) return true;
    }
    if (center && geo) return haversine_km(*center, *geo) <= radiusKm;
    return false;
}

void ParseResult::skip(std::string reason) {
    ++skipped;
    if (errors.size() < kMaxErrors) errors.push_back(std::move(reason));
}

// ---------------------------------------------------------------------------
// Config

SourceConfig parse_source_config(const json& j, const fs::path& baseDir) {
    if (!j.is_object()) throw ConfigError("source entry must be an object");
    auto str = [&](const char* key) -> std::string {
        if (!j.contains(key)) return {};
        if (!j.at(key).is_string()) throw ConfigError(std::string("source field ") + key + " must be a string");
        return j.at(key).get<std::string>();
    };
    auto path = [&](const std::string& p) -> std::string {
        if (p.empty() || p.find("://") != std::string::npos || fs::path(p).is_absolute()) return p;
        return (baseDir / p).lexically_normal().string();
    };

    SourceConfig c;
    c.sourceName = str("name");
    if (c.sourceName.empty()) throw ConfigError("source without name");
    const auto kind = parse_source_kind(str("kind"));
    if (!kind) throw ConfigError("source " + c.sourceName + ": unknown kind '" + str("kind") + "'");
    c.kind = *kind;
    const auto& d = defaults_for(c.kind);
    c.modalityKind = d.modality;
    if (auto m = str("modality"); !m.empty()) {
        auto mk = parse_modality_kind(m);
        if (!mk) throw ConfigError("source " + c.sourceName + ": unknown modality " + m);
        c.modalityKind = *mk;
    }
    c.pollInterval = d.interval;
    if (j.contains("interval")) {
        const auto& iv = j.at("interval");
        std::optional<Duration> parsed;
        if (iv.is_string()) parsed = parse_duration(iv.get<std::string>());
        if (iv.is_number_integer()) parsed = Duration(iv.get<std::int64_t>());
        if (!parsed) throw ConfigError("source " + c.sourceName + ": bad interval");
        c.pollInterval = *parsed;
    }
    c.delimiter = d.delimiter;
    if (auto delim = str("delimiter"); !delim.empty()) {
        if (delim == "\\t" || delim == "tab") delim = "\t";
        if (delim.size() != 1) throw ConfigError("source " + c.sourceName + ": delimiter must be one character");
        c.delimiter = delim[0];
    }
    c.aggregatorLabel = str("aggregator");
    c.inputLocation = path(str("input"));
    if (auto a = str("articles"); !a.empty()) c.articlesLocation = path(a);
    if (j.contains("filter")) {
        const auto& f = j.at("filter");
        if (!f.is_object()) throw ConfigError("source " + c.sourceName + ": filter must be an object");
        c.regionFilter.place = f.value("place", "");
        if (f.contains("lat") || f.contains("lon") || f.contains("radiusKm")) {
            if (!f.contains("lat") || !f.contains("lon") || !f.contains("radiusKm") || !f.at("lat").is_number() ||
                !f.at("lon").is_number() || !f.at("radiusKm").is_number()) {
                throw ConfigError("source " + c.sourceName + ": radius filter needs numeric lat, lon and radiusKm");
            }
            c.regionFilter.center = GeoPoint{f.at("lat").get<double>(), f.at("lon").get<double>(), std::nullopt};
            c.regionFilter.radiusKm = f.at("radiusKm").get<double>();
        }
    }
    if (j.contains("mapping")) {
        const auto& m = j.at("mapping");
        if (!m.is_object()) throw ConfigError("source " + c.sourceName + ": mapping must be an object");
        for (const auto& [k, v] : m.items()) {
            if (v.is_string()) {
                c.fieldMapping[k] = v.get<std::string>();
            } else if (v.is_number_unsigned() || v.is_number_integer()) {
                c.fieldMapping[k] = std::to_string(v.get<std::int64_t>());
            } else {
                throw ConfigError("source " + c.sourceName + ": mapping values must be strings or column numbers");
            }
        }
    }
    if (auto v = validate(c); !v.empty()) throw ConfigError("source " + c.sourceName + ": " + v.front());
    return c;
}

std::vector<std::string> validate(const SourceConfig& c) {
    std::vector<std::string> v;
    if (c.sourceName.empty()) v.push_back("sourceName empty");
    if (c.pollInterval <= Duration::zero()) v.push_back("pollInterval must be positive");
    if (c.inputLocation.empty()) v.push_back("input location missing");
    if (c.regionFilter.center) {
        for (auto& s : validate(*c.regionFilter.center)) v.push_back("filter " + s);
        if (!(c.regionFilter.radiusKm > 0) || !std::isfinite(c.regionFilter.radiusKm)) v.push_back("radiusKm must be positive");
    }
    return v;
}

// ---------------------------------------------------------------------------
// Parsers

ArticleTexts parse_articles(std::string_view bytes) {
    ArticleTexts out;
    for (auto line : lines_of(bytes)) {
        const std::size_t tab = line.find('\t');
        if (tab == std::string_view::npos) continue;
        std::string url = trim(line.substr(0, tab));
        if (!url.empty()) out[url] = sanitize_utf8(unescape_article(line.substr(tab + 1)));
    }
    return out;
}

ParseResult parse_gdelt(std::string_view bytes, const SourceConfig& config, const ArticleTexts* articles) {
    ParseResult r;
    Builder b(config, r);
    const std::size_t cId = column(config, "GlobalEventID"), cDay = column(config, "Day"),
                      cA1Code = column(config, "Actor1Code"), cA1 = column(config, "Actor1Name"),
                      cA2Code = column(config, "Actor2Code"), cA2 = column(config, "Actor2Name"),
                      cEvent = column(config, "EventCode"), cPlace = column(config, "ActionGeo_FullName"),
                      cLat = column(config, "ActionGeo_Lat"), cLon = column(config, "ActionGeo_Long"),
                      cAdded = column(config, "DATEADDED"), cUrl = column(config, "SOURCEURL");
    const std::size_t width = 1 + std::max({cId, cDay, cA1Code, cA1, cA2Code, cA2, cEvent, cPlace, cLat, cLon, cAdded, cUrl});

    for (auto line : lines_of(bytes)) {
        if (blank(line)) continue;
        ++r.inputRecords;
        try {
            const auto cols = split(line, config.delimiter);
            if (cols.size() < width) {
                r.skip("row has " + std::to_string(cols.size()) + " columns, need " + std::to_string(width));
                continue;
            }
            auto col = [&](std::size_t i) { return sanitize_utf8(trim(cols[i])); };
            const std::string id = col(cId);
            if (id.empty()) {
                r.skip("row without GlobalEventID");
                continue;
            }
            auto at = parse_timestamp(col(cAdded));
            if (!at) at = parse_timestamp(col(cDay));
            if (!at) {
                r.skip("row " + id + " without a valid date");
                continue;
            }
            const std::string place = col(cPlace);
            const std::string latText = col(cLat), lonText = col(cLon);
            const auto lat = parse_number(latText), lon = parse_number(lonText);
            if ((!latText.empty() && !lat) || (!lonText.empty() && !lon)) {
                r.skip("row " + id + " has malformed coordinates");
                continue;
            }
            const auto geo = make_geo(lat, lon, place);
            if (geo && !validate(*geo).empty()) {
                r.skip("row " + id + " has coordinates out of range");
                continue;
            }
            if (config.regionFilter.configured() && !config.regionFilter.matches(place, geo)) {
                ++r.filtered;
                continue;
            }
            const std::string url = col(cUrl);
            const std::string code = col(cEvent);
            std::string text = "Source URL: " + url + "\n";
            auto actor_line = [&](const char* label, const std::string& name, const std::string& code_) {
                if (name.empty()) return;
                text += std::string(label) + ": " + name;
                if (!code_.empty()) text += " (" + code_ + ")";
                text += "\n";
            };
            actor_line("Actor1", col(cA1), col(cA1Code));
            actor_line("Actor2", col(cA2), col(cA2Code));
            if (!code.empty()) {
                text += "Event code: " + code;
                if (auto e = cameo_lookup(code)) text += " (" + e->term + ")";
                text += "\n";
            }
            if (!place.empty()) text += "Location: " + place + "\n";
            if (articles) {
                if (auto it = articles->find(url); it != articles->end() && !it->second.empty()) {
                    text += "\n" + it->second + "\n";
                }
            }

            Report rep;
            rep.id = b.report_id({id});
            const std::string host = host_of(url);
            rep.observerId = b.observer(host.empty() ? "unknown outlet" : host);
            rep.observedAt = *at;
            rep.geo = geo;
            rep.segments.push_back(text_segment(std::move(text)));
            b.emit(std::move(rep));
        } catch (const std::exception& e) {
            r.skip(e.what());
        }
    }
    return r;
}

ParseResult parse_pems(std::string_view bytes, const SourceConfig& config) {
    ParseResult r;
    Builder b(config, r);
    const std::size_t cTime = column(config, "timestamp"), cStation = column(config, "station"),
                      cDistrict = column(config, "district"), cOcc = column(config, "occupancy"),
                      cSpeed = column(config, "speed");
    const std::size_t width = 1 + std::max({cTime, cStation, cDistrict, cOcc, cSpeed});

    for (auto line : lines_of(bytes)) {
        if (blank(line)) continue;
        ++r.inputRecords;
        try {
            const auto cols = split(line, config.delimiter);
            if (cols.size() < width) {
                r.skip("row has too few columns");
                continue;
            }
            const auto at = parse_timestamp(trim(cols[cTime]));
            const std::string station = sanitize_utf8(trim(cols[cStation]));
            if (!at || station.empty()) {
                r.skip("row without timestamp or station");
                continue;
            }
            const std::string occText = trim(cols[cOcc]), speedText = trim(cols[cSpeed]);
            const auto occ = parse_number(occText), speed = parse_number(speedText);
            if ((!occText.empty() && !occ) || (!speedText.empty() && !speed)) {
                r.skip("station " + station + ": malformed measurement");
                continue;
            }
            if (occ && (*occ < 0.0 || *occ > 1.0)) {
                r.skip("station " + station + ": occupancy outside [0,1]");
                continue;
            }
            if (speed && *speed < 0.0) {
                r.skip("station " + station + ": negative speed");
                continue;
            }
            if (!occ && !speed) {
                r.skip("station " + station + ": no measurements");
                continue;
            }
            const std::string place = "District " + sanitize_utf8(trim(cols[cDistrict]));
            if (config.regionFilter.configured() && !config.regionFilter.matches(place, std::nullopt)) {
                ++r.filtered;
                continue;
            }
            Report rep;
            rep.id = b.report_id({station, std::to_string(at->time_since_epoch().count())});
            rep.observerId = b.observer("VDS " + station);
            rep.observedAt = *at;
            if (speed) rep.segments.push_back(tabular("speed", "mph", *speed));
            if (occ) rep.segments.push_back(tabular("occupancy", "fraction", *occ));
            b.emit(std::move(rep));
        } catch (const std::exception& e) {
            r.skip(e.what());
        }
    }
    return r;
}

ParseResult parse_weather(std::string_view bytes, const SourceConfig& config) {
    ParseResult r;
    Builder b(config, r);
    const json doc = json::parse(bytes, nullptr, false);
    const json* records = doc.is_discarded() ? nullptr : at_path(doc, mapping(config, "records"));
    if (!records || !records->is_array()) {
        r.inputRecords = 1;
        r.skip("payload has no record array");
        return r;
    }
    for (const auto& rec : *records) {
        ++r.inputRecords;
        try {
            json_station(config, b, r, [&](const std::string& p) { return p.empty() ? nullptr : at_path(rec, p); }, true);
        } catch (const std::exception& e) {
            r.skip(e.what());
        }
    }
    return r;
}

ParseResult parse_airquality(std::string_view bytes, const SourceConfig& config) {
    ParseResult r;
    Builder b(config, r);
    const json doc = json::parse(bytes, nullptr, false);
    const json* records = doc.is_discarded() ? nullptr : at_path(doc, mapping(config, "records"));
    if (!records || !records->is_array()) {
        r.inputRecords = 1;
        r.skip("payload has no record array");
        return r;
    }
    // Rows are positional arrays described by the "fields" list.
    std::map<std::string, std::size_t> fieldIndex;
    if (const json* fields = at_path(doc, mapping(config, "fields")); fields && fields->is_array()) {
        for (std::size_t i = 0; i < fields->size(); ++i) {
            if ((*fields)[i].is_string()) fieldIndex.emplace((*fields)[i].get<std::string>(), i);
        }
    }
    for (const auto& rec : *records) {
        ++r.inputRecords;
        try {
            if (rec.is_object()) {
                json_station(config, b, r, [&](const std::string& p) { return p.empty() ? nullptr : at_path(rec, p); },
                             false);
                continue;
            }
            if (!rec.is_array()) {
                r.skip("record is neither array nor object");
                continue;
            }
            json_station(
                config, b, r,
                [&](const std::string& name) -> const json* {
                    auto it = fieldIndex.find(name);
                    return it == fieldIndex.end() || it->second >= rec.size() ? nullptr : &rec[it->second];
                },
                false);
        } catch (const std::exception& e) {
            r.skip(e.what());
        }
    }
    return r;
}

std::string detect_image_media_type(std::string_view bytes) {
    if (bytes.size() >= 8 && bytes.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8)) return "image/png";
    if (bytes.size() >= 3 && bytes.substr(0, 3) == std::string_view("\xFF\xD8\xFF", 3)) return "image/jpeg";
    return {};
}

ParseResult load_image_manifest(std::string_view bytes, const SourceConfig& config, Warehouse& warehouse,
                                const fs::path& baseDir) {
    ParseResult r;
    Builder b(config, r);
    bool first = true;
    for (auto line : lines_of(bytes)) {
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (first && to_lower_ascii(t).rfind("timestamp", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        ++r.inputRecords;
        try {
            const auto cols = split(t, ',');
            if (cols.size() != 5) {
                r.skip("manifest line needs 5 fields");
                continue;
            }
            const auto at = parse_timestamp(trim(cols[0]));
            const std::string camera = sanitize_utf8(trim(cols[1]));
            const auto lat = parse_number(cols[2]), lon = parse_number(cols[3]);
            const std::string imagePath = trim(cols[4]);
            if (!at || camera.empty() || !lat || !lon || imagePath.empty()) {
                r.skip("manifest line with missing or malformed fields");
                continue;
            }
            GeoPoint geo{*lat, *lon, std::nullopt};
            if (!validate(geo).empty()) {
                r.skip("camera " + camera + ": coordinates out of range");
                continue;
            }
            if (config.regionFilter.configured() && !config.regionFilter.matches(camera, geo)) {
                ++r.filtered;
                continue;
            }
            const fs::path file = fs::path(imagePath).is_absolute() ? fs::path(imagePath) : baseDir / imagePath;
            std::string error;
            const std::string image = read_small_file(file, kMaxImageBytes, error);
            if (!error.empty()) {
                r.skip("camera " + camera + ": " + error);
                continue;
            }
            const std::string mediaType = detect_image_media_type(image);
            if (mediaType.empty()) {
                r.skip("camera " + camera + ": not a PNG or JPEG image");
                continue;
            }
            const BlobRef ref = warehouse.put_blob(image, mediaType);
            std::string tagError;
            const std::string tags = read_small_file(file.string() + ".tags", 1u << 16, tagError);
            if (tagError.empty()) warehouse.put_sidecar(ref, ".tags", tags);

            Report rep;
            rep.id = b.report_id({camera, std::to_string(at->time_since_epoch().count())});
            rep.observerId = b.observer("Camera " + camera);
            rep.observedAt = *at;
            rep.geo = geo;
            ModalitySegment seg;
            seg.kind = ModalityKind::Image;
            seg.value = ref.path;
            rep.segments.push_back(std::move(seg));
            b.emit(std::move(rep));
        } catch (const std::exception& e) {
            r.skip(e.what());
        }
    }
    return r;
}

ParseResult parse_source(std::string_view bytes, const SourceConfig& config, Warehouse& warehouse,
                         const fs::path& baseDir, const ArticleTexts* articles) {
    switch (config.kind) {
        case SourceKind::Gdelt: return parse_gdelt(bytes, config, articles);
        case SourceKind::Pems: return parse_pems(bytes, config);
        case SourceKind::Weather: return parse_weather(bytes, config);
        case SourceKind::AirQuality: return parse_airquality(bytes, config);
        case SourceKind::CctvManifest: return load_image_manifest(bytes, config, warehouse, baseDir);
    }
    return {};
}

Timestamp schedule_next(const std::vector<SourceConfig>& configs, std::string_view sourceName, Timestamp lastPollAt,
                        Timestamp now) {
    auto it = std::find_if(configs.begin(), configs.end(),
                           [&](const SourceConfig& c) { return c.sourceName == sourceName; });
    if (it == configs.end()) throw ConfigError("unknown source " + std::string(sourceName));
    return std::max(lastPollAt + it->pollInterval, now);
}

}  // namespace sigmus
