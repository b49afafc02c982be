#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <gtest/gtest.h>
#include <zlib.h>

#include <thread>

#include "sigmus/ingestion.hpp"
#include "support.hpp"

using namespace sigmus;
using namespace sigmus::testing;
using nlohmann::json;

namespace {

const Timestamp kT = *parse_timestamp("2025-01-07T19:00:00Z");

SourceConfig config(SourceKind kind, std::string name = "src") {
    SourceConfig c;
    c.sourceName = std::move(name);
    c.kind = kind;
    c.inputLocation = "unused";
    c.delimiter = kind == SourceKind::Gdelt ? '\t' : ',';
    return c;
}

// A 61-column GDELT event row with the fields we read filled in.
std::string gdelt_row(const std::string& id, const std::string& place, const std::string& lat, const std::string& lon,
                      const std::string& url = "https://www.latimes.com/fire", const std::string& added = "20250107190000") {
    std::vector<std::string> cols(61);
    cols[0] = id;
    cols[1] = "20250107";
    cols[5] = "USAGOV";
    cols[6] = "LOS ANGELES FIRE DEPARTMENT";
    cols[16] = "RESIDENTS";
    cols[26] = "0233";
    cols[52] = place;
    cols[56] = lat;
    cols[57] = lon;
    cols[59] = added;
    cols[60] = url;
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "\t" : "") + cols[i];
    return out;
}

void put16(std::string& s, unsigned v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put32(std::string& s, unsigned long v) {
    put16(s, v & 0xffff);
    put16(s, (v >> 16) & 0xffff);
}

std::string raw_deflate(const std::string& in) {
    z_stream zs{};
    deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY);
    std::string out(deflateBound(&zs, in.size()), '\0');
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    deflate(&zs, Z_FINISH);
    out.resize(zs.total_out);
    deflateEnd(&zs);
    return out;
}

// Minimal zip writer following the PKWARE layout: local headers, central
// directory, end record.
std::string make_zip(const std::vector<std::pair<std::string, std::string>>& files, bool deflated) {
    std::string body, central;
    for (const auto& [name, bytes] : files) {
        const unsigned long crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
        const std::string data = deflated ? raw_deflate(bytes) : bytes;
        const std::size_t offset = body.size();
        put32(body, 0x04034b50);
        put16(body, 20);
        put16(body, 0);
        put16(body, deflated ? 8 : 0);
        put32(body, 0);
        put32(body, crc);
        put32(body, data.size());
        put32(body, bytes.size());
        put16(body, name.size());
        put16(body, 0);
        body += name + data;

        put32(central, 0x02014b50);
        put16(central, 20);
        put16(central, 20);
        put16(central, 0);
        put16(central, deflated ? 8 : 0);
        put32(central, 0);
        put32(central, crc);
        put32(central, data.size());
        put32(central, bytes.size());
        put16(central, name.size());
        put32(central, 0);  // extra + comment lengths
        put32(central, 0);  // disk, internal attrs
        put32(central, 0);  // external attrs
        put32(central, offset);
        central += name;
    }
    std::string out = body + central;
    put32(out, 0x06054b50);
    put32(out, 0);
    put16(out, files.size());
    put16(out, files.size());
    put32(out, central.size());
    put32(out, body.size());
    put16(out, 0);
    return out;
}

void expect_counts(const ParseResult& r) {
    EXPECT_EQ(r.emitted + r.skipped + r.filtered, r.inputRecords);
    EXPECT_EQ(r.emitted, r.reports.size());
    for (const auto& rep : r.reports) EXPECT_TRUE(validate(rep).empty());
}

}  // namespace

TEST(SourceRegion, PlaceOrRadius) {
    SourceRegion none;
    EXPECT_TRUE(none.matches("anything", std::nullopt));
    SourceRegion r{"Los Angeles", GeoPoint{34.0522, -118.2437, std::nullopt}, 60};
    EXPECT_TRUE(r.matches("Pacific Palisades, Los Angeles, California", std::nullopt));
    EXPECT_TRUE(r.matches("Somewhere", GeoPoint{34.045, -118.53, std::nullopt}));
    EXPECT_FALSE(r.matches("Sacramento", GeoPoint{38.58, -121.49, std::nullopt}));
    EXPECT_TRUE(r.matches("", GeoPoint{0, 0, "West LOS ANGELES"}));
}

TEST(Gdelt, ParsesFiltersAndSkips) {
    auto c = config(SourceKind::Gdelt, "GDELT");
    c.regionFilter = {"Los Angeles", std::nullopt, 0};
    const std::string bytes = gdelt_row("1", "Pacific Palisades, Los Angeles, California", "34.04", "-118.52") + "\n" +
                              gdelt_row("2", "Sacramento, California", "38.5", "-121.4") + "\n\n" +
                              gdelt_row("3", "Los Angeles", "north", "-118") + "\n" + "short\trow\n" +
                              gdelt_row("", "Los Angeles", "", "") + "\r\n" +
                              gdelt_row("6", "Los Angeles", "", "", "https://x.org/a", "garbage");
    const ArticleTexts articles = parse_articles("https://www.latimes.com/fire\tFire crews\\nfought \\\\ flames\n");
    const auto r = parse_gdelt(bytes, c, &articles);
    expect_counts(r);
    EXPECT_EQ(r.inputRecords, 6u);
    EXPECT_EQ(r.filtered, 1u);
    EXPECT_EQ(r.skipped, 3u);
    ASSERT_EQ(r.emitted, 2u);

    const Report& rep = r.reports[0];
    EXPECT_EQ(rep.observedAt, kT);
    EXPECT_EQ(rep.aggregatorId, r.aggregator.id);
    EXPECT_EQ(r.aggregator.label, "GDELT");
    ASSERT_EQ(r.observers.size(), 2u);
    EXPECT_EQ(r.observers[0].label, "latimes.com");
    const auto& text = rep.segments.at(0).value;
    EXPECT_NE(text.find("Actor1: LOS ANGELES FIRE DEPARTMENT (USAGOV)"), std::string::npos) << text;
    EXPECT_NE(text.find("Actor2: RESIDENTS\n"), std::string::npos);
    EXPECT_NE(text.find("Event code: 0233"), std::string::npos);
    EXPECT_NE(text.find("Fire crews\nfought \\ flames"), std::string::npos);
    // DATEADDED unusable: the Day column gives midnight.
    EXPECT_EQ(r.reports[1].observedAt, *parse_timestamp("2025-01-07T00:00:00Z"));
    EXPECT_FALSE(r.reports[1].geo);

    // Identifiers are stable across parses.
    EXPECT_EQ(parse_gdelt(bytes, c, &articles).reports[0].id, rep.id);
}

TEST(Gdelt, MappingOverridesColumns) {
    auto c = config(SourceKind::Gdelt);
    c.delimiter = ',';
    c.fieldMapping = {{"GlobalEventID", "0"}, {"Day", "1"}, {"Actor1Code", "2"}, {"Actor1Name", "2"},
                      {"Actor2Code", "2"},    {"Actor2Name", "2"}, {"EventCode", "2"}, {"ActionGeo_FullName", "2"},
                      {"ActionGeo_Lat", "2"}, {"ActionGeo_Long", "2"}, {"DATEADDED", "1"}, {"SOURCEURL", "3"}};
    const auto r = parse_gdelt("9,20250107190000,,https://a.b/c\n", c);
    expect_counts(r);
    EXPECT_EQ(r.emitted, 1u);
    c.fieldMapping["Day"] = "first";
    EXPECT_THROW(parse_gdelt("x", c), ConfigError);
}

TEST(Pems, MeasurementsAndValidation) {
    auto c = config(SourceKind::Pems, "PeMS");
    c.regionFilter.place = "District 7";
    auto row = [](const std::string& ts, const std::string& st, const std::string& d, const std::string& occ,
                  const std::string& speed) {
        return ts + "," + st + "," + d + ",,,,,,,," + occ + "," + speed + "\n";
    };
    const std::string bytes = row("01/07/2025 19:00:00", "717046", "7", "0.0712", "61.2") +
                              row("2025-01-07T19:00:00Z", "717047", "4", "0.1", "50") +
                              row("2025-01-07T19:00:00Z", "717048", "7", "1.5", "50") +
                              row("2025-01-07T19:00:00Z", "717049", "7", "", "-3") +
                              row("2025-01-07T19:00:00Z", "717050", "7", "", "") + row("", "717051", "7", "0.1", "") +
                              row("2025-01-07T19:00:00Z", "717052", "7", "", "fast");
    const auto r = parse_pems(bytes, c);
    expect_counts(r);
    EXPECT_EQ(r.inputRecords, 7u);
    EXPECT_EQ(r.filtered, 1u);
    EXPECT_EQ(r.aggregator.label, "Caltrans PeMS");
    ASSERT_EQ(r.emitted, 1u);
    const auto& segs = r.reports[0].segments;
    ASSERT_EQ(segs.size(), 2u);
    EXPECT_EQ(segs[0].property, "speed");
    EXPECT_EQ(segs[0].value, "61.2");
    EXPECT_EQ(segs[0].unit, "mph");
    EXPECT_EQ(segs[1].property, "occupancy");
    EXPECT_EQ(r.observers[0].label, "VDS 717046");
}

TEST(Weather, StationRecords) {
    auto c = config(SourceKind::Weather, "OpenWeather");
    c.regionFilter = {"", GeoPoint{34.0522, -118.2437, std::nullopt}, 60};
    const json doc = {{"list",
                       {{{"id", 5368361}, {"name", "Los Angeles"}, {"dt", 1736276400},
                         {"coord", {{"lat", 34.05}, {"lon", -118.24}}},
                         {"wind", {{"speed", 22.4}}}, {"weather", {{{"description", "smoke"}}}}},
                        {{"id", 1}, {"name", "Fresno"}, {"dt", 1736276400},
                         {"coord", {{"lat", 36.7}, {"lon", -119.7}}}, {"wind", {{"speed", 3}}}},
                        {{"name", "no id"}, {"dt", 1}},
                        {{"id", 2}, {"dt", "2025-01-07T19:00:00Z"}, {"coord", {{"lat", 34.0}, {"lon", -118.3}}}},
                        {{"id", 3}, {"dt", 1736276400}, {"coord", {{"lat", 95}, {"lon", 0}}}, {"wind", {{"speed", 1}}}},
                        "not an object"}}};
    const auto r = parse_weather(doc.dump(), c);
    expect_counts(r);
    EXPECT_EQ(r.inputRecords, 6u);
    EXPECT_EQ(r.filtered, 1u);
    ASSERT_EQ(r.emitted, 1u);
    const auto& rep = r.reports[0];
    EXPECT_EQ(rep.observedAt, kT);
    ASSERT_EQ(rep.segments.size(), 2u);
    EXPECT_EQ(rep.segments[0].property, "wind_speed");
    EXPECT_EQ(rep.segments[0].unit, "m/s");
    EXPECT_EQ(rep.segments[1].kind, ModalityKind::Text);
    EXPECT_EQ(rep.segments[1].value, "smoke");
    EXPECT_EQ(r.observers[0].label, "Los Angeles (5368361)");

    const auto junk = parse_weather("{not json", c);
    EXPECT_EQ(junk.inputRecords, 1u);
    EXPECT_EQ(junk.skipped, 1u);
}

TEST(AirQuality, PositionalRowsAndObjects) {
    auto c = config(SourceKind::AirQuality, "PurpleAir");
    const json doc = {{"fields", {"sensor_index", "name", "latitude", "longitude", "time_stamp", "pm2.5_atm"}},
                      {"data",
                       {{131075, "Palisades Village", 34.046, -118.526, 1736276400, 412.6},
                        {131076, "Short row"},
                        {{"sensor_index", 7}, {"time_stamp", 1736276400}, {"pm2.5_atm", "12.5"}},
                        42}}};
    const auto r = parse_airquality(doc.dump(), c);
    expect_counts(r);
    EXPECT_EQ(r.inputRecords, 4u);
    ASSERT_EQ(r.emitted, 2u);
    const auto& seg = r.reports[0].segments.at(0);
    EXPECT_EQ(seg.property, "PM2.5");
    EXPECT_EQ(seg.value, "412.6");
    EXPECT_EQ(seg.unit, "µg/m³");
    EXPECT_EQ(r.reports[0].geo->placeName, "Palisades Village");
    EXPECT_EQ(r.reports[1].segments.at(0).value, "12.5");
    EXPECT_EQ(r.observers[1].label, "7");
}

TEST(ImageManifest, StoresBlobsAndTags) {
    TempDir dir;
    spit(dir.path() / "img" / "a.png", std::string("\x89PNG\r\n\x1a\n", 8) + "pixels");
    spit(dir.path() / "img" / "a.png.tags", "smoke\n");
    spit(dir.path() / "img" / "b.jpg", std::string("\xFF\xD8\xFF", 3) + "jpeg");
    spit(dir.path() / "img" / "c.gif", "GIF89a");
    const std::string manifest =
        "timestamp,camera,lat,lon,image\n# comment\n"
        "2025-01-07T19:00:00Z,D7-PCH,34.04,-118.55,img/a.png\n"
        "2025-01-07T19:15:00Z,D7-405,34.06,-118.44,img/b.jpg\n"
        "2025-01-07T19:15:00Z,D3-SAC,38.58,-121.49,img/b.jpg\n"
        "2025-01-07T19:15:00Z,D7-GIF,34.06,-118.44,img/c.gif\n"
        "2025-01-07T19:15:00Z,D7-MISS,34.06,-118.44,img/none.png\n"
        "2025-01-07T19:15:00Z,D7-BAD,north,-118.44,img/a.png\n"
        "too,few\n";
    auto c = config(SourceKind::CctvManifest, "CCTV");
    c.regionFilter = {"", GeoPoint{34.0522, -118.2437, std::nullopt}, 60};
    Warehouse w(dir.path() / "state");
    const auto r = load_image_manifest(manifest, c, w, dir.path());
    expect_counts(r);
    EXPECT_EQ(r.inputRecords, 7u);
    EXPECT_EQ(r.filtered, 1u);
    EXPECT_EQ(r.skipped, 4u);
    ASSERT_EQ(r.emitted, 2u);
    const auto& path = r.reports[0].segments.at(0).value;
    EXPECT_TRUE(path.starts_with("blobs/"));
    EXPECT_EQ(w.get_blob(path), std::string("\x89PNG\r\n\x1a\n", 8) + "pixels");
    EXPECT_EQ(w.get_sidecar(path, ".tags"), "smoke\n");
    EXPECT_FALSE(w.get_sidecar(r.reports[1].segments.at(0).value, ".tags"));
    EXPECT_EQ(detect_image_media_type("GIF89a"), "");
}

TEST(Zip, StoredAndDeflatedEntries) {
    const std::string big(5000, 'x');
    for (bool deflated : {false, true}) {
        const auto z = make_zip({{"b.csv", "second"}, {"a.csv", big}, {"dir/", ""}}, deflated);
        ASSERT_TRUE(looks_like_zip(z));
        const auto entries = read_zip(z);
        ASSERT_EQ(entries.size(), 2u);
        EXPECT_EQ(entries[0].name, "b.csv");
        EXPECT_EQ(entries[0].bytes, "second");
        EXPECT_EQ(entries[1].bytes, big);
    }
    auto corrupt = make_zip({{"a.csv", "payload"}}, false);
    corrupt[36] ^= 1;  // inside the stored data, after the 30-byte header and name
    EXPECT_THROW(read_zip(corrupt), FetchError);
    EXPECT_THROW(read_zip("PK\x03\x04 short"), FetchError);
    EXPECT_FALSE(looks_like_zip("plain,text"));

    std::mt19937_64 rng(5);
    const auto good = make_zip({{"a.csv", "some payload bytes"}}, true);
    for (int i = 0; i < 500; ++i) {
        std::string m = good;
        m[rng() % m.size()] = static_cast<char>(rng());
        try {
            read_zip(m);
        } catch (const FetchError&) {
        }
    }
}

TEST(Zip, FixtureArchive) {
    const auto bytes = slurp(la_fixture() / "gdelt" / "20250107190000.export.CSV.zip");
    const auto entries = read_zip(bytes);
    ASSERT_EQ(entries.size(), 1u);
    EXPECT_EQ(entries[0].name, "20250107190000.export.CSV");
    EXPECT_GT(std::count(entries[0].bytes.begin(), entries[0].bytes.end(), '\n'), 3);
}

TEST(FileFetcher, DirectoriesFilesAndArchives) {
    TempDir dir;
    spit(dir.path() / "in" / "2.csv", "b");
    spit(dir.path() / "in" / "1.csv", "a");
    spit(dir.path() / "in" / "notes.md", "ignored");
    spit(dir.path() / "in" / "3.zip", make_zip({{"z.csv", "c"}}, true));
    auto c = config(SourceKind::Pems);
    c.inputLocation = (dir.path() / "in").string();
    FileFetcher f;
    const auto files = f.fetch(c, kT);
    ASSERT_EQ(files.size(), 3u);
    EXPECT_EQ(files[0].bytes, "a");
    EXPECT_EQ(files[1].bytes, "b");
    EXPECT_EQ(files[2].name, "3.zip!z.csv");
    EXPECT_EQ(files[2].bytes, "c");
    EXPECT_EQ(files[0].baseDir, dir.path() / "in");

    c.inputLocation = (dir.path() / "in" / "1.csv").string();
    EXPECT_EQ(f.fetch(c, kT).at(0).baseDir, dir.path() / "in");
    c.inputLocation = (dir.path() / "missing").string();
    EXPECT_THROW(f.fetch(c, kT), FetchError);
}

TEST(HttpFetcher, ExpandsTimestampAndFetches) {
    auto c = config(SourceKind::Gdelt);
    c.pollInterval = Duration(900);
    c.inputLocation = "http://data.example/{timestamp}.export.CSV.zip";
    EXPECT_EQ(HttpFetcher::expand_url(c, *parse_timestamp("2025-01-07T19:14:59Z")),
              "http://data.example/20250107190000.export.CSV.zip");
    EXPECT_EQ(HttpFetcher::expand_url(c, *parse_timestamp("2025-01-07T19:15:00Z")),
              "http://data.example/20250107191500.export.CSV.zip");

    httplib::Server server;
    server.Get("/feed.zip", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(make_zip({{"x.csv", "row"}}, true), "application/zip");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    HttpFetcher fetcher(std::chrono::seconds(5));
    c.inputLocation = "http://127.0.0.1:" + std::to_string(port) + "/feed.zip";
    const auto files = fetcher.fetch(c, kT);
    ASSERT_EQ(files.size(), 1u);
    EXPECT_EQ(files[0].bytes, "row");
    c.inputLocation = "http://127.0.0.1:" + std::to_string(port) + "/missing";
    EXPECT_THROW(fetcher.fetch(c, kT), FetchError);
    server.stop();
    th.join();
    EXPECT_NE(dynamic_cast<HttpFetcher*>(make_fetcher(c).get()), nullptr);
    c.inputLocation = "/tmp";
    EXPECT_NE(dynamic_cast<FileFetcher*>(make_fetcher(c).get()), nullptr);
}

TEST(SourceConfigParse, DefaultsAndErrors) {
    const auto c = parse_source_config(
        {{"name", "PeMS"}, {"kind", "pems"}, {"input", "pems"}, {"interval", "1h"}, {"filter", {{"place", "District 7"}}}},
        "/base");
    EXPECT_EQ(c.kind, SourceKind::Pems);
    EXPECT_EQ(c.modalityKind, ModalityKind::Tabular);
    EXPECT_EQ(c.pollInterval, Duration(3600));
    EXPECT_EQ(c.inputLocation, "/base/pems");
    EXPECT_EQ(c.delimiter, ',');

    const auto g = parse_source_config({{"name", "G"}, {"kind", "gdelt"}, {"input", "http://x/{timestamp}"},
                                        {"delimiter", "tab"}, {"mapping", {{"SOURCEURL", 58}}}},
                                       "/base");
    EXPECT_EQ(g.inputLocation, "http://x/{timestamp}");
    EXPECT_EQ(g.pollInterval, Duration(900));
    EXPECT_EQ(g.fieldMapping.at("SOURCEURL"), "58");

    const std::vector<json> bad = {
        json::array(),
        {{"kind", "pems"}, {"input", "x"}},
        {{"name", "a"}, {"kind", "radio"}, {"input", "x"}},
        {{"name", "a"}, {"kind", "pems"}},
        {{"name", "a"}, {"kind", "pems"}, {"input", "x"}, {"interval", "soon"}},
        {{"name", "a"}, {"kind", "pems"}, {"input", "x"}, {"interval", -5}},
        {{"name", "a"}, {"kind", "pems"}, {"input", "x"}, {"delimiter", ";;"}},
        {{"name", "a"}, {"kind", "pems"}, {"input", "x"}, {"filter", {{"lat", 1}}}},
        {{"name", "a"}, {"kind", "pems"}, {"input", "x"}, {"filter", {{"lat", 1}, {"lon", 1}, {"radiusKm", 0}}}},
        {{"name", "a"}, {"kind", "pems"}, {"input", "x"}, {"mapping", {{"speed", true}}}},
        {{"name", 5}, {"kind", "pems"}, {"input", "x"}},
    };
    for (const auto& j : bad) EXPECT_THROW(parse_source_config(j, "/"), ConfigError) << j.dump();
}

TEST(Schedule, NextPoll) {
    auto a = config(SourceKind::Gdelt, "a");
    a.pollInterval = Duration(900);
    const std::vector<SourceConfig> cfgs{a};
    EXPECT_EQ(schedule_next(cfgs, "a", kT, kT), kT + Duration(900));
    EXPECT_EQ(schedule_next(cfgs, "a", kT, kT + Duration(5000)), kT + Duration(5000));
    EXPECT_THROW(schedule_next(cfgs, "b", kT, kT), ConfigError);
}
