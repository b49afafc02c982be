#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sigmus/ontology.hpp"
#include "sigmus/warehouse.hpp"

namespace sigmus {

enum class SourceKind { Gdelt, Pems, Weather, AirQuality, CctvManifest };

std::string_view to_string(SourceKind kind);
std::optional<SourceKind> parse_source_kind(std::string_view text);

// Place-name substring OR haversine radius; a record passes when either
// configured test accepts it, and every record passes when neither is set.
struct SourceRegion {
    std::string place;
    std::optional<GeoPoint> center;
    double radiusKm = 0.0;

    bool configured() const { return !place.empty() || center.has_value(); }
    bool matches(std::string_view placeName, const std::optional<GeoPoint>& geo) const;
};

struct SourceConfig {
    std::string sourceName;
    SourceKind kind = SourceKind::Gdelt;
    ModalityKind modalityKind = ModalityKind::Text;
    Duration pollInterval{900};
    SourceRegion regionFilter;
    std::string inputLocation;  // file, directory, or URL template
    std::map<std::string, std::string> fieldMapping;
    char delimiter = '\t';
    std::string aggregatorLabel;                  // platform name; defaults per kind
    std::optional<std::string> articlesLocation;  // GDELT only: url<TAB>text file
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// One element of the config's "sources" array. Relative paths resolve
// against `baseDir`. Throws ConfigError.
SourceConfig parse_source_config(const nlohmann::json& j, const std::filesystem::path& baseDir);
std::vector<std::string> validate(const SourceConfig& c);

enum class PayloadKind { CsvRow, Json, ImageBytes };

struct RawRecord {
    std::string sourceName;
    Timestamp fetchedAt{};
    std::string payload;
    PayloadKind payloadKind = PayloadKind::CsvRow;
};

struct ParseResult {
    std::vector<Report> reports;
    std::vector<Observer> observers;  // one per distinct observer, first-seen order
    Aggregator aggregator;
    std::size_t inputRecords = 0;
    std::size_t emitted = 0;
    std::size_t skipped = 0;
    std::size_t filtered = 0;
    std::vector<std::string> errors;  // first few skip reasons

    void skip(std::string reason);
};

// GDELT article bodies keyed by SOURCEURL: `url<TAB>text` per line, with
// \t, \n and \\ escaped in the text.
using ArticleTexts = std::map<std::string, std::string, std::less<>>;
ArticleTexts parse_articles(std::string_view bytes);

// Input record counting: delimited formats count every non-blank line
// (manifests also exclude '#' comments and a leading header); JSON formats
// count the elements of the record array, or one record when the payload
// does not decode to one.
ParseResult parse_gdelt(std::string_view bytes, const SourceConfig& config, const ArticleTexts* articles = nullptr);
ParseResult parse_pems(std::string_view bytes, const SourceConfig& config);
ParseResult parse_weather(std::string_view bytes, const SourceConfig& config);
ParseResult parse_airquality(std::string_view bytes, const SourceConfig& config);
// Image paths resolve against `baseDir`; a sibling "<image>.tags" file is
// copied next to the stored blob.
ParseResult load_image_manifest(std::string_view bytes, const SourceConfig& config, Warehouse& warehouse,
                                const std::filesystem::path& baseDir);

// Dispatch on config.kind.
ParseResult parse_source(std::string_view bytes, const SourceConfig& config, Warehouse& warehouse,
                         const std::filesystem::path& baseDir, const ArticleTexts* articles = nullptr);

// lastPollAt + pollInterval, or `now` when that is already past.
Timestamp schedule_next(const std::vector<SourceConfig>& configs, std::string_view sourceName, Timestamp lastPollAt,
                        Timestamp now);

std::string detect_image_media_type(std::string_view bytes);  // "" when neither PNG nor JPEG

// ---------------------------------------------------------------------------
// Fetching

struct FetchedFile {
    std::string name;
    std::string bytes;
    std::filesystem::path baseDir;  // for resolving relative references
};

class FetchError : public Error {
public:
    using Error::Error;
};

class Fetcher {
public:
    virtual ~Fetcher() = default;
    virtual std::vector<FetchedFile> fetch(const SourceConfig& config, Timestamp now) = 0;
};

// Reads inputLocation as a file, or every matching file of a directory in
// name order. Zip archives are expanded.
class FileFetcher : public Fetcher {
public:
    std::vector<FetchedFile> fetch(const SourceConfig& config, Timestamp now) override;
};

// GETs inputLocation after substituting {timestamp} (YYYYMMDDHHMMSS of now
// floored to the poll interval). Zip payloads are expanded.
class HttpFetcher : public Fetcher {
public:
    explicit HttpFetcher(std::chrono::seconds timeout = std::chrono::seconds(60)) : timeout_(timeout) {}
    std::vector<FetchedFile> fetch(const SourceConfig& config, Timestamp now) override;
    static std::string expand_url(const SourceConfig& config, Timestamp now);

private:
    std::chrono::seconds timeout_;
};

std::unique_ptr<Fetcher> make_fetcher(const SourceConfig& config);

struct ZipEntry {
    std::string name;
    std::string bytes;
};

// Stored and deflated entries; throws FetchError on a corrupt archive.
std::vector<ZipEntry> read_zip(std::string_view archive);
bool looks_like_zip(std::string_view bytes);

}  // namespace sigmus
