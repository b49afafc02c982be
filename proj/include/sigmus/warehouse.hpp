#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "sigmus/ontology.hpp"

namespace sigmus {

struct TimeSeriesPoint {
    std::string seriesKey;  // source:observer:property
    Timestamp at{};
    double value = 0.0;
    std::string unit;

    bool operator==(const TimeSeriesPoint&) const = default;
};

// `path` is relative to the warehouse root, e.g. "blobs/ab/cd/abcd...".
struct BlobRef {
    std::string path;
    std::string mediaType;
    std::string sha256;

    bool operator==(const BlobRef&) const = default;
};

class WarehouseError : public Error {
public:
    using Error::Error;
};

std::string series_key(std::string_view source, std::string_view observer, std::string_view property);

// Reversible directory name for a series key.
std::string escape_series_key(std::string_view key);
std::string unescape_series_key(std::string_view dir);

// File-backed store:
//   <root>/series/<escaped key>/points.tsv   epoch<TAB>value<TAB>unit, append-only,
//                                            a later line for the same epoch wins
//   <root>/blobs/<sha[0:2]>/<sha[2:4]>/<sha> raw bytes
//   <root>/blobs/<sha[0:2]>/<sha[2:4]>/<sha><suffix> optional sidecars
class Warehouse {
public:
    explicit Warehouse(std::filesystem::path root);

    // Root from SIGMUS_WAREHOUSE_ROOT, else `fallback`.
    static std::filesystem::path root_from_env(const std::filesystem::path& fallback);

    const std::filesystem::path& root() const noexcept { return root_; }

    void append_point(const TimeSeriesPoint& p);
    std::vector<TimeSeriesPoint> range_query(std::string_view seriesKey, const TimeInterval& interval) const;
    std::vector<TimeSeriesPoint> all_points(std::string_view seriesKey) const;
    std::vector<std::string> series_keys() const;

    BlobRef put_blob(std::string_view bytes, std::string_view mediaType);
    std::string get_blob(const BlobRef& ref) const;
    // Reads by relative path only; the sha256 is taken from the file name.
    std::string get_blob(std::string_view path) const;
    std::filesystem::path resolve(std::string_view relativePath) const;

    // Stores a small file next to a blob (e.g. ".tags").
    void put_sidecar(const BlobRef& ref, std::string_view suffix, std::string_view bytes);
    std::optional<std::string> get_sidecar(std::string_view blobPath, std::string_view suffix) const;

private:
    struct Series {
        std::mutex mutex;
        bool loaded = false;
        std::map<Timestamp, std::pair<double, std::string>> points;
    };

    Series& series(std::string_view key) const;
    void load_locked(std::string_view key, Series& s) const;

    std::filesystem::path root_;
    mutable std::mutex seriesMutex_;
    mutable std::map<std::string, std::unique_ptr<Series>, std::less<>> series_;
    std::mutex blobMutex_;
};

}  // namespace sigmus
