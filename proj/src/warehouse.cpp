#include "sigmus/warehouse.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sigmus {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw WarehouseError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& p, std::string_view bytes) {
    fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw WarehouseError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw WarehouseError("short write to " + tmp.string());
    }
    fs::rename(tmp, p);
}

bool is_hex_sha(std::string_view s) {
    if (s.size() != 64) return false;
    for (char c : s) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    }
    return true;
}

}  // namespace

std::string series_key(std::string_view source, std::string_view observer, std::string_view property) {
    std::string out(source);
    out += ':';
    out += observer;
    out += ':';
    out += property;
    return out;
}

std::string escape_series_key(std::string_view key) {
    std::string out;
    for (char ch : key) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || ch == '-' || ch == '_' || ch == '.') {
            out.push_back(ch);
        } else {
            char buf[4];
            std::snprintf(buf, sizeof buf, "%%%02X", c);
            out += buf;
        }
    }
    // "." and ".." are not usable as directory names.
    if (out == ".") return "%2E";
    if (out == "..") return "%2E%2E";
    return out;
}

std::string unescape_series_key(std::string_view dir) {
    std::string out;
    for (std::size_t i = 0; i < dir.size(); ++i) {
        if (dir[i] == '%' && i + 2 < dir.size()) {
            unsigned v = 0;
            auto [p, ec] = std::from_chars(dir.data() + i + 1, dir.data() + i + 3, v, 16);
            if (ec == std::errc{} && p == dir.data() + i + 3) {
                out.push_back(static_cast<char>(v));
                i += 2;
                continue;
            }
        }
        out.push_back(dir[i]);
    }
    return out;
}

Warehouse::Warehouse(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "series");
    fs::create_directories(root_ / "blobs");
}

fs::path Warehouse::root_from_env(const fs::path& fallback) {
    if (const char* env = std::getenv("SIGMUS_WAREHOUSE_ROOT"); env && *env) return env;
    return fallback;
}

Warehouse::Series& Warehouse::series(std::string_view key) const {
    std::lock_guard lock(seriesMutex_);
    auto it = series_.find(key);
    if (it == series_.end()) it = series_.emplace(std::string(key), std::make_unique<Series>()).first;
    return *it->second;
}

void Warehouse::load_locked(std::string_view key, Series& s) const {
    if (s.loaded) return;
    s.loaded = true;
    const fs::path file = root_ / "series" / escape_series_key(key) / "points.tsv";
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
        auto cols = split(line, '\t');
        if (cols.size() != 3) continue;  // torn trailing line from a crash
        std::int64_t epoch = 0;
        double value = 0;
        auto [p1, e1] = std::from_chars(cols[0].data(), cols[0].data() + cols[0].size(), epoch);
        auto [p2, e2] = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), value);
        if (e1 != std::errc{} || e2 != std::errc{} || !std::isfinite(value)) continue;
        s.points[Timestamp(Duration(epoch))] = {value, cols[2]};
    }
}

void Warehouse::append_point(const TimeSeriesPoint& p) {
    if (p.seriesKey.empty()) throw WarehouseError("series key is empty");
    if (!std::isfinite(p.value)) throw WarehouseError("non-finite value for series " + p.seriesKey);
    if (p.unit.find_first_of("\t\n\r") != std::string::npos) throw WarehouseError("unit contains a control character");
    Series& s = series(p.seriesKey);
    std::lock_guard lock(s.mutex);
    load_locked(p.seriesKey, s);

    const fs::path dir = root_ / "series" / escape_series_key(p.seriesKey);
    fs::create_directories(dir);
    std::ofstream out(dir / "points.tsv", std::ios::app);
    if (!out) throw WarehouseError("cannot append to series " + p.seriesKey);
    char value[40];
    std::snprintf(value, sizeof value, "%.17g", p.value);
    out << p.at.time_since_epoch().count() << '\t' << value << '\t' << p.unit << '\n';
    out.flush();
    if (!out) throw WarehouseError("write failed for series " + p.seriesKey);
    s.points[p.at] = {p.value, p.unit};
}

std::vector<TimeSeriesPoint> Warehouse::range_query(std::string_view seriesKey, const TimeInterval& interval) const {
    if (interval.end && *interval.end < interval.start) throw WarehouseError("interval end precedes start");
    Series& s = series(seriesKey);
    std::lock_guard lock(s.mutex);
    load_locked(seriesKey, s);
    std::vector<TimeSeriesPoint> out;
    auto it = s.points.lower_bound(interval.start);
    const auto stop = interval.end ? s.points.lower_bound(*interval.end) : s.points.end();
    for (; it != stop; ++it) out.push_back({std::string(seriesKey), it->first, it->second.first, it->second.second});
    return out;
}

std::vector<TimeSeriesPoint> Warehouse::all_points(std::string_view seriesKey) const {
    Series& s = series(seriesKey);
    std::lock_guard lock(s.mutex);
    load_locked(seriesKey, s);
    std::vector<TimeSeriesPoint> out;
    for (const auto& [at, v] : s.points) out.push_back({std::string(seriesKey), at, v.first, v.second});
    return out;
}

std::vector<std::string> Warehouse::series_keys() const {
    std::vector<std::string> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root_ / "series", ec)) {
        if (entry.is_directory() && fs::exists(entry.path() / "points.tsv")) {
            out.push_back(unescape_series_key(entry.path().filename().string()));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

BlobRef Warehouse::put_blob(std::string_view bytes, std::string_view mediaType) {
    BlobRef ref;
    ref.sha256 = sha256_hex(bytes);
    ref.mediaType = std::string(mediaType);
    ref.path = "blobs/" + ref.sha256.substr(0, 2) + "/" + ref.sha256.substr(2, 2) + "/" + ref.sha256;
    std::lock_guard lock(blobMutex_);
    const fs::path file = resolve(ref.path);
    if (!fs::exists(file)) write_file_atomic(file, bytes);
    return ref;
}

std::string Warehouse::get_blob(const BlobRef& ref) const {
    const fs::path file = resolve(ref.path);
    if (!fs::exists(file)) throw WarehouseError("missing blob " + ref.path);
    std::string bytes = read_file(file);
    if (sha256_hex(bytes) != ref.sha256) throw WarehouseError("checksum mismatch for blob " + ref.path);
    return bytes;
}

std::string Warehouse::get_blob(std::string_view path) const {
    const std::string name = fs::path(std::string(path)).filename().string();
    if (!is_hex_sha(name)) throw WarehouseError("not a blob path: " + std::string(path));
    return get_blob(BlobRef{std::string(path), {}, name});
}

fs::path Warehouse::resolve(std::string_view relativePath) const {
    const fs::path rel(std::string{relativePath});
    if (rel.is_absolute()) throw WarehouseError("blob path must be relative: " + rel.string());
    for (const auto& part : rel) {
        if (part == "..") throw WarehouseError("blob path escapes the warehouse: " + rel.string());
    }
    return root_ / rel;
}

void Warehouse::put_sidecar(const BlobRef& ref, std::string_view suffix, std::string_view bytes) {
    std::lock_guard lock(blobMutex_);
    write_file_atomic(resolve(ref.path + std::string(suffix)), bytes);
}

std::optional<std::string> Warehouse::get_sidecar(std::string_view blobPath, std::string_view suffix) const {
    const fs::path file = resolve(std::string(blobPath) + std::string(suffix));
    if (!fs::exists(file)) return std::nullopt;
    return read_file(file);
}

}  // namespace sigmus
