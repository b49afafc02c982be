#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "sigmus/ingestion.hpp"

namespace sigmus {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kLocalHeader = 0x04034b50;
constexpr std::uint32_t kCentralHeader = 0x02014b50;
constexpr std::uint32_t kEndOfCentral = 0x06054b50;
constexpr std::size_t kMaxEntryBytes = std::size_t{1} << 30;

std::uint32_t le32(std::string_view b, std::size_t at) {
    if (at + 4 > b.size()) throw FetchError("zip: truncated record");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
    return v;
}

std::uint16_t le16(std::string_view b, std::size_t at) {
    if (at + 2 > b.size()) throw FetchError("zip: truncated record");
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | (static_cast<unsigned char>(b[at + 1]) << 8));
}

std::string inflate_raw(std::string_view in, std::size_t expected) {
    if (expected > kMaxEntryBytes) throw FetchError("zip: entry too large");
    std::string out(expected, '\0');
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw FetchError("zip: inflate init failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const auto produced = zs.total_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected) throw FetchError("zip: corrupt deflate stream");
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FetchError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool wanted_extension(const SourceConfig& c, const fs::path& p) {
    const std::string ext = to_lower_ascii(p.extension().string());
    if (ext == ".zip") return true;
    switch (c.kind) {
        case SourceKind::Gdelt: return ext == ".csv" || ext == ".tsv" || ext == ".txt";
        case SourceKind::Pems:
        case SourceKind::CctvManifest: return ext == ".csv" || ext == ".txt";
        case SourceKind::Weather:
        case SourceKind::AirQuality: return ext == ".json";
    }
    return false;
}

void append_expanded(std::vector<FetchedFile>& out, std::string name, std::string bytes, const fs::path& baseDir) {
    if (!looks_like_zip(bytes)) {
        out.push_back({std::move(name), std::move(bytes), baseDir});
        return;
    }
    auto entries = read_zip(bytes);
    std::sort(entries.begin(), entries.end(), [](const ZipEntry& a, const ZipEntry& b) { return a.name < b.name; });
    for (auto& e : entries) out.push_back({name + "!" + e.name, std::move(e.bytes), baseDir});
}

}  // namespace

bool looks_like_zip(std::string_view bytes) { return bytes.size() >= 4 && le32(bytes, 0) == kLocalHeader; }

std::vector<ZipEntry> read_zip(std::string_view z) {
    // Locate the end-of-central-directory record; the trailing comment is at
    // most 64 KiB.
    if (z.size() < 22) throw FetchError("zip: archive too short");
    std::size_t eocd = std::string_view::npos;
    const std::size_t floor = z.size() > 22 + 65535 ? z.size() - 22 - 65535 : 0;
    for (std::size_t i = z.size() - 22 + 1; i-- > floor;) {
        if (le32(z, i) == kEndOfCentral) {
            eocd = i;
            break;
        }
    }
    if (eocd == std::string_view::npos) throw FetchError("zip: no end of central directory");
    const std::size_t count = le16(z, eocd + 10);
    std::size_t at = le32(z, eocd + 16);

    std::vector<ZipEntry> out;
    for (std::size_t n = 0; n < count; ++n) {
        if (le32(z, at) != kCentralHeader) throw FetchError("zip: bad central directory");
        const std::uint16_t method = le16(z, at + 10);
        const std::uint32_t crc = le32(z, at + 16);
        const std::uint32_t csize = le32(z, at + 20);
        const std::uint32_t usize = le32(z, at + 24);
        const std::size_t nameLen = le16(z, at + 28), extraLen = le16(z, at + 30), commentLen = le16(z, at + 32);
        const std::size_t local = le32(z, at + 42);
        if (at + 46 + nameLen > z.size()) throw FetchError("zip: truncated name");
        std::string name(z.substr(at + 46, nameLen));
        at += 46 + nameLen + extraLen + commentLen;
        if (!name.empty() && name.back() == '/') continue;

        if (le32(z, local) != kLocalHeader) throw FetchError("zip: bad local header for " + name);
        const std::size_t dataAt = local + 30 + le16(z, local + 26) + le16(z, local + 28);
        if (dataAt > z.size() || csize > z.size() - dataAt) throw FetchError("zip: truncated data for " + name);
        const std::string_view data = z.substr(dataAt, csize);
        std::string bytes;
        if (method == 0) {
            if (csize != usize) throw FetchError("zip: size mismatch for " + name);
            bytes.assign(data);
        } else if (method == 8) {
            bytes = inflate_raw(data, usize);
        } else {
            throw FetchError("zip: unsupported compression method " + std::to_string(method));
        }
        const auto actual = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
        if (actual != crc) throw FetchError("zip: checksum mismatch for " + name);
        out.push_back({std::move(name), std::move(bytes)});
    }
    return out;
}

std::vector<FetchedFile> FileFetcher::fetch(const SourceConfig& config, Timestamp) {
    const fs::path root(config.inputLocation);
    std::vector<FetchedFile> out;
    std::error_code ec;
    if (fs::is_directory(root, ec)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(root)) {
            if (entry.is_regular_file() && wanted_extension(config, entry.path())) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) append_expanded(out, f.filename().string(), read_file(f), root);
        return out;
    }
    if (!fs::exists(root, ec)) throw FetchError("input " + root.string() + " does not exist");
    append_expanded(out, root.filename().string(), read_file(root), root.parent_path());
    return out;
}

std::string HttpFetcher::expand_url(const SourceConfig& config, Timestamp now) {
    const auto step = std::max<std::int64_t>(config.pollInterval.count(), 1);
    const auto secs = now.time_since_epoch().count();
    const auto floored = Timestamp(Duration(secs - (((secs % step) + step) % step)));
    std::string stamp = format_timestamp(floored);  // 2025-01-07T18:30:00Z
    stamp.erase(std::remove_if(stamp.begin(), stamp.end(), [](char c) { return c == '-' || c == ':' || c == 'T' || c == 'Z'; }),
                stamp.end());
    std::string url = config.inputLocation;
    for (std::size_t pos; (pos = url.find("{timestamp}")) != std::string::npos;) url.replace(pos, 11, stamp);
    return url;
}

std::vector<FetchedFile> HttpFetcher::fetch(const SourceConfig& config, Timestamp now) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    const std::string url = expand_url(config, now);
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw FetchError("bad URL " + url);
    httplib::Client client(m[1].str());
    const auto secs = static_cast<time_t>(timeout_.count());
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_follow_location(true);
    const std::string path = m[2].matched ? m[2].str() : "/";
    auto res = client.Get(path);
    if (!res) throw FetchError("GET " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw FetchError("GET " + url + " returned HTTP " + std::to_string(res->status));
    std::vector<FetchedFile> out;
    const std::string name = path.substr(path.find_last_of('/') + 1);
    append_expanded(out, name.empty() ? "payload" : name, std::move(res->body), fs::current_path());
    return out;
}

std::unique_ptr<Fetcher> make_fetcher(const SourceConfig& config) {
    if (config.inputLocation.rfind("http://", 0) == 0 || config.inputLocation.rfind("https://", 0) == 0) {
        return std::make_unique<HttpFetcher>();
    }
    return std::make_unique<FileFetcher>();
}

}  // namespace sigmus
