#pragma once
// Shared helpers for the test binaries: scratch directories, fixture paths
// and the reference implementations the library is checked against. The
// references are deliberately naive and share no code with src/.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sigmus/graph_store.hpp"

namespace sigmus::testing {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(SIGMUS_SOURCE_DIR); }
inline fs::path la_fixture() { return source_dir() / "fixtures" / "la2025"; }

class TempDir {
public:
    explicit TempDir(const std::string& tag = "sigmus") {
        static std::mt19937_64 rng(std::random_device{}());
        for (;;) {
            path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rng()));
            if (fs::create_directory(path_)) break;
        }
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const fs::path& p, const std::string& bytes) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

namespace oracle {

// Words are maximal runs of ASCII letters/digits or bytes >= 0x80, lowercased.
inline std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Textbook full-matrix Levenshtein over bytes; the tests only feed ASCII.
inline std::size_t levenshtein(const std::string& a, const std::string& b) {
    std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] != b[j - 1]);
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, sub});
        }
    }
    return d[a.size()][b.size()];
}

inline double token_cost(const std::string& a, const std::string& b, double prefixCost, std::size_t minPrefix) {
    if (a == b) return 0.0;
    const double lev = static_cast<double>(levenshtein(a, b)) / static_cast<double>(std::max(a.size(), b.size()));
    const std::string& s = a.size() <= b.size() ? a : b;
    const std::string& l = a.size() <= b.size() ? b : a;
    const bool prefix = s.size() >= minPrefix && l.compare(0, s.size(), s) == 0;
    return prefix ? std::min(prefixCost, lev) : lev;
}

// Minimum over every alignment path, enumerated recursively without memo.
inline double name_distance(const std::string& a, const std::string& b, double prefixCost = 0.2,
                            double indel = 0.4, std::size_t minPrefix = 3) {
    const auto x = words(a), y = words(b);
    if (x.empty() && y.empty()) return 0.0;
    if (x.empty() || y.empty()) return 1.0;
    std::vector<std::vector<double>> sub(x.size(), std::vector<double>(y.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) sub[i][j] = token_cost(x[i], y[j], prefixCost, minPrefix);
    }
    std::function<double(std::size_t, std::size_t)> best = [&](std::size_t i, std::size_t j) -> double {
        if (i == x.size()) return static_cast<double>(y.size() - j) * indel;
        if (j == y.size()) return static_cast<double>(x.size() - i) * indel;
        return std::min({best(i + 1, j) + indel, best(i, j + 1) + indel, best(i + 1, j + 1) + sub[i][j]});
    };
    return std::clamp(best(0, 0) / static_cast<double>(std::max(x.size(), y.size())), 0.0, 1.0);
}

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;  // population
};

inline Moments two_pass(const std::vector<double>& v) {
    Moments m;
    if (v.empty()) return m;
    long double sum = 0;
    for (double x : v) sum += x;
    m.mean = static_cast<double>(sum / v.size());
    long double ss = 0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(static_cast<double>(ss / v.size()));
    return m;
}

}  // namespace oracle

// A random ontology-valid graph: every entity class, nested segments and
// inferences, list-valued alternate labels and relation edges with
// properties. Strings include quotes, backslashes, newlines and non-ASCII.
inline void random_graph(GraphStore& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    static const std::vector<std::string> pieces = {"Fire", "smoke", "\"quoted\"", "back\\slash", "line\nbreak",
                                                    "tab\there", "Café", "東京", "PCH", "<angle>", "a&b", "  pad  "};
    auto text = [&](std::size_t words) {
        std::string s;
        for (std::size_t i = 0; i < words; ++i) s += (i ? " " : "") + pieces[pick(pieces.size())];
        return s;
    };
    auto when = [&] { return Timestamp(std::chrono::seconds(1'700'000'000 + static_cast<long>(pick(50'000'000)))); };
    auto geo = [&]() -> std::optional<GeoPoint> {
        if (pick(3) == 0) return std::nullopt;
        GeoPoint p{real(-90, 90), real(-180, 180), std::nullopt};
        if (pick(2)) p.placeName = text(2);
        return p;
    };

    const std::string tag = std::to_string(seed);
    std::vector<EntityId> reports, incidents, actors;
    Aggregator agg{EntityId("agg-" + tag), text(2)};
    g.insert_entity(agg);
    std::vector<EntityId> observers;
    for (std::size_t i = 0, n = 1 + pick(3); i < n; ++i) {
        Observer o{EntityId("obs-" + tag + "-" + std::to_string(i)), text(2)};
        g.insert_entity(o);
        observers.push_back(o.id);
    }
    for (std::size_t i = 0, n = 1 + pick(6); i < n; ++i) {
        Report r;
        r.id = EntityId("rep-" + tag + "-" + std::to_string(i));
        r.aggregatorId = agg.id;
        r.observerId = observers[pick(observers.size())];
        r.observedAt = when();
        r.geo = geo();
        for (std::size_t s = 0, m = 1 + pick(3); s < m; ++s) {
            ModalitySegment seg;
            switch (pick(3)) {
                case 0:
                    seg.kind = ModalityKind::Text;
                    seg.value = text(1 + pick(5));
                    break;
                case 1:
                    seg.kind = ModalityKind::Image;
                    seg.value = "blobs/ab/cd/abcd" + std::to_string(pick(1000));
                    break;
                default:
                    seg.kind = ModalityKind::Tabular;
                    seg.value = round_trip_double(real(-1e6, 1e6));
                    seg.property = "pm2.5";
                    seg.unit = "ug/m3";
            }
            for (std::size_t k = 0, q = pick(3); k < q; ++k) {
                seg.inferences.push_back({pick(2) ? "Trend Analysis" : "Image Captioning", text(3)});
            }
            r.segments.push_back(std::move(seg));
        }
        g.insert_entity(r);
        reports.push_back(r.id);
    }
    for (std::size_t i = 0, n = 1 + pick(4); i < n; ++i) {
        Incident inc;
        inc.id = EntityId("inc-" + tag + "-" + std::to_string(i));
        inc.label = text(2);
        inc.description = pick(2) ? text(4) : "";
        inc.interval.start = when();
        if (pick(2)) inc.interval.end = inc.interval.start + std::chrono::hours(1 + pick(48));
        inc.geo = geo();
        inc.sourceReportIds.push_back(reports[pick(reports.size())]);
        for (std::size_t k = 0, q = pick(3); k < q; ++k) inc.altLabels.push_back(text(2) + " #" + std::to_string(k));
        g.insert_entity(inc);
        incidents.push_back(inc.id);
    }
    for (std::size_t i = 0, n = pick(4); i < n; ++i) {
        ActorRecord a;
        a.id = EntityId("act-" + tag + "-" + std::to_string(i));
        a.name = text(2);
        if (pick(2)) a.cameoActorCode = "USA";
        for (std::size_t k = 0, q = pick(3); k < q; ++k) a.altNames.push_back(a.name + " v" + std::to_string(k));
        g.insert_entity(a);
        actors.push_back(a.id);
    }
    if (!actors.empty()) {
        EventRecord e;
        e.id = EntityId("evt-" + tag);
        e.cameoEventCode = pick(2) ? "02" : "14";
        e.actor1 = actors[pick(actors.size())];
        if (pick(2)) e.actor2 = actors[pick(actors.size())];
        if (pick(2)) e.capCategory = "Fire";
        g.insert_entity(e);
        g.upsert_edge({e.id, reports[pick(reports.size())], std::string(vocab::kReportedIn), {}});
    }
    for (std::size_t i = 1; i < incidents.size(); ++i) {
        if (pick(2)) g.upsert_edge({incidents[i], incidents[pick(i)], std::string(vocab::kIsPartOf), {}});
    }
    for (const auto& r : reports) {
        if (pick(2)) {
            EdgePropertyMap props;
            switch (pick(4)) {
                case 0: props[std::string(vocab::kRationale)] = text(3); break;
                case 1: props[std::string(vocab::kValue)] = real(0, 1); break;
                case 2: props[std::string(vocab::kPosition)] = static_cast<std::int64_t>(pick(100)) - 50; break;
                default: props[std::string(vocab::kNeedsReview)] = pick(2) == 1;
            }
            g.upsert_edge({r, incidents[pick(incidents.size())], std::string(vocab::kEvidenceOf), props});
        }
    }
    for (const auto& a : actors) {
        if (pick(2)) g.upsert_edge({reports[pick(reports.size())], a, std::string(vocab::kMentions), {}});
    }
}

}  // namespace sigmus::testing
