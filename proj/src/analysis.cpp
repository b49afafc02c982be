#include "sigmus/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace sigmus {

std::string_view to_string(Direction d) {
    switch (d) {
        case Direction::Rising: return "rising";
        case Direction::Falling: return "falling";
        case Direction::Flat: return "flat";
    }
    return "flat";
}

std::vector<Duration> default_trend_windows() {
    using namespace std::chrono;
    return {duration_cast<Duration>(hours(1)), duration_cast<Duration>(days(1)), duration_cast<Duration>(weeks(1))};
}

TrendSummary compute_trend(const Warehouse& warehouse, std::string_view seriesKey, Timestamp now,
                           const std::vector<Duration>& windows, const TrendParams& params, kernels::Exec exec) {
    Duration widest{0};
    for (auto w : windows) widest = std::max(widest, w);
    // Points in [now - widest, now] cover every window plus the latest value.
    auto points = warehouse.range_query(seriesKey, {now - widest, now + Duration(1)});
    if (points.empty()) {
        // The latest value may be older than the widest window.
        auto all = warehouse.all_points(seriesKey);
        auto it = std::find_if(all.rbegin(), all.rend(), [&](const TimeSeriesPoint& p) { return p.at <= now; });
        if (it != all.rend()) points.push_back(*it);
    }
    return compute_trend(seriesKey, points, now, windows, params, exec);
}

TrendSummary compute_trend(std::string_view seriesKey, const std::vector<TimeSeriesPoint>& points, Timestamp now,
                           const std::vector<Duration>& windows, const TrendParams& params, kernels::Exec exec) {
    if (windows.empty()) throw Error("compute_trend needs at least one window");
    TrendSummary t;
    t.seriesKey = std::string(seriesKey);

    auto latest = std::upper_bound(points.begin(), points.end(), now,
                                   [](Timestamp n, const TimeSeriesPoint& p) { return n < p.at; });
    if (latest != points.begin()) {
        --latest;
        t.latestValue = latest->value;
        t.latestAt = latest->at;
        t.unit = latest->unit;
    }

    std::vector<double> values;
    for (auto w : windows) {
        values.clear();
        for (const auto& p : points) {
            if (p.at >= now - w && p.at < now) values.push_back(p.value);
        }
        const auto m = kernels::moments(values, exec);
        WindowTrend wt;
        wt.window = w;
        wt.sampleCount = m.count;
        wt.mean = m.mean;
        wt.stddev = m.stddev;
        if (t.latestValue && m.count >= 2 && m.stddev > 0.0) {
            wt.zScore = (*t.latestValue - m.mean) / m.stddev;
            if (std::abs(*wt.zScore) < params.flatZ) {
                wt.direction = Direction::Flat;
            } else {
                wt.direction = *wt.zScore > 0 ? Direction::Rising : Direction::Falling;
            }
            if (std::abs(*wt.zScore) >= params.anomalyZ) t.anomalous = true;
        } else if (t.latestValue && m.count > 0 && *t.latestValue != m.mean) {
            wt.direction = *t.latestValue > m.mean ? Direction::Rising : Direction::Falling;
        }
        t.perWindow.push_back(wt);
    }
    return t;
}

InferenceRecord render_inference(const TrendSummary& t) {
    std::string s = t.seriesKey + ": ";
    if (t.latestValue) {
        s += "latest " + fixed(*t.latestValue, 3);
        if (!t.unit.empty()) s += " " + t.unit;
        s += " at " + format_timestamp(*t.latestAt);
    } else {
        s += "no data";
    }
    for (const auto& w : t.perWindow) {
        s += "; " + format_duration(w.window) + " window (n=" + std::to_string(w.sampleCount) + "): ";
        if (w.sampleCount == 0) {
            s += "no history, flat";
            continue;
        }
        s += "mean " + fixed(w.mean, 3) + ", std " + fixed(w.stddev, 3) + ", z ";
        s += w.zScore ? fixed(*w.zScore, 2) : std::string("n/a");
        s += ", ";
        s += to_string(w.direction);
    }
    s += t.anomalous ? "; anomalous" : "; within normal range";
    return {std::string(kTrendAnalysis), s};
}

}  // namespace sigmus
