#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sigmus/kernels.hpp"
#include "sigmus/warehouse.hpp"

namespace sigmus {

enum class Direction { Rising, Falling, Flat };

std::string_view to_string(Direction d);

struct WindowTrend {
    Duration window{};
    double mean = 0.0;
    double stddev = 0.0;
    std::optional<double> zScore;  // absent iff stddev == 0 or sampleCount < 2
    Direction direction = Direction::Flat;
    std::size_t sampleCount = 0;
};

struct TrendSummary {
    std::string seriesKey;
    std::optional<double> latestValue;  // absent for an empty series
    std::optional<Timestamp> latestAt;
    std::string unit;
    std::vector<WindowTrend> perWindow;
    bool anomalous = false;
};

struct TrendParams {
    double anomalyZ = 3.0;
    double flatZ = 0.5;
};

std::vector<Duration> default_trend_windows();  // 1h, 1d, 1w

// Latest value is the last point at or before `now`; each window compares it
// against the points in [now - W, now).
TrendSummary compute_trend(const Warehouse& warehouse, std::string_view seriesKey, Timestamp now,
                           const std::vector<Duration>& windows, const TrendParams& params = {},
                           kernels::Exec exec = kernels::Exec::Auto);

// Same computation over an in-memory ascending series.
TrendSummary compute_trend(std::string_view seriesKey, const std::vector<TimeSeriesPoint>& points, Timestamp now,
                           const std::vector<Duration>& windows, const TrendParams& params = {},
                           kernels::Exec exec = kernels::Exec::Auto);

inline constexpr std::string_view kTrendAnalysis = "Trend Analysis";

InferenceRecord render_inference(const TrendSummary& t);

}  // namespace sigmus
