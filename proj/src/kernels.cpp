#include "sigmus/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <omp.h>

namespace sigmus::kernels {

namespace {

bool use_parallel(Exec exec, std::size_t n) {
    if (exec == Exec::Auto) return n >= kParallelThreshold && omp_get_max_threads() > 1;
    return exec == Exec::Parallel;
}

struct Better {
    std::span<const double> scores;
    std::span<const std::string> keys;
    bool ascending;

    bool operator()(std::size_t a, std::size_t b) const {
        if (scores[a] != scores[b]) return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
        if (keys[a] != keys[b]) return keys[a] < keys[b];
        return a < b;
    }
};

std::vector<std::size_t> topk_of(std::vector<std::size_t> idx, std::size_t k, const Better& better) {
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

}  // namespace

std::vector<double> map_scores(std::size_t n, const std::function<double(std::size_t)>& score, Exec exec) {
    std::vector<double> out(n);
    if (use_parallel(exec, n)) {
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 64)
        for (std::ptrdiff_t i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = score(static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = score(i);
    }
    return out;
}

std::vector<double> dot_rows(std::span<const float> query, std::span<const float> matrix, std::size_t dims,
                             Exec exec) {
    const std::size_t rows = dims == 0 ? 0 : matrix.size() / dims;
    std::vector<double> out(rows);
    auto dot = [&](std::size_t r) {
        const float* row = matrix.data() + r * dims;
        double acc = 0.0;
        for (std::size_t d = 0; d < dims; ++d) acc += static_cast<double>(query[d]) * static_cast<double>(row[d]);
        return acc;
    };
    if (use_parallel(exec, rows)) {
        const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < count; ++r) out[static_cast<std::size_t>(r)] = dot(static_cast<std::size_t>(r));
    } else {
        for (std::size_t r = 0; r < rows; ++r) out[r] = dot(r);
    }
    return out;
}

std::vector<std::size_t> select_topk(std::span<const double> scores, std::span<const std::string> keys, std::size_t k,
                                     bool ascending, Exec exec) {
    const std::size_t n = scores.size();
    const Better better{scores, keys, ascending};
    if (k == 0 || n == 0) return {};
    if (!use_parallel(exec, n)) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return topk_of(std::move(idx), k, better);
    }

    // Each thread keeps the best k of its chunk; the union is reduced serially.
    // The ordering is total, so the result matches the serial path exactly.
    std::vector<std::vector<std::size_t>> partial;
#pragma omp parallel
    {
#pragma omp single
        partial.resize(static_cast<std::size_t>(omp_get_num_threads()));
        const auto t = static_cast<std::size_t>(omp_get_thread_num());
        const std::size_t threads = partial.size();
        const std::size_t lo = n * t / threads;
        const std::size_t hi = n * (t + 1) / threads;
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        partial[t] = topk_of(std::move(idx), k, better);
    }
    std::vector<std::size_t> merged;
    for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
    return topk_of(std::move(merged), k, better);
}

MomentStats moments(std::span<const double> values, Exec exec) {
    MomentStats s;
    s.count = values.size();
    if (values.empty()) return s;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) {
        s.mean = *lo;
        return s;
    }
    const auto n = static_cast<std::ptrdiff_t>(values.size());
    const bool par = use_parallel(exec, values.size());
    double sum = 0.0;
    if (par) {
#pragma omp parallel for reduction(+ : sum)
        for (std::ptrdiff_t i = 0; i < n; ++i) sum += values[static_cast<std::size_t>(i)];
    } else {
        for (double v : values) sum += v;
    }
    s.mean = sum / static_cast<double>(n);
    double sq = 0.0;
    const double mean = s.mean;
    if (par) {
#pragma omp parallel for reduction(+ : sq)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const double d = values[static_cast<std::size_t>(i)] - mean;
            sq += d * d;
        }
    } else {
        for (double v : values) sq += (v - mean) * (v - mean);
    }
    s.stddev = std::sqrt(sq / static_cast<double>(n));
    return s;
}

}  // namespace sigmus::kernels
