// Serial reference against the OpenMP variant of each scan kernel. The second
// argument selects the mode: 0 serial, 1 parallel.
#include <benchmark/benchmark.h>

#include <random>

#include "sigmus/disambiguation.hpp"
#include "sigmus/kernels.hpp"

using namespace sigmus;
using kernels::Exec;

namespace {

Exec mode(const benchmark::State& state) { return state.range(1) == 0 ? Exec::Serial : Exec::Parallel; }

std::vector<double> random_scores(std::size_t n) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

void BM_SelectTopk(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto scores = random_scores(n);
    std::vector<std::string> keys(n);
    for (std::size_t i = 0; i < n; ++i) keys[i] = "entity-" + std::to_string(i);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::select_topk(scores, keys, 20, true, mode(state)));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DotRows(benchmark::State& state) {
    constexpr std::size_t dims = 256;
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937 rng(11);
    std::normal_distribution<float> g;
    std::vector<float> matrix(n * dims), query(dims);
    for (auto& x : matrix) x = g(rng);
    for (auto& x : query) x = g(rng);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::dot_rows(query, matrix, dims, mode(state)));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Moments(benchmark::State& state) {
    const auto values = random_scores(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::moments(values, mode(state)));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

// The realistic workload: name distance of one query against every label.
void BM_NameDistanceScan(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    static const char* words[] = {"los", "angeles", "fire", "department", "dept", "county", "police", "pacific",
                                  "palisades", "eaton", "wildfire", "city", "council", "sheriff"};
    std::mt19937 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, std::size(words) - 1);
    std::vector<std::string> labels(n);
    for (auto& l : labels) l = std::string(words[pick(rng)]) + " " + words[pick(rng)] + " " + words[pick(rng)];
    const std::string query = "Los Angeles Fire Dept";
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            kernels::map_scores(n, [&](std::size_t i) { return name_distance(query, labels[i]); }, mode(state)));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void sizes(benchmark::internal::Benchmark* b) {
    for (long n : {1 << 10, 1 << 14, 1 << 18}) {
        b->Args({n, 0});
        b->Args({n, 1});
    }
}

}  // namespace

BENCHMARK(BM_SelectTopk)->Apply(sizes);
BENCHMARK(BM_DotRows)->Args({1 << 12, 0})->Args({1 << 12, 1})->Args({1 << 15, 0})->Args({1 << 15, 1});
BENCHMARK(BM_Moments)->Apply(sizes);
BENCHMARK(BM_NameDistanceScan)->Args({1 << 12, 0})->Args({1 << 12, 1})->Args({1 << 15, 0})->Args({1 << 15, 1});
BENCHMARK_MAIN();
