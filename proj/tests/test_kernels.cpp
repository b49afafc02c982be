// Serial and OpenMP paths must agree exactly on selections and to rounding
// on reductions, for sizes on both sides of the parallel threshold.
#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "sigmus/kernels.hpp"
#include "support.hpp"

using namespace sigmus;
using namespace sigmus::kernels;

namespace {

std::vector<std::size_t> full_sort_topk(const std::vector<double>& s, const std::vector<std::string>& keys, std::size_t k,
                                        bool ascending) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (s[a] != s[b]) return ascending ? s[a] < s[b] : s[a] > s[b];
        return keys[a] < keys[b];
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

}  // namespace

TEST(Kernels, SelectTopkMatchesFullSort) {
    std::mt19937_64 rng(1);
    for (std::size_t n : {0u, 1u, 7u, 100u, 5000u}) {
        std::vector<double> scores(n);
        std::vector<std::string> keys(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng() % 50) / 7.0;  // many ties
            keys[i] = "id-" + std::to_string(rng() % 100000) + "-" + std::to_string(i);
        }
        for (std::size_t k : {0u, 1u, 5u, 20u, 6000u}) {
            for (bool asc : {true, false}) {
                const auto want = full_sort_topk(scores, keys, k, asc);
                EXPECT_EQ(select_topk(scores, keys, k, asc, Exec::Serial), want) << n << " " << k;
                EXPECT_EQ(select_topk(scores, keys, k, asc, Exec::Parallel), want) << n << " " << k;
                EXPECT_EQ(select_topk(scores, keys, k, asc, Exec::Auto), want) << n << " " << k;
            }
        }
    }
}

TEST(Kernels, DotRowsAgree) {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> d;
    const std::size_t dims = 64, rows = 3000;
    std::vector<float> q(dims), m(dims * rows);
    for (auto& x : q) x = d(rng);
    for (auto& x : m) x = d(rng);
    const auto serial = dot_rows(q, m, dims, Exec::Serial);
    const auto parallel = dot_rows(q, m, dims, Exec::Parallel);
    ASSERT_EQ(serial.size(), rows);
    EXPECT_EQ(serial, parallel);
    for (std::size_t r = 0; r < rows; r += 97) {
        double acc = 0;
        for (std::size_t i = 0; i < dims; ++i) acc += static_cast<double>(q[i]) * m[r * dims + i];
        EXPECT_NEAR(serial[r], acc, 1e-9);
    }
    EXPECT_TRUE(dot_rows(q, {}, dims).empty());
}

TEST(Kernels, MomentsMatchTwoPassReference) {
    std::mt19937_64 rng(3);
    for (std::size_t n : {1u, 2u, 10u, 4096u, 20000u}) {
        std::vector<double> v(n);
        std::normal_distribution<double> d(1e3, 25.0);
        for (auto& x : v) x = d(rng);
        const auto ref = sigmus::testing::oracle::two_pass(v);
        for (auto exec : {Exec::Serial, Exec::Parallel}) {
            const auto m = moments(v, exec);
            EXPECT_EQ(m.count, n);
            EXPECT_NEAR(m.mean, ref.mean, 1e-9 * std::abs(ref.mean));
            EXPECT_NEAR(m.stddev, ref.stddev, 1e-9 * std::max(1.0, ref.stddev));
        }
    }
}

TEST(Kernels, ConstantInputHasExactlyZeroDeviation) {
    const std::vector<double> v(5000, 0.1);
    for (auto exec : {Exec::Serial, Exec::Parallel}) {
        const auto m = moments(v, exec);
        EXPECT_EQ(m.mean, 0.1);
        EXPECT_EQ(m.stddev, 0.0);
    }
    EXPECT_EQ(moments({}).count, 0u);
}

TEST(Kernels, MapScoresKeepsOrder) {
    for (auto exec : {Exec::Serial, Exec::Parallel}) {
        const auto out = map_scores(3000, [](std::size_t i) { return static_cast<double>(i) * 0.5; }, exec);
        ASSERT_EQ(out.size(), 3000u);
        for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<double>(i) * 0.5);
    }
}
