#pragma once
// Scan kernels behind the top-k searches and trend windows. Every kernel has
// a serial reference and an OpenMP variant; both must agree exactly on
// selection results and to rounding on reductions.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sigmus::kernels {

enum class Exec { Serial, Parallel, Auto };

// Below this many items Auto runs serially.
inline constexpr std::size_t kParallelThreshold = 2048;

// out[i] = score(i) for i in [0, n).
std::vector<double> map_scores(std::size_t n, const std::function<double(std::size_t)>& score, Exec exec = Exec::Auto);

// Cosine of `query` against each row of a row-major matrix. Rows and query
// are expected to be L2-normalized or zero; the result is the dot product.
std::vector<double> dot_rows(std::span<const float> query, std::span<const float> matrix, std::size_t dims,
                             Exec exec = Exec::Auto);

// Indices of the k best scores. Ascending picks the smallest scores first.
// Ties go to the smaller key; keys[i] is the tie-break string of item i.
std::vector<std::size_t> select_topk(std::span<const double> scores, std::span<const std::string> keys, std::size_t k,
                                     bool ascending, Exec exec = Exec::Auto);

struct MomentStats {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;  // population
};

// Two-pass mean and population standard deviation. A constant input yields
// exactly that constant as mean and exactly zero deviation.
MomentStats moments(std::span<const double> values, Exec exec = Exec::Auto);

}  // namespace sigmus::kernels
