#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "cotrainlab/matrix.hpp"

namespace cotrainlab::diagnostics {

// Correct-prediction indicator per example: 1 iff argmax(probs row) == label
// (class ties to the lowest index).
std::vector<std::uint8_t> correct_vector(const Matrix& probs, std::span<const int> labels);
std::vector<std::uint8_t> correct_vector(std::span<const int> predictions, std::span<const int> labels);

double accuracy(std::span<const std::uint8_t> correct);

struct CorrelationReport {
    double phi = 0.0;
    // n11: both correct, n10: only a, n01: only b, n00: neither
    std::size_t n11 = 0, n10 = 0, n01 = 0, n00 = 0;
};

// Pearson correlation of two binary sequences via the phi formula.
// DegenerateInputError if either sequence is constant; InvalidInputError on
// length mismatch or fewer than two entries.
CorrelationReport phi_correlation(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

inline constexpr int kDefaultBootstrapResamples = 5000;
inline constexpr double kDefaultBootstrapLevel = 0.95;

// Percentile bootstrap of the mean of `correct`. Resample r draws n indices
// with replacement from Rng(seed + r). Quantiles use linear interpolation
// between order statistics. `threads` > 1 computes resamples in parallel
// with identical results.
Interval bootstrap_ci(std::span<const std::uint8_t> correct, int n_boot = kDefaultBootstrapResamples,
                      double level = kDefaultBootstrapLevel, std::uint64_t seed = 0, int threads = 1);

struct CellAccuracy {
    double accuracy = 0.0;
    std::size_t count = 0;
};

// Accuracy per (class, attr) cell. Cells without examples are absent.
std::map<std::pair<int, int>, CellAccuracy> subpop_breakdown(std::span<const int> predictions,
                                                             std::span<const int> labels,
                                                             std::span<const int> attrs);

}  // namespace cotrainlab::diagnostics
