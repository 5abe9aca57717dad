#include "cotrainlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cotrainlab/error.hpp"
#include "cotrainlab/parallel.hpp"
#include "cotrainlab/rng.hpp"

namespace cotrainlab::diagnostics {

std::vector<std::uint8_t> correct_vector(const Matrix& probs, std::span<const int> labels) {
    if (probs.rows != labels.size()) throw InvalidInputError("correct_vector: row/label count mismatch");
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const auto r = probs.row(i);
        const auto pred = std::max_element(r.begin(), r.end()) - r.begin();
        out[i] = pred == labels[i] ? 1 : 0;
    }
    return out;
}

std::vector<std::uint8_t> correct_vector(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) {
        throw InvalidInputError("correct_vector: prediction/label count mismatch");
    }
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = predictions[i] == labels[i] ? 1 : 0;
    return out;
}

double accuracy(std::span<const std::uint8_t> correct) {
    if (correct.empty()) throw InvalidInputError("accuracy: empty input");
    std::size_t hits = 0;
    for (auto c : correct) hits += c;
    return static_cast<double>(hits) / static_cast<double>(correct.size());
}

CorrelationReport phi_correlation(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw InvalidInputError("phi_correlation: length mismatch");
    if (a.size() < 2) throw InvalidInputError("phi_correlation: need at least two entries");
    CorrelationReport r;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        if (x && y) ++r.n11;
        else if (x) ++r.n10;
        else if (y) ++r.n01;
        else ++r.n00;
    }
    const double row1 = static_cast<double>(r.n11 + r.n10);
    const double row0 = static_cast<double>(r.n01 + r.n00);
    const double col1 = static_cast<double>(r.n11 + r.n01);
    const double col0 = static_cast<double>(r.n10 + r.n00);
    if (row1 == 0 || row0 == 0) throw DegenerateInputError("phi_correlation: first sequence is constant");
    if (col1 == 0 || col0 == 0) throw DegenerateInputError("phi_correlation: second sequence is constant");
    const double num = static_cast<double>(r.n11) * static_cast<double>(r.n00) -
                       static_cast<double>(r.n10) * static_cast<double>(r.n01);
    r.phi = std::clamp(num / std::sqrt(row1 * row0 * col1 * col0), -1.0, 1.0);
    return r;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

Interval bootstrap_ci(std::span<const std::uint8_t> correct, int n_boot, double level,
                      std::uint64_t seed, int threads) {
    if (correct.empty()) throw InvalidInputError("bootstrap_ci: empty input");
    if (n_boot < 1) throw InvalidInputError("bootstrap_ci: n_boot must be >= 1");
    if (!(level > 0 && level < 1)) throw InvalidInputError("bootstrap_ci: level must be in (0, 1)");
    const std::size_t n = correct.size();
    std::vector<double> stats(static_cast<std::size_t>(n_boot));
    parallel_for(stats.size(), threads, [&](std::size_t r) {
        Rng rng(seed + r);
        std::size_t hits = 0;
        for (std::size_t k = 0; k < n; ++k) hits += correct[rng.below(n)];
        stats[r] = static_cast<double>(hits) / static_cast<double>(n);
    });
    std::sort(stats.begin(), stats.end());
    const double tail = (1.0 - level) / 2.0;
    return {quantile_sorted(stats, tail), quantile_sorted(stats, 1.0 - tail)};
}

std::map<std::pair<int, int>, CellAccuracy> subpop_breakdown(std::span<const int> predictions,
                                                             std::span<const int> labels,
                                                             std::span<const int> attrs) {
    if (predictions.size() != labels.size()) {
        throw InvalidInputError("subpop_breakdown: prediction/label count mismatch");
    }
    if (attrs.size() != labels.size() ||
        std::any_of(attrs.begin(), attrs.end(), [](int a) { return a < 0; })) {
        throw InvalidInputError("subpop_breakdown: every example needs an attribute");
    }
    std::map<std::pair<int, int>, std::pair<std::size_t, std::size_t>> tally;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& [hits, count] = tally[{labels[i], attrs[i]}];
        hits += predictions[i] == labels[i] ? 1 : 0;
        count += 1;
    }
    std::map<std::pair<int, int>, CellAccuracy> out;
    for (const auto& [cell, t] : tally) {
        out[cell] = {static_cast<double>(t.first) / static_cast<double>(t.second), t.second};
    }
    return out;
}

}  // namespace cotrainlab::diagnostics
