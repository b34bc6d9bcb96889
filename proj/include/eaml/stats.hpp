#pragma once

// Small numeric helpers shared across modules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace eaml {

inline double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
    if (x > 0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

/// Mean negative log-likelihood of binary labels under logistic margins.
inline double logistic_loss(std::span<const double> margins, std::span<const int> labels) {
    if (margins.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        total += log1p_exp(margins[i]) - labels[i] * margins[i];
    }
    return total / static_cast<double>(margins.size());
}

inline double mean(std::span<const double> xs) {
    if (xs.empty()) {
        return 0.0;
    }
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Population (divide-by-n) standard deviation.
inline double population_stdev(std::span<const double> xs) {
    if (xs.empty()) {
        return 0.0;
    }
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - m) * (x - m);
    }
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

/// Sample (divide-by-(n-1)) standard deviation; 0 for fewer than two values.
inline double sample_stdev(std::span<const double> xs) {
    if (xs.size() < 2) {
        return 0.0;
    }
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - m) * (x - m);
    }
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline double median(std::vector<double> xs) {
    if (xs.empty()) {
        throw std::invalid_argument("median of empty sample");
    }
    const std::size_t mid = xs.size() / 2;
    std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
    const double upper = xs[mid];
    if (xs.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// Ranks 1..n, ties receive the average of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && xs[order[j]] == xs[order[i]]) {
            ++j;
        }
        // positions i..j-1 hold ranks i+1..j
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            ranks[order[k]] = r;
        }
        i = j;
    }
    return ranks;
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" definition).
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) {
        throw std::invalid_argument("quantile of empty sample");
    }
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] + frac * (xs[hi] - xs[lo]);
}

} // namespace eaml
