#pragma once

// Classification metrics and the Wilcoxon rank-sum test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "eaml/error.hpp"
#include "eaml/stats.hpp"

namespace eaml {

namespace detail {

inline std::size_t count_positive(std::span<const int> labels) {
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) {
            throw DataError("labels must be 0 or 1");
        }
        pos += static_cast<std::size_t>(y);
    }
    return pos;
}

} // namespace detail

/// Area under the ROC curve from average ranks: the probability that a random
/// positive outscores a random negative, ties counting one half.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw DataError("auc: score and label counts differ");
    }
    const std::size_t pos = detail::count_positive(labels);
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) {
        throw DataError("auc: both classes must be present");
    }
    const auto ranks = average_ranks(scores);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            rank_sum += ranks[i];
        }
    }
    const double p = static_cast<double>(pos);
    const double u = rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(neg));
}

/// Mean of sensitivity and specificity when predicting 1 for score >= threshold.
inline double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                                double threshold = 0.5) {
    if (scores.size() != labels.size()) {
        throw DataError("balanced_accuracy: score and label counts differ");
    }
    const std::size_t pos = detail::count_positive(labels);
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) {
        throw DataError("balanced_accuracy: both classes must be present");
    }
    std::size_t tp = 0;
    std::size_t tn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1 && predicted) {
            ++tp;
        } else if (labels[i] == 0 && !predicted) {
            ++tn;
        }
    }
    return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) +
                  static_cast<double>(tn) / static_cast<double>(neg));
}

struct WilcoxonResult {
    double w = 0.0;       // rank sum of `a` minus na(na+1)/2
    double p_value = 1.0; // two-sided
    bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactLimit = 16;

/// Two-sided exact p-value of the Mann-Whitney statistic without ties.
inline double wilcoxon_exact_p(double w, std::size_t na, std::size_t nb) {
    // counts[m][n][u]: number of arrangements of m a's and n b's with statistic u.
    const std::size_t max_u = na * nb;
    std::vector<std::vector<std::vector<double>>> counts(
        na + 1, std::vector<std::vector<double>>(nb + 1));
    for (std::size_t m = 0; m <= na; ++m) {
        for (std::size_t n = 0; n <= nb; ++n) {
            auto& c = counts[m][n];
            c.assign(m * n + 1, 0.0);
            if (m == 0 || n == 0) {
                c[0] = 1.0;
                continue;
            }
            // The largest observation is either an a (adding n to U) or a b.
            const auto& with_a = counts[m - 1][n];
            const auto& with_b = counts[m][n - 1];
            for (std::size_t u = 0; u <= m * n; ++u) {
                if (u >= n && u - n < with_a.size()) {
                    c[u] += with_a[u - n];
                }
                if (u < with_b.size()) {
                    c[u] += with_b[u];
                }
            }
        }
    }
    const auto& dist = counts[na][nb];
    double total = 0.0;
    for (double c : dist) {
        total += c;
    }
    double lower = 0.0;
    double upper = 0.0;
    for (std::size_t u = 0; u <= max_u; ++u) {
        const double uu = static_cast<double>(u);
        if (uu <= w + 1e-9) {
            lower += dist[u];
        }
        if (uu >= w - 1e-9) {
            upper += dist[u];
        }
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

/// Normal approximation with continuity correction and tie-corrected variance.
/// `tie_term` is sum over tie groups of (t^3 - t).
inline double wilcoxon_normal_p(double w, std::size_t na, std::size_t nb, double tie_term = 0.0) {
    const double m = static_cast<double>(na);
    const double n = static_cast<double>(nb);
    const double total = m + n;
    const double mu = m * n / 2.0;
    const double var = m * n / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if (var <= 0.0) {
        return 1.0;
    }
    const double d = w - mu;
    const double correction = d > 0 ? 0.5 : (d < 0 ? -0.5 : 0.0);
    const double z = (d - correction) / std::sqrt(var);
    return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

/// Wilcoxon rank-sum (Mann-Whitney) test of `a` against `b`. Exact when the
/// combined size is at most 16 and there are no ties; normal approximation
/// otherwise.
inline WilcoxonResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) {
        throw DataError("wilcoxon_rank_sum: both samples must be nonempty");
    }
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto ranks = average_ranks(pooled);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        rank_sum += ranks[i];
    }
    const double na = static_cast<double>(a.size());
    WilcoxonResult out;
    out.w = rank_sum - na * (na + 1.0) / 2.0;

    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) {
            ++j;
        }
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    if (pooled.size() <= kWilcoxonExactLimit && tie_term == 0.0) {
        out.exact = true;
        out.p_value = wilcoxon_exact_p(out.w, a.size(), b.size());
    } else {
        out.p_value = wilcoxon_normal_p(out.w, a.size(), b.size(), tie_term);
    }
    return out;
}

} // namespace eaml
