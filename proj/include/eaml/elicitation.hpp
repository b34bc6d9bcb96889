#pragma once

// Expert ratings -> per-rule summaries, empirical risks, the two rankings and
// their signed difference, outlier tails, and the quintile calibration table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eaml/error.hpp"
#include "eaml/rules.hpp"
#include "eaml/stats.hpp"

namespace eaml {

inline constexpr int kMinRating = 1;
inline constexpr int kMaxRating = 5;

/// Labels of the five-point scale, indexed by rating - 1.
inline constexpr const char* kRatingLabels[] = {
    "highly decrease", "moderately decrease", "no effect", "moderately increase", "highly increase"};

struct ExpertAssessment {
    std::string expert_id;
    std::string rule_id;
    int rating = 3;
    std::int64_t elapsed_ms = 0;
    std::string timestamp;

    bool operator==(const ExpertAssessment&) const = default;
};

struct AssessmentSummary {
    std::string rule_id;
    std::size_t n_raters = 0;
    double mean_rating = 0.0; // R_k
    double stdev = 0.0;       // STDV_k, population standard deviation

    bool operator==(const AssessmentSummary&) const = default;
};

struct AggregateResult {
    std::vector<AssessmentSummary> summaries;
    std::vector<std::string> unassessed; // requested rules without any rating
};

/// Per-rule mean and population standard deviation of ratings. When
/// `rule_order` is given, summaries follow it and rules without ratings are
/// reported; otherwise rules appear in order of first assessment.
inline AggregateResult aggregate(std::span<const ExpertAssessment> assessments,
                                 std::span<const std::string> rule_order = {}) {
    std::set<std::pair<std::string, std::string>> seen;
    std::unordered_map<std::string, std::vector<double>> ratings;
    std::vector<std::string> first_seen;
    for (const auto& a : assessments) {
        if (a.rating < kMinRating || a.rating > kMaxRating) {
            throw DataError("rating " + std::to_string(a.rating) + " from expert '" + a.expert_id +
                            "' is outside 1..5");
        }
        if (!seen.emplace(a.expert_id, a.rule_id).second) {
            throw DataError("duplicate assessment of rule '" + a.rule_id + "' by expert '" +
                            a.expert_id + "'");
        }
        auto [it, inserted] = ratings.try_emplace(a.rule_id);
        if (inserted) {
            first_seen.push_back(a.rule_id);
        }
        it->second.push_back(static_cast<double>(a.rating));
    }
    AggregateResult out;
    const bool ordered = !rule_order.empty();
    const auto& order = ordered ? std::vector<std::string>(rule_order.begin(), rule_order.end()) : first_seen;
    for (const auto& id : order) {
        auto it = ratings.find(id);
        if (it == ratings.end()) {
            out.unassessed.push_back(id);
            continue;
        }
        out.summaries.push_back({id, it->second.size(), mean(it->second), population_stdev(it->second)});
    }
    return out;
}

/// Event rate among the cases matched by rule column k.
inline double empirical_risk(const RuleMatrix& r, std::size_t k, std::span<const int> y) {
    const auto rows = r.column(k);
    if (rows.empty()) {
        throw DataError("empirical risk of a rule with zero support");
    }
    std::size_t events = 0;
    for (std::uint32_t i : rows) {
        events += static_cast<std::size_t>(y[i]);
    }
    return static_cast<double>(events) / static_cast<double>(rows.size());
}

struct RuleRisk {
    std::string rule_id;
    double risk = 0.0;
};

inline std::vector<RuleRisk> empirical_risks(std::span<const Rule> rules, const RuleMatrix& r,
                                             std::span<const int> y) {
    if (rules.size() != r.n_rules()) {
        throw DataError("rule list and rule matrix disagree on rule count");
    }
    std::vector<RuleRisk> out;
    out.reserve(rules.size());
    for (std::size_t k = 0; k < rules.size(); ++k) {
        out.push_back({rules[k].id, empirical_risk(r, k, y)});
    }
    return out;
}

struct DeltaRanking {
    std::string rule_id;
    double empirical_risk = 0.0;
    double mean_rating = 0.0;
    double stdev = 0.0;
    double rank_e = 0.0;
    double rank_p = 0.0;
    double delta = 0.0; // rank_e - rank_p; negative when experts overestimate risk
    int abs_bin = 0;    // equal-width bin of |delta| over [0, max |delta|]

    bool operator==(const DeltaRanking&) const = default;
};

/// Equal-width binning of |delta| into `bins` labels 0..bins-1.
inline int delta_bin(double abs_delta, double max_abs_delta, int bins) {
    if (max_abs_delta <= 0.0) {
        return 0;
    }
    const int b = static_cast<int>(std::floor(abs_delta / max_abs_delta * bins));
    return std::clamp(b, 0, bins - 1);
}

/// Ranks rules by empirical risk (rank_e) and by mean rating (rank_p), both
/// ascending with average ties, in the order of `summaries`.
inline std::vector<DeltaRanking> compute_delta_ranking(std::span<const AssessmentSummary> summaries,
                                                       std::span<const RuleRisk> risks, int bins = 5) {
    if (bins < 2) {
        throw UsageError("delta ranking needs at least two bins");
    }
    std::unordered_map<std::string, double> risk_of;
    for (const auto& r : risks) {
        if (!risk_of.emplace(r.rule_id, r.risk).second) {
            throw DataError("rule '" + r.rule_id + "' has two empirical risks");
        }
    }
    if (risk_of.size() != summaries.size()) {
        throw DataError("rule sets differ: " + std::to_string(summaries.size()) + " assessed rules, " +
                        std::to_string(risk_of.size()) + " rules with empirical risk");
    }
    std::vector<double> empirical(summaries.size());
    std::vector<double> perceived(summaries.size());
    for (std::size_t k = 0; k < summaries.size(); ++k) {
        auto it = risk_of.find(summaries[k].rule_id);
        if (it == risk_of.end()) {
            throw DataError("rule '" + summaries[k].rule_id + "' has no empirical risk");
        }
        empirical[k] = it->second;
        perceived[k] = summaries[k].mean_rating;
    }
    const auto rank_e = average_ranks(empirical);
    const auto rank_p = average_ranks(perceived);
    std::vector<DeltaRanking> out(summaries.size());
    double max_abs = 0.0;
    for (std::size_t k = 0; k < summaries.size(); ++k) {
        auto& d = out[k];
        d.rule_id = summaries[k].rule_id;
        d.empirical_risk = empirical[k];
        d.mean_rating = perceived[k];
        d.stdev = summaries[k].stdev;
        d.rank_e = rank_e[k];
        d.rank_p = rank_p[k];
        d.delta = rank_e[k] - rank_p[k];
        max_abs = std::max(max_abs, std::abs(d.delta));
    }
    for (auto& d : out) {
        d.abs_bin = delta_bin(std::abs(d.delta), max_abs, bins);
    }
    return out;
}

/// Histogram of abs_bin labels.
inline std::vector<std::size_t> bin_census(std::span<const DeltaRanking> deltas, int bins) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (const auto& d : deltas) {
        ++counts.at(static_cast<std::size_t>(d.abs_bin));
    }
    return counts;
}

struct OutlierRules {
    std::vector<DeltaRanking> low;  // experts rank the rule riskier than the data does
    std::vector<DeltaRanking> high; // experts rank the rule safer than the data does
    double lower_quantile = 0.0;
    double upper_quantile = 0.0;
};

/// Rules on or beyond the (1-ci)/2 and (1+ci)/2 empirical quantiles of the
/// delta distribution, excluding rules at the median. Each tail is sorted
/// by |delta| descending.
inline OutlierRules outlier_rules(std::span<const DeltaRanking> deltas, double ci = 0.90) {
    if (!(ci > 0.0 && ci < 1.0)) {
        throw UsageError("confidence level must lie in (0, 1)");
    }
    OutlierRules out;
    if (deltas.empty()) {
        return out;
    }
    std::vector<double> values;
    values.reserve(deltas.size());
    for (const auto& d : deltas) {
        values.push_back(d.delta);
    }
    out.lower_quantile = quantile(values, (1.0 - ci) / 2.0);
    out.upper_quantile = quantile(values, (1.0 + ci) / 2.0);
    const double mid = quantile(values, 0.5);
    for (const auto& d : deltas) {
        if (d.delta <= out.lower_quantile && d.delta < mid) {
            out.low.push_back(d);
        } else if (d.delta >= out.upper_quantile && d.delta > mid) {
            out.high.push_back(d);
        }
    }
    auto by_magnitude = [](const DeltaRanking& a, const DeltaRanking& b) {
        return std::abs(a.delta) > std::abs(b.delta);
    };
    std::stable_sort(out.low.begin(), out.low.end(), by_magnitude);
    std::stable_sort(out.high.begin(), out.high.end(), by_magnitude);
    return out;
}

struct CalibrationBin {
    int quintile = 0;        // 1..5, lowest perceived risk first
    std::size_t n_rules = 0;
    double mean_risk = 0.0;
    double half_width = 0.0; // 1.96 x standard error of the mean over rules
};

/// Rules sorted by mean rating and cut into five nearly equal groups (the
/// remainder goes to the lowest groups); mean empirical risk per group.
inline std::vector<CalibrationBin> quintile_calibration(std::span<const AssessmentSummary> summaries,
                                                        std::span<const RuleRisk> risks) {
    if (summaries.size() < 5) {
        throw UsageError("quintile calibration needs at least five rules");
    }
    std::unordered_map<std::string, double> risk_of;
    for (const auto& r : risks) {
        risk_of[r.rule_id] = r.risk;
    }
    std::vector<std::size_t> order(summaries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return summaries[a].mean_rating < summaries[b].mean_rating;
    });
    const std::size_t k = summaries.size();
    const std::size_t base = k / 5;
    const std::size_t extra = k % 5;
    std::vector<CalibrationBin> out;
    std::size_t cursor = 0;
    for (int q = 0; q < 5; ++q) {
        const std::size_t size = base + (static_cast<std::size_t>(q) < extra ? 1 : 0);
        std::vector<double> group;
        for (std::size_t s = 0; s < size; ++s, ++cursor) {
            const auto& id = summaries[order[cursor]].rule_id;
            auto it = risk_of.find(id);
            if (it == risk_of.end()) {
                throw DataError("rule '" + id + "' has no empirical risk");
            }
            group.push_back(it->second);
        }
        CalibrationBin bin;
        bin.quintile = q + 1;
        bin.n_rules = group.size();
        bin.mean_risk = mean(group);
        bin.half_width = group.size() < 2 ? 0.0
                                          : 1.96 * sample_stdev(group) / std::sqrt(static_cast<double>(group.size()));
        out.push_back(bin);
    }
    return out;
}

} // namespace eaml
