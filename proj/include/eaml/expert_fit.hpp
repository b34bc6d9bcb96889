#pragma once

// Expert-augmented refits of the rule model.
//
//  * hard: rules whose |delta| bin exceeds a threshold are excluded (infinite
//    penalty); the rest are refitted with a uniform L1 penalty.
//  * soft: weighted ridge with w_k = 1 + gamma |dR_k| / (STDV_k + 4 max STDV).
//  * general: lambda sum_k f(dR_k, STDV_k) |c_k|^m with m in {1, 2}.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eaml/elicitation.hpp"
#include "eaml/error.hpp"
#include "eaml/metrics.hpp"
#include "eaml/sparse_linear.hpp"

namespace eaml {

enum class EamlMode { hard, soft, general };
enum class DeltaSource { binned, raw };
enum class WeightFunction { one, delta_over_stdev, soft };

inline constexpr double kStdevFloor = 1e-6;

/// Rule matrix with labels.
struct LabeledRules {
    RuleMatrix matrix;
    std::vector<int> labels;
};

/// Delta records reordered to follow `rule_ids` (the matrix columns).
inline std::vector<DeltaRanking> align_deltas(std::span<const std::string> rule_ids,
                                              std::span<const DeltaRanking> deltas) {
    std::unordered_map<std::string, const DeltaRanking*> by_id;
    for (const auto& d : deltas) {
        by_id[d.rule_id] = &d;
    }
    std::vector<DeltaRanking> out;
    out.reserve(rule_ids.size());
    for (const auto& id : rule_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw DataError("no delta ranking for rule '" + id + "'");
        }
        out.push_back(*it->second);
    }
    return out;
}

inline double delta_magnitude(const DeltaRanking& d, DeltaSource source) {
    return source == DeltaSource::binned ? static_cast<double>(d.abs_bin) : std::abs(d.delta);
}

// ---------------------------------------------------------------------------
// Hard

struct HardEamlFit {
    LinearRuleModel model;               // dropped rules carry weight +inf and coefficient 0
    std::vector<std::string> surviving;  // rule ids with abs_bin <= max_bin
};

inline std::vector<double> hard_weights(std::span<const DeltaRanking> aligned, int max_bin) {
    std::vector<double> w(aligned.size());
    for (std::size_t k = 0; k < aligned.size(); ++k) {
        w[k] = aligned[k].abs_bin <= max_bin ? 1.0 : kExcluded;
    }
    return w;
}

inline HardEamlFit fit_hard_eaml(const RuleMatrix& r, std::span<const int> y,
                                 std::span<const std::string> rule_ids,
                                 std::span<const DeltaRanking> deltas, int max_bin, double lambda,
                                 const SolverOptions& options = {}) {
    if (rule_ids.size() != r.n_rules()) {
        throw DataError("rule id count does not match rule matrix columns");
    }
    const auto aligned = align_deltas(rule_ids, deltas);
    auto w = hard_weights(aligned, max_bin);
    HardEamlFit out;
    for (std::size_t k = 0; k < aligned.size(); ++k) {
        if (!std::isinf(w[k])) {
            out.surviving.push_back(rule_ids[k]);
        }
    }
    if (out.surviving.empty()) {
        throw DataError("hard EAML: no rule has a delta bin <= " + std::to_string(max_bin));
    }
    out.model = fit_penalized_logistic(r, y, lambda, w, Penalty::l1, options);
    out.model.rule_ids.assign(rule_ids.begin(), rule_ids.end());
    return out;
}

// ---------------------------------------------------------------------------
// Soft

/// w_k = 1 + gamma |dR_k| / (STDV_k + 4 M), M = max_k STDV_k; with M = 0 the
/// denominator is dropped.
inline std::vector<double> soft_penalty_weights(std::span<const DeltaRanking> aligned, double gamma,
                                                DeltaSource source = DeltaSource::binned) {
    if (!(gamma >= 0.0)) {
        throw UsageError("gamma must be non-negative");
    }
    double max_sd = 0.0;
    for (const auto& d : aligned) {
        max_sd = std::max(max_sd, d.stdev);
    }
    std::vector<double> w(aligned.size());
    for (std::size_t k = 0; k < aligned.size(); ++k) {
        const double mag = delta_magnitude(aligned[k], source);
        w[k] = max_sd > 0.0 ? 1.0 + gamma * mag / (aligned[k].stdev + 4.0 * max_sd) : 1.0 + gamma * mag;
    }
    return w;
}

inline LinearRuleModel fit_soft_eaml(const RuleMatrix& r, std::span<const int> y,
                                     std::span<const std::string> rule_ids,
                                     std::span<const DeltaRanking> deltas, double lambda, double gamma,
                                     DeltaSource source = DeltaSource::binned,
                                     const SolverOptions& options = {},
                                     const LinearRuleModel* warm_start = nullptr) {
    if (rule_ids.size() != r.n_rules()) {
        throw DataError("rule id count does not match rule matrix columns");
    }
    const auto aligned = align_deltas(rule_ids, deltas);
    const auto w = soft_penalty_weights(aligned, gamma, source);
    auto m = fit_penalized_logistic(r, y, lambda, w, Penalty::l2, options, warm_start);
    m.rule_ids.assign(rule_ids.begin(), rule_ids.end());
    return m;
}

// ---------------------------------------------------------------------------
// General

inline std::vector<double> general_weights(std::span<const DeltaRanking> aligned, WeightFunction f,
                                           double gamma = 0.0, DeltaSource source = DeltaSource::binned) {
    std::vector<double> w(aligned.size(), 1.0);
    if (f == WeightFunction::soft) {
        return soft_penalty_weights(aligned, gamma, source);
    }
    if (f == WeightFunction::delta_over_stdev) {
        for (std::size_t k = 0; k < aligned.size(); ++k) {
            w[k] = delta_magnitude(aligned[k], source) / std::max(aligned[k].stdev, kStdevFloor);
        }
    }
    for (std::size_t k = 0; k < aligned.size(); ++k) {
        if (!std::isfinite(w[k]) || w[k] < 0.0) {
            throw DataError("penalty weight for rule '" + aligned[k].rule_id + "' is undefined");
        }
    }
    return w;
}

inline LinearRuleModel fit_general_eaml(const RuleMatrix& r, std::span<const int> y,
                                        std::span<const std::string> rule_ids,
                                        std::span<const DeltaRanking> deltas, double lambda,
                                        WeightFunction f, int norm, double gamma = 0.0,
                                        DeltaSource source = DeltaSource::binned,
                                        const SolverOptions& options = {}) {
    if (norm != 1 && norm != 2) {
        throw UsageError("norm must be 1 or 2");
    }
    if (rule_ids.size() != r.n_rules()) {
        throw DataError("rule id count does not match rule matrix columns");
    }
    const auto aligned = align_deltas(rule_ids, deltas);
    const auto w = general_weights(aligned, f, gamma, source);
    auto m = fit_penalized_logistic(r, y, lambda, w, norm == 1 ? Penalty::l1 : Penalty::l2, options);
    m.rule_ids.assign(rule_ids.begin(), rule_ids.end());
    return m;
}

// ---------------------------------------------------------------------------
// Hyperparameter selection on an independent validation set

struct GridPoint {
    double lambda = 0.0;
    double gamma = 0.0; // soft mode
    int max_bin = 0;    // hard mode
};

struct GridScore {
    GridPoint point;
    double train_auc = 0.0;
    double validation_auc = 0.0;
    std::vector<double> test_auc; // one per extra evaluation set
    std::size_t nonzero = 0;
};

struct Selection {
    std::size_t best_index = 0;
    GridPoint best;
    LinearRuleModel model;
    std::vector<GridScore> table; // grid order
};

namespace detail {

// Prefer the higher validation AUC; on ties the smaller model: larger
// lambda, then larger gamma (soft) or smaller max_bin (hard).
inline bool better_choice(EamlMode mode, const GridScore& a, const GridScore& b) {
    if (a.validation_auc != b.validation_auc) {
        return a.validation_auc > b.validation_auc;
    }
    if (a.point.lambda != b.point.lambda) {
        return a.point.lambda > b.point.lambda;
    }
    if (mode == EamlMode::hard) {
        return a.point.max_bin < b.point.max_bin;
    }
    return a.point.gamma > b.point.gamma;
}

} // namespace detail

/// Fits every grid point on `train`, scores AUC on `validation` (and on any
/// extra `tests`), and returns the best point with its model and the full
/// score table. Soft mode uses gamma; hard mode uses max_bin.
inline Selection select_hyperparams(EamlMode mode, const LabeledRules& train, const LabeledRules& validation,
                                    std::span<const std::string> rule_ids,
                                    std::span<const DeltaRanking> deltas, std::span<const GridPoint> grid,
                                    std::span<const LabeledRules> tests = {},
                                    DeltaSource source = DeltaSource::binned,
                                    const SolverOptions& options = {}) {
    if (grid.empty()) {
        throw UsageError("hyperparameter grid is empty");
    }
    if (mode == EamlMode::general) {
        throw UsageError("selection supports hard and soft modes");
    }
    Selection out;
    std::vector<LinearRuleModel> models;
    for (const auto& point : grid) {
        LinearRuleModel m = mode == EamlMode::soft
                                ? fit_soft_eaml(train.matrix, train.labels, rule_ids, deltas, point.lambda,
                                                point.gamma, source, options)
                                : fit_hard_eaml(train.matrix, train.labels, rule_ids, deltas, point.max_bin,
                                                point.lambda, options)
                                      .model;
        GridScore s;
        s.point = point;
        s.train_auc = auc(predict_linear(m, train.matrix), train.labels);
        s.validation_auc = auc(predict_linear(m, validation.matrix), validation.labels);
        for (const auto& t : tests) {
            s.test_auc.push_back(auc(predict_linear(m, t.matrix), t.labels));
        }
        s.nonzero = m.nonzero();
        out.table.push_back(s);
        models.push_back(std::move(m));
    }
    for (std::size_t g = 1; g < out.table.size(); ++g) {
        if (detail::better_choice(mode, out.table[g], out.table[out.best_index])) {
            out.best_index = g;
        }
    }
    out.best = out.table[out.best_index].point;
    out.model = std::move(models[out.best_index]);
    return out;
}

} // namespace eaml
