#pragma once

// Stage chaining shared by the command-line driver and the experiment
// harness: impute, split, boost, extract and filter rules, select the sparse
// rule model on a holdout, and the expert-augmented refits on top of it.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eaml/dataset.hpp"
#include "eaml/elicitation.hpp"
#include "eaml/error.hpp"
#include "eaml/evaluation.hpp"
#include "eaml/expert_fit.hpp"
#include "eaml/gbm.hpp"
#include "eaml/metrics.hpp"
#include "eaml/rules.hpp"
#include "eaml/sparse_linear.hpp"

namespace eaml {

struct RuleFitConfig {
    GbmConfig gbm;
    double train_fraction = 0.7; // the rest is the holdout used to pick lambda
    SupportBounds support;
    bool all_nodes = false;
    int n_lambdas = 30;
    double min_ratio = 1e-3;
    int patience = 5; // path stops after this many lambdas without holdout improvement; 0 runs it all
    SolverOptions solver;
    std::uint64_t seed = 0; // split seed; the GBM keeps its own

    void validate() const {
        gbm.validate();
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
            throw UsageError("train fraction must lie in (0, 1)");
        }
        if (n_lambdas < 2) {
            throw UsageError("lambda path needs at least two values");
        }
    }
};

struct LambdaScore {
    double lambda = 0.0;
    std::size_t nonzero = 0;
    double train_auc = 0.0;
    double holdout_auc = 0.0;
};

struct RuleFitResult {
    ImputationReport imputation;
    Dataset train;   // imputed
    Dataset holdout; // imputed with the training fills
    GbmModel gbm;
    std::vector<Rule> candidates; // support-filtered rules
    std::vector<Rule> selected;   // nonzero at the chosen lambda
    LinearRuleModel model;        // over `selected`
    double lambda = 0.0;
    std::vector<LambdaScore> path;
};

inline LabeledRules labeled_rules(std::span<const Rule> rules, const Dataset& d) {
    return {build_rule_matrix(rules, d), d.outcomes()};
}

inline std::vector<std::string> ids_of(std::span<const Rule> rules) {
    std::vector<std::string> ids;
    ids.reserve(rules.size());
    for (const auto& r : rules) {
        ids.push_back(r.id);
    }
    return ids;
}

/// Imputation fitted on `data`'s training part; the lambda with the best
/// holdout AUC wins (ties go to the larger lambda).
inline RuleFitResult run_rulefit(const Dataset& data, const RuleFitConfig& config) {
    config.validate();
    RuleFitResult out;
    auto [train_raw, holdout_raw] = stratified_split(data, config.train_fraction, config.seed);
    auto imputed = impute_mean(train_raw);
    out.imputation = imputed.report;
    out.train = std::move(imputed.data);
    out.holdout = apply_imputation(holdout_raw, out.imputation);

    out.gbm = fit_gbm(out.train, config.gbm);
    const auto all_rules = extract_rules(out.gbm, ExtractOptions{config.all_nodes});
    const auto full = build_rule_matrix(all_rules, out.train);
    const auto keep = filter_by_support(full, config.support);
    if (keep.empty()) {
        throw DataError("no rule passes the support filter");
    }
    for (std::size_t k : keep) {
        out.candidates.push_back(all_rules[k]);
    }
    const auto r_train = full.select_columns(keep);
    const auto r_hold = build_rule_matrix(out.candidates, out.holdout);
    const std::vector<double> w(keep.size(), 1.0);

    // Warm-started path from lambda_max down, stopped once the holdout AUC
    // has not improved for `patience` consecutive values.
    const double top = lambda_max(r_train, out.train.outcomes(), w);
    std::vector<LinearRuleModel> path;
    std::size_t best = 0;
    for (int s = 0; s < config.n_lambdas; ++s) {
        const double frac = static_cast<double>(s) / static_cast<double>(config.n_lambdas - 1);
        const double lambda = top * std::pow(config.min_ratio, frac);
        path.push_back(fit_penalized_logistic(r_train, out.train.outcomes(), lambda, w, Penalty::l1, config.solver,
                                              path.empty() ? nullptr : &path.back()));
        const auto& m = path.back();
        LambdaScore score;
        score.lambda = lambda;
        score.nonzero = m.nonzero();
        score.train_auc = auc(predict_linear(m, r_train), out.train.outcomes());
        score.holdout_auc = auc(predict_linear(m, r_hold), out.holdout.outcomes());
        out.path.push_back(score);
        // Strict improvement keeps the larger lambda on ties.
        if (score.holdout_auc > out.path[best].holdout_auc) {
            best = out.path.size() - 1;
        }
        if (config.patience > 0 && out.path.size() - 1 - best >= static_cast<std::size_t>(config.patience)) {
            break;
        }
    }
    const auto& chosen = path[best];
    out.lambda = out.path[best].lambda;
    for (std::size_t k = 0; k < chosen.coefficients.size(); ++k) {
        if (chosen.coefficients[k] != 0.0) {
            out.selected.push_back(out.candidates[k]);
            out.model.coefficients.push_back(chosen.coefficients[k]);
            out.model.weights.push_back(1.0);
        }
    }
    if (out.selected.empty()) {
        throw DataError("the selected rule model has no nonzero coefficient");
    }
    out.model.intercept = chosen.intercept;
    out.model.penalty = Penalty::l1;
    out.model.lambda = out.lambda;
    out.model.loss_trace = chosen.loss_trace;
    out.model.sweeps = chosen.sweeps;
    out.model.rule_ids = ids_of(out.selected);
    return out;
}

// ---------------------------------------------------------------------------
// Elicitation summary for a rule set

struct DeltaAnalysis {
    AggregateResult aggregate;
    std::vector<RuleRisk> risks;
    std::vector<DeltaRanking> deltas;
    OutlierRules outliers;
    std::vector<std::size_t> census;
};

/// Empirical risks come from `d`; every rule must have been rated.
inline DeltaAnalysis analyze_deltas(std::span<const Rule> rules, const Dataset& d,
                                    std::span<const ExpertAssessment> assessments, int bins = 5, double ci = 0.9) {
    if (assessments.empty()) {
        throw DataError("no assessments to analyze");
    }
    DeltaAnalysis out;
    const auto ids = ids_of(rules);
    std::unordered_map<std::string, bool> known;
    for (const auto& id : ids) {
        known[id] = true;
    }
    for (const auto& a : assessments) {
        if (!known.count(a.rule_id)) {
            throw DataError("assessment refers to unknown rule '" + a.rule_id + "'");
        }
    }
    out.aggregate = aggregate(assessments, ids);
    if (!out.aggregate.unassessed.empty()) {
        throw DataError(std::to_string(out.aggregate.unassessed.size()) + " rules were never rated, e.g. '" +
                        out.aggregate.unassessed.front() + "'");
    }
    const auto r = build_rule_matrix(rules, d);
    out.risks = empirical_risks(rules, r, d.outcomes());
    out.deltas = compute_delta_ranking(out.aggregate.summaries, out.risks, bins);
    out.outliers = outlier_rules(out.deltas, ci);
    out.census = bin_census(out.deltas, bins);
    return out;
}

} // namespace eaml
