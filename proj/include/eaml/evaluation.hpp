#pragma once

// Evaluation harnesses: per-dataset reports, learning curves over stratified
// subsamples, and the three-way shift evaluation.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "eaml/dataset.hpp"
#include "eaml/error.hpp"
#include "eaml/expert_fit.hpp"
#include "eaml/gbm.hpp"
#include "eaml/metrics.hpp"
#include "eaml/rules.hpp"
#include "eaml/sparse_linear.hpp"

namespace eaml {

struct EvalReport {
    std::string dataset;
    std::string model;
    double auc = 0.0;
    double balanced_accuracy = 0.0;
    std::size_t n = 0;

    bool operator==(const EvalReport&) const = default;
};

inline EvalReport evaluate_scores(std::string model_tag, std::string dataset_tag,
                                  std::span<const double> probabilities, std::span<const int> labels) {
    if (labels.empty()) {
        throw DataError("cannot evaluate on an empty dataset '" + dataset_tag + "'");
    }
    EvalReport r;
    r.model = std::move(model_tag);
    r.dataset = std::move(dataset_tag);
    r.auc = auc(probabilities, labels);
    r.balanced_accuracy = balanced_accuracy(probabilities, labels);
    r.n = labels.size();
    return r;
}

struct NamedDataset {
    std::string tag;
    const Dataset* data = nullptr;
};

/// One report per evaluation set for a linear model over `rules`.
inline std::vector<EvalReport> shift_eval(const std::string& model_tag, const LinearRuleModel& model,
                                          std::span<const Rule> rules, const std::vector<FeatureSpec>& schema,
                                          std::span<const NamedDataset> sets) {
    if (rules.size() != model.coefficients.size()) {
        throw DataError("model has " + std::to_string(model.coefficients.size()) + " coefficients for " +
                        std::to_string(rules.size()) + " rules");
    }
    std::vector<EvalReport> out;
    for (const auto& s : sets) {
        check_schema_compatible(schema, *s.data);
        const auto r = build_rule_matrix(rules, *s.data);
        out.push_back(evaluate_scores(model_tag, s.tag, predict_linear(model, r), s.data->outcomes()));
    }
    return out;
}

inline std::vector<EvalReport> shift_eval(const std::string& model_tag, const GbmModel& model,
                                          std::span<const NamedDataset> sets) {
    std::vector<EvalReport> out;
    for (const auto& s : sets) {
        out.push_back(evaluate_scores(model_tag, s.tag, predict_gbm(model, *s.data), s.data->outcomes()));
    }
    return out;
}

/// Long-format table: model, dataset, metric, value.
inline void write_reports(std::ostream& out, std::span<const EvalReport> reports) {
    out << "model\tdataset\tmetric\tvalue\n";
    for (const auto& r : reports) {
        out << r.model << '\t' << r.dataset << "\tauc\t" << detail::format_double(r.auc) << '\n';
        out << r.model << '\t' << r.dataset << "\tbalanced_accuracy\t"
            << detail::format_double(r.balanced_accuracy) << '\n';
        out << r.model << '\t' << r.dataset << "\tn\t" << r.n << '\n';
    }
}

// ---------------------------------------------------------------------------
// Learning curves

struct RuleSubset {
    std::string tag;
    std::vector<std::size_t> columns; // into the pool's rule matrix
};

struct NamedRules {
    std::string tag;
    const LabeledRules* data = nullptr;
};

struct CurvePoint {
    std::size_t size = 0;
    double mean_auc = 0.0;
    double sd_auc = 0.0;          // sample standard deviation over subsamples
    std::vector<double> aucs;     // subsample order
};

struct LearningCurve {
    std::string subset;
    std::string test_set;
    std::vector<CurvePoint> points;
};

struct CurveOptions {
    double lambda = 1e-3;
    SolverOptions solver;
};

/// Seed for replicate `s` at size index `a`; shared by all rule subsets so
/// they are compared on identical subsamples.
inline std::uint64_t subsample_seed(std::uint64_t seed, std::size_t a, std::size_t s) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (a + 1)) ^ (0xC2B2AE3D27D4EB4FULL * (s + 1));
    x ^= x >> 31;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    return x;
}

/// For every size, draws S stratified subsamples of the pool, fits an L1
/// logistic model on each rule subset and scores AUC on each test set.
/// Returns one curve per (subset, test set), subsets outermost.
inline std::vector<LearningCurve> learning_curve(const LabeledRules& pool, std::span<const NamedRules> tests,
                                                 std::span<const RuleSubset> subsets,
                                                 std::span<const std::size_t> sizes, std::size_t n_subsamples,
                                                 std::uint64_t seed, const CurveOptions& options = {}) {
    if (n_subsamples < 2) {
        throw UsageError("learning curves need at least two subsamples per size");
    }
    if (sizes.empty()) {
        throw UsageError("learning curves need at least one sample size");
    }
    for (std::size_t a = 0; a < sizes.size(); ++a) {
        if (sizes[a] > pool.labels.size()) {
            throw UsageError("sample size " + std::to_string(sizes[a]) + " exceeds pool size " +
                             std::to_string(pool.labels.size()));
        }
        if (a > 0 && sizes[a] <= sizes[a - 1]) {
            throw UsageError("sample sizes must be strictly increasing");
        }
    }
    std::vector<LearningCurve> curves;
    std::vector<std::vector<RuleMatrix>> test_cols(subsets.size());
    for (std::size_t g = 0; g < subsets.size(); ++g) {
        for (const auto& t : tests) {
            test_cols[g].push_back(t.data->matrix.select_columns(subsets[g].columns));
            curves.push_back({subsets[g].tag, t.tag, {}});
        }
    }
    std::vector<RuleMatrix> pool_cols;
    for (const auto& sub : subsets) {
        pool_cols.push_back(pool.matrix.select_columns(sub.columns));
    }
    for (std::size_t a = 0; a < sizes.size(); ++a) {
        std::vector<std::vector<std::vector<double>>> aucs(
            subsets.size(), std::vector<std::vector<double>>(tests.size()));
        for (std::size_t s = 0; s < n_subsamples; ++s) {
            const auto rows = stratified_subsample_rows(pool.labels, sizes[a], subsample_seed(seed, a, s));
            std::vector<int> y;
            y.reserve(rows.size());
            for (std::size_t i : rows) {
                y.push_back(pool.labels[i]);
            }
            for (std::size_t g = 0; g < subsets.size(); ++g) {
                const auto r = pool_cols[g].select_rows(rows);
                const std::vector<double> w(r.n_rules(), 1.0);
                const auto m = fit_penalized_logistic(r, y, options.lambda, w, Penalty::l1, options.solver);
                for (std::size_t t = 0; t < tests.size(); ++t) {
                    aucs[g][t].push_back(auc(predict_linear(m, test_cols[g][t]), tests[t].data->labels));
                }
            }
        }
        for (std::size_t g = 0; g < subsets.size(); ++g) {
            for (std::size_t t = 0; t < tests.size(); ++t) {
                CurvePoint p;
                p.size = sizes[a];
                p.aucs = aucs[g][t];
                p.mean_auc = mean(p.aucs);
                p.sd_auc = sample_stdev(p.aucs);
                curves[g * tests.size() + t].points.push_back(std::move(p));
            }
        }
    }
    return curves;
}

/// Smallest sample size whose mean AUC reaches `fraction` of the curve's
/// maximum mean AUC.
inline std::size_t size_to_reach(const LearningCurve& curve, double fraction) {
    if (curve.points.empty()) {
        throw DataError("empty learning curve");
    }
    double best = -1.0;
    for (const auto& p : curve.points) {
        best = std::max(best, p.mean_auc);
    }
    for (const auto& p : curve.points) {
        if (p.mean_auc >= fraction * best) {
            return p.size;
        }
    }
    return curve.points.back().size;
}

/// size, mean and sd per curve row.
inline void write_learning_curves(std::ostream& out, std::span<const LearningCurve> curves) {
    out << "subset\ttest_set\tsize\tmean_auc\tsd_auc\n";
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            out << c.subset << '\t' << c.test_set << '\t' << p.size << '\t' << detail::format_double(p.mean_auc)
                << '\t' << detail::format_double(p.sd_auc) << '\n';
        }
    }
}

} // namespace eaml
