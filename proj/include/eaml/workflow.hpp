#pragma once

// File-level stages shared by the command-line driver: config parsing, model
// documents built from fitted stages, and the manifest-driven full run.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "eaml/dataset.hpp"
#include "eaml/error.hpp"
#include "eaml/evaluation.hpp"
#include "eaml/expert_fit.hpp"
#include "eaml/pipeline.hpp"
#include "eaml/rules.hpp"
#include "eaml/serialization.hpp"
#include "eaml/synthetic.hpp"

namespace eaml {

inline constexpr const char* kOutcomeColumn = "death";

/// Keys absent from `j` keep their defaults.
inline RuleFitConfig rulefit_config_from_json(const Json& j, RuleFitConfig c = {}) {
    if (!j.is_object()) {
        throw UsageError("rulefit config must be a JSON object");
    }
    try {
        auto take = [&](const Json& obj, const char* key, auto& field) {
            if (obj.contains(key)) {
                field = obj.at(key).get<std::decay_t<decltype(field)>>();
            }
        };
        if (j.contains("gbm")) {
            const auto& g = j["gbm"];
            take(g, "n_trees", c.gbm.n_trees);
            take(g, "max_depth", c.gbm.max_depth);
            take(g, "shrinkage", c.gbm.shrinkage);
            take(g, "row_subsample", c.gbm.row_subsample);
            take(g, "col_subsample", c.gbm.col_subsample);
            take(g, "min_leaf", c.gbm.min_leaf);
        }
        take(j, "train_fraction", c.train_fraction);
        take(j, "min_support", c.support.min_support);
        take(j, "max_support", c.support.max_support);
        take(j, "all_nodes", c.all_nodes);
        take(j, "n_lambdas", c.n_lambdas);
        take(j, "min_ratio", c.min_ratio);
        take(j, "patience", c.patience);
        take(j, "tol", c.solver.tol);
        take(j, "max_iter", c.solver.max_iter);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("rulefit config: ") + e.what());
    }
    c.validate();
    return c;
}

inline Json rulefit_config_to_json(const RuleFitConfig& c) {
    return Json{{"gbm",
                 {{"n_trees", c.gbm.n_trees},
                  {"max_depth", c.gbm.max_depth},
                  {"shrinkage", c.gbm.shrinkage},
                  {"row_subsample", c.gbm.row_subsample},
                  {"col_subsample", c.gbm.col_subsample},
                  {"min_leaf", c.gbm.min_leaf},
                  {"seed", c.gbm.seed}}},
                {"train_fraction", c.train_fraction},
                {"min_support", c.support.min_support},
                {"max_support", c.support.max_support},
                {"all_nodes", c.all_nodes},
                {"n_lambdas", c.n_lambdas},
                {"min_ratio", c.min_ratio},
                {"patience", c.patience},
                {"seed", c.seed}};
}

inline ModelDocument rulefit_document(const RuleFitResult& rf, const std::string& outcome, const RuleFitConfig& c) {
    ModelDocument d;
    d.kind = "rulefit";
    d.schema = {outcome, rf.train.features()};
    d.imputation = rf.imputation;
    d.gbm = rf.gbm;
    d.rules = rf.selected;
    d.linear = rf.model;
    d.info = Json{{"config", rulefit_config_to_json(c)},
                  {"lambda", rf.lambda},
                  {"candidates", rf.candidates.size()},
                  {"selected", rf.selected.size()}};
    return d;
}

/// A refit over the rules of `base`, sharing its schema and imputation.
inline ModelDocument refit_document(const ModelDocument& base, std::string kind, LinearRuleModel model, Json info) {
    ModelDocument d;
    d.kind = std::move(kind);
    d.schema = base.schema;
    d.imputation = base.imputation;
    d.rules = base.rules;
    d.linear = std::move(model);
    d.info = std::move(info);
    return d;
}

/// Loads a CSV whose schema comes from `schema_path` (or the sidecar).
inline std::pair<Dataset, SchemaFile> load_dataset(const std::string& csv, std::string schema_path = "",
                                                   std::string outcome = "") {
    if (schema_path.empty()) {
        schema_path = schema_path_for(csv);
    }
    if (!std::filesystem::exists(schema_path)) {
        throw DataError("schema file '" + schema_path + "' not found");
    }
    auto schema = load_schema(schema_path);
    if (!outcome.empty()) {
        schema.outcome = outcome;
    }
    return {load_csv(csv, schema.features, schema.outcome), schema};
}

inline void save_dataset(const std::string& csv, const Dataset& d, const std::string& outcome) {
    save_csv(csv, d, outcome);
    save_schema(schema_path_for(csv), {outcome, d.features()});
}

/// Scores a model document on a dataset after the model's imputation.
inline EvalReport evaluate_document(const ModelDocument& m, const std::string& tag, const Dataset& raw) {
    check_schema_compatible(m.schema.features, raw);
    const auto d = apply_imputation(raw, m.imputation);
    const NamedDataset set{tag, &d};
    return shift_eval(m.kind, m.linear, m.rules, m.schema.features, std::span(&set, 1)).front();
}

inline std::vector<ExportedRule> export_rules(std::span<const Rule> rules, const Dataset& d) {
    const auto r = build_rule_matrix(rules, d);
    std::vector<ExportedRule> out;
    for (std::size_t k = 0; k < rules.size(); ++k) {
        out.push_back({rules[k], static_cast<double>(r.column(k).size()) / static_cast<double>(d.n_rows()),
                       render_rule_card(rules[k], d)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest-driven full run

struct PipelineManifest {
    SyntheticSpec spec = icu_spec(true, 1);
    RuleFitConfig rulefit;
    SimulatedExpertSpec experts;
    int bins = 5;
    double ci = 0.9;
    int max_bin = 1;
    std::vector<double> soft_lambdas = {0.001, 0.003, 0.01, 0.03, 0.1};
    std::vector<double> soft_gammas = {0.0, 1.0, 3.0, 10.0, 30.0};
    std::vector<std::size_t> curve_sizes = {100, 200, 400, 800, 1600, 3200};
    std::size_t curve_subsamples = 10;
    double curve_lambda = 1e-3;
    std::uint64_t seed = 1;
};

/// Every stage seed is derived from `seed` unless given explicitly.
inline PipelineManifest manifest_from_json(const Json& j) {
    if (!j.is_object()) {
        throw UsageError("manifest must be a JSON object");
    }
    PipelineManifest m;
    try {
        m.seed = j.value("seed", m.seed);
        m.spec = synthetic_spec_from_json(j.value("synthetic", Json::object()), icu_spec(true, m.seed));
        m.rulefit.seed = m.seed;
        m.rulefit.gbm.seed = m.seed;
        m.rulefit = rulefit_config_from_json(j.value("rulefit", Json::object()), m.rulefit);
        m.experts.seed = m.seed;
        if (j.contains("experts")) {
            const auto& e = j["experts"];
            m.experts.n_experts = e.value("n_experts", m.experts.n_experts);
            m.experts.noise_sd = e.value("noise_sd", m.experts.noise_sd);
            m.experts.seed = e.value("seed", m.experts.seed);
        }
        m.bins = j.value("bins", m.bins);
        m.ci = j.value("ci", m.ci);
        m.max_bin = j.value("max_bin", m.max_bin);
        m.soft_lambdas = j.value("soft_lambdas", m.soft_lambdas);
        m.soft_gammas = j.value("soft_gammas", m.soft_gammas);
        m.curve_sizes = j.value("curve_sizes", m.curve_sizes);
        m.curve_subsamples = j.value("curve_subsamples", m.curve_subsamples);
        m.curve_lambda = j.value("curve_lambda", m.curve_lambda);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("manifest: ") + e.what());
    }
    m.spec.validate();
    m.experts.validate();
    return m;
}

/// Runs every stage on a generated dataset and writes all artifacts under
/// `out_dir`. Returns the written file names, relative to `out_dir`.
inline std::vector<std::string> run_pipeline(const PipelineManifest& m, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    auto path = [&](const std::string& name) {
        written.push_back(name);
        return (fs::path(out_dir) / name).string();
    };
    auto write_text = [&](const std::string& name, const std::string& text) { detail::write_file(path(name), text); };

    const auto data = generate(m.spec);
    save_dataset(path("train.csv"), data.train, kOutcomeColumn);
    written.push_back("train.csv.schema.json");
    for (const auto& [name, set] : {std::pair{"test_same.csv", &data.test_same},
                                    std::pair{"test_recoded.csv", &data.test_recoded},
                                    std::pair{"test_temporal.csv", &data.test_temporal}}) {
        save_dataset(path(name), *set, kOutcomeColumn);
        written.push_back(std::string(name) + ".schema.json");
    }

    const auto rf = run_rulefit(data.train, m.rulefit);
    const auto base = rulefit_document(rf, kOutcomeColumn, m.rulefit);
    save_model(path("rulefit_model.json"), base);
    {
        std::ostringstream os;
        write_rule_export(os, export_rules(rf.selected, rf.train), rf.train.features());
        write_text("rules.jsonl", os.str());
    }

    const auto ratings = simulate_experts(rf.selected, rf.train, m.spec, m.experts);
    {
        std::ostringstream os;
        write_assessments(os, ratings.assessments);
        write_text("assessments.jsonl", os.str());
    }
    const auto da = analyze_deltas(rf.selected, rf.train, ratings.assessments, m.bins, m.ci);
    {
        std::unordered_map<std::string, std::string> desc;
        for (const auto& r : rf.selected) {
            desc[r.id] = describe_rule(r, rf.train.features());
        }
        std::ostringstream report;
        write_delta_report(report, da.deltas, desc, da.outliers, da.census);
        write_text("delta_report.txt", report.str());
        std::ostringstream table;
        write_delta_table(table, da.deltas);
        write_text("deltas.tsv", table.str());
    }

    const auto ids = ids_of(rf.selected);
    const auto train = labeled_rules(rf.selected, rf.train);
    const auto holdout = labeled_rules(rf.selected, rf.holdout);
    const auto hard = fit_hard_eaml(train.matrix, train.labels, ids, da.deltas, m.max_bin, rf.lambda, m.rulefit.solver);
    const auto hard_doc = refit_document(base, "eaml-hard", hard.model,
                                         Json{{"max_bin", m.max_bin}, {"lambda", rf.lambda},
                                              {"surviving", hard.surviving.size()}});
    save_model(path("eaml_hard_model.json"), hard_doc);

    std::vector<GridPoint> grid;
    for (double l : m.soft_lambdas) {
        for (double g : m.soft_gammas) {
            grid.push_back({l, g, 0});
        }
    }
    const auto soft = select_hyperparams(EamlMode::soft, train, holdout, ids, da.deltas, grid, {},
                                         DeltaSource::binned, m.rulefit.solver);
    {
        std::ostringstream os;
        write_score_table(os, soft);
        write_text("soft_scores.tsv", os.str());
    }
    const auto soft_doc = refit_document(base, "eaml-soft", soft.model,
                                         Json{{"lambda", soft.best.lambda}, {"gamma", soft.best.gamma}});
    save_model(path("eaml_soft_model.json"), soft_doc);

    std::vector<EvalReport> reports;
    for (const auto* doc : {&base, &hard_doc, &soft_doc}) {
        reports.push_back(evaluate_document(*doc, "in_distribution", data.test_same));
        reports.push_back(evaluate_document(*doc, "recoded_shift", data.test_recoded));
        reports.push_back(evaluate_document(*doc, "temporal_shift", data.test_temporal));
    }
    {
        std::ostringstream os;
        write_reports(os, reports);
        write_text("eval.tsv", os.str());
    }

    const auto same = apply_imputation(data.test_same, rf.imputation);
    const auto temporal = apply_imputation(data.test_temporal, rf.imputation);
    const auto same_rules = labeled_rules(rf.selected, same);
    const auto temporal_rules = labeled_rules(rf.selected, temporal);
    const std::vector<NamedRules> tests{{"in_distribution", &same_rules}, {"temporal_shift", &temporal_rules}};
    RuleSubset all{"all", {}};
    RuleSubset filtered{"filtered", {}};
    for (std::size_t k = 0; k < rf.selected.size(); ++k) {
        all.columns.push_back(k);
        if (std::isfinite(hard.model.weights[k])) {
            filtered.columns.push_back(k);
        }
    }
    const std::vector<RuleSubset> subsets{all, filtered};
    std::vector<std::size_t> sizes;
    for (std::size_t s : m.curve_sizes) {
        if (s <= train.labels.size()) {
            sizes.push_back(s);
        }
    }
    const auto curves = learning_curve(train, tests, subsets, sizes, m.curve_subsamples, m.seed,
                                       {m.curve_lambda, m.rulefit.solver});
    {
        std::ostringstream os;
        write_learning_curves(os, curves);
        write_text("learning_curves.tsv", os.str());
    }
    return written;
}

} // namespace eaml
