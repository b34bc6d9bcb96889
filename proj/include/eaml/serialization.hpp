#pragma once

// Text formats for every artifact that crosses a stage boundary: schema
// sidecars, model documents, rule exports, assessment logs, delta reports,
// score tables and synthetic specs.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eaml/dataset.hpp"
#include "eaml/elicitation.hpp"
#include "eaml/error.hpp"
#include "eaml/expert_fit.hpp"
#include "eaml/gbm.hpp"
#include "eaml/rules.hpp"
#include "eaml/sparse_linear.hpp"
#include "eaml/synthetic.hpp"

namespace eaml {

using Json = nlohmann::ordered_json;

inline constexpr const char* kModelFormat = "eaml-model";
inline constexpr int kModelVersion = 1;

namespace detail {

template <class T>
T get_field(const Json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) {
        throw DataError(where + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": field '" + key + "' has the wrong type");
    }
}

inline Json parse_json(const std::string& text, const std::string& where) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << content;
}

// +inf (excluded) and NaN have no JSON literal: excluded weights are written
// as null.
inline Json weight_to_json(double w) { return std::isinf(w) ? Json(nullptr) : Json(w); }
inline double weight_from_json(const Json& j) { return j.is_null() ? kExcluded : j.get<double>(); }

} // namespace detail

// ---------------------------------------------------------------------------
// Schema sidecar

struct SchemaFile {
    std::string outcome;
    std::vector<FeatureSpec> features;
};

inline Json schema_to_json(const SchemaFile& s) {
    Json features = Json::array();
    for (const auto& f : s.features) {
        Json jf;
        jf["name"] = f.name;
        jf["kind"] = f.is_numeric() ? "numeric" : "categorical";
        if (!f.is_numeric()) {
            jf["categories"] = f.categories;
        }
        jf["missing_allowed"] = f.missing_allowed;
        features.push_back(jf);
    }
    return Json{{"outcome", s.outcome}, {"features", features}};
}

inline SchemaFile schema_from_json(const Json& j) {
    SchemaFile s;
    s.outcome = detail::get_field<std::string>(j, "outcome", "schema");
    if (!j.contains("features") || !j["features"].is_array()) {
        throw DataError("schema: 'features' must be an array");
    }
    for (const auto& jf : j["features"]) {
        const auto name = detail::get_field<std::string>(jf, "name", "schema feature");
        const auto kind = detail::get_field<std::string>(jf, "kind", "schema feature '" + name + "'");
        const bool missing = jf.value("missing_allowed", true);
        if (kind == "numeric") {
            s.features.push_back(FeatureSpec::numeric(name, missing));
        } else if (kind == "categorical") {
            s.features.push_back(FeatureSpec::categorical(
                name, detail::get_field<std::vector<std::string>>(jf, "categories", "schema feature '" + name + "'"),
                missing));
        } else {
            throw DataError("schema feature '" + name + "': unknown kind '" + kind + "'");
        }
    }
    validate_schema(s.features);
    return s;
}

/// Default sidecar location for a CSV file.
inline std::string schema_path_for(const std::string& csv_path) { return csv_path + ".schema.json"; }

inline SchemaFile load_schema(const std::string& path) {
    return schema_from_json(detail::parse_json(detail::read_file(path), path));
}

inline void save_schema(const std::string& path, const SchemaFile& s) {
    detail::write_file(path, schema_to_json(s).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Imputation, GBM, rules, linear model

inline Json imputation_to_json(const ImputationReport& r) {
    Json cols = Json::array();
    for (const auto& c : r.columns) {
        cols.push_back({{"feature", c.feature}, {"missing_fraction", c.missing_fraction}, {"fill_value", c.fill_value}});
    }
    return cols;
}

inline ImputationReport imputation_from_json(const Json& j) {
    ImputationReport r;
    for (const auto& c : j) {
        r.columns.push_back({detail::get_field<std::string>(c, "feature", "imputation"),
                             detail::get_field<double>(c, "missing_fraction", "imputation"),
                             detail::get_field<double>(c, "fill_value", "imputation")});
    }
    return r;
}

inline Json gbm_to_json(const GbmModel& m) {
    Json trees = Json::array();
    for (const auto& t : m.trees) {
        Json nodes = Json::array();
        for (const auto& n : t.nodes) {
            if (n.is_leaf()) {
                nodes.push_back({{"value", n.value}});
                continue;
            }
            Json jn{{"feature", n.split.feature}, {"left", n.left}, {"right", n.right}};
            if (n.split.kind == FeatureKind::numeric) {
                jn["threshold"] = n.split.threshold;
            } else {
                jn["left_categories"] = n.split.left_categories;
            }
            nodes.push_back(jn);
        }
        trees.push_back(nodes);
    }
    return Json{{"base_score", m.base_score}, {"shrinkage", m.shrinkage}, {"trees", trees}};
}

inline GbmModel gbm_from_json(const Json& j, const std::vector<FeatureSpec>& schema) {
    GbmModel m;
    m.schema = schema;
    m.base_score = detail::get_field<double>(j, "base_score", "gbm");
    m.shrinkage = detail::get_field<double>(j, "shrinkage", "gbm");
    for (const auto& jt : j.at("trees")) {
        Tree t;
        for (const auto& jn : jt) {
            TreeNode n;
            if (jn.contains("value")) {
                n.value = jn["value"].get<double>();
            } else {
                n.left = jn.at("left").get<int>();
                n.right = jn.at("right").get<int>();
                n.split.feature = jn.at("feature").get<std::size_t>();
                if (n.split.feature >= schema.size()) {
                    throw DataError("gbm: split feature out of range");
                }
                n.split.kind = schema[n.split.feature].kind;
                if (n.split.kind == FeatureKind::numeric) {
                    n.split.threshold = jn.at("threshold").get<double>();
                } else {
                    n.split.left_categories = jn.at("left_categories").get<std::vector<int>>();
                }
            }
            t.nodes.push_back(std::move(n));
        }
        m.trees.push_back(std::move(t));
    }
    return m;
}

inline Json condition_to_json(const Condition& c) {
    Json j{{"feature", c.feature_name}};
    switch (c.op) {
    case ConditionOp::le:
        j["op"] = "<=";
        j["threshold"] = c.threshold;
        break;
    case ConditionOp::gt:
        j["op"] = ">";
        j["threshold"] = c.threshold;
        break;
    case ConditionOp::in:
        j["op"] = "in";
        j["categories"] = c.categories;
        break;
    }
    return j;
}

inline Condition condition_from_json(const Json& j, const std::vector<FeatureSpec>& schema) {
    Condition c;
    c.feature_name = detail::get_field<std::string>(j, "feature", "rule condition");
    bool found = false;
    for (std::size_t f = 0; f < schema.size(); ++f) {
        if (schema[f].name == c.feature_name) {
            c.feature = f;
            found = true;
        }
    }
    if (!found) {
        throw DataError("rule condition refers to unknown feature '" + c.feature_name + "'");
    }
    const auto op = detail::get_field<std::string>(j, "op", "rule condition");
    if (op == "<=" || op == ">") {
        c.op = op == "<=" ? ConditionOp::le : ConditionOp::gt;
        c.threshold = detail::get_field<double>(j, "threshold", "rule condition");
    } else if (op == "in") {
        c.op = ConditionOp::in;
        c.categories = detail::get_field<std::vector<int>>(j, "categories", "rule condition");
        c.n_levels = schema[c.feature].categories.size();
    } else {
        throw DataError("rule condition has unknown operator '" + op + "'");
    }
    return c;
}

inline Json rule_to_json(const Rule& r) {
    Json conds = Json::array();
    for (const auto& c : r.conditions) {
        conds.push_back(condition_to_json(c));
    }
    return Json{{"id", r.id}, {"tree", r.tree}, {"node", r.node}, {"leaf_value", r.leaf_value},
                {"conditions", conds}};
}

inline Rule rule_from_json(const Json& j, const std::vector<FeatureSpec>& schema) {
    Rule r;
    r.id = detail::get_field<std::string>(j, "id", "rule");
    r.tree = j.value("tree", std::size_t{0});
    r.node = j.value("node", std::size_t{0});
    r.leaf_value = j.value("leaf_value", 0.0);
    for (const auto& c : j.at("conditions")) {
        r.conditions.push_back(condition_from_json(c, schema));
    }
    if (rule_id(r.conditions) != r.id) {
        throw DataError("rule " + r.id + ": id does not match its conditions");
    }
    return r;
}

inline Json linear_to_json(const LinearRuleModel& m) {
    Json w = Json::array();
    for (double x : m.weights) {
        w.push_back(detail::weight_to_json(x));
    }
    return Json{{"penalty", m.penalty == Penalty::l1 ? "l1" : "l2"},
                {"lambda", m.lambda},
                {"intercept", m.intercept},
                {"rule_ids", m.rule_ids},
                {"coefficients", m.coefficients},
                {"weights", w}};
}

inline LinearRuleModel linear_from_json(const Json& j) {
    LinearRuleModel m;
    const auto pen = detail::get_field<std::string>(j, "penalty", "linear model");
    if (pen != "l1" && pen != "l2") {
        throw DataError("linear model: unknown penalty '" + pen + "'");
    }
    m.penalty = pen == "l1" ? Penalty::l1 : Penalty::l2;
    m.lambda = detail::get_field<double>(j, "lambda", "linear model");
    m.intercept = detail::get_field<double>(j, "intercept", "linear model");
    m.rule_ids = detail::get_field<std::vector<std::string>>(j, "rule_ids", "linear model");
    m.coefficients = detail::get_field<std::vector<double>>(j, "coefficients", "linear model");
    for (const auto& w : j.at("weights")) {
        m.weights.push_back(detail::weight_from_json(w));
    }
    if (m.rule_ids.size() != m.coefficients.size() || m.weights.size() != m.coefficients.size()) {
        throw DataError("linear model: rule ids, coefficients and weights differ in length");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Model document

/// Everything needed to score new data: schema, imputation fills, the rules
/// the linear model is defined over, and optionally the generating GBM.
struct ModelDocument {
    std::string kind; // "rulefit" or "eaml-hard" / "eaml-soft" / "eaml-general"
    SchemaFile schema;
    ImputationReport imputation;
    std::optional<GbmModel> gbm;
    std::vector<Rule> rules; // aligned with linear.rule_ids
    LinearRuleModel linear;
    Json info = Json::object(); // free-form provenance (seeds, selected lambda, ...)
};

inline std::string model_to_string(const ModelDocument& d) {
    Json j;
    j["format"] = kModelFormat;
    j["version"] = kModelVersion;
    j["kind"] = d.kind;
    j["schema"] = schema_to_json(d.schema);
    j["imputation"] = imputation_to_json(d.imputation);
    if (d.gbm) {
        j["gbm"] = gbm_to_json(*d.gbm);
    }
    Json rules = Json::array();
    for (const auto& r : d.rules) {
        rules.push_back(rule_to_json(r));
    }
    j["rules"] = rules;
    j["linear"] = linear_to_json(d.linear);
    j["info"] = d.info;
    return j.dump(1) + "\n";
}

inline ModelDocument model_from_string(const std::string& text, const std::string& where = "model") {
    const Json j = detail::parse_json(text, where);
    if (j.value("format", std::string()) != kModelFormat) {
        throw DataError(where + ": not an " + std::string(kModelFormat) + " document");
    }
    if (j.value("version", 0) != kModelVersion) {
        throw DataError(where + ": unsupported version");
    }
    ModelDocument d;
    d.kind = detail::get_field<std::string>(j, "kind", where);
    d.schema = schema_from_json(j.at("schema"));
    d.imputation = imputation_from_json(j.at("imputation"));
    if (j.contains("gbm")) {
        d.gbm = gbm_from_json(j["gbm"], d.schema.features);
    }
    for (const auto& r : j.at("rules")) {
        d.rules.push_back(rule_from_json(r, d.schema.features));
    }
    d.linear = linear_from_json(j.at("linear"));
    if (d.linear.rule_ids.size() != d.rules.size()) {
        throw DataError(where + ": linear model and rule list differ in length");
    }
    d.info = j.value("info", Json::object());
    return d;
}

inline ModelDocument load_model(const std::string& path) {
    return model_from_string(detail::read_file(path), path);
}

inline void save_model(const std::string& path, const ModelDocument& d) {
    detail::write_file(path, model_to_string(d));
}

// ---------------------------------------------------------------------------
// Rule export: one JSON object per line with the rule, its description, its
// training support and its card.

struct ExportedRule {
    Rule rule;
    double support = 0.0;
    RuleCard card;
};

inline Json card_to_json(const RuleCard& c) {
    Json lines = Json::array();
    for (const auto& l : c.lines) {
        lines.push_back({{"feature", l.feature}, {"subpopulation", l.subpopulation}, {"population", l.population}});
    }
    return Json{{"rule_id", c.rule_id}, {"lines", lines}};
}

inline RuleCard card_from_json(const Json& j) {
    RuleCard c;
    c.rule_id = detail::get_field<std::string>(j, "rule_id", "card");
    for (const auto& l : j.at("lines")) {
        c.lines.push_back({detail::get_field<std::string>(l, "feature", "card line"),
                           detail::get_field<std::string>(l, "subpopulation", "card line"),
                           detail::get_field<std::string>(l, "population", "card line")});
    }
    return c;
}

inline void write_rule_export(std::ostream& out, std::span<const ExportedRule> rules,
                              const std::vector<FeatureSpec>& schema) {
    for (const auto& e : rules) {
        Json j = rule_to_json(e.rule);
        j["description"] = describe_rule(e.rule, schema);
        j["support"] = e.support;
        j["card"] = card_to_json(e.card);
        out << j.dump() << '\n';
    }
}

inline std::vector<ExportedRule> read_rule_export(std::istream& in, const std::vector<FeatureSpec>& schema) {
    std::vector<ExportedRule> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) {
            continue;
        }
        const Json j = detail::parse_json(line, "rule export line " + std::to_string(lineno));
        ExportedRule e;
        e.rule = rule_from_json(j, schema);
        e.support = j.value("support", 0.0);
        e.card = card_from_json(j.at("card"));
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Assessments

inline Json assessment_to_json(const ExpertAssessment& a) {
    return Json{{"expert_id", a.expert_id}, {"rule_id", a.rule_id}, {"rating", a.rating},
                {"elapsed_ms", a.elapsed_ms}, {"timestamp", a.timestamp}};
}

inline ExpertAssessment assessment_from_json(const Json& j) {
    ExpertAssessment a;
    a.expert_id = detail::get_field<std::string>(j, "expert_id", "assessment");
    a.rule_id = detail::get_field<std::string>(j, "rule_id", "assessment");
    a.rating = detail::get_field<int>(j, "rating", "assessment");
    a.elapsed_ms = j.value("elapsed_ms", std::int64_t{0});
    a.timestamp = j.value("timestamp", std::string());
    return a;
}

inline void write_assessments(std::ostream& out, std::span<const ExpertAssessment> records) {
    for (const auto& a : records) {
        out << assessment_to_json(a).dump() << '\n';
    }
}

inline std::vector<ExpertAssessment> read_assessments(std::istream& in) {
    std::vector<ExpertAssessment> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) {
            continue;
        }
        out.push_back(assessment_from_json(detail::parse_json(line, "assessment line " + std::to_string(lineno))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Delta report

/// Ranked table (most negative delta first) followed by the outlier tails and
/// the bin census.
inline void write_delta_report(std::ostream& out, std::span<const DeltaRanking> deltas,
                               const std::unordered_map<std::string, std::string>& descriptions,
                               const OutlierRules& outliers, std::span<const std::size_t> census) {
    auto row = [&](const DeltaRanking& d) {
        auto it = descriptions.find(d.rule_id);
        out << d.rule_id << '\t' << (it == descriptions.end() ? "" : it->second) << '\t'
            << detail::format_double(d.delta) << '\t' << d.abs_bin << '\t' << detail::format_double(d.empirical_risk)
            << '\t' << detail::format_double(d.mean_rating) << '\t' << detail::format_double(d.stdev) << '\t'
            << detail::format_double(d.rank_e) << '\t' << detail::format_double(d.rank_p) << '\n';
    };
    const char* header = "rule_id\trule\tdelta\tabs_bin\tempirical_risk\tmean_rating\tstdev\trank_e\trank_p\n";
    out << "# delta ranking\n" << header;
    std::vector<DeltaRanking> sorted(deltas.begin(), deltas.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const DeltaRanking& a, const DeltaRanking& b) { return a.delta < b.delta; });
    for (const auto& d : sorted) {
        row(d);
    }
    out << "# experts rank riskier than data (delta <= " << detail::format_double(outliers.lower_quantile)
        << ")\n" << header;
    for (const auto& d : outliers.low) {
        row(d);
    }
    out << "# experts rank safer than data (delta >= " << detail::format_double(outliers.upper_quantile) << ")\n"
        << header;
    for (const auto& d : outliers.high) {
        row(d);
    }
    out << "# abs_bin census\nabs_bin\tn_rules\n";
    for (std::size_t b = 0; b < census.size(); ++b) {
        out << b << '\t' << census[b] << '\n';
    }
}

/// Machine-readable delta table: one row per rule in input order.
inline void write_delta_table(std::ostream& out, std::span<const DeltaRanking> deltas) {
    out << "rule_id\tdelta\tabs_bin\tempirical_risk\tmean_rating\tstdev\trank_e\trank_p\n";
    for (const auto& d : deltas) {
        out << d.rule_id << '\t' << detail::format_double(d.delta) << '\t' << d.abs_bin << '\t'
            << detail::format_double(d.empirical_risk) << '\t' << detail::format_double(d.mean_rating) << '\t'
            << detail::format_double(d.stdev) << '\t' << detail::format_double(d.rank_e) << '\t'
            << detail::format_double(d.rank_p) << '\n';
    }
}

inline std::vector<DeltaRanking> read_delta_table(std::istream& in) {
    std::vector<DeltaRanking> out;
    std::string line;
    std::getline(in, line); // header
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) {
            f.push_back(cell);
        }
        if (f.size() != 8) {
            throw DataError("delta table line " + std::to_string(lineno) + ": expected 8 fields");
        }
        auto num = [&](const std::string& s) {
            auto v = detail::parse_double(s);
            if (!v) {
                throw DataError("delta table line " + std::to_string(lineno) + ": bad number '" + s + "'");
            }
            return *v;
        };
        DeltaRanking d;
        d.rule_id = f[0];
        d.delta = num(f[1]);
        d.abs_bin = static_cast<int>(num(f[2]));
        d.empirical_risk = num(f[3]);
        d.mean_rating = num(f[4]);
        d.stdev = num(f[5]);
        d.rank_e = num(f[6]);
        d.rank_p = num(f[7]);
        out.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Score table of a hyperparameter grid

inline void write_score_table(std::ostream& out, const Selection& s, std::span<const std::string> test_tags = {}) {
    out << "lambda\tgamma\tmax_bin\tnonzero\ttrain_auc\tvalidation_auc";
    for (const auto& t : test_tags) {
        out << '\t' << t << "_auc";
    }
    out << "\tselected\n";
    for (std::size_t g = 0; g < s.table.size(); ++g) {
        const auto& r = s.table[g];
        out << detail::format_double(r.point.lambda) << '\t' << detail::format_double(r.point.gamma) << '\t'
            << r.point.max_bin << '\t' << r.nonzero << '\t' << detail::format_double(r.train_auc) << '\t'
            << detail::format_double(r.validation_auc);
        for (double a : r.test_auc) {
            out << '\t' << detail::format_double(a);
        }
        out << '\t' << (g == s.best_index ? 1 : 0) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic spec

inline Json synthetic_spec_to_json(const SyntheticSpec& s) {
    Json cats = Json::array();
    for (const auto& c : s.categorical) {
        cats.push_back({{"name", c.name}, {"levels", c.levels}, {"probabilities", c.probabilities},
                        {"effects", c.effects}});
    }
    return Json{{"n", s.n},
                {"n_test", s.n_test},
                {"numeric_names", s.numeric_names},
                {"beta", s.beta},
                {"categorical", cats},
                {"intercept", s.intercept},
                {"confounder_prevalence", s.confounder_prevalence},
                {"confounder_effect", s.confounder_effect},
                {"miscode", s.miscode},
                {"miscoded_feature", s.miscoded_feature},
                {"miscoded_value", s.miscoded_value},
                {"miscode_coupling", s.miscode_coupling},
                {"missingness", s.missingness},
                {"missing_feature", s.missing_feature},
                {"missing_rate_confounded", s.missing_rate_confounded},
                {"missing_rate_clean", s.missing_rate_clean},
                {"proxy_feature", s.proxy_feature},
                {"proxy_shift", s.proxy_shift},
                {"recode_feature", s.recode_feature},
                {"recode_scale", s.recode_scale},
                {"recode_offset", s.recode_offset},
                {"temporal_coupling", s.temporal_coupling},
                {"seed", s.seed}};
}

/// Fields absent from `j` keep the values of `base`.
inline SyntheticSpec synthetic_spec_from_json(const Json& j, SyntheticSpec base = icu_spec(true, 0)) {
    if (!j.is_object()) {
        throw DataError("synthetic spec must be a JSON object");
    }
    try {
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) {
                field = j.at(key).get<std::decay_t<decltype(field)>>();
            }
        };
        take("n", base.n);
        take("n_test", base.n_test);
        take("numeric_names", base.numeric_names);
        take("beta", base.beta);
        if (j.contains("categorical")) {
            base.categorical.clear();
            for (const auto& c : j["categorical"]) {
                base.categorical.push_back({c.at("name").get<std::string>(),
                                            c.at("levels").get<std::vector<std::string>>(),
                                            c.at("probabilities").get<std::vector<double>>(),
                                            c.at("effects").get<std::vector<double>>()});
            }
        }
        take("intercept", base.intercept);
        take("confounder_prevalence", base.confounder_prevalence);
        take("confounder_effect", base.confounder_effect);
        take("miscode", base.miscode);
        take("miscoded_feature", base.miscoded_feature);
        take("miscoded_value", base.miscoded_value);
        take("miscode_coupling", base.miscode_coupling);
        take("missingness", base.missingness);
        take("missing_feature", base.missing_feature);
        take("missing_rate_confounded", base.missing_rate_confounded);
        take("missing_rate_clean", base.missing_rate_clean);
        take("proxy_feature", base.proxy_feature);
        take("proxy_shift", base.proxy_shift);
        take("recode_feature", base.recode_feature);
        take("recode_scale", base.recode_scale);
        take("recode_offset", base.recode_offset);
        take("temporal_coupling", base.temporal_coupling);
        take("seed", base.seed);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("synthetic spec: ") + e.what());
    }
    base.validate();
    return base;
}

} // namespace eaml
