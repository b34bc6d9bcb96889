#pragma once

// Conversion of boosted trees into conjunctive rules, the Boolean case x rule
// matrix, and the subpopulation/population "rule card" shown to raters.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eaml/dataset.hpp"
#include "eaml/error.hpp"
#include "eaml/gbm.hpp"
#include "eaml/stats.hpp"

namespace eaml {

enum class ConditionOp { le, gt, in };

struct Condition {
    std::size_t feature = 0;
    std::string feature_name;
    ConditionOp op = ConditionOp::le;
    double threshold = 0.0;        // le / gt
    std::vector<int> categories;   // in: sorted category indices
    std::size_t n_levels = 0;      // in: number of levels in the feature's schema

    /// Missing values fail every condition.
    bool holds(double v) const {
        if (is_missing(v)) {
            return false;
        }
        switch (op) {
        case ConditionOp::le:
            return v <= threshold;
        case ConditionOp::gt:
            return v > threshold;
        case ConditionOp::in:
            if (v < 0 || v >= static_cast<double>(n_levels) || v != static_cast<double>(static_cast<int>(v))) {
                throw DataError("unseen category index in feature '" + feature_name + "'");
            }
            return std::binary_search(categories.begin(), categories.end(), static_cast<int>(v));
        }
        return false;
    }

    bool operator==(const Condition&) const = default;
};

struct Rule {
    std::string id;
    std::vector<Condition> conditions; // conjunction
    std::size_t tree = 0;              // provenance: tree index
    std::size_t node = 0;              // provenance: node index within the tree
    double leaf_value = 0.0;           // leaf increment when extracted from a leaf

    bool operator==(const Rule&) const = default;
};

inline bool evaluate_rule(const Rule& rule, std::span<const double> row) {
    for (const auto& c : rule.conditions) {
        if (c.feature >= row.size()) {
            throw DataError("rule references feature index beyond the row");
        }
        if (!c.holds(row[c.feature])) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Simplification, identity and text

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string canonical_text(const std::vector<Condition>& conditions) {
    std::string out;
    for (const auto& c : conditions) {
        out += c.feature_name;
        switch (c.op) {
        case ConditionOp::le:
            out += "<=" + format_double(c.threshold);
            break;
        case ConditionOp::gt:
            out += ">" + format_double(c.threshold);
            break;
        case ConditionOp::in:
            out += " in {";
            for (int k : c.categories) {
                out += std::to_string(k) + ",";
            }
            out += "}";
            break;
        }
        out += ";";
    }
    return out;
}

} // namespace detail

inline std::string rule_id(const std::vector<Condition>& conditions) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "R%016llx",
                  static_cast<unsigned long long>(detail::fnv1a(detail::canonical_text(conditions))));
    return buf;
}

/// Merges a raw root-to-node condition list: tightest numeric bounds, and
/// intersected category sets. Output is ordered by feature index with the
/// lower bound before the upper bound.
inline std::vector<Condition> simplify_conditions(const std::vector<Condition>& raw) {
    std::map<std::size_t, std::vector<const Condition*>> by_feature;
    for (const auto& c : raw) {
        by_feature[c.feature].push_back(&c);
    }
    std::vector<Condition> out;
    for (const auto& [feature, conds] : by_feature) {
        const Condition* lower = nullptr;
        const Condition* upper = nullptr;
        const Condition* set = nullptr;
        std::vector<int> levels;
        for (const Condition* c : conds) {
            if (c->op == ConditionOp::gt) {
                if (!lower || c->threshold > lower->threshold) {
                    lower = c;
                }
            } else if (c->op == ConditionOp::le) {
                if (!upper || c->threshold < upper->threshold) {
                    upper = c;
                }
            } else if (!set) {
                set = c;
                levels = c->categories;
            } else {
                std::vector<int> both;
                std::set_intersection(levels.begin(), levels.end(), c->categories.begin(),
                                      c->categories.end(), std::back_inserter(both));
                levels = std::move(both);
            }
        }
        if (lower) {
            out.push_back(*lower);
        }
        if (upper) {
            out.push_back(*upper);
        }
        if (set) {
            Condition merged = *set;
            merged.categories = std::move(levels);
            out.push_back(std::move(merged));
        }
    }
    return out;
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    std::string s = buf;
    // Avoid printing "-0.00".
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) {
        s.erase(0, 1);
    }
    return s;
}

/// Human-readable rule text, e.g. "age <= 73.65 & gcs <= 4.00".
inline std::string describe_rule(const Rule& rule, std::span<const FeatureSpec> schema) {
    std::string out;
    for (const auto& c : rule.conditions) {
        if (!out.empty()) {
            out += " & ";
        }
        out += c.feature_name;
        if (c.op == ConditionOp::le) {
            out += " <= " + format_fixed(c.threshold, 2);
        } else if (c.op == ConditionOp::gt) {
            out += " > " + format_fixed(c.threshold, 2);
        } else {
            out += " in {";
            for (std::size_t k = 0; k < c.categories.size(); ++k) {
                const auto level = static_cast<std::size_t>(c.categories[k]);
                out += (k ? "," : "");
                out += c.feature < schema.size() && level < schema[c.feature].categories.size()
                           ? schema[c.feature].categories[level]
                           : std::to_string(level);
            }
            out += "}";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extraction

struct ExtractOptions {
    bool all_nodes = false; // also emit rules for internal (non-root) nodes
};

namespace detail {

inline Condition split_condition(const Split& s, const FeatureSpec& f, bool left) {
    Condition c;
    c.feature = s.feature;
    c.feature_name = f.name;
    if (s.kind == FeatureKind::numeric) {
        c.op = left ? ConditionOp::le : ConditionOp::gt;
        c.threshold = s.threshold;
    } else {
        c.op = ConditionOp::in;
        c.n_levels = f.categories.size();
        if (left) {
            c.categories = s.left_categories;
        } else {
            for (int k = 0; k < static_cast<int>(c.n_levels); ++k) {
                if (!std::binary_search(s.left_categories.begin(), s.left_categories.end(), k)) {
                    c.categories.push_back(k);
                }
            }
        }
    }
    return c;
}

inline void walk_tree(const GbmModel& model, std::size_t tree_index, std::size_t node,
                      std::vector<Condition>& path, bool all_nodes, std::vector<Rule>& out) {
    const auto& tree = model.trees[tree_index];
    const auto& n = tree.nodes[node];
    if (!path.empty() && (n.is_leaf() || all_nodes)) {
        Rule r;
        r.conditions = simplify_conditions(path);
        r.id = rule_id(r.conditions);
        r.tree = tree_index;
        r.node = node;
        r.leaf_value = n.is_leaf() ? n.value : 0.0;
        out.push_back(std::move(r));
    }
    if (n.is_leaf()) {
        return;
    }
    const auto& f = model.schema.at(n.split.feature);
    path.push_back(split_condition(n.split, f, true));
    walk_tree(model, tree_index, static_cast<std::size_t>(n.left), path, all_nodes, out);
    path.back() = split_condition(n.split, f, false);
    walk_tree(model, tree_index, static_cast<std::size_t>(n.right), path, all_nodes, out);
    path.pop_back();
}

} // namespace detail

/// One rule per leaf, in tree order, with provenance and leaf values; no
/// deduplication. Single-leaf trees contribute no rule.
inline std::vector<Rule> extract_leaf_rules(const GbmModel& model) {
    std::vector<Rule> out;
    std::vector<Condition> path;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
        detail::walk_tree(model, t, 0, path, false, out);
    }
    return out;
}

/// Deduplicated rule set (first occurrence kept).
inline std::vector<Rule> extract_rules(const GbmModel& model, const ExtractOptions& options = {}) {
    std::vector<Rule> raw;
    std::vector<Condition> path;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
        detail::walk_tree(model, t, 0, path, options.all_nodes, raw);
    }
    std::vector<Rule> out;
    std::unordered_map<std::string, std::vector<std::size_t>> seen;
    for (auto& r : raw) {
        auto& bucket = seen[r.id];
        const bool duplicate = std::any_of(bucket.begin(), bucket.end(), [&](std::size_t k) {
            return out[k].conditions == r.conditions;
        });
        if (!duplicate) {
            bucket.push_back(out.size());
            out.push_back(std::move(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rule matrix

/// Boolean N x K matrix stored column-wise as sorted lists of matching rows.
class RuleMatrix {
public:
    RuleMatrix() = default;
    RuleMatrix(std::size_t n_rows, std::vector<std::vector<std::uint32_t>> members)
        : n_rows_(n_rows), members_(std::move(members)) {}

    std::size_t n_rows() const noexcept { return n_rows_; }
    std::size_t n_rules() const noexcept { return members_.size(); }

    std::span<const std::uint32_t> column(std::size_t k) const { return members_[k]; }

    bool at(std::size_t i, std::size_t k) const {
        const auto& col = members_[k];
        return std::binary_search(col.begin(), col.end(), static_cast<std::uint32_t>(i));
    }

    double support(std::size_t k) const {
        return n_rows_ == 0 ? 0.0
                            : static_cast<double>(members_[k].size()) / static_cast<double>(n_rows_);
    }

    RuleMatrix select_columns(std::span<const std::size_t> cols) const {
        std::vector<std::vector<std::uint32_t>> m;
        m.reserve(cols.size());
        for (std::size_t k : cols) {
            m.push_back(members_.at(k));
        }
        return {n_rows_, std::move(m)};
    }

    /// Rows are renumbered in the order given.
    RuleMatrix select_rows(std::span<const std::size_t> rows) const {
        std::vector<std::int64_t> new_index(n_rows_, -1);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            new_index[rows[r]] = static_cast<std::int64_t>(r);
        }
        std::vector<std::vector<std::uint32_t>> m(members_.size());
        for (std::size_t k = 0; k < members_.size(); ++k) {
            for (std::uint32_t i : members_[k]) {
                if (new_index[i] >= 0) {
                    m[k].push_back(static_cast<std::uint32_t>(new_index[i]));
                }
            }
            std::sort(m[k].begin(), m[k].end());
        }
        return {rows.size(), std::move(m)};
    }

    bool operator==(const RuleMatrix&) const = default;

private:
    std::size_t n_rows_ = 0;
    std::vector<std::vector<std::uint32_t>> members_;
};

inline RuleMatrix build_rule_matrix(std::span<const Rule> rules, const Dataset& d) {
    std::vector<std::vector<std::uint32_t>> members(rules.size());
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        const auto row = d.row(i);
        for (std::size_t k = 0; k < rules.size(); ++k) {
            if (evaluate_rule(rules[k], row)) {
                members[k].push_back(static_cast<std::uint32_t>(i));
            }
        }
    }
    return {d.n_rows(), std::move(members)};
}

struct SupportBounds {
    double min_support = 0.01;
    double max_support = 0.99;
};

/// Indices of rules whose support lies within [min_support, max_support].
inline std::vector<std::size_t> filter_by_support(const RuleMatrix& m, const SupportBounds& bounds = {}) {
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < m.n_rules(); ++k) {
        const double s = m.support(k);
        if (s >= bounds.min_support && s <= bounds.max_support) {
            keep.push_back(k);
        }
    }
    return keep;
}

/// base + shrinkage * sum of leaf values of firing leaf rules. With leaf rules
/// from extract_leaf_rules this reproduces tree traversal bit for bit.
inline std::vector<double> prediction_via_rules(const GbmModel& model, std::span<const Rule> leaf_rules,
                                                const Dataset& d) {
    std::vector<double> sums(d.n_rows(), 0.0);
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        const auto row = d.row(i);
        for (const auto& r : leaf_rules) {
            if (evaluate_rule(r, row)) {
                sums[i] += r.leaf_value;
            }
        }
    }
    std::vector<double> margins(d.n_rows());
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        margins[i] = model.base_score + model.shrinkage * sums[i];
    }
    return margins;
}

// ---------------------------------------------------------------------------
// Rule cards

struct CardLine {
    std::string feature;
    std::string subpopulation; // "median (min – max)" or "mode (levels)"
    std::string population;

    bool operator==(const CardLine&) const = default;
};

struct RuleCard {
    std::string rule_id;
    std::vector<CardLine> lines; // one per feature used by the rule, in rule order

    bool operator==(const RuleCard&) const = default;
};

inline std::string render_line(const CardLine& line, bool population) {
    return line.feature + ": " + (population ? line.population : line.subpopulation);
}

/// Summary statistics of one feature over a set of rows.
inline std::string summarize_feature(const Dataset& d, std::size_t j, std::span<const std::uint32_t> rows) {
    const auto& f = d.feature(j);
    if (f.is_numeric()) {
        std::vector<double> xs;
        xs.reserve(rows.size());
        for (std::uint32_t i : rows) {
            if (!is_missing(d.at(i, j))) {
                xs.push_back(d.at(i, j));
            }
        }
        if (xs.empty()) {
            return "NA";
        }
        const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        const double lo_v = *lo;
        const double hi_v = *hi;
        return format_fixed(median(std::move(xs)), 2) + " (" + format_fixed(lo_v, 2) + " – " +
               format_fixed(hi_v, 2) + ")";
    }
    std::vector<std::size_t> counts(f.categories.size(), 0);
    for (std::uint32_t i : rows) {
        if (!is_missing(d.at(i, j))) {
            ++counts[static_cast<std::size_t>(d.at(i, j))];
        }
    }
    const auto mode = std::max_element(counts.begin(), counts.end());
    if (*mode == 0) {
        return "NA";
    }
    std::string levels;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] > 0) {
            levels += (levels.empty() ? "" : ",") + f.categories[k];
        }
    }
    return f.categories[static_cast<std::size_t>(mode - counts.begin())] + " (" + levels + ")";
}

inline RuleCard render_rule_card(const Rule& rule, const Dataset& d) {
    std::vector<std::uint32_t> matched;
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        if (evaluate_rule(rule, d.row(i))) {
            matched.push_back(static_cast<std::uint32_t>(i));
        }
    }
    if (matched.empty()) {
        throw DataError("rule " + rule.id + " matches no cases; cannot render a card");
    }
    std::vector<std::uint32_t> everyone(d.n_rows());
    std::iota(everyone.begin(), everyone.end(), std::uint32_t{0});

    RuleCard card;
    card.rule_id = rule.id;
    std::vector<std::size_t> features;
    for (const auto& c : rule.conditions) {
        if (std::find(features.begin(), features.end(), c.feature) == features.end()) {
            features.push_back(c.feature);
        }
    }
    for (std::size_t j : features) {
        card.lines.push_back({d.feature(j).name, summarize_feature(d, j, matched),
                              summarize_feature(d, j, everyone)});
    }
    return card;
}

} // namespace eaml
