#pragma once

// Gradient boosting of shallow least-squares regression trees under the
// binomial logistic loss. Used as the rule generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eaml/dataset.hpp"
#include "eaml/error.hpp"
#include "eaml/stats.hpp"

namespace eaml {

/// Split predicate of an internal node. Rows satisfying it go left.
struct Split {
    std::size_t feature = 0;
    FeatureKind kind = FeatureKind::numeric;
    double threshold = 0.0;             // numeric: x <= threshold
    std::vector<int> left_categories;   // categorical: x in set (sorted)

    bool goes_left(double v) const {
        if (kind == FeatureKind::numeric) {
            return v <= threshold;
        }
        return std::binary_search(left_categories.begin(), left_categories.end(),
                                  static_cast<int>(v));
    }

    bool operator==(const Split&) const = default;
};

struct TreeNode {
    int left = -1;  // child indices into Tree::nodes; -1 on leaves
    int right = -1;
    Split split;
    double value = 0.0; // leaf log-odds increment (before shrinkage)

    bool is_leaf() const noexcept { return left < 0; }
    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    std::vector<TreeNode> nodes; // nodes[0] is the root

    std::size_t leaf_of(std::span<const double> row) const {
        std::size_t k = 0;
        while (!nodes[k].is_leaf()) {
            const auto& n = nodes[k];
            k = static_cast<std::size_t>(n.split.goes_left(row[n.split.feature]) ? n.left : n.right);
        }
        return k;
    }

    double predict(std::span<const double> row) const { return nodes[leaf_of(row)].value; }

    std::size_t n_leaves() const {
        return static_cast<std::size_t>(
            std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
    }

    std::size_t depth() const { return depth_from(0); }

    bool operator==(const Tree&) const = default;

private:
    std::size_t depth_from(std::size_t k) const {
        const auto& n = nodes[k];
        if (n.is_leaf()) {
            return 0;
        }
        return 1 + std::max(depth_from(static_cast<std::size_t>(n.left)),
                            depth_from(static_cast<std::size_t>(n.right)));
    }
};

struct GbmConfig {
    int n_trees = 500;
    int max_depth = 3;
    double shrinkage = 0.05;
    double row_subsample = 0.5;
    double col_subsample = 1.0;
    int min_leaf = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_trees < 1) {
            throw UsageError("gbm: n_trees must be at least 1");
        }
        if (max_depth < 1) {
            throw UsageError("gbm: max_depth must be at least 1");
        }
        if (!(shrinkage > 0.0 && shrinkage <= 1.0)) {
            throw UsageError("gbm: shrinkage must lie in (0, 1]");
        }
        if (!(row_subsample > 0.0 && row_subsample <= 1.0) ||
            !(col_subsample > 0.0 && col_subsample <= 1.0)) {
            throw UsageError("gbm: subsample ratios must lie in (0, 1]");
        }
        if (min_leaf < 1) {
            throw UsageError("gbm: min_leaf must be at least 1");
        }
    }
};

struct GbmModel {
    double base_score = 0.0;
    double shrinkage = 1.0;
    std::vector<Tree> trees;
    std::vector<FeatureSpec> schema;
    std::vector<double> loss_trace; // training loss before round 1 and after every round

    double margin(std::span<const double> row) const {
        double tree_sum = 0.0;
        for (const auto& t : trees) {
            tree_sum += t.predict(row);
        }
        return base_score + shrinkage * tree_sum;
    }
};

inline constexpr double kHessianFloor = 1e-6;

/// Checks that `d` can be scored by a model trained on `schema`.
inline void check_schema_compatible(const std::vector<FeatureSpec>& schema, const Dataset& d) {
    if (schema.size() != d.n_features()) {
        throw DataError("schema mismatch: model has " + std::to_string(schema.size()) +
                        " features, data has " + std::to_string(d.n_features()));
    }
    for (std::size_t j = 0; j < schema.size(); ++j) {
        const auto& a = schema[j];
        const auto& b = d.feature(j);
        if (a.name != b.name || a.kind != b.kind) {
            throw DataError("schema mismatch at feature " + std::to_string(j) + " ('" + a.name +
                            "' vs '" + b.name + "')");
        }
        if (a.kind == FeatureKind::categorical) {
            for (std::size_t k = 0; k < b.categories.size(); ++k) {
                if (k >= a.categories.size() || a.categories[k] != b.categories[k]) {
                    throw DataError("unseen category '" + b.categories[k] + "' in feature '" +
                                    b.name + "'");
                }
            }
        }
    }
}

namespace detail {

struct NodeStats {
    double sum = 0.0;
    std::size_t count = 0;
};

struct SplitCandidate {
    double gain = 0.0;
    bool found = false;
    Split split;
};

inline double ls_score(double sum, std::size_t count) {
    return count == 0 ? 0.0 : sum * sum / static_cast<double>(count);
}

/// Newton step for one leaf, halved until the leaf-local loss does not
/// increase at the given shrinkage.
inline double leaf_newton_value(std::span<const std::size_t> rows, std::span<const double> margins,
                                std::span<const int> labels, double shrinkage) {
    double g = 0.0;
    double h = 0.0;
    for (std::size_t i : rows) {
        const double p = sigmoid(margins[i]);
        g += labels[i] - p;
        h += p * (1.0 - p);
    }
    double value = g / std::max(h, kHessianFloor);
    auto local_loss = [&](double step) {
        double total = 0.0;
        for (std::size_t i : rows) {
            const double m = margins[i] + step;
            total += log1p_exp(m) - labels[i] * m;
        }
        return total;
    };
    const double before = local_loss(0.0);
    for (int attempt = 0; attempt < 60; ++attempt) {
        if (local_loss(shrinkage * value) <= before) {
            return value;
        }
        value *= 0.5;
    }
    return 0.0;
}

} // namespace detail

inline GbmModel fit_gbm(const Dataset& train, const GbmConfig& config) {
    config.validate();
    const std::size_t n = train.n_rows();
    const std::size_t p = train.n_features();
    const std::size_t n_pos = train.positives();
    if (n_pos == 0 || n_pos == n) {
        throw DataError("gbm: training data must contain both outcome classes");
    }
    if (train.has_missing()) {
        throw DataError("gbm: training data has missing values; impute first");
    }
    const auto bag_size = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(config.row_subsample * static_cast<double>(n))));
    const auto min_leaf = static_cast<std::size_t>(config.min_leaf);
    if (bag_size < 2 * min_leaf) {
        throw UsageError("gbm: min_leaf " + std::to_string(min_leaf) +
                         " is unreachable at the root with " + std::to_string(bag_size) +
                         " sampled rows");
    }
    const auto n_cols = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(config.col_subsample * static_cast<double>(p))));

    // Global presort of numeric columns; split search filters by node membership.
    std::vector<std::vector<std::size_t>> sorted(p);
    for (std::size_t j = 0; j < p; ++j) {
        if (!train.feature(j).is_numeric()) {
            continue;
        }
        auto& order = sorted[j];
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return train.at(a, j) < train.at(b, j);
        });
    }

    GbmModel model;
    model.schema = train.features();
    model.shrinkage = config.shrinkage;
    const double rate = static_cast<double>(n_pos) / static_cast<double>(n);
    model.base_score = logit(rate);

    const auto& labels = train.outcomes();
    std::vector<double> margins(n, model.base_score);
    model.loss_trace.push_back(logistic_loss(margins, labels));

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    std::vector<std::size_t> all_cols(p);
    std::iota(all_cols.begin(), all_cols.end(), std::size_t{0});

    std::vector<double> residual(n);
    std::vector<int> node_of(n);        // node index for bag rows, -1 otherwise
    std::vector<int> full_node_of(n);   // node index for every training row

    for (int round = 0; round < config.n_trees; ++round) {
        // Row bag and column sample (partial Fisher-Yates).
        for (std::size_t k = 0; k < bag_size; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, n - 1);
            std::swap(all_rows[k], all_rows[pick(rng)]);
        }
        for (std::size_t k = 0; k < n_cols; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, p - 1);
            std::swap(all_cols[k], all_cols[pick(rng)]);
        }
        std::vector<std::size_t> cols(all_cols.begin(), all_cols.begin() + static_cast<std::ptrdiff_t>(n_cols));
        std::sort(cols.begin(), cols.end());

        for (std::size_t i = 0; i < n; ++i) {
            residual[i] = labels[i] - sigmoid(margins[i]);
        }
        std::fill(node_of.begin(), node_of.end(), -1);
        for (std::size_t k = 0; k < bag_size; ++k) {
            node_of[all_rows[k]] = 0;
        }

        Tree tree;
        tree.nodes.emplace_back();
        std::vector<int> frontier{0};
        for (int depth = 0; depth < config.max_depth && !frontier.empty(); ++depth) {
            // Per-node totals for the frontier.
            std::vector<int> slot(tree.nodes.size(), -1);
            for (std::size_t s = 0; s < frontier.size(); ++s) {
                slot[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);
            }
            std::vector<detail::NodeStats> totals(frontier.size());
            for (std::size_t i = 0; i < n; ++i) {
                if (node_of[i] >= 0 && slot[static_cast<std::size_t>(node_of[i])] >= 0) {
                    auto& t = totals[static_cast<std::size_t>(slot[static_cast<std::size_t>(node_of[i])])];
                    t.sum += residual[i];
                    ++t.count;
                }
            }
            std::vector<detail::SplitCandidate> best(frontier.size());

            for (std::size_t j : cols) {
                const auto& f = train.feature(j);
                if (f.is_numeric()) {
                    std::vector<detail::NodeStats> left(frontier.size());
                    std::vector<double> last_value(frontier.size(), std::numeric_limits<double>::quiet_NaN());
                    for (std::size_t i : sorted[j]) {
                        const int node = node_of[i];
                        if (node < 0) {
                            continue;
                        }
                        const int s_signed = slot[static_cast<std::size_t>(node)];
                        if (s_signed < 0) {
                            continue;
                        }
                        const auto s = static_cast<std::size_t>(s_signed);
                        const double v = train.at(i, j);
                        auto& l = left[s];
                        const auto& t = totals[s];
                        // Boundary between distinct values: evaluate split before adding row i.
                        if (l.count > 0 && v > last_value[s] && l.count >= min_leaf &&
                            t.count - l.count >= min_leaf) {
                            const double gain = detail::ls_score(l.sum, l.count) +
                                                detail::ls_score(t.sum - l.sum, t.count - l.count) -
                                                detail::ls_score(t.sum, t.count);
                            if (gain > best[s].gain + 1e-12) {
                                best[s].gain = gain;
                                best[s].found = true;
                                best[s].split = Split{j, FeatureKind::numeric,
                                                      0.5 * (last_value[s] + v), {}};
                            }
                        }
                        l.sum += residual[i];
                        ++l.count;
                        last_value[s] = v;
                    }
                } else {
                    const std::size_t n_levels = f.categories.size();
                    std::vector<std::vector<detail::NodeStats>> level(
                        frontier.size(), std::vector<detail::NodeStats>(n_levels));
                    for (std::size_t i = 0; i < n; ++i) {
                        const int node = node_of[i];
                        if (node < 0 || slot[static_cast<std::size_t>(node)] < 0) {
                            continue;
                        }
                        auto& c = level[static_cast<std::size_t>(slot[static_cast<std::size_t>(node)])]
                                       [static_cast<std::size_t>(train.at(i, j))];
                        c.sum += residual[i];
                        ++c.count;
                    }
                    for (std::size_t s = 0; s < frontier.size(); ++s) {
                        std::vector<int> present;
                        for (std::size_t c = 0; c < n_levels; ++c) {
                            if (level[s][c].count > 0) {
                                present.push_back(static_cast<int>(c));
                            }
                        }
                        // Order levels by mean residual; contiguous prefixes are the candidates.
                        std::stable_sort(present.begin(), present.end(), [&](int a, int b) {
                            const auto& la = level[s][static_cast<std::size_t>(a)];
                            const auto& lb = level[s][static_cast<std::size_t>(b)];
                            return la.sum / static_cast<double>(la.count) <
                                   lb.sum / static_cast<double>(lb.count);
                        });
                        detail::NodeStats l;
                        const auto& t = totals[s];
                        for (std::size_t k = 0; k + 1 < present.size(); ++k) {
                            const auto& c = level[s][static_cast<std::size_t>(present[k])];
                            l.sum += c.sum;
                            l.count += c.count;
                            if (l.count < min_leaf || t.count - l.count < min_leaf) {
                                continue;
                            }
                            const double gain = detail::ls_score(l.sum, l.count) +
                                                detail::ls_score(t.sum - l.sum, t.count - l.count) -
                                                detail::ls_score(t.sum, t.count);
                            if (gain > best[s].gain + 1e-12) {
                                std::vector<int> set(present.begin(),
                                                     present.begin() + static_cast<std::ptrdiff_t>(k + 1));
                                std::sort(set.begin(), set.end());
                                best[s].gain = gain;
                                best[s].found = true;
                                best[s].split = Split{j, FeatureKind::categorical, 0.0, std::move(set)};
                            }
                        }
                    }
                }
            }

            std::vector<int> next;
            for (std::size_t s = 0; s < frontier.size(); ++s) {
                if (!best[s].found) {
                    continue;
                }
                const auto parent = static_cast<std::size_t>(frontier[s]);
                const int l = static_cast<int>(tree.nodes.size());
                const int r = l + 1;
                tree.nodes[parent].split = best[s].split;
                tree.nodes[parent].left = l;
                tree.nodes[parent].right = r;
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                next.push_back(l);
                next.push_back(r);
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (node_of[i] < 0) {
                    continue;
                }
                const auto& node = tree.nodes[static_cast<std::size_t>(node_of[i])];
                if (!node.is_leaf()) {
                    node_of[i] = node.split.goes_left(train.at(i, node.split.feature)) ? node.left
                                                                                      : node.right;
                }
            }
            frontier = std::move(next);
        }

        // Leaf values from every training row reaching the leaf.
        std::vector<std::vector<std::size_t>> leaf_rows(tree.nodes.size());
        for (std::size_t i = 0; i < n; ++i) {
            leaf_rows[tree.leaf_of(train.row(i))].push_back(i);
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            if (tree.nodes[k].is_leaf()) {
                tree.nodes[k].value =
                    detail::leaf_newton_value(leaf_rows[k], margins, labels, config.shrinkage);
                for (std::size_t i : leaf_rows[k]) {
                    margins[i] += config.shrinkage * tree.nodes[k].value;
                }
            }
        }
        model.trees.push_back(std::move(tree));
        model.loss_trace.push_back(logistic_loss(margins, labels));
    }
    return model;
}

inline std::vector<double> margins_gbm(const GbmModel& model, const Dataset& d) {
    check_schema_compatible(model.schema, d);
    if (d.has_missing()) {
        throw DataError("gbm: data has missing values; impute first");
    }
    std::vector<double> out(d.n_rows());
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        out[i] = model.margin(d.row(i));
    }
    return out;
}

inline std::vector<double> predict_gbm(const GbmModel& model, const Dataset& d) {
    auto m = margins_gbm(model, d);
    for (double& v : m) {
        v = sigmoid(v);
    }
    return m;
}

} // namespace eaml
