#pragma once

// Generators and independent reference implementations shared by the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eaml/dataset.hpp"
#include "eaml/gbm.hpp"
#include "eaml/rules.hpp"
#include "eaml/sparse_linear.hpp"

namespace testing_support {

using namespace eaml;

/// n rows of p_num standard-normal and p_cat three-level features; the
/// outcome follows a logistic model on the first few columns.
inline Dataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t p_num, std::size_t p_cat,
                              double missing_rate = 0.0) {
    std::vector<FeatureSpec> schema;
    for (std::size_t j = 0; j < p_num; ++j) {
        schema.push_back(FeatureSpec::numeric("x" + std::to_string(j)));
    }
    for (std::size_t j = 0; j < p_cat; ++j) {
        schema.push_back(FeatureSpec::categorical("c" + std::to_string(j), {"a", "b", "c"}));
    }
    Dataset d(schema);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> level(0, 2);
    std::vector<double> row(schema.size());
    for (std::size_t i = 0; i < n; ++i) {
        double eta = -0.5;
        for (std::size_t j = 0; j < p_num; ++j) {
            row[j] = z(rng);
            if (j < 3) {
                eta += (j % 2 == 0 ? 1.0 : -0.7) * row[j];
            }
        }
        for (std::size_t j = 0; j < p_cat; ++j) {
            const int l = level(rng);
            row[p_num + j] = l;
            if (j == 0) {
                eta += l == 2 ? 0.8 : 0.0;
            }
        }
        for (std::size_t j = 0; j < schema.size(); ++j) {
            if (missing_rate > 0.0 && u(rng) < missing_rate) {
                row[j] = kMissing;
            }
        }
        const int y = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
        d.add_row(row, y);
    }
    return d;
}

/// Boolean matrix with independent entries and labels with both classes.
inline std::pair<RuleMatrix, std::vector<int>> random_problem(std::mt19937_64& rng, std::size_t n,
                                                              std::size_t k, double density) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<std::uint32_t>> cols(k);
    std::vector<double> eta(n, -0.3);
    std::vector<double> beta(k);
    for (auto& b : beta) {
        b = 2.0 * u(rng) - 1.0;
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        for (std::size_t i = 0; i < n; ++i) {
            if (u(rng) < density) {
                cols[kk].push_back(static_cast<std::uint32_t>(i));
                eta[i] += beta[kk];
            }
        }
    }
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = u(rng) < 1.0 / (1.0 + std::exp(-eta[i])) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    return {RuleMatrix(n, std::move(cols)), std::move(y)};
}

inline Eigen::MatrixXd dense_design(const RuleMatrix& r) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r.n_rows()),
                                              static_cast<Eigen::Index>(r.n_rules() + 1));
    for (std::size_t i = 0; i < r.n_rows(); ++i) {
        x(static_cast<Eigen::Index>(i), 0) = 1.0;
    }
    for (std::size_t k = 0; k < r.n_rules(); ++k) {
        for (std::uint32_t i : r.column(k)) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k + 1)) = 1.0;
        }
    }
    return x;
}

/// Full-batch Newton for mean logistic loss plus lambda * sum w_k c_k^2.
/// Returns (c0, c_1..c_K).
inline Eigen::VectorXd newton_logistic(const RuleMatrix& r, const std::vector<int>& y, double lambda = 0.0,
                                       const std::vector<double>& w = {}) {
    const auto x = dense_design(r);
    const Eigen::Index p = x.cols();
    const double n = static_cast<double>(r.n_rows());
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd yv(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        yv(i) = y[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd pen = Eigen::VectorXd::Zero(p);
    for (Eigen::Index k = 1; k < p; ++k) {
        pen(k) = 2.0 * lambda * (w.empty() ? 1.0 : w[static_cast<std::size_t>(k - 1)]);
    }
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd eta = x * beta;
        const Eigen::VectorXd prob = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
        const Eigen::VectorXd grad = x.transpose() * (prob - yv) / n + pen.cwiseProduct(beta);
        const Eigen::VectorXd wts = prob.cwiseProduct(Eigen::VectorXd::Ones(x.rows()) - prob);
        Eigen::MatrixXd h = x.transpose() * wts.asDiagonal() * x / n;
        h.diagonal() += pen;
        const Eigen::VectorXd step = h.ldlt().solve(grad);
        beta -= step;
        if (step.cwiseAbs().maxCoeff() < 1e-13) {
            break;
        }
    }
    return beta;
}

/// Mean-loss gradient by direct summation (intercept first).
inline std::vector<double> brute_gradient(const RuleMatrix& r, const std::vector<int>& y, double c0,
                                          const std::vector<double>& c) {
    const std::size_t n = r.n_rows();
    std::vector<double> g(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double eta = c0;
        for (std::size_t k = 0; k < c.size(); ++k) {
            if (r.at(i, k)) {
                eta += c[k];
            }
        }
        const double res = 1.0 / (1.0 + std::exp(-eta)) - y[i];
        g[0] += res;
        for (std::size_t k = 0; k < c.size(); ++k) {
            if (r.at(i, k)) {
                g[k + 1] += res;
            }
        }
    }
    for (auto& v : g) {
        v /= static_cast<double>(n);
    }
    return g;
}

/// Recursive traversal written independently of Tree::leaf_of.
inline double traverse(const Tree& t, std::size_t node, std::span<const double> row) {
    const auto& nd = t.nodes[node];
    if (nd.left < 0) {
        return nd.value;
    }
    bool left = false;
    if (nd.split.kind == FeatureKind::numeric) {
        left = row[nd.split.feature] <= nd.split.threshold;
    } else {
        const int v = static_cast<int>(row[nd.split.feature]);
        left = std::find(nd.split.left_categories.begin(), nd.split.left_categories.end(), v) !=
               nd.split.left_categories.end();
    }
    return traverse(t, static_cast<std::size_t>(left ? nd.left : nd.right), row);
}

inline double traversal_margin(const GbmModel& m, std::span<const double> row) {
    double s = 0.0;
    for (const auto& t : m.trees) {
        s += traverse(t, 0, row);
    }
    return m.base_score + m.shrinkage * s;
}

/// O(n^2) pair count with ties scoring one half.
inline double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) {
            continue;
        }
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) {
                continue;
            }
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

/// Two-sided exact rank-sum p by enumerating every assignment of ranks
/// 1..na+nb to the first sample (no ties).
inline double enumerate_wilcoxon_p(std::size_t na, std::size_t nb, double w) {
    const std::size_t n = na + nb;
    const double mean_u = static_cast<double>(na * nb) / 2.0;
    const double observed = std::abs(w - mean_u);
    std::size_t extreme = 0;
    std::size_t total = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) {
            continue;
        }
        double rank_sum = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            if (mask & (1u << b)) {
                rank_sum += static_cast<double>(b + 1);
            }
        }
        const double u = rank_sum - static_cast<double>(na * (na + 1)) / 2.0;
        ++total;
        if (std::abs(u - mean_u) >= observed - 1e-9) {
            ++extreme;
        }
    }
    return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(total));
}

inline std::vector<double> uniform_weights(std::size_t k) { return std::vector<double>(k, 1.0); }

} // namespace testing_support
