#pragma once

// Penalized logistic regression over a Boolean rule matrix.
//
// Minimizes (1/N) sum_i [log(1 + exp(eta_i)) - y_i eta_i] + lambda sum_k w_k p(c_k)
// with eta_i = c0 + sum_k c_k r_ik, p(c) = |c| (L1) or c^2 (L2), and an
// unpenalized intercept. Each outer iteration builds the quadratic (IRLS)
// approximation of the loss at the current iterate, solves the penalized
// quadratic by cyclic coordinate descent with an active-set cycle, and takes
// a backtracked step so the penalized objective never increases.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eaml/error.hpp"
#include "eaml/rules.hpp"
#include "eaml/stats.hpp"

namespace eaml {

enum class Penalty { l1, l2 };

inline constexpr double kExcluded = std::numeric_limits<double>::infinity();

// Coordinate descent falls back to an active-set Newton step after this many
// unconverged active sweeps, for active sets up to kMaxNewtonSize.
inline constexpr int kSweepsBeforeNewton = 5;
inline constexpr std::size_t kMaxNewtonSize = 1500;

struct LinearRuleModel {
    double intercept = 0.0;
    std::vector<double> coefficients;
    Penalty penalty = Penalty::l1;
    double lambda = 0.0;
    std::vector<double> weights;     // per-rule penalty weights; +inf excludes a rule
    std::vector<double> loss_trace;  // penalized objective per outer iteration
    std::vector<std::string> rule_ids;
    int sweeps = 0;

    std::size_t nonzero() const {
        return static_cast<std::size_t>(std::count_if(coefficients.begin(), coefficients.end(),
                                                      [](double c) { return c != 0.0; }));
    }
};

struct SolverOptions {
    double tol = 1e-7;      // on the largest curvature-scaled coefficient change
    int max_iter = 10000;   // cap on coordinate sweeps
};

namespace detail {

inline void check_problem(const RuleMatrix& r, std::span<const int> y, double lambda,
                          std::span<const double> weights) {
    if (y.size() != r.n_rows()) {
        throw DataError("label count " + std::to_string(y.size()) + " does not match rule matrix rows " +
                        std::to_string(r.n_rows()));
    }
    if (r.n_rows() == 0) {
        throw DataError("penalized fit on an empty rule matrix");
    }
    if (weights.size() != r.n_rules()) {
        throw UsageError("penalty weight count does not match rule count");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw UsageError("lambda must be finite and non-negative");
    }
    for (double w : weights) {
        if (!(w >= 0.0)) {
            throw UsageError("penalty weights must be non-negative");
        }
    }
    for (int v : y) {
        if (v != 0 && v != 1) {
            throw DataError("labels must be 0 or 1");
        }
    }
}

inline std::vector<double> linear_margins(const RuleMatrix& r, double c0, std::span<const double> c) {
    std::vector<double> eta(r.n_rows(), c0);
    for (std::size_t k = 0; k < r.n_rules(); ++k) {
        if (c[k] != 0.0) {
            for (std::uint32_t i : r.column(k)) {
                eta[i] += c[k];
            }
        }
    }
    return eta;
}

inline double penalty_value(Penalty pen, double lambda, std::span<const double> w, std::span<const double> c) {
    double total = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
        if (std::isinf(w[k]) || w[k] == 0.0 || c[k] == 0.0) {
            continue;
        }
        total += w[k] * (pen == Penalty::l1 ? std::abs(c[k]) : c[k] * c[k]);
    }
    return lambda * total;
}

inline double soft_threshold(double x, double t) {
    if (x > t) {
        return x - t;
    }
    if (x < -t) {
        return x + t;
    }
    return 0.0;
}

} // namespace detail

/// Penalized objective at (c0, c).
inline double penalized_objective(const RuleMatrix& r, std::span<const int> y, double c0,
                                  std::span<const double> c, double lambda,
                                  std::span<const double> weights, Penalty pen) {
    const auto eta = detail::linear_margins(r, c0, c);
    return logistic_loss(eta, y) + detail::penalty_value(pen, lambda, weights, c);
}

/// Gradient of the mean logistic loss: element 0 is the intercept, then one
/// entry per rule.
inline std::vector<double> logistic_gradient(const RuleMatrix& r, std::span<const int> y, double c0,
                                             std::span<const double> c) {
    const auto eta = detail::linear_margins(r, c0, c);
    const double n = static_cast<double>(r.n_rows());
    std::vector<double> residual(r.n_rows());
    double g0 = 0.0;
    for (std::size_t i = 0; i < r.n_rows(); ++i) {
        residual[i] = sigmoid(eta[i]) - y[i];
        g0 += residual[i];
    }
    std::vector<double> g(r.n_rules() + 1);
    g[0] = g0 / n;
    for (std::size_t k = 0; k < r.n_rules(); ++k) {
        double s = 0.0;
        for (std::uint32_t i : r.column(k)) {
            s += residual[i];
        }
        g[k + 1] = s / n;
    }
    return g;
}

inline LinearRuleModel fit_penalized_logistic(const RuleMatrix& r, std::span<const int> y, double lambda,
                                              std::span<const double> weights, Penalty penalty,
                                              const SolverOptions& options = {},
                                              const LinearRuleModel* warm_start = nullptr) {
    detail::check_problem(r, y, lambda, weights);
    const std::size_t n = r.n_rows();
    const std::size_t k_count = r.n_rules();
    const double inv_n = 1.0 / static_cast<double>(n);

    LinearRuleModel m;
    m.penalty = penalty;
    m.lambda = lambda;
    m.weights.assign(weights.begin(), weights.end());
    m.coefficients.assign(k_count, 0.0);

    std::vector<std::size_t> candidates; // columns that may be nonzero
    for (std::size_t k = 0; k < k_count; ++k) {
        if (!std::isinf(weights[k]) && !r.column(k).empty()) {
            candidates.push_back(k);
        }
    }

    std::size_t pos = 0;
    for (int v : y) {
        pos += static_cast<std::size_t>(v);
    }
    if (warm_start && warm_start->coefficients.size() == k_count) {
        m.intercept = warm_start->intercept;
        for (std::size_t k : candidates) {
            m.coefficients[k] = warm_start->coefficients[k];
        }
    } else if (pos > 0 && pos < n) {
        m.intercept = logit(static_cast<double>(pos) * inv_n);
    }

    auto objective = [&](double c0, std::span<const double> c) {
        return penalized_objective(r, y, c0, c, lambda, weights, penalty);
    };

    double current = objective(m.intercept, m.coefficients);
    m.loss_trace.push_back(current);

    std::vector<double> v(n);
    std::vector<double> res(n);
    std::vector<double> next(k_count);
    std::vector<char> active(k_count, 0);
    std::vector<double> col_v(k_count, 0.0);
    // Early quadratic models are solved loosely; the inner tolerance tightens
    // with the outer change down to `tol`.
    double inner_tol = std::max(options.tol, 1e-4);

    while (true) {
        const auto eta = detail::linear_margins(r, m.intercept, m.coefficients);
        double v_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = sigmoid(eta[i]);
            v[i] = std::max(p * (1.0 - p), 1e-5);
            res[i] = (y[i] - p) / v[i];
            v_sum += v[i];
        }
        double b0 = m.intercept;
        next = m.coefficients;
        const double v_mean = v_sum * inv_n;
        for (std::size_t k : candidates) {
            double sv = 0.0;
            for (std::uint32_t i : r.column(k)) {
                sv += v[i];
            }
            col_v[k] = sv * inv_n;
        }

        // One coordinate pass over `cols` on the quadratic model; returns the
        // largest change scaled by its coordinate curvature, which bounds the
        // coordinate gradient the step removed.
        auto sweep = [&](std::span<const std::size_t> cols, bool full) {
            double max_delta = 0.0;
            {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    s += v[i] * res[i];
                }
                const double d = s / v_sum;
                if (d != 0.0) {
                    b0 += d;
                    for (std::size_t i = 0; i < n; ++i) {
                        res[i] -= d;
                    }
                    max_delta = v_mean * std::abs(d);
                }
            }
            for (std::size_t k : cols) {
                if (!full && !active[k]) {
                    continue;
                }
                const auto rows = r.column(k);
                const double sv = col_v[k];
                double svr = 0.0;
                for (std::uint32_t i : rows) {
                    svr += v[i] * res[i];
                }
                const double num = svr * inv_n + sv * next[k];
                const double scaled = lambda * weights[k];
                const double updated = penalty == Penalty::l1
                                           ? detail::soft_threshold(num, scaled) / sv
                                           : num / (sv + 2.0 * scaled);
                const double d = updated - next[k];
                if (d != 0.0) {
                    next[k] = updated;
                    for (std::uint32_t i : rows) {
                        res[i] -= d;
                    }
                    max_delta = std::max(max_delta, sv * std::abs(d));
                }
                active[k] = updated != 0.0;
            }
            ++m.sweeps;
            if (m.sweeps > options.max_iter) {
                throw ConvergenceError("penalized logistic fit did not converge within " +
                                           std::to_string(options.max_iter) + " sweeps",
                                       m.loss_trace);
            }
            return max_delta;
        };

        // Exact minimizer of the quadratic model over the intercept and the
        // active coefficients with their signs held fixed, taken up to the
        // first sign change. Rescues coordinate descent on strongly
        // correlated columns, where single-coordinate moves crawl.
        auto newton_step = [&]() {
            std::vector<std::size_t> act;
            for (std::size_t k : candidates) {
                if (active[k]) {
                    act.push_back(k);
                }
            }
            if (act.empty() || act.size() > kMaxNewtonSize) {
                return;
            }
            const auto a = static_cast<Eigen::Index>(act.size() + 1);
            std::vector<std::vector<std::uint32_t>> by_row(n);
            for (std::size_t p = 0; p < act.size(); ++p) {
                for (std::uint32_t i : r.column(act[p])) {
                    by_row[i].push_back(static_cast<std::uint32_t>(p + 1));
                }
            }
            Eigen::MatrixXd h = Eigen::MatrixXd::Zero(a, a);
            Eigen::VectorXd g = Eigen::VectorXd::Zero(a);
            for (std::size_t i = 0; i < n; ++i) {
                const double vr = v[i] * res[i];
                h(0, 0) += v[i];
                g(0) += vr;
                const auto& cols = by_row[i];
                for (std::size_t x = 0; x < cols.size(); ++x) {
                    h(cols[x], 0) += v[i];
                    g(cols[x]) += vr;
                    for (std::size_t z = 0; z <= x; ++z) {
                        h(cols[x], cols[z]) += v[i];
                    }
                }
            }
            h *= inv_n;
            g *= inv_n;
            for (std::size_t p = 0; p < act.size(); ++p) {
                const auto q = static_cast<Eigen::Index>(p + 1);
                const std::size_t k = act[p];
                const double scaled = lambda * weights[k];
                if (penalty == Penalty::l1) {
                    g(q) -= scaled * (next[k] > 0.0 ? 1.0 : -1.0);
                } else {
                    h(q, q) += 2.0 * scaled;
                    g(q) -= 2.0 * scaled * next[k];
                }
                h(q, q) += 1e-12;
            }
            const Eigen::VectorXd delta = h.selfadjointView<Eigen::Lower>().ldlt().solve(g);
            if (!delta.allFinite()) {
                return;
            }
            double t = 1.0;
            if (penalty == Penalty::l1) {
                for (std::size_t p = 0; p < act.size(); ++p) {
                    const double c = next[act[p]];
                    const double d = delta(static_cast<Eigen::Index>(p + 1));
                    if ((c + d) * c < 0.0) {
                        t = std::min(t, -c / d);
                    }
                }
            }
            const double d0 = t * delta(0);
            b0 += d0;
            for (std::size_t i = 0; i < n; ++i) {
                res[i] -= d0;
            }
            for (std::size_t p = 0; p < act.size(); ++p) {
                const std::size_t k = act[p];
                double updated = next[k] + t * delta(static_cast<Eigen::Index>(p + 1));
                if (penalty == Penalty::l1 && updated * next[k] <= 0.0) {
                    updated = 0.0; // the coefficient that reached its breakpoint
                }
                const double d = updated - next[k];
                for (std::uint32_t i : r.column(k)) {
                    res[i] -= d;
                }
                next[k] = updated;
                active[k] = updated != 0.0;
            }
        };

        // Active-set cycle: converge on the nonzero set, then confirm with a full pass.
        while (true) {
            if (sweep(candidates, true) < inner_tol) {
                break;
            }
            int stalled = 0;
            while (sweep(candidates, false) >= inner_tol) {
                if (++stalled % kSweepsBeforeNewton == 0) {
                    newton_step();
                }
            }
        }

        // Backtracking along the proposed step keeps the objective monotone.
        std::vector<double> direction(k_count);
        for (std::size_t k = 0; k < k_count; ++k) {
            direction[k] = next[k] - m.coefficients[k];
        }
        const double d0 = b0 - m.intercept;
        double step = 1.0;
        double trial = 0.0;
        std::vector<double> trial_c(k_count);
        for (int attempt = 0;; ++attempt) {
            for (std::size_t k = 0; k < k_count; ++k) {
                trial_c[k] = attempt == 0 ? next[k] : m.coefficients[k] + step * direction[k];
            }
            trial = objective(m.intercept + step * d0, trial_c);
            if (trial <= current + 1e-13 * std::abs(current) || attempt >= 40) {
                break;
            }
            step *= 0.5;
        }
        double change = v_mean * std::abs(step * d0);
        for (std::size_t k : candidates) {
            change = std::max(change, col_v[k] * std::abs(trial_c[k] - m.coefficients[k]));
        }
        if (trial <= current + 1e-13 * std::abs(current)) {
            m.intercept += step * d0;
            m.coefficients = trial_c;
            current = trial;
        } else {
            change = 0.0; // no descent possible along the proposal: at the optimum numerically
        }
        m.loss_trace.push_back(current);
        if (change < options.tol) {
            break;
        }
        inner_tol = std::max(options.tol, 0.1 * change);
    }
    return m;
}

/// Smallest lambda at which every penalized coefficient is zero (L1).
/// Unpenalized (weight 0) rules are fitted first.
inline double lambda_max(const RuleMatrix& r, std::span<const int> y, std::span<const double> weights) {
    detail::check_problem(r, y, 0.0, weights);
    std::vector<double> c(r.n_rules(), 0.0);
    double c0 = 0.0;
    const bool has_free = std::any_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; });
    if (has_free) {
        std::vector<double> w_free(weights.size());
        for (std::size_t k = 0; k < weights.size(); ++k) {
            w_free[k] = weights[k] == 0.0 ? 0.0 : kExcluded;
        }
        const auto null_model = fit_penalized_logistic(r, y, 0.0, w_free, Penalty::l1);
        c0 = null_model.intercept;
        c = null_model.coefficients;
    } else {
        std::size_t pos = 0;
        for (int v : y) {
            pos += static_cast<std::size_t>(v);
        }
        if (pos == 0 || pos == y.size()) {
            throw DataError("lambda_max needs both outcome classes");
        }
        c0 = logit(static_cast<double>(pos) / static_cast<double>(y.size()));
    }
    const auto g = logistic_gradient(r, y, c0, c);
    double best = 0.0;
    for (std::size_t k = 0; k < r.n_rules(); ++k) {
        if (weights[k] > 0.0 && !std::isinf(weights[k])) {
            best = std::max(best, std::abs(g[k + 1]) / weights[k]);
        }
    }
    return best;
}

struct PathPoint {
    double lambda = 0.0;
    LinearRuleModel model;
};

/// Warm-started fits over a log-spaced grid from lambda_max down to
/// lambda_max * min_ratio.
inline std::vector<PathPoint> lambda_path(const RuleMatrix& r, std::span<const int> y,
                                          std::span<const double> weights, Penalty penalty, int n_lambdas,
                                          const SolverOptions& options = {}, double min_ratio = 1e-3) {
    if (n_lambdas < 2) {
        throw UsageError("lambda path needs at least two values");
    }
    const double top = lambda_max(r, y, weights);
    std::vector<PathPoint> path;
    path.reserve(static_cast<std::size_t>(n_lambdas));
    const LinearRuleModel* warm = nullptr;
    for (int s = 0; s < n_lambdas; ++s) {
        const double frac = static_cast<double>(s) / static_cast<double>(n_lambdas - 1);
        const double lambda = top * std::pow(min_ratio, frac);
        auto m = fit_penalized_logistic(r, y, lambda, weights, penalty, options, warm);
        path.push_back({lambda, std::move(m)});
        warm = &path.back().model;
    }
    return path;
}

inline std::vector<double> linear_margins(const LinearRuleModel& m, const RuleMatrix& r) {
    if (r.n_rules() != m.coefficients.size()) {
        throw DataError("rule matrix has " + std::to_string(r.n_rules()) + " columns, model has " +
                        std::to_string(m.coefficients.size()) + " coefficients");
    }
    return detail::linear_margins(r, m.intercept, m.coefficients);
}

inline std::vector<double> predict_linear(const LinearRuleModel& m, const RuleMatrix& r) {
    auto eta = linear_margins(m, r);
    for (double& v : eta) {
        v = sigmoid(v);
    }
    return eta;
}

} // namespace eaml
