// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "eaml/workflow.hpp"
#include "support.hpp"

using namespace eaml;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

constexpr int kSeeds = 10;

double max_diff(const LinearRuleModel& m, const Eigen::VectorXd& ref) {
    double d = std::abs(m.intercept - ref(0));
    for (std::size_t k = 0; k < m.coefficients.size(); ++k) {
        d = std::max(d, std::abs(m.coefficients[k] - ref(static_cast<Eigen::Index>(k + 1))));
    }
    return d;
}

double max_diff(const LinearRuleModel& a, const LinearRuleModel& b) {
    double d = std::abs(a.intercept - b.intercept);
    for (std::size_t k = 0; k < a.coefficients.size(); ++k) {
        d = std::max(d, std::abs(a.coefficients[k] - b.coefficients[k]));
    }
    return d;
}

SolverOptions tight() {
    SolverOptions o;
    o.tol = 1e-10;
    return o;
}

double model_auc(const LinearRuleModel& m, const LabeledRules& d) {
    return auc(predict_linear(m, d.matrix), d.labels);
}

// ---------------------------------------------------------------------------

Verdict rule_prediction_equivalence() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> trees(1, 120);
    std::uniform_int_distribution<int> depth(1, 5);
    std::uniform_int_distribution<int> leaf(1, 40);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        auto spec = icu_spec(c % 2 == 0, 100 + static_cast<std::uint64_t>(c));
        spec.n = 800;
        const auto d = impute_mean(generate(spec).train).data;
        GbmConfig cfg;
        cfg.n_trees = trees(rng);
        cfg.max_depth = depth(rng);
        cfg.min_leaf = leaf(rng);
        cfg.shrinkage = 0.01 + 0.29 * u(rng);
        cfg.row_subsample = 0.3 + 0.7 * u(rng);
        cfg.col_subsample = 0.5 + 0.5 * u(rng);
        cfg.seed = static_cast<std::uint64_t>(c);
        const auto m = fit_gbm(d, cfg);
        const auto via = prediction_via_rules(m, extract_leaf_rules(m), d);
        for (std::size_t i = 0; i < d.n_rows(); ++i) {
            worst = std::max(worst, std::abs(via[i] - testing_support::traversal_margin(m, d.row(i))));
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-9 && secs < 10.0, fmt("20 configs, max |diff| %.3g (<= 1e-9), %.2f s (< 10 s)", worst, secs)};
}

Verdict l1_kkt_certificate() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int failed = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        std::mt19937_64 rng(7000 + s);
        const std::size_t k = 3 + s % 30;
        auto [r, y] = testing_support::random_problem(rng, 100 + 20 * s, k, 0.05 + 0.5 * u(rng));
        std::vector<double> w(k);
        for (auto& v : w) {
            v = u(rng) < 0.1 ? 0.0 : 0.1 + 3.0 * u(rng);
        }
        const double lambda = lambda_max(r, y, w) * std::pow(10.0, -3.0 * u(rng));
        try {
            const auto m = fit_penalized_logistic(r, y, lambda, w, Penalty::l1);
            const auto g = testing_support::brute_gradient(r, y, m.intercept, m.coefficients);
            double v = std::abs(g[0]);
            for (std::size_t j = 0; j < k; ++j) {
                const double c = m.coefficients[j];
                v = std::max(v, c == 0.0 ? std::max(0.0, std::abs(g[j + 1]) - lambda * w[j])
                                         : std::abs(g[j + 1] + lambda * w[j] * (c > 0 ? 1.0 : -1.0)));
            }
            worst = std::max(worst, v);
        } catch (const ConvergenceError&) {
            ++failed;
        }
    }
    return {failed == 0 && worst <= 1e-6,
            fmt("50 instances, %d not converged, max stationarity violation %.3g (<= 1e-6)", failed, worst)};
}

Verdict reduction_identities() {
    double soft_ridge = 0.0;
    double unreg = 0.0;
    double hard_lasso = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        std::mt19937_64 rng(9000 + s);
        const std::size_t k = 4 + s;
        auto [r, y] = testing_support::random_problem(rng, 400, k, 0.3);
        std::vector<std::string> ids;
        std::vector<DeltaRanking> deltas;
        std::uniform_int_distribution<int> bin(0, 4);
        std::uniform_real_distribution<double> sd(0.1, 1.5);
        for (std::size_t j = 0; j < k; ++j) {
            ids.push_back("rule" + std::to_string(j));
            DeltaRanking d;
            d.rule_id = ids.back();
            d.abs_bin = bin(rng);
            d.delta = (j % 2 ? -3.0 : 3.0) * d.abs_bin;
            d.stdev = sd(rng);
            deltas.push_back(d);
        }
        const auto ones = testing_support::uniform_weights(k);
        const auto soft0 = fit_soft_eaml(r, y, ids, deltas, 0.01, 0.0, DeltaSource::binned, tight());
        soft_ridge = std::max(soft_ridge, max_diff(soft0, testing_support::newton_logistic(r, y, 0.01, ones)));
        const auto free_fit = fit_soft_eaml(r, y, ids, deltas, 0.0, 5.0, DeltaSource::binned, tight());
        unreg = std::max(unreg, max_diff(free_fit, testing_support::newton_logistic(r, y)));
        const auto hard = fit_hard_eaml(r, y, ids, deltas, 4, 0.003, tight());
        const auto lasso = fit_penalized_logistic(r, y, 0.003, ones, Penalty::l1, tight());
        hard_lasso = std::max(hard_lasso, max_diff(hard.model, lasso));
    }
    const double worst = std::max({soft_ridge, unreg, hard_lasso});
    return {worst <= 1e-6, fmt("soft g=0 vs ridge %.3g, l=0 vs unregularized %.3g, hard B-1 vs lasso %.3g (<= 1e-6)",
                               soft_ridge, unreg, hard_lasso)};
}

Verdict metric_oracles() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int auc_mismatch = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        std::mt19937_64 rng(11000 + s);
        const std::size_t n = 10 + 3 * s;
        std::vector<double> sc(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = u(rng) < 0.4 ? 1 : 0;
            sc[i] = s % 2 ? std::floor(8.0 * u(rng)) : u(rng) + 0.4 * y[i];
        }
        y[0] = 1;
        y[1] = 0;
        auc_mismatch += auc(sc, y) == testing_support::pair_count_auc(sc, y) ? 0 : 1;
    }
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        std::mt19937_64 rng(12000 + s);
        const double shift = 0.1 * static_cast<double>(s % 10);
        std::vector<double> a(8);
        std::vector<double> b(8);
        for (auto& v : a) {
            v = u(rng);
        }
        for (auto& v : b) {
            v = u(rng) + shift;
        }
        const auto r = wilcoxon_rank_sum(a, b);
        worst = std::max(worst, std::abs(wilcoxon_normal_p(r.w, 8, 8) - testing_support::enumerate_wilcoxon_p(8, 8, r.w)));
    }
    double all_splits = 0.0;
    for (std::size_t na = 1; na < 16; ++na) {
        for (std::size_t nb = 1; na + nb <= 16; ++nb) {
            for (std::size_t w = 0; w <= na * nb; ++w) {
                const double x = static_cast<double>(w);
                all_splits = std::max(all_splits,
                                      std::abs(wilcoxon_normal_p(x, na, nb) - testing_support::enumerate_wilcoxon_p(na, nb, x)));
            }
        }
    }
    return {auc_mismatch == 0 && worst <= 0.02,
            fmt("AUC != pair count on %d/100; Wilcoxon 8+8 max |normal - exact| %.4f (<= 0.02); "
                "all splits n<=16 worst %.3f (info)",
                auc_mismatch, worst, all_splits)};
}

// ---------------------------------------------------------------------------
// Seeded synthetic runs shared by criteria 5 to 9.

RuleFitConfig rulefit_config(std::uint64_t seed) {
    RuleFitConfig c;
    c.seed = seed;
    c.gbm.seed = seed;
    return c;
}

Verdict calibration_monotonicity() {
    int monotone = 0;
    std::string trace;
    for (int s = 1; s <= kSeeds; ++s) {
        const auto spec = icu_spec(false, static_cast<std::uint64_t>(s));
        const auto data = generate(spec);
        const auto rf = run_rulefit(data.train, rulefit_config(static_cast<std::uint64_t>(s)));
        SimulatedExpertSpec e;
        e.noise_sd = 0.05;
        e.seed = static_cast<std::uint64_t>(s);
        bool ok = false;
        try {
            const auto sim = simulate_experts(rf.selected, rf.train, spec, e);
            const auto da = analyze_deltas(rf.selected, rf.train, sim.assessments);
            const auto bins = quintile_calibration(da.aggregate.summaries, da.risks);
            ok = true;
            for (std::size_t q = 1; q < bins.size(); ++q) {
                ok = ok && bins[q].mean_risk >= bins[q - 1].mean_risk;
            }
        } catch (const Error&) {
            ok = false;
        }
        monotone += ok ? 1 : 0;
        trace += ok ? '+' : '-';
    }
    return {monotone >= 9, fmt("quintile risks nondecreasing in %d/10 seeds (>= 9) [%s]", monotone, trace.c_str())};
}

struct SeedRun {
    std::uint64_t seed = 0;
    SyntheticSpec spec;
    SyntheticData data;
    RuleFitResult rf;
    DeltaAnalysis da;
    std::vector<std::string> ids;
    LabeledRules train;
    LabeledRules holdout;
    LabeledRules same;
    LabeledRules recoded;
    LabeledRules temporal;
};

SeedRun confounded_run(std::uint64_t seed) {
    SeedRun run;
    run.seed = seed;
    run.spec = icu_spec(true, seed);
    run.data = generate(run.spec);
    run.rf = run_rulefit(run.data.train, rulefit_config(seed));
    SimulatedExpertSpec e;
    e.seed = seed;
    const auto sim = simulate_experts(run.rf.selected, run.rf.train, run.spec, e);
    run.da = analyze_deltas(run.rf.selected, run.rf.train, sim.assessments, 5, 0.9);
    run.ids = ids_of(run.rf.selected);
    run.train = labeled_rules(run.rf.selected, run.rf.train);
    run.holdout = labeled_rules(run.rf.selected, run.rf.holdout);
    run.same = labeled_rules(run.rf.selected, apply_imputation(run.data.test_same, run.rf.imputation));
    run.recoded = labeled_rules(run.rf.selected, apply_imputation(run.data.test_recoded, run.rf.imputation));
    run.temporal = labeled_rules(run.rf.selected, apply_imputation(run.data.test_temporal, run.rf.imputation));
    return run;
}

// The selected rule whose matched training cases are most often miscoded;
// ties go to the larger support.
std::optional<std::size_t> isolating_rule(const SeedRun& run) {
    std::optional<std::size_t> best;
    double best_share = 0.0;
    double best_support = 0.0;
    const auto& m = run.train.matrix;
    for (std::size_t k = 0; k < m.n_rules(); ++k) {
        const auto rows = m.column(k);
        if (rows.empty()) {
            continue;
        }
        std::size_t hits = 0;
        for (auto i : rows) {
            hits += run.data.train_miscoded[run.rf.train.row_id(i)];
        }
        const double share = static_cast<double>(hits) / static_cast<double>(rows.size());
        const double support = static_cast<double>(rows.size());
        if (share > best_share || (share == best_share && best && support > best_support)) {
            best = k;
            best_share = share;
            best_support = support;
        }
    }
    return best;
}

Verdict confounder_discovery(const std::vector<SeedRun>& runs) {
    int outside = 0;
    std::string trace;
    for (const auto& run : runs) {
        const auto k = isolating_rule(run);
        bool hit = false;
        if (k) {
            const auto& id = run.ids[*k];
            for (const auto* tail : {&run.da.outliers.low, &run.da.outliers.high}) {
                for (const auto& d : *tail) {
                    hit = hit || d.rule_id == id;
                }
            }
        }
        outside += hit ? 1 : 0;
        trace += hit ? '+' : '-';
    }
    return {outside >= 8, fmt("isolating rule outside the 90%% CI in %d/10 seeds (>= 8) [%s]", outside, trace.c_str())};
}

Verdict shift_robustness(const std::vector<SeedRun>& runs) {
    double shifted_gain = 0.0;
    double in_dist_gain = 0.0;
    for (const auto& run : runs) {
        const auto filtered = fit_hard_eaml(run.train.matrix, run.train.labels, run.ids, run.da.deltas, 1, run.rf.lambda);
        const auto full = fit_hard_eaml(run.train.matrix, run.train.labels, run.ids, run.da.deltas, 4, run.rf.lambda);
        const double f_shift = (model_auc(filtered.model, run.recoded) + model_auc(filtered.model, run.temporal)) / 2.0;
        const double u_shift = (model_auc(full.model, run.recoded) + model_auc(full.model, run.temporal)) / 2.0;
        shifted_gain += f_shift - u_shift;
        in_dist_gain += model_auc(filtered.model, run.same) - model_auc(full.model, run.same);
    }
    shifted_gain /= static_cast<double>(runs.size());
    in_dist_gain /= static_cast<double>(runs.size());
    return {shifted_gain >= 0.02 && in_dist_gain <= 0.005,
            fmt("mean shifted AUC gain %+.4f (>= 0.02), in-distribution gain %+.4f (<= 0.005)", shifted_gain,
                in_dist_gain)};
}

// Average over the shifted test sets of one subset's curves.
LearningCurve shifted_curve(const std::vector<LearningCurve>& curves, const std::string& subset) {
    LearningCurve out;
    out.subset = subset;
    out.test_set = "shifted";
    int n = 0;
    for (const auto& c : curves) {
        if (c.subset != subset) {
            continue;
        }
        ++n;
        if (out.points.empty()) {
            out.points = c.points;
            continue;
        }
        for (std::size_t p = 0; p < c.points.size(); ++p) {
            out.points[p].mean_auc += c.points[p].mean_auc;
            for (std::size_t j = 0; j < c.points[p].aucs.size(); ++j) {
                out.points[p].aucs[j] += c.points[p].aucs[j];
            }
        }
    }
    for (auto& p : out.points) {
        p.mean_auc /= n;
        for (auto& a : p.aucs) {
            a /= n;
        }
    }
    return out;
}

Verdict data_efficiency(const std::vector<SeedRun>& runs) {
    int faster = 0;
    int significant = 0;
    std::string trace;
    for (const auto& run : runs) {
        RuleSubset all{"all", {}};
        RuleSubset filtered{"filtered", {}};
        for (std::size_t k = 0; k < run.ids.size(); ++k) {
            all.columns.push_back(k);
        }
        const auto aligned = align_deltas(run.ids, run.da.deltas);
        for (std::size_t k = 0; k < aligned.size(); ++k) {
            if (aligned[k].abs_bin <= 1) {
                filtered.columns.push_back(k);
            }
        }
        if (filtered.columns.empty()) {
            trace += '0';
            continue;
        }
        const std::vector<NamedRules> tests{{"recoded_shift", &run.recoded}, {"temporal_shift", &run.temporal}};
        const std::vector<RuleSubset> subsets{all, filtered};
        const std::vector<std::size_t> sizes{100, 200, 400, 800, 1600, 3200};
        const auto curves = learning_curve(run.train, tests, subsets, sizes, 10, run.seed);
        const auto a = shifted_curve(curves, "all");
        const auto f = shifted_curve(curves, "filtered");
        const bool quick = 2 * size_to_reach(f, 0.95) <= size_to_reach(a, 0.95);
        const auto& fa = f.points.back().aucs;
        const auto& aa = a.points.back().aucs;
        const auto w = wilcoxon_rank_sum(fa, aa);
        const bool sig = w.p_value < 0.05 && f.points.back().mean_auc > a.points.back().mean_auc;
        faster += quick ? 1 : 0;
        significant += sig ? 1 : 0;
        trace += quick ? (sig ? '+' : 'q') : (sig ? 's' : '-');
    }
    return {faster >= 7 && significant >= 7,
            fmt("filtered reaches 95%% at <= half the size in %d/10 (>= 7); rank-sum p < 0.05 at saturation in "
                "%d/10 [%s]",
                faster, significant, trace.c_str())};
}

Verdict validation_selection(const std::vector<SeedRun>& runs) {
    const std::vector<double> lambdas{0.001, 0.003, 0.01, 0.03, 0.1};
    const std::vector<double> gammas{0.0, 1.0, 3.0, 10.0, 30.0};
    std::vector<GridPoint> grid;
    for (double l : lambdas) {
        for (double g : gammas) {
            grid.push_back({l, g, 0});
        }
    }
    int in_dist_zero = 0;
    int shifted_positive = 0;
    std::string trace;
    for (const auto& run : runs) {
        const auto a = select_hyperparams(EamlMode::soft, run.train, run.holdout, run.ids, run.da.deltas, grid);
        const auto b = select_hyperparams(EamlMode::soft, run.train, run.temporal, run.ids, run.da.deltas, grid);
        const bool zero = a.best.gamma == 0.0 || a.best.lambda == lambdas.front();
        const bool positive = b.best.gamma > 0.0;
        in_dist_zero += zero ? 1 : 0;
        shifted_positive += positive ? 1 : 0;
        trace += fmt(" %g/%g", a.best.gamma, b.best.gamma);
    }
    return {in_dist_zero >= 8 && shifted_positive >= 7,
            fmt("in-distribution picks gamma=0 (or smallest lambda) in %d/10 (>= 8); shifted picks gamma>0 in "
                "%d/10 (>= 7) [gamma in/shift:%s]",
                in_dist_zero, shifted_positive, trace.c_str())};
}

Verdict end_to_end_determinism() {
    const auto root = fs::temp_directory_path() / ("eaml_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const auto m = manifest_from_json(Json::object());
    double slowest = 0.0;
    std::vector<std::string> files;
    for (const char* run : {"a", "b"}) {
        const auto t0 = Clock::now();
        files = run_pipeline(m, (root / run).string());
        slowest = std::max(slowest, seconds_since(t0));
    }
    int differing = 0;
    for (const auto& f : files) {
        std::ifstream a(root / "a" / f, std::ios::binary);
        std::ifstream b(root / "b" / f, std::ios::binary);
        std::stringstream sa;
        std::stringstream sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        differing += sa.str() == sb.str() ? 0 : 1;
    }
    fs::remove_all(root);
    return {differing == 0 && slowest < 60.0,
            fmt("%zu artifacts, %d differ; %zux%zu data; slowest run %.1f s (< 60 s)", files.size(), differing,
                m.spec.n, m.spec.beta.size() + m.spec.categorical.size(), slowest)};
}

} // namespace

int main() {
    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Verdict()>& f) {
        Verdict v;
        try {
            v = f();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::cout << (v.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << v.detail << std::endl;
    };

    report(1, "rule-prediction equivalence", rule_prediction_equivalence);
    report(2, "L1 KKT certificate", l1_kkt_certificate);
    report(3, "reduction identities", reduction_identities);
    report(4, "metric oracles", metric_oracles);
    report(5, "calibration monotonicity", calibration_monotonicity);

    std::vector<SeedRun> runs;
    std::string setup_error;
    try {
        for (int s = 1; s <= kSeeds; ++s) {
            runs.push_back(confounded_run(static_cast<std::uint64_t>(s)));
        }
    } catch (const std::exception& e) {
        setup_error = e.what();
    }
    auto on_runs = [&](Verdict (*f)(const std::vector<SeedRun>&)) {
        return [&runs, &setup_error, f]() -> Verdict {
            if (!setup_error.empty()) {
                return {false, "confounded runs failed: " + setup_error};
            }
            return f(runs);
        };
    };
    report(6, "confounder discovery", on_runs(confounder_discovery));
    report(7, "shift robustness", on_runs(shift_robustness));
    report(8, "data efficiency", on_runs(data_efficiency));
    report(9, "validation-selection behavior", on_runs(validation_selection));
    report(10, "end-to-end determinism and runtime", end_to_end_determinism);

    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
