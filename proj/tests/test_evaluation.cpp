#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "eaml/evaluation.hpp"
#include "eaml/metrics.hpp"
#include "support.hpp"

using namespace eaml;

namespace {

std::pair<std::vector<double>, std::vector<int>> random_scores(std::mt19937_64& rng, std::size_t n, bool coarse) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> level(0, 6);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = u(rng) < 0.35 ? 1 : 0;
        s[i] = coarse ? level(rng) / 6.0 : u(rng) + 0.3 * y[i];
    }
    y[0] = 1;
    y[1] = 0;
    return {s, y};
}

} // namespace

TEST(Auc, TrivialCases) {
    const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_EQ(auc(s, y), 1.0);
    const std::vector<double> flat(4, 0.3);
    EXPECT_EQ(auc(flat, y), 0.5);
    const std::vector<int> one_class(4, 1);
    EXPECT_THROW(auc(s, one_class), DataError);
}

TEST(Auc, EqualsPairCount) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        auto [s, y] = random_scores(rng, 20 + seed * 2, seed % 2 == 0);
        EXPECT_NEAR(auc(s, y), testing_support::pair_count_auc(s, y), 1e-12);
    }
}

TEST(Auc, ComplementAndMonotoneInvariance) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        std::mt19937_64 rng(seed + 500);
        auto [s, y] = random_scores(rng, 150, seed % 3 == 0);
        std::vector<int> flipped(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            flipped[i] = 1 - y[i];
        }
        EXPECT_EQ(auc(s, y) + auc(s, flipped), 1.0);
        std::vector<double> t(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            t[i] = std::exp(5.0 * s[i]) - 3.0;
        }
        EXPECT_EQ(auc(s, y), auc(t, y));
    }
}

TEST(BalancedAccuracy, Examples) {
    const std::vector<int> y{1, 1, 1, 1, 0, 0, 0, 0};
    const std::vector<double> s{0.9, 0.8, 0.7, 0.2, 0.1, 0.3, 0.6, 0.55};
    EXPECT_DOUBLE_EQ(balanced_accuracy(s, y), 0.625);
    const std::vector<double> perfect{1, 1, 1, 1, 0, 0, 0, 0};
    EXPECT_DOUBLE_EQ(balanced_accuracy(perfect, y), 1.0);
    const std::vector<double> inverted{0, 0, 0, 0, 1, 1, 1, 1};
    EXPECT_DOUBLE_EQ(balanced_accuracy(inverted, y), 0.0);
    const std::vector<double> constant(8, 0.7);
    EXPECT_DOUBLE_EQ(balanced_accuracy(constant, y), 0.5);
}

TEST(Wilcoxon, SmallExactExample) {
    const std::vector<double> a{1, 2};
    const std::vector<double> b{3, 4};
    const auto r = wilcoxon_rank_sum(a, b);
    EXPECT_TRUE(r.exact);
    EXPECT_EQ(r.w, 0.0);
    EXPECT_NEAR(r.p_value, 2.0 / 6.0, 1e-15);
    EXPECT_NEAR(testing_support::enumerate_wilcoxon_p(2, 2, 0.0), 2.0 / 6.0, 1e-15);
}

TEST(Wilcoxon, IdenticalSamplesGiveNoEvidence) {
    const std::vector<double> a{0.7, 0.71, 0.72, 0.73, 0.74};
    EXPECT_GE(wilcoxon_rank_sum(a, a).p_value, 0.99);
}

TEST(Wilcoxon, ExactMatchesEnumerationAndIsSymmetric) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t na = 1 + seed % 8;
        const std::size_t nb = 1 + (seed / 8) % 8;
        std::vector<double> a(na);
        std::vector<double> b(nb);
        for (auto& v : a) {
            v = u(rng);
        }
        for (auto& v : b) {
            v = u(rng) + 0.2;
        }
        const auto ab = wilcoxon_rank_sum(a, b);
        const auto ba = wilcoxon_rank_sum(b, a);
        ASSERT_TRUE(ab.exact);
        EXPECT_NEAR(ab.p_value, testing_support::enumerate_wilcoxon_p(na, nb, ab.w), 1e-12);
        EXPECT_NEAR(ab.p_value, ba.p_value, 1e-12);
        EXPECT_DOUBLE_EQ(ab.w + ba.w, static_cast<double>(na * nb));
    }
}

TEST(Wilcoxon, NormalApproximationCloseToExactAtEightPlusEight) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        std::mt19937_64 rng(seed + 1000);
        const double shift = 0.1 * static_cast<double>(seed % 8);
        std::vector<double> a(8);
        std::vector<double> b(8);
        for (auto& v : a) {
            v = u(rng);
        }
        for (auto& v : b) {
            v = u(rng) + shift;
        }
        const auto r = wilcoxon_rank_sum(a, b);
        const double exact = testing_support::enumerate_wilcoxon_p(8, 8, r.w);
        EXPECT_LE(std::abs(wilcoxon_normal_p(r.w, 8, 8) - exact), 0.02) << "seed " << seed;
    }
}

TEST(Wilcoxon, TiesUseNormalApproximation) {
    const std::vector<double> a{1, 2, 2, 3};
    const std::vector<double> b{2, 3, 4, 5};
    const auto r = wilcoxon_rank_sum(a, b);
    EXPECT_FALSE(r.exact);
    EXPECT_GT(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
    const std::vector<double> empty;
    EXPECT_THROW(wilcoxon_rank_sum(a, empty), DataError);
}

TEST(LearningCurve, FullPoolGivesZeroSpread) {
    std::mt19937_64 rng(7);
    auto [r, y] = testing_support::random_problem(rng, 300, 12, 0.3);
    const LabeledRules pool{r, y};
    auto [rt, yt] = testing_support::random_problem(rng, 200, 12, 0.3);
    const LabeledRules test{rt, yt};
    const std::vector<NamedRules> tests{{"test", &test}};
    const std::vector<RuleSubset> subsets{{"all", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}}, {"some", {0, 2, 4}}};
    const std::vector<std::size_t> sizes{150, 300};
    const auto curves = learning_curve(pool, tests, subsets, sizes, 2, 3);
    ASSERT_EQ(curves.size(), 2u);
    EXPECT_EQ(curves[1].subset, "some");
    for (const auto& c : curves) {
        ASSERT_EQ(c.points.size(), 2u);
        EXPECT_EQ(c.points[1].sd_auc, 0.0);
        EXPECT_EQ(c.points[1].aucs[0], c.points[1].aucs[1]);
    }
    const auto again = learning_curve(pool, tests, subsets, sizes, 2, 3);
    EXPECT_EQ(again[0].points[0].aucs, curves[0].points[0].aucs);
}

TEST(LearningCurve, Preconditions) {
    std::mt19937_64 rng(8);
    auto [r, y] = testing_support::random_problem(rng, 100, 4, 0.3);
    const LabeledRules pool{r, y};
    const std::vector<NamedRules> tests{{"t", &pool}};
    const std::vector<RuleSubset> subsets{{"all", {0, 1, 2, 3}}};
    const std::vector<std::size_t> too_big{50, 101};
    EXPECT_THROW(learning_curve(pool, tests, subsets, too_big, 2, 0), UsageError);
    const std::vector<std::size_t> unsorted{60, 50};
    EXPECT_THROW(learning_curve(pool, tests, subsets, unsorted, 2, 0), UsageError);
    const std::vector<std::size_t> ok{50};
    EXPECT_THROW(learning_curve(pool, tests, subsets, ok, 1, 0), UsageError);
}

TEST(LearningCurve, SizeToReach) {
    LearningCurve c;
    for (auto [size, m] : std::vector<std::pair<std::size_t, double>>{{100, 0.6}, {200, 0.76}, {400, 0.79}, {800, 0.8}}) {
        CurvePoint p;
        p.size = size;
        p.mean_auc = m;
        c.points.push_back(p);
    }
    EXPECT_EQ(size_to_reach(c, 0.95), 200u);
    EXPECT_EQ(size_to_reach(c, 1.0), 800u);
    EXPECT_THROW(size_to_reach(LearningCurve{}, 0.95), DataError);
}

TEST(ShiftEval, IdenticalSetsGiveIdenticalReports) {
    std::mt19937_64 rng(9);
    const auto d = testing_support::random_dataset(rng, 300, 3, 1);
    GbmConfig c;
    c.n_trees = 20;
    const auto gbm = fit_gbm(d, c);
    const auto rules = extract_rules(gbm);
    const auto r = build_rule_matrix(rules, d);
    const auto m = fit_penalized_logistic(r, d.outcomes(), 1e-3, std::vector<double>(rules.size(), 1.0), Penalty::l1);
    const std::vector<NamedDataset> sets{{"a", &d}, {"b", &d}};
    const auto reports = shift_eval("m", m, rules, d.features(), sets);
    ASSERT_EQ(reports.size(), 2u);
    EXPECT_EQ(reports[0].auc, reports[1].auc);
    EXPECT_EQ(reports[0].balanced_accuracy, reports[1].balanced_accuracy);
    EXPECT_EQ(reports[0].n, 300u);
    const auto g = shift_eval("gbm", gbm, sets);
    EXPECT_EQ(g[0].auc, g[1].auc);

    Dataset other({FeatureSpec::numeric("q")});
    const double v = 1.0;
    other.add_row(std::span<const double>(&v, 1), 1);
    const std::vector<NamedDataset> bad{{"bad", &other}};
    EXPECT_THROW(shift_eval("m", m, rules, d.features(), bad), DataError);

    std::ostringstream out;
    write_reports(out, reports);
    EXPECT_NE(out.str().find("m\ta\tauc\t"), std::string::npos);
}
