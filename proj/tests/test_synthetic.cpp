#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "eaml/elicitation.hpp"
#include "eaml/synthetic.hpp"
#include "support.hpp"

using namespace eaml;

namespace {

// Independent sampler of sigmoid(true logit + confounder) under the stated
// marginals: standard normal vitals, categorical draws, Bernoulli confounder.
double monte_carlo_event_rate(const SyntheticSpec& s, std::size_t draws, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double total = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        double eta = s.intercept;
        for (double b : s.beta) {
            eta += b * z(rng);
        }
        for (const auto& c : s.categorical) {
            double v = u(rng);
            std::size_t level = 0;
            double acc = c.probabilities[0];
            while (v >= acc && level + 1 < c.levels.size()) {
                ++level;
                acc += c.probabilities[level];
            }
            eta += c.effects[level];
        }
        if (u(rng) < s.confounder_prevalence) {
            eta += s.confounder_effect;
        }
        total += 1.0 / (1.0 + std::exp(-eta));
    }
    return total / static_cast<double>(draws);
}

Rule low_gcs_rule(const SyntheticSpec& s) {
    Condition c;
    c.feature = s.miscoded_feature;
    c.feature_name = s.numeric_names[s.miscoded_feature];
    c.op = ConditionOp::le;
    c.threshold = s.miscoded_value + 0.1;
    Rule r;
    r.conditions = {c};
    r.id = rule_id(r.conditions);
    return r;
}

} // namespace

TEST(Synthetic, RecodedSetDiffersOnlyByTheAffineMap) {
    const auto spec = icu_spec(false, 3);
    const auto data = generate(spec);
    ASSERT_EQ(data.test_same.n_rows(), data.test_recoded.n_rows());
    EXPECT_EQ(data.test_same.outcomes(), data.test_recoded.outcomes());
    for (std::size_t i = 0; i < data.test_same.n_rows(); ++i) {
        for (std::size_t j = 0; j < data.test_same.n_features(); ++j) {
            const double a = data.test_same.at(i, j);
            const double b = data.test_recoded.at(i, j);
            if (j == spec.recode_feature) {
                EXPECT_NEAR(b, spec.recode_scale * a + spec.recode_offset, 1e-12);
            } else {
                EXPECT_EQ(a, b);
            }
        }
    }
}

TEST(Synthetic, MissingFractionMatchesSpec) {
    auto spec = icu_spec(true, 4);
    spec.n = 10000;
    const auto data = generate(spec);
    std::size_t missing = 0;
    for (std::size_t i = 0; i < data.train.n_rows(); ++i) {
        missing += is_missing(data.train.at(i, spec.missing_feature)) ? 1 : 0;
        for (std::size_t j = 0; j < data.train.n_features(); ++j) {
            if (j != spec.missing_feature) {
                ASSERT_FALSE(is_missing(data.train.at(i, j)));
            }
        }
    }
    EXPECT_NEAR(static_cast<double>(missing) / 10000.0, spec.expected_missing_fraction(), 0.02);
}

TEST(Synthetic, OutcomeRateMatchesMonteCarlo) {
    for (bool confounded : {false, true}) {
        auto spec = icu_spec(confounded, 5);
        spec.n = 10000;
        const auto data = generate(spec);
        const double expected = monte_carlo_event_rate(spec, 100000, 99);
        EXPECT_NEAR(data.train.event_rate(), expected, 0.03) << "confounded " << confounded;
    }
}

TEST(Synthetic, DeterministicGivenSeed) {
    const auto a = generate(icu_spec(true, 6));
    const auto b = generate(icu_spec(true, 6));
    EXPECT_TRUE(a.train == b.train);
    EXPECT_TRUE(a.test_temporal == b.test_temporal);
    EXPECT_EQ(a.train_miscoded, b.train_miscoded);
    const auto c = generate(icu_spec(true, 7));
    EXPECT_FALSE(a.train == c.train);
}

TEST(Synthetic, RejectsDegenerateSpecs) {
    auto spec = icu_spec(false, 1);
    std::fill(spec.beta.begin(), spec.beta.end(), 0.0);
    EXPECT_THROW(generate(spec), UsageError);
    spec = icu_spec(false, 1);
    spec.confounder_prevalence = 0.0;
    EXPECT_THROW(generate(spec), UsageError);
    spec = icu_spec(false, 1);
    spec.beta.pop_back();
    EXPECT_THROW(generate(spec), UsageError);
}

TEST(Synthetic, MiscodingIsTiedToTheConfounder) {
    const auto spec = icu_spec(true, 8);
    const auto data = generate(spec);
    std::size_t miscoded = 0;
    for (std::size_t i = 0; i < data.train.n_rows(); ++i) {
        if (data.train_miscoded[i]) {
            ++miscoded;
            EXPECT_EQ(data.train_confounded[i], 1);
            EXPECT_EQ(data.train.at(i, spec.miscoded_feature), spec.miscoded_value);
        }
    }
    EXPECT_GT(miscoded, spec.n / 10);
}

TEST(SimulatedExperts, NoiselessExpertsAgree) {
    const auto spec = icu_spec(false, 9);
    const auto data = generate(spec);
    std::mt19937_64 rng(1);
    GbmConfig c;
    c.n_trees = 30;
    const auto rules = extract_rules(fit_gbm(data.train, c));
    SimulatedExpertSpec e;
    e.noise_sd = 0.0;
    e.n_experts = 4;
    const auto sim = simulate_experts(rules, data.train, spec, e);
    const std::size_t k = rules.size() - sim.skipped.size();
    ASSERT_EQ(sim.assessments.size(), 4 * k);
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t x = 1; x < 4; ++x) {
            EXPECT_EQ(sim.assessments[r].rating, sim.assessments[x * k + r].rating);
        }
    }
    std::set<int> levels;
    for (const auto& a : sim.assessments) {
        levels.insert(a.rating);
    }
    EXPECT_EQ(levels, (std::set<int>{1, 2, 3, 4, 5}));
    const auto again = simulate_experts(rules, data.train, spec, e);
    EXPECT_EQ(again.assessments, sim.assessments);
}

TEST(SimulatedExperts, ZeroSupportRuleIsSkipped) {
    const auto spec = icu_spec(false, 10);
    const auto data = generate(spec);
    Condition c;
    c.feature = 0;
    c.feature_name = "age";
    c.op = ConditionOp::gt;
    c.threshold = 100.0;
    Rule r;
    r.conditions = {c};
    r.id = "empty";
    const std::vector<Rule> rules{r};
    const auto sim = simulate_experts(rules, data.train, spec, SimulatedExpertSpec{});
    EXPECT_EQ(sim.skipped, std::vector<std::string>{"empty"});
    EXPECT_TRUE(sim.assessments.empty());
    EXPECT_THROW(simulate_experts(rules, generate(icu_spec(true, 10)).train, spec, SimulatedExpertSpec{}), DataError);
}

TEST(SimulatedExperts, ConfounderSeparatesEmpiricalFromTrueRisk) {
    const auto spec = icu_spec(true, 11);
    const auto data = generate(spec);
    const auto imputed = impute_mean(data.train).data;
    const auto rule = low_gcs_rule(spec);
    const std::vector<Rule> one{rule};
    const auto r = build_rule_matrix(one, imputed);
    const double empirical = empirical_risk(r, 0, imputed.outcomes());
    const double truth = true_subpopulation_risk(rule, imputed, spec);
    EXPECT_GT(std::abs(logit(truth) - logit(empirical)), 3.0 * SimulatedExpertSpec{}.noise_sd);
    EXPECT_LT(empirical, truth);
}

TEST(SimulatedExperts, IsolatingRuleLandsInAnOuterBin) {
    const auto spec = icu_spec(true, 12);
    const auto data = generate(spec);
    const auto imputed = impute_mean(data.train).data;
    GbmConfig c;
    c.n_trees = 60;
    auto rules = extract_rules(fit_gbm(imputed, c));
    const auto full = build_rule_matrix(rules, imputed);
    std::vector<Rule> kept;
    for (std::size_t k : filter_by_support(full)) {
        kept.push_back(rules[k]);
    }
    kept.push_back(low_gcs_rule(spec));
    const auto sim = simulate_experts(kept, imputed, spec, SimulatedExpertSpec{});
    std::vector<std::string> ids;
    for (const auto& r : kept) {
        ids.push_back(r.id);
    }
    const auto agg = aggregate(sim.assessments, ids);
    const auto m = build_rule_matrix(kept, imputed);
    const auto deltas = compute_delta_ranking(agg.summaries, empirical_risks(kept, m, imputed.outcomes()), 5);
    EXPECT_GT(deltas.back().abs_bin, 0);
    EXPECT_LT(deltas.back().delta, 0.0);
}

TEST(SimulatedExperts, CleanDataQuintilesAreMonotone) {
    const auto spec = icu_spec(false, 13);
    const auto data = generate(spec);
    GbmConfig c;
    c.n_trees = 100;
    const auto rules = extract_rules(fit_gbm(data.train, c));
    SimulatedExpertSpec e;
    e.noise_sd = 0.05;
    const auto sim = simulate_experts(rules, data.train, spec, e);
    const auto agg = aggregate(sim.assessments);
    std::vector<Rule> rated;
    for (const auto& r : rules) {
        if (std::find(sim.skipped.begin(), sim.skipped.end(), r.id) == sim.skipped.end()) {
            rated.push_back(r);
        }
    }
    const auto m = build_rule_matrix(rated, data.train);
    const auto bins = quintile_calibration(agg.summaries, empirical_risks(rated, m, data.train.outcomes()));
    for (std::size_t q = 1; q < bins.size(); ++q) {
        EXPECT_GE(bins[q].mean_risk, bins[q - 1].mean_risk);
    }
}
