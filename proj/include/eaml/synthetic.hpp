#pragma once

// Confounded synthetic cohorts and simulated expert raters.
//
// Observed features are standard normal before distortion. A hidden binary
// confounder C shifts the true log-odds and leaves two artifacts in the
// observed data: it overwrites one feature with a fixed floor value (the
// miscoding artifact) and changes the missingness rate of another feature.
// It also shifts a proxy feature that carries no true signal. Three test sets
// are drawn alongside the training set: same distribution, an affine recode
// of one feature, and a temporal variant with weaker confounding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eaml/dataset.hpp"
#include "eaml/elicitation.hpp"
#include "eaml/error.hpp"
#include "eaml/rules.hpp"
#include "eaml/stats.hpp"

namespace eaml {

struct CategoricalTruth {
    std::string name;
    std::vector<std::string> levels;
    std::vector<double> probabilities;
    std::vector<double> effects; // log-odds per level
};

struct SyntheticSpec {
    std::size_t n = 5000;      // training cases
    std::size_t n_test = 2000; // cases per test set
    std::vector<std::string> numeric_names;
    std::vector<double> beta; // true log-odds coefficients, one per numeric feature
    std::vector<CategoricalTruth> categorical;
    double intercept = -2.0;

    double confounder_prevalence = 0.25;
    double confounder_effect = 0.0; // log-odds added when C = 1

    bool miscode = false;
    std::size_t miscoded_feature = 0; // numeric index
    double miscoded_value = -2.5;
    double miscode_coupling = 1.0; // P(overwrite | C = 1)

    bool missingness = false;
    std::size_t missing_feature = 0;
    double missing_rate_confounded = 0.0;
    double missing_rate_clean = 0.0;

    std::size_t proxy_feature = 0;
    double proxy_shift = 0.0; // added to the proxy when C = 1

    std::size_t recode_feature = 0;
    double recode_scale = 1.0;
    double recode_offset = 0.0;

    double temporal_coupling = 0.5; // multiplies miscode coupling and proxy shift

    std::uint64_t seed = 0;

    void validate() const {
        if (n == 0 || n_test == 0) {
            throw UsageError("synthetic spec needs positive case counts");
        }
        if (numeric_names.size() != beta.size()) {
            throw UsageError("synthetic spec: one coefficient per numeric feature required");
        }
        if (!(confounder_prevalence > 0.0 && confounder_prevalence < 1.0)) {
            throw UsageError("confounder prevalence must lie in (0, 1)");
        }
        bool any = false;
        for (double b : beta) {
            if (!std::isfinite(b)) {
                throw UsageError("synthetic coefficients must be finite");
            }
            any = any || b != 0.0;
        }
        if (!any) {
            throw UsageError("degenerate synthetic spec: all coefficients are zero");
        }
        const std::size_t p = beta.size();
        if (miscoded_feature >= p || missing_feature >= p || proxy_feature >= p || recode_feature >= p) {
            throw UsageError("synthetic spec refers to a feature index out of range");
        }
        auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
        if (!rate_ok(miscode_coupling) || !rate_ok(missing_rate_confounded) || !rate_ok(missing_rate_clean) ||
            !rate_ok(temporal_coupling)) {
            throw UsageError("synthetic spec rates must lie in [0, 1]");
        }
        for (const auto& c : categorical) {
            if (c.levels.size() < 2 || c.levels.size() != c.probabilities.size() ||
                c.levels.size() != c.effects.size()) {
                throw UsageError("categorical feature '" + c.name + "' is malformed");
            }
        }
    }

    /// Expected missing fraction of the missingness feature.
    double expected_missing_fraction() const {
        if (!missingness) {
            return 0.0;
        }
        return confounder_prevalence * missing_rate_confounded +
               (1.0 - confounder_prevalence) * missing_rate_clean;
    }

    std::vector<FeatureSpec> schema() const {
        std::vector<FeatureSpec> s;
        for (std::size_t j = 0; j < numeric_names.size(); ++j) {
            s.push_back(FeatureSpec::numeric(numeric_names[j], missingness && j == missing_feature));
        }
        for (const auto& c : categorical) {
            s.push_back(FeatureSpec::categorical(c.name, c.levels));
        }
        return s;
    }

    /// True log-odds without the confounder term.
    double true_logit(std::span<const double> row) const {
        double z = intercept;
        for (std::size_t j = 0; j < beta.size(); ++j) {
            z += beta[j] * row[j];
        }
        for (std::size_t c = 0; c < categorical.size(); ++c) {
            z += categorical[c].effects[static_cast<std::size_t>(row[beta.size() + c])];
        }
        return z;
    }
};

/// Default 17-feature ICU-flavoured spec: 13 numeric vitals and labs, an
/// admission type and three comorbidity flags.
inline SyntheticSpec icu_spec(bool confounded, std::uint64_t seed) {
    SyntheticSpec s;
    s.numeric_names = {"age", "gcs", "sbp", "hr", "temp", "pf_ratio", "bun",
                       "wbc", "hco3", "sodium", "potassium", "bilirubin", "urine_output"};
    s.beta = {0.5, -0.8, -0.3, 0.0, -0.1, -0.4, 0.5, 0.3, -0.3, 0.1, 0.1, 0.4, -0.5};
    s.categorical = {
        {"admission_type", {"medical", "scheduled_surgical", "unscheduled_surgical"}, {0.5, 0.25, 0.25},
         {0.0, -0.8, 0.2}},
        {"aids", {"no", "yes"}, {0.95, 0.05}, {0.0, 0.6}},
        {"metastatic_cancer", {"no", "yes"}, {0.9, 0.1}, {0.0, 0.8}},
        {"hematologic_malignancy", {"no", "yes"}, {0.92, 0.08}, {0.0, 0.5}},
    };
    s.intercept = -2.0;
    s.miscoded_feature = 1; // gcs
    s.missing_feature = 5;  // pf_ratio
    s.proxy_feature = 3;    // hr
    s.recode_feature = 3;
    s.recode_scale = 0.7;
    s.recode_offset = 1.5;
    s.seed = seed;
    if (confounded) {
        s.confounder_effect = -2.0;
        s.miscode = true;
        s.missingness = true;
        s.missing_rate_confounded = 0.2;
        s.missing_rate_clean = 0.65;
        s.proxy_shift = 3.0;
    }
    return s;
}

struct SyntheticData {
    Dataset train;
    Dataset test_same;
    Dataset test_recoded;
    Dataset test_temporal;
    // Hidden per-row state, aligned with the datasets above.
    std::vector<std::uint8_t> train_confounded;
    std::vector<std::uint8_t> train_miscoded;
    std::vector<std::uint8_t> same_confounded;
    std::vector<std::uint8_t> temporal_confounded;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

struct DrawOptions {
    double coupling = 1.0;
    double confounder_effect = 0.0;
    double proxy_shift = 0.0;
};

inline void draw_cases(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed, const DrawOptions& opt,
                       Dataset& out, std::vector<std::uint8_t>& confounded, std::vector<std::uint8_t>& miscoded) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t p = spec.beta.size();
    std::vector<double> row(p + spec.categorical.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            row[j] = normal(rng);
        }
        for (std::size_t c = 0; c < spec.categorical.size(); ++c) {
            const auto& probs = spec.categorical[c].probabilities;
            double u = unif(rng);
            std::size_t level = 0;
            while (level + 1 < probs.size() && u >= probs[level]) {
                u -= probs[level];
                ++level;
            }
            row[p + c] = static_cast<double>(level);
        }
        const bool c_flag = unif(rng) < spec.confounder_prevalence;
        const double z = spec.true_logit(row) + (c_flag ? opt.confounder_effect : 0.0);
        const int y = unif(rng) < sigmoid(z) ? 1 : 0;

        // Artifacts touch only the observed record.
        const double u_miscode = unif(rng);
        const double u_missing = unif(rng);
        bool was_miscoded = false;
        if (c_flag) {
            row[spec.proxy_feature] += opt.proxy_shift;
        }
        if (spec.miscode && c_flag && u_miscode < opt.coupling) {
            row[spec.miscoded_feature] = spec.miscoded_value;
            was_miscoded = true;
        }
        if (spec.missingness) {
            const double rate = c_flag ? spec.missing_rate_confounded : spec.missing_rate_clean;
            if (u_missing < rate) {
                row[spec.missing_feature] = kMissing;
            }
        }
        out.add_row(row, y);
        confounded.push_back(c_flag ? 1 : 0);
        miscoded.push_back(was_miscoded ? 1 : 0);
    }
}

} // namespace detail

/// Draws the training set and the three test sets. Deterministic given the
/// spec seed.
inline SyntheticData generate(const SyntheticSpec& spec) {
    spec.validate();
    const auto schema = spec.schema();
    SyntheticData out{Dataset(schema), Dataset(schema), Dataset(schema), Dataset(schema), {}, {}, {}, {}};
    const detail::DrawOptions base{spec.miscode_coupling, spec.confounder_effect, spec.proxy_shift};
    std::vector<std::uint8_t> scratch;
    detail::draw_cases(spec, spec.n, detail::mix_seed(spec.seed, 0), base, out.train, out.train_confounded,
                       out.train_miscoded);
    detail::draw_cases(spec, spec.n_test, detail::mix_seed(spec.seed, 1), base, out.test_same,
                       out.same_confounded, scratch);

    out.test_recoded = out.test_same;
    for (std::size_t i = 0; i < out.test_recoded.n_rows(); ++i) {
        const double v = out.test_recoded.at(i, spec.recode_feature);
        if (!is_missing(v)) {
            out.test_recoded.set(i, spec.recode_feature, spec.recode_scale * v + spec.recode_offset);
        }
    }

    const detail::DrawOptions temporal{spec.miscode_coupling * spec.temporal_coupling,
                                       spec.confounder_effect / 2.0,
                                       spec.proxy_shift * spec.temporal_coupling};
    scratch.clear();
    detail::draw_cases(spec, spec.n_test, detail::mix_seed(spec.seed, 2), temporal, out.test_temporal,
                       out.temporal_confounded, scratch);
    return out;
}

// ---------------------------------------------------------------------------
// Simulated experts

struct SimulatedExpertSpec {
    std::size_t n_experts = 15;
    double noise_sd = 0.05; // on the latent log-odds scale
    std::vector<double> threshold_quantiles = {0.1, 0.3, 0.7, 0.9};
    std::uint64_t seed = 0;

    void validate() const {
        if (n_experts < 1) {
            throw UsageError("at least one simulated expert is required");
        }
        if (!(noise_sd >= 0.0)) {
            throw UsageError("expert noise must be non-negative");
        }
        if (threshold_quantiles.size() != static_cast<std::size_t>(kMaxRating - kMinRating)) {
            throw UsageError("four rating thresholds are required");
        }
    }
};

struct SimulatedRatings {
    std::vector<ExpertAssessment> assessments; // expert-major, rule order within expert
    std::vector<std::string> skipped;          // zero-support rules
    std::vector<double> latent;                // per rated rule, logit of true subpopulation risk
};

/// Mean true risk (confounder ignored) of the cases a rule matches, computed
/// from the observed feature values the experts see on the card.
inline double true_subpopulation_risk(const Rule& rule, const Dataset& d, const SyntheticSpec& spec) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        const auto row = d.row(i);
        if (evaluate_rule(rule, row)) {
            sum += sigmoid(spec.true_logit(row));
            ++count;
        }
    }
    if (count == 0) {
        return kMissing;
    }
    return sum / static_cast<double>(count);
}

/// Each expert rates each rule from its true risk plus noise, thresholded at
/// quantiles of the noise-free latent risk across rules.
inline SimulatedRatings simulate_experts(std::span<const Rule> rules, const Dataset& d, const SyntheticSpec& spec,
                                         const SimulatedExpertSpec& espec) {
    espec.validate();
    if (d.has_missing()) {
        throw DataError("simulated experts need a fully observed (imputed) dataset");
    }
    SimulatedRatings out;
    std::vector<const Rule*> rated;
    for (const auto& r : rules) {
        const double risk = true_subpopulation_risk(r, d, spec);
        if (is_missing(risk)) {
            out.skipped.push_back(r.id);
            continue;
        }
        rated.push_back(&r);
        out.latent.push_back(logit(std::clamp(risk, 1e-12, 1.0 - 1e-12)));
    }
    if (rated.empty()) {
        return out;
    }
    std::vector<double> thresholds;
    for (double q : espec.threshold_quantiles) {
        thresholds.push_back(quantile(out.latent, q));
    }
    for (std::size_t e = 0; e < espec.n_experts; ++e) {
        std::mt19937_64 rng(detail::mix_seed(espec.seed, e));
        std::normal_distribution<double> noise(0.0, 1.0);
        std::uniform_int_distribution<std::int64_t> pace(4000, 40000);
        const std::string expert = "expert" + std::to_string(e + 1);
        for (std::size_t k = 0; k < rated.size(); ++k) {
            const double latent = out.latent[k] + espec.noise_sd * noise(rng);
            int rating = kMinRating;
            for (double t : thresholds) {
                if (latent > t) {
                    ++rating;
                }
            }
            out.assessments.push_back({expert, rated[k]->id, rating, pace(rng), ""});
        }
    }
    return out;
}

} // namespace eaml
