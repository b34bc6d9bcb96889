// Command-line driver for every pipeline stage.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eaml/eaml.hpp"

namespace fs = std::filesystem;
using namespace eaml;

namespace {

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        detail::write_file(path, text);
    }
}

std::vector<DeltaRanking> load_deltas(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open delta table '" + path + "'");
    }
    return read_delta_table(in);
}

std::vector<ExpertAssessment> load_assessments(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open assessments '" + path + "'");
    }
    return read_assessments(in);
}

std::string tag_of(const std::string& path) { return fs::path(path).stem().string(); }

template <class E>
E parse_choice(const std::string& value, std::initializer_list<std::pair<const char*, E>> choices,
               const char* what) {
    for (const auto& [name, e] : choices) {
        if (value == name) {
            return e;
        }
    }
    throw UsageError(std::string("unknown ") + what + " '" + value + "'");
}

std::string fmt(double v) { return detail::format_double(v); }

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string spec;
    std::string out;
    std::uint64_t seed = 1;
    bool clean = false;
};

int cmd_synth(const SynthArgs& a) {
    auto spec = icu_spec(!a.clean, a.seed);
    if (!a.spec.empty()) {
        spec = synthetic_spec_from_json(detail::parse_json(detail::read_file(a.spec), a.spec), spec);
    }
    spec.validate();
    const auto data = generate(spec);
    fs::create_directories(a.out);
    const fs::path dir(a.out);
    save_dataset((dir / "train.csv").string(), data.train, kOutcomeColumn);
    save_dataset((dir / "test_same.csv").string(), data.test_same, kOutcomeColumn);
    save_dataset((dir / "test_recoded.csv").string(), data.test_recoded, kOutcomeColumn);
    save_dataset((dir / "test_temporal.csv").string(), data.test_temporal, kOutcomeColumn);
    detail::write_file((dir / "spec.json").string(), synthetic_spec_to_json(spec).dump(2) + "\n");
    std::cout << "wrote " << data.train.n_rows() << " training and 3 x " << data.test_same.n_rows()
              << " test cases to " << a.out << "\n";
    return 0;
}

struct RuleFitArgs {
    std::string data, schema, outcome, config, out_model, out_rules;
    std::uint64_t seed = 0;
};

int cmd_rulefit(const RuleFitArgs& a) {
    auto [data, schema] = load_dataset(a.data, a.schema, a.outcome);
    RuleFitConfig config;
    config.seed = a.seed;
    config.gbm.seed = a.seed;
    if (!a.config.empty()) {
        config = rulefit_config_from_json(detail::parse_json(detail::read_file(a.config), a.config), config);
    }
    const auto rf = run_rulefit(data, config);
    save_model(a.out_model, rulefit_document(rf, schema.outcome, config));
    if (!a.out_rules.empty()) {
        std::ostringstream os;
        write_rule_export(os, export_rules(rf.selected, rf.train), rf.train.features());
        detail::write_file(a.out_rules, os.str());
    }
    const auto tr = labeled_rules(rf.selected, rf.train);
    const auto ho = labeled_rules(rf.selected, rf.holdout);
    const auto p_tr = predict_linear(rf.model, tr.matrix);
    const auto p_ho = predict_linear(rf.model, ho.matrix);
    std::cout << "lambda\t" << fmt(rf.lambda) << "\n"
              << "rules\t" << rf.selected.size() << " of " << rf.candidates.size() << "\n"
              << "train_auc\t" << fmt(auc(p_tr, tr.labels)) << "\n"
              << "train_balanced_accuracy\t" << fmt(balanced_accuracy(p_tr, tr.labels)) << "\n"
              << "test_auc\t" << fmt(auc(p_ho, ho.labels)) << "\n"
              << "test_balanced_accuracy\t" << fmt(balanced_accuracy(p_ho, ho.labels)) << "\n";
    return 0;
}

struct SimulateArgs {
    std::string model, data, spec, out;
    std::size_t experts = 15;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

int cmd_simulate(const SimulateArgs& a) {
    const auto model = load_model(a.model);
    auto [raw, schema] = load_dataset(a.data);
    check_schema_compatible(model.schema.features, raw);
    const auto d = apply_imputation(raw, model.imputation);
    const auto spec = synthetic_spec_from_json(detail::parse_json(detail::read_file(a.spec), a.spec));
    SimulatedExpertSpec es;
    es.n_experts = a.experts;
    es.noise_sd = a.noise;
    es.seed = a.seed;
    const auto sim = simulate_experts(model.rules, d, spec, es);
    std::ostringstream os;
    write_assessments(os, sim.assessments);
    emit(a.out, os.str());
    if (!sim.skipped.empty()) {
        std::cerr << sim.skipped.size() << " rules match no case and were not rated\n";
    }
    return 0;
}

struct DeltaArgs {
    std::string rules, assessments, data, schema, model, out, out_table;
    int bins = 5;
    double ci = 0.9;
};

int cmd_delta(const DeltaArgs& a) {
    auto [raw, schema] = load_dataset(a.data, a.schema);
    Dataset d = a.model.empty() ? impute_mean(raw).data : apply_imputation(raw, load_model(a.model).imputation);
    std::ifstream in(a.rules);
    if (!in) {
        throw DataError("cannot open rule export '" + a.rules + "'");
    }
    std::vector<Rule> rules;
    std::unordered_map<std::string, std::string> desc;
    for (auto& e : read_rule_export(in, schema.features)) {
        desc[e.rule.id] = describe_rule(e.rule, schema.features);
        rules.push_back(std::move(e.rule));
    }
    const auto records = load_assessments(a.assessments);
    const auto da = analyze_deltas(rules, d, records, a.bins, a.ci);
    std::ostringstream report;
    write_delta_report(report, da.deltas, desc, da.outliers, da.census);
    emit(a.out, report.str());
    if (!a.out_table.empty()) {
        std::ostringstream table;
        write_delta_table(table, da.deltas);
        detail::write_file(a.out_table, table.str());
    }
    return 0;
}

struct EamlArgs {
    std::string model, data, deltas, mode = "hard", validation, out, out_scores;
    std::string weight_fn = "soft", source = "binned";
    int max_bin = 4;
    int norm = 2;
    double lambda = -1.0;
    double gamma = 0.0;
    bool grid = false;
    std::vector<double> lambdas;
    std::vector<double> gammas;
    std::vector<int> max_bins;
};

int cmd_eaml(const EamlArgs& a) {
    const auto base = load_model(a.model);
    auto [raw, schema] = load_dataset(a.data);
    check_schema_compatible(base.schema.features, raw);
    const auto train = labeled_rules(base.rules, apply_imputation(raw, base.imputation));
    const auto deltas = load_deltas(a.deltas);
    const auto ids = ids_of(base.rules);
    const auto mode = parse_choice<EamlMode>(a.mode, {{"hard", EamlMode::hard}, {"soft", EamlMode::soft},
                                                      {"general", EamlMode::general}}, "mode");
    const auto source = parse_choice<DeltaSource>(a.source, {{"binned", DeltaSource::binned},
                                                             {"raw", DeltaSource::raw}}, "delta source");
    const double lambda = a.lambda >= 0.0 ? a.lambda : base.linear.lambda;

    if (a.grid) {
        if (a.validation.empty()) {
            throw UsageError("--grid needs --validation");
        }
        auto [vraw, vschema] = load_dataset(a.validation);
        check_schema_compatible(base.schema.features, vraw);
        const auto validation = labeled_rules(base.rules, apply_imputation(vraw, base.imputation));
        const auto lambdas = a.lambdas.empty() ? std::vector<double>{lambda} : a.lambdas;
        std::vector<GridPoint> grid;
        for (double l : lambdas) {
            if (mode == EamlMode::hard) {
                for (int b : a.max_bins.empty() ? std::vector<int>{0, 1, 2, 3, 4} : a.max_bins) {
                    grid.push_back({l, 0.0, b});
                }
            } else {
                for (double g : a.gammas.empty() ? std::vector<double>{0.0, 1.0, 3.0, 10.0, 30.0} : a.gammas) {
                    grid.push_back({l, g, 0});
                }
            }
        }
        const auto sel = select_hyperparams(mode, train, validation, ids, deltas, grid, {}, source);
        std::ostringstream os;
        write_score_table(os, sel);
        emit(a.out_scores, os.str());
        save_model(a.out, refit_document(base, "eaml-" + a.mode, sel.model,
                                         Json{{"lambda", sel.best.lambda}, {"gamma", sel.best.gamma},
                                              {"max_bin", sel.best.max_bin}, {"grid_size", grid.size()}}));
        std::cout << "selected lambda " << fmt(sel.best.lambda)
                  << (mode == EamlMode::hard ? " max_bin " + std::to_string(sel.best.max_bin)
                                             : " gamma " + fmt(sel.best.gamma))
                  << " validation_auc " << fmt(sel.table[sel.best_index].validation_auc) << "\n";
        return 0;
    }

    LinearRuleModel m;
    Json info{{"lambda", lambda}};
    if (mode == EamlMode::hard) {
        auto fit = fit_hard_eaml(train.matrix, train.labels, ids, deltas, a.max_bin, lambda);
        info["max_bin"] = a.max_bin;
        info["surviving"] = fit.surviving.size();
        m = std::move(fit.model);
    } else if (mode == EamlMode::soft) {
        m = fit_soft_eaml(train.matrix, train.labels, ids, deltas, lambda, a.gamma, source);
        info["gamma"] = a.gamma;
    } else {
        const auto f = parse_choice<WeightFunction>(a.weight_fn, {{"one", WeightFunction::one},
                                                                  {"delta_over_stdev", WeightFunction::delta_over_stdev},
                                                                  {"soft", WeightFunction::soft}}, "weight function");
        m = fit_general_eaml(train.matrix, train.labels, ids, deltas, lambda, f, a.norm, a.gamma, source);
        info["weight_fn"] = a.weight_fn;
        info["norm"] = a.norm;
        info["gamma"] = a.gamma;
    }
    save_model(a.out, refit_document(base, "eaml-" + a.mode, m, info));
    std::cout << "nonzero " << m.nonzero() << " of " << m.coefficients.size() << " train_auc "
              << fmt(auc(predict_linear(m, train.matrix), train.labels)) << "\n";
    return 0;
}

struct EvalArgs {
    std::string model, out;
    std::vector<std::string> data, tags;
};

int cmd_eval(const EvalArgs& a) {
    if (!a.tags.empty() && a.tags.size() != a.data.size()) {
        throw UsageError("give one --tag per --data or none");
    }
    const auto m = load_model(a.model);
    std::vector<EvalReport> reports;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        auto [raw, schema] = load_dataset(a.data[i]);
        reports.push_back(evaluate_document(m, a.tags.empty() ? tag_of(a.data[i]) : a.tags[i], raw));
    }
    std::ostringstream os;
    write_reports(os, reports);
    emit(a.out, os.str());
    return 0;
}

struct CurveArgs {
    std::string model, data, deltas, out;
    std::vector<std::string> tests;
    std::vector<std::size_t> sizes = {100, 200, 400, 800, 1600, 3200, 6400};
    std::size_t subsamples = 10;
    int max_bin = 1;
    double lambda = 1e-3;
    std::uint64_t seed = 0;
};

int cmd_curve(const CurveArgs& a) {
    const auto base = load_model(a.model);
    auto [raw, schema] = load_dataset(a.data);
    check_schema_compatible(base.schema.features, raw);
    const auto pool = labeled_rules(base.rules, apply_imputation(raw, base.imputation));
    std::vector<LabeledRules> test_data;
    std::vector<NamedRules> tests;
    test_data.reserve(a.tests.size());
    for (const auto& t : a.tests) {
        auto [traw, tschema] = load_dataset(t);
        check_schema_compatible(base.schema.features, traw);
        test_data.push_back(labeled_rules(base.rules, apply_imputation(traw, base.imputation)));
    }
    for (std::size_t i = 0; i < a.tests.size(); ++i) {
        tests.push_back({tag_of(a.tests[i]), &test_data[i]});
    }
    RuleSubset all{"all", {}};
    for (std::size_t k = 0; k < base.rules.size(); ++k) {
        all.columns.push_back(k);
    }
    std::vector<RuleSubset> subsets{all};
    if (!a.deltas.empty()) {
        const auto aligned = align_deltas(ids_of(base.rules), load_deltas(a.deltas));
        RuleSubset filtered{"filtered", {}};
        for (std::size_t k = 0; k < aligned.size(); ++k) {
            if (aligned[k].abs_bin <= a.max_bin) {
                filtered.columns.push_back(k);
            }
        }
        subsets.push_back(filtered);
    }
    const auto curves = learning_curve(pool, tests, subsets, a.sizes, a.subsamples, a.seed, {a.lambda, {}});
    std::ostringstream os;
    write_learning_curves(os, curves);
    emit(a.out, os.str());
    return 0;
}

struct ServeArgs {
    std::string rules, store, host = "127.0.0.1", static_dir;
    int port = 8080;
};

int cmd_serve(const ServeArgs& a) {
    std::ifstream in(a.rules);
    if (!in) {
        throw DataError("cannot open rule export '" + a.rules + "'");
    }
    std::vector<RuleCard> cards;
    std::string line;
    while (std::getline(in, line)) {
        if (!detail::trim(line).empty()) {
            cards.push_back(card_from_json(detail::parse_json(line, a.rules).at("card")));
        }
    }
    ElicitService service(std::move(cards), a.store);
    httplib::Server server;
    install_routes(server, service, a.static_dir);
    std::cout << "serving " << service.n_rules() << " rules on http://" << a.host << ":" << a.port << std::endl;
    if (!server.listen(a.host, a.port)) {
        throw UsageError("cannot listen on " + a.host + ":" + std::to_string(a.port));
    }
    return 0;
}

struct PipelineArgs {
    std::string manifest, out;
};

int cmd_pipeline(const PipelineArgs& a) {
    const Json j = a.manifest.empty() ? Json::object() : detail::parse_json(detail::read_file(a.manifest), a.manifest);
    const auto m = manifest_from_json(j);
    for (const auto& f : run_pipeline(m, a.out)) {
        std::cout << (fs::path(a.out) / f).string() << "\n";
    }
    return 0;
}

std::string stage(const CLI::App& app) {
    const auto subs = app.get_subcommands();
    return subs.empty() ? std::string("eaml") : subs.front()->get_name();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Expert-augmented rule models"};
    app.require_subcommand(1);
    int status = 0;

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a synthetic cohort with shifted test sets");
    s->add_option("--spec", synth.spec, "JSON spec overriding the built-in ICU-like spec");
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--seed", synth.seed);
    s->add_flag("--clean", synth.clean, "no confounder");
    s->callback([&] { status = cmd_synth(synth); });

    RuleFitArgs rf;
    auto* r = app.add_subcommand("rulefit-fit", "boost, extract rules and fit the sparse rule model");
    r->add_option("--data", rf.data)->required();
    r->add_option("--schema", rf.schema, "schema JSON (default: <data>.schema.json)");
    r->add_option("--outcome", rf.outcome, "outcome column (default: from schema)");
    r->add_option("--config", rf.config, "JSON config");
    r->add_option("--out-model", rf.out_model)->required();
    r->add_option("--out-rules", rf.out_rules);
    r->add_option("--seed", rf.seed);
    r->callback([&] { status = cmd_rulefit(rf); });

    SimulateArgs sim;
    auto* e = app.add_subcommand("simulate-experts", "rate a model's rules with simulated experts");
    e->add_option("--model", sim.model)->required();
    e->add_option("--data", sim.data)->required();
    e->add_option("--spec", sim.spec, "synthetic spec the data was generated from")->required();
    e->add_option("--experts", sim.experts);
    e->add_option("--noise", sim.noise);
    e->add_option("--seed", sim.seed);
    e->add_option("--out", sim.out);
    e->callback([&] { status = cmd_simulate(sim); });

    DeltaArgs delta;
    auto* d = app.add_subcommand("delta", "compare expert and empirical risk rankings");
    d->add_option("--rules", delta.rules)->required();
    d->add_option("--assessments", delta.assessments)->required();
    d->add_option("--data", delta.data)->required();
    d->add_option("--schema", delta.schema);
    d->add_option("--model", delta.model, "use this model's imputation");
    d->add_option("--bins", delta.bins);
    d->add_option("--ci", delta.ci);
    d->add_option("--out", delta.out, "report (default stdout)");
    d->add_option("--out-table", delta.out_table, "machine-readable delta table");
    d->callback([&] { status = cmd_delta(delta); });

    EamlArgs ea;
    auto* f = app.add_subcommand("eaml-fit", "refit with expert-derived penalties");
    f->add_option("--model", ea.model, "rulefit model")->required();
    f->add_option("--data", ea.data, "training data")->required();
    f->add_option("--deltas", ea.deltas, "delta table")->required();
    f->add_option("--mode", ea.mode, "hard, soft or general");
    f->add_option("--max-bin", ea.max_bin);
    f->add_option("--lambda", ea.lambda, "default: the rulefit model's lambda");
    f->add_option("--gamma", ea.gamma);
    f->add_option("--weight-fn", ea.weight_fn, "general mode: one, delta_over_stdev or soft");
    f->add_option("--norm", ea.norm, "general mode: 1 or 2");
    f->add_option("--source", ea.source, "binned or raw delta magnitudes");
    f->add_option("--validation", ea.validation);
    f->add_flag("--grid", ea.grid, "select hyperparameters on --validation");
    f->add_option("--lambdas", ea.lambdas)->delimiter(',');
    f->add_option("--gammas", ea.gammas)->delimiter(',');
    f->add_option("--max-bins", ea.max_bins)->delimiter(',');
    f->add_option("--out", ea.out)->required();
    f->add_option("--out-scores", ea.out_scores);
    f->callback([&] { status = cmd_eaml(ea); });

    EvalArgs ev;
    auto* v = app.add_subcommand("eval", "AUC and balanced accuracy on one or more datasets");
    v->add_option("--model", ev.model)->required();
    v->add_option("--data", ev.data)->required();
    v->add_option("--tag", ev.tags);
    v->add_option("--out", ev.out);
    v->callback([&] { status = cmd_eval(ev); });

    CurveArgs lc;
    auto* c = app.add_subcommand("learning-curve", "AUC against training size for all and filtered rules");
    c->add_option("--model", lc.model)->required();
    c->add_option("--data", lc.data, "pool to subsample")->required();
    c->add_option("--test", lc.tests)->required();
    c->add_option("--deltas", lc.deltas, "adds the filtered subset");
    c->add_option("--max-bin", lc.max_bin);
    c->add_option("--sizes", lc.sizes)->delimiter(',');
    c->add_option("--subsamples", lc.subsamples);
    c->add_option("--lambda", lc.lambda);
    c->add_option("--seed", lc.seed);
    c->add_option("--out", lc.out);
    c->callback([&] { status = cmd_curve(lc); });

    ServeArgs sv;
    auto* w = app.add_subcommand("serve", "run the rating questionnaire service");
    w->add_option("--rules", sv.rules)->required();
    w->add_option("--store", sv.store)->required();
    w->add_option("--host", sv.host);
    w->add_option("--port", sv.port);
    w->add_option("--static", sv.static_dir, "directory served at /");
    w->callback([&] { status = cmd_serve(sv); });

    PipelineArgs pl;
    auto* p = app.add_subcommand("pipeline", "run every stage on generated data");
    p->add_option("--manifest", pl.manifest, "JSON manifest (default: built-in)");
    p->add_option("--out", pl.out)->required();
    p->callback([&] { status = cmd_pipeline(pl); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return static_cast<int>(ExitCode::usage);
    } catch (const Error& ex) {
        std::cerr << "error in " << stage(app) << ": " << ex.what() << "\n";
        return static_cast<int>(ex.exit_code());
    } catch (const std::exception& ex) {
        std::cerr << "error in " << stage(app) << ": " << ex.what() << "\n";
        return static_cast<int>(ExitCode::data);
    }
    return status;
}
