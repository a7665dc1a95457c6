// Command-line front end for the OR-learner benchmark harness.

#include <CLI11.hpp>
#include <iomanip>
#include <iostream>

#include "orl/harness.hpp"

using namespace orl;

namespace {

ExperimentConfig config_with_overrides(const std::string& path, uint64_t* seed_override,
                                       const std::string& out_override) {
    ExperimentConfig cfg = load_config(path);
    if (seed_override != nullptr) cfg.dgp.seed = *seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    return cfg;
}

int cmd_gen_data(const std::string& config_path, uint64_t* seed_override, std::string out,
                 Index n_override) {
    ExperimentConfig cfg = config_with_overrides(config_path, seed_override, "");
    DgpSpec spec = cfg.dgp;
    spec.n = n_override > 0 ? n_override : cfg.n_train;
    OracleDataset d = generate(spec);
    if (out.empty()) out = "data.csv";
    save_csv(d, out);
    std::cout << "wrote " << d.n() << " rows (" << d.dim() << " covariates) to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, uint64_t* seed_override, std::string out) {
    ExperimentConfig cfg = config_with_overrides(config_path, seed_override, "");
    detail::SplitData split = detail::make_split(cfg, cfg.dgp.seed);
    Vector bwcfr_pi1;
    const Vector* bwcfr = nullptr;
    if (cfg.rep.family == RepFamily::Bwcfr) {
        DenseNet pi = fit_propensity(split.train.base, cfg.nuisance,
                                     derive_seed(cfg.dgp.seed, "cli-bwcfr-pi"));
        bwcfr_pi1 = pi.forward(split.train.base.X).col(0);
        bwcfr = &bwcfr_pi1;
    }
    TrainedRepresentation tr =
        train_representation(cfg.rep, split.train.base, derive_seed(cfg.dgp.seed, "cli-train"),
                             bwcfr);
    if (out.empty()) out = "representation.json";
    std::ofstream f(out);
    f << tr.to_json().dump(2) << "\n";
    std::cout << "trained " << to_string(cfg.rep.family)
              << (cfg.rep.invertible ? " (invertible)" : "") << ", final factual loss "
              << tr.history.factual.back() << ", saved to " << out << "\n";
    return 0;
}

int cmd_tune(const std::string& config_path, uint64_t* seed_override, const std::string& stage,
             std::string out) {
    ExperimentConfig cfg = config_with_overrides(config_path, seed_override, "");
    detail::SplitData split = detail::make_split(cfg, cfg.dgp.seed);
    Index d_phi = cfg.rep.invertible ? split.train.dim() : cfg.rep.rep_dim;
    TuneGrid grid = TuneGrid::defaults(cfg.tune_multiplier, split.train.dim(), d_phi);
    TuneStage ts;
    if (stage == "rep")
        ts = TuneStage::Rep;
    else if (stage == "propensity")
        ts = TuneStage::Propensity;
    else if (stage == "outcome")
        ts = TuneStage::Outcome;
    else
        throw ConfigError("--stage must be rep, propensity, or outcome");
    TuneResult res = tune(ts, grid, cfg.rep, split.train.base,
                          derive_seed(cfg.dgp.seed, "cli-tune"), cfg.tune_draws, cfg.tune_folds);
    nlohmann::json j;
    j["stage"] = stage;
    j["chosen_index"] = res.chosen_index;
    j["cv_score"] = res.chosen_score;
    j["learning_rate"] = res.chosen.learning_rate;
    j["weight_decay"] = res.chosen.weight_decay;
    j["batch_size"] = res.chosen.batch_size;
    j["rep_hidden"] = res.chosen.rep_hidden;
    j["head_hidden"] = res.chosen.head_hidden;
    std::cout << j.dump(2) << "\n";
    if (!out.empty()) {
        std::ofstream f(out);
        f << j.dump(2) << "\n";
    }
    return 0;
}

int cmd_probe_ricb(const std::string& config_path, uint64_t* seed_override, Index n_override) {
    ExperimentConfig cfg = config_with_overrides(config_path, seed_override, "");
    DgpSpec spec = cfg.dgp;
    if (n_override > 0) spec.n = n_override;
    RicbReport r = ricb_probe(spec);
    auto line = [](const std::string& name, double v, double se, bool flagged) {
        std::cout << "  " << std::left << std::setw(22) << name << std::setprecision(6) << v
                  << "  (se " << se << ")" << (flagged ? "  [gap > 3 SE]" : "") << "\n";
    };
    std::cout << "adjusted vs unadjusted constant-representation quantities:\n";
    line("APO E[Y[0]]", r.apo0, r.se_apo0, false);
    line("arm mean E[Y|A=0]", r.arm_mean0, r.se_arm0, r.gap0_flagged);
    line("APO E[Y[1]]", r.apo1, r.se_apo1, false);
    line("arm mean E[Y|A=1]", r.arm_mean1, r.se_arm1, r.gap1_flagged);
    line("ATE", r.ate, r.se_ate, false);
    line("difference in means", r.diff_means, r.se_diff, r.ate_gap_flagged);
    return 0;
}

int cmd_export_grid(const std::string& model_path, std::string out, double lo, double hi,
                    int steps) {
    std::ifstream f(model_path);
    if (!f) throw ConfigError("cannot open model file: " + model_path);
    nlohmann::json j;
    f >> j;
    CouplingFlow flow;
    if (j.value("format", "") == "orl-representation") {
        TrainedRepresentation tr = TrainedRepresentation::from_json(j);
        if (!tr.model.phi_flow)
            throw ConfigError("representation is not invertible; no flow to export");
        flow = *tr.model.phi_flow;
    } else {
        flow = CouplingFlow::from_json(j);
    }
    if (out.empty()) out = "grid.csv";
    grid_transform_export(flow, lo, hi, steps, out);
    std::cout << "wrote grid table to " << out << "\n";
    return 0;
}

int cmd_report(const std::string& results_path) {
    std::ifstream in(results_path);
    if (!in) throw ConfigError("cannot open results file: " + results_path);
    std::string line;
    std::getline(in, line);
    struct Agg {
        std::vector<double> deltas, values;
    };
    std::map<std::string, Agg> groups;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 13) continue;
        std::string key =
            f[1] + " inv=" + f[2] + " alpha=" + f[4] + " ipm=" + f[5] + " V=" + f[6] + " " + f[7] +
            " [" + f[9] + "]";
        double v = std::stod(f[10]);
        double d = std::stod(f[12]);
        if (std::isfinite(v)) {
            groups[key].values.push_back(v);
            groups[key].deltas.push_back(d);
        }
    }
    auto mean_std = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - m) * (x - m);
        var /= std::max<double>(1.0, static_cast<double>(v.size()) - 1.0);
        return std::make_pair(m, std::sqrt(var));
    };
    std::cout << std::left << std::setw(64) << "cell" << std::setw(10) << "n" << std::setw(24)
              << "metric (mean +- std)" << "delta (mean +- std)\n";
    for (const auto& [key, agg] : groups) {
        auto [vm, vs] = mean_std(agg.values);
        auto [dm, ds] = mean_std(agg.deltas);
        std::ostringstream v1, v2;
        v1 << std::setprecision(4) << vm << " +- " << vs;
        v2 << std::setprecision(4) << std::showpos << dm << " +- " << std::noshowpos << ds;
        std::cout << std::left << std::setw(64) << key << std::setw(10) << agg.values.size()
                  << std::setw(24) << v1.str() << v2.str() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OR-learner pipeline: representation learning, nuisance estimation, and "
                 "Neyman-orthogonal target fitting with synthetic oracle benchmarks"};
    app.require_subcommand(1);

    std::string config_path, out, model_path, results_path, stage = "rep";
    uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
    Index n_override = 0;
    double grid_lo = -2.0, grid_hi = 2.0;
    int grid_steps = 11;

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* copt = sub->add_option("--config", config_path, "experiment config (JSON)");
        if (needs_config) copt->required();
        sub->add_option("--seed", seed, "override the base seed")->each([&](const std::string&) {
            seed_set = true;
        });
        sub->add_option("--out", out, "output path");
        sub->add_option("--jobs", jobs, "parallel jobs")->check(CLI::PositiveNumber);
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic oracle dataset as CSV");
    add_common(gen);
    gen->add_option("--n", n_override, "number of rows (default: n_train)");

    CLI::App* train = app.add_subcommand("train", "train a representation network");
    add_common(train);

    CLI::App* tune_cmd = app.add_subcommand("tune", "random grid search with k-fold CV");
    add_common(tune_cmd);
    tune_cmd->add_option("--stage", stage, "rep | propensity | outcome");

    CLI::App* s1 = app.add_subcommand("setting1", "selector/loss grid over TARNet and BNN");
    add_common(s1);

    CLI::App* s2 = app.add_subcommand("setting2", "balancing-strength sweep with CFR/CFRFlow");
    add_common(s2);

    CLI::App* ricb = app.add_subcommand("probe-ricb", "compare adjusted vs unadjusted quantities");
    add_common(ricb);
    ricb->add_option("--n", n_override, "Monte Carlo sample size");

    CLI::App* grid = app.add_subcommand("export-grid", "export a flow's grid transform as CSV");
    grid->add_option("--model", model_path, "trained representation or flow JSON")->required();
    grid->add_option("--out", out, "output CSV path");
    grid->add_option("--lo", grid_lo, "grid lower bound");
    grid->add_option("--hi", grid_hi, "grid upper bound");
    grid->add_option("--steps", grid_steps, "grid points per axis");

    CLI::App* report = app.add_subcommand("report", "aggregate a results CSV (mean +- std)");
    report->add_option("--results", results_path, "results CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    uint64_t* seed_ptr = seed_set ? &seed : nullptr;
    try {
        if (gen->parsed()) return cmd_gen_data(config_path, seed_ptr, out, n_override);
        if (train->parsed()) return cmd_train(config_path, seed_ptr, out);
        if (tune_cmd->parsed()) return cmd_tune(config_path, seed_ptr, stage, out);
        if (s1->parsed()) {
            ExperimentConfig cfg = config_with_overrides(config_path, seed_ptr, out);
            std::string path = run_setting1(cfg, jobs);
            std::cout << "wrote " << path << "\n";
            return 0;
        }
        if (s2->parsed()) {
            ExperimentConfig cfg = config_with_overrides(config_path, seed_ptr, out);
            std::string path = run_setting2(cfg, jobs);
            std::cout << "wrote " << path << "\n";
            return 0;
        }
        if (ricb->parsed()) return cmd_probe_ricb(config_path, seed_ptr, n_override);
        if (grid->parsed()) return cmd_export_grid(model_path, out, grid_lo, grid_hi, grid_steps);
        if (report->parsed()) return cmd_report(results_path);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const MissingColumn& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NonBinaryTreatment& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NonFiniteValue& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
