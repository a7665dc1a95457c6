#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

#include "orl/eval.hpp"
#include "orl/tune.hpp"

namespace orl {

// Flat, versioned experiment description. Field order never matters: the
// hash is taken over the canonical (key-sorted) JSON dump.
struct ExperimentConfig {
    int schema_version = 1;

    // data source: synthetic DGP or an oracle CSV split front/back
    DgpSpec dgp;
    std::string csv_path;
    Index n_train = 500;
    Index n_test = 2000;

    // stage-0 base settings
    RepLearnerSpec rep;
    // stage-1
    NuisanceHyper nuisance;
    // stage-2 (fixed, never tuned)
    TargetHyper target;
    double ema_lambda = 0.995;

    // setting-1 grid
    std::vector<RepFamily> families{RepFamily::TARNet, RepFamily::BNN};
    std::vector<std::string> selectors{"Heads", "X", "Xdeep", "Phi"};
    std::vector<LossKind> losses{LossKind::DrKCapo0, LossKind::DrFsCapo0, LossKind::DrKCapo1,
                                 LossKind::DrFsCapo1, LossKind::DrKCate, LossKind::RCate,
                                 LossKind::IvwCate};

    // setting-2 sweep
    std::vector<double> alphas{0.0, 0.01, 0.05, 0.1, 0.5, 1.0};
    std::vector<IpmKind> ipms{IpmKind::Mmd, IpmKind::Wm};
    std::vector<bool> sweep_invertible{true, false};
    std::vector<LossKind> setting2_losses{LossKind::DrKCapo0, LossKind::DrKCapo1,
                                          LossKind::DrKCate};

    std::vector<uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};

    bool tuning_enabled = false;
    int tune_draws = 50;
    int tune_folds = 5;
    double tune_multiplier = 2.0;  // R

    std::string out_dir = "results";

    void validate() const {
        if (schema_version != 1) throw ConfigError("unsupported schema_version");
        if (families.empty() || selectors.empty() || losses.empty())
            throw ConfigError("setting-1 grid must be nonempty");
        if (seeds.empty()) throw ConfigError("seeds list must be nonempty");
        if (n_train < 1 || n_test < 1) throw ConfigError("n_train and n_test must be >= 1");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema_version"] = schema_version;
        j["dgp_kind"] = dgp.kind == DgpKind::KallusSynthetic ? "kallus" : "hcmnist";
        j["dgp_seed"] = dgp.seed;
        j["gamma_star"] = dgp.gamma_star;
        j["blob_sigma"] = dgp.blob_sigma;
        j["csv_path"] = csv_path;
        j["n_train"] = n_train;
        j["n_test"] = n_test;
        j["rep_family"] = orl::to_string(rep.family);
        j["rep_invertible"] = rep.invertible;
        j["rep_dim"] = rep.rep_dim;
        j["rep_hidden"] = rep.rep_hidden;
        j["head_hidden"] = rep.head_hidden;
        j["flow_blocks"] = rep.flow_blocks;
        j["rep_learning_rate"] = rep.learning_rate;
        j["rep_weight_decay"] = rep.weight_decay;
        j["rep_batch"] = rep.batch_size;
        j["rep_epochs"] = rep.epochs;
        j["alpha"] = rep.balancing.alpha;
        j["ipm"] = orl::to_string(rep.balancing.metric);
        j["mmd_bandwidth"] = rep.balancing.bandwidth;
        j["sinkhorn_epsilon"] = rep.balancing.epsilon;
        j["sinkhorn_iterations"] = rep.balancing.iterations;
        j["nuisance_hidden"] = nuisance.hidden;
        j["nuisance_learning_rate"] = nuisance.learning_rate;
        j["nuisance_weight_decay"] = nuisance.weight_decay;
        j["nuisance_batch"] = nuisance.batch_size;
        j["nuisance_epochs"] = nuisance.epochs;
        j["target_hidden"] = target.hidden;
        j["target_learning_rate"] = target.learning_rate;
        j["target_weight_decay"] = target.weight_decay;
        j["target_batch"] = target.batch_size;
        j["target_epochs"] = target.epochs;
        j["ema_lambda"] = ema_lambda;
        std::vector<std::string> fam;
        for (auto f : families) fam.push_back(orl::to_string(f));
        j["families"] = fam;
        j["selectors"] = selectors;
        std::vector<std::string> ls;
        for (auto l : losses) ls.push_back(orl::to_string(l));
        j["losses"] = ls;
        j["alphas"] = alphas;
        std::vector<std::string> ip;
        for (auto i : ipms) ip.push_back(orl::to_string(i));
        j["ipms"] = ip;
        j["sweep_invertible"] = sweep_invertible;
        std::vector<std::string> l2;
        for (auto l : setting2_losses) l2.push_back(orl::to_string(l));
        j["setting2_losses"] = l2;
        j["seeds"] = seeds;
        j["tuning_enabled"] = tuning_enabled;
        j["tune_draws"] = tune_draws;
        j["tune_folds"] = tune_folds;
        j["tune_multiplier"] = tune_multiplier;
        j["out_dir"] = out_dir;
        return j;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        c.schema_version = j.value("schema_version", 1);
        std::string kind = j.value("dgp_kind", "kallus");
        if (kind == "kallus")
            c.dgp.kind = DgpKind::KallusSynthetic;
        else if (kind == "hcmnist")
            c.dgp.kind = DgpKind::HcMnistLike;
        else
            throw ConfigError("unknown dgp_kind: " + kind);
        c.dgp.seed = j.value("dgp_seed", 0ULL);
        c.dgp.gamma_star = j.value("gamma_star", std::exp(1.0));
        c.dgp.blob_sigma = j.value("blob_sigma", 1.0);
        c.csv_path = j.value("csv_path", std::string());
        c.n_train = j.value("n_train", 500);
        c.n_test = j.value("n_test", 2000);
        c.rep.family = rep_family_from_string(j.value("rep_family", "tarnet"));
        c.rep.invertible = j.value("rep_invertible", false);
        c.rep.rep_dim = j.value("rep_dim", 2);
        c.rep.rep_hidden = j.value("rep_hidden", 8);
        c.rep.head_hidden = j.value("head_hidden", 8);
        c.rep.flow_blocks = j.value("flow_blocks", 3);
        c.rep.learning_rate = j.value("rep_learning_rate", 0.005);
        c.rep.weight_decay = j.value("rep_weight_decay", 0.0);
        c.rep.batch_size = j.value("rep_batch", 64);
        c.rep.epochs = j.value("rep_epochs", 200);
        c.rep.balancing.alpha = j.value("alpha", 0.0);
        c.rep.balancing.metric = ipm_from_string(j.value("ipm", "mmd"));
        c.rep.balancing.bandwidth = j.value("mmd_bandwidth", 0.0);
        c.rep.balancing.epsilon = j.value("sinkhorn_epsilon", 0.1);
        c.rep.balancing.iterations = j.value("sinkhorn_iterations", 100);
        c.nuisance.hidden = j.value("nuisance_hidden", 8);
        c.nuisance.learning_rate = j.value("nuisance_learning_rate", 0.005);
        c.nuisance.weight_decay = j.value("nuisance_weight_decay", 0.0);
        c.nuisance.batch_size = j.value("nuisance_batch", 64);
        c.nuisance.epochs = j.value("nuisance_epochs", 200);
        c.target.hidden = j.value("target_hidden", 8);
        c.target.learning_rate = j.value("target_learning_rate", 0.005);
        c.target.weight_decay = j.value("target_weight_decay", 0.0);
        c.target.batch_size = j.value("target_batch", 64);
        c.target.epochs = j.value("target_epochs", 200);
        c.ema_lambda = j.value("ema_lambda", 0.995);
        if (j.count("families")) {
            c.families.clear();
            for (const auto& s : j["families"]) c.families.push_back(rep_family_from_string(s));
        }
        if (j.count("selectors")) c.selectors = j["selectors"].get<std::vector<std::string>>();
        if (j.count("losses")) {
            c.losses.clear();
            for (const auto& s : j["losses"]) c.losses.push_back(loss_kind_from_string(s));
        }
        if (j.count("alphas")) c.alphas = j["alphas"].get<std::vector<double>>();
        if (j.count("ipms")) {
            c.ipms.clear();
            for (const auto& s : j["ipms"]) c.ipms.push_back(ipm_from_string(s));
        }
        if (j.count("sweep_invertible"))
            c.sweep_invertible = j["sweep_invertible"].get<std::vector<bool>>();
        if (j.count("setting2_losses")) {
            c.setting2_losses.clear();
            for (const auto& s : j["setting2_losses"])
                c.setting2_losses.push_back(loss_kind_from_string(s));
        }
        if (j.count("seeds")) c.seeds = j["seeds"].get<std::vector<uint64_t>>();
        c.tuning_enabled = j.value("tuning_enabled", false);
        c.tune_draws = j.value("tune_draws", 50);
        c.tune_folds = j.value("tune_folds", 5);
        c.tune_multiplier = j.value("tune_multiplier", 2.0);
        c.out_dir = j.value("out_dir", std::string("results"));
        const char* env = std::getenv("ORL_OUT_DIR");
        if (env != nullptr && env[0] != '\0') c.out_dir = env;
        return c;
    }

    std::string config_hash() const {
        nlohmann::json j = to_json();
        j.erase("out_dir");  // output location does not change the experiment
        char buf[20];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(j.dump())));
        return buf;
    }
};

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

// One row of the results CSV. Failed cells carry nan values so that every
// grid cell is accounted for exactly once.
struct ResultRow {
    std::string config_hash, family;
    int invertible = 0;
    std::string metric_kind;  // rmse | rpehe
    double alpha = 0.0;
    std::string ipm, selector, loss;
    uint64_t seed = 0;
    std::string quantity;
    double value = 0.0, baseline_value = 0.0, delta = 0.0;

    std::string key() const {
        std::ostringstream ss;
        ss << config_hash << "|" << family << "|" << invertible << "|" << fmt_full(alpha) << "|"
           << ipm << "|" << selector << "|" << loss << "|" << seed << "|" << quantity;
        return ss.str();
    }

    std::string csv_line() const {
        std::ostringstream ss;
        ss << config_hash << "," << family << "," << invertible << "," << metric_kind << ","
           << fmt_full(alpha) << "," << ipm << "," << selector << "," << loss << "," << seed << ","
           << quantity << "," << fmt_full(value) << "," << fmt_full(baseline_value) << ","
           << fmt_full(delta);
        return ss.str();
    }
};

inline const char* kResultsHeader =
    "config_hash,family,invertible,metric_kind,alpha,ipm,selector,loss,seed,quantity,value,"
    "baseline_value,delta";

struct ExpansionDiag {
    std::string family;
    int invertible = 0;
    std::string ipm;
    double alpha = 0.0;
    uint64_t seed = 0;
    double median = 0.0, q25 = 0.0, q75 = 0.0;
};

namespace detail {

struct SplitData {
    OracleDataset train, test;
};

// All stages train on a standardized outcome; predictions are mapped back
// before any metric touches them. Effects are scale-only (no offset).
struct OutcomeScaler {
    double mean = 0.0, sd = 1.0;

    static OutcomeScaler fit(const Vector& y) {
        OutcomeScaler s;
        s.mean = y.mean();
        double var = (y.array() - s.mean).square().sum() /
                     std::max<double>(1.0, static_cast<double>(y.size()) - 1.0);
        s.sd = std::max(std::sqrt(var), 1e-12);
        return s;
    }

    Dataset standardized(const Dataset& d) const {
        Dataset out = d;
        out.Y = (d.Y.array() - mean) / sd;
        return out;
    }

    Vector raw_capo(const Vector& pred) const { return (pred.array() * sd + mean).matrix(); }
    Vector raw_cate(const Vector& pred) const { return pred * sd; }
};

inline OracleDataset slice_oracle(const OracleDataset& d, Index start, Index len) {
    OracleDataset out;
    out.base.X = d.base.X.middleRows(start, len);
    out.base.A = d.base.A.segment(start, len);
    out.base.Y = d.base.Y.segment(start, len);
    out.mu0 = d.mu0.segment(start, len);
    out.mu1 = d.mu1.segment(start, len);
    out.pi1 = d.pi1.segment(start, len);
    out.tau = d.tau.segment(start, len);
    out.y0 = d.y0.segment(start, len);
    out.y1 = d.y1.segment(start, len);
    return out;
}

// Per-seed train/test draw: disjoint datasets from the same DGP family.
inline SplitData make_split(const ExperimentConfig& cfg, uint64_t seed) {
    SplitData s;
    if (!cfg.csv_path.empty()) {
        auto loaded = load_csv(cfg.csv_path);
        if (!std::holds_alternative<OracleDataset>(loaded))
            throw ConfigError("experiment CSV must carry oracle columns (mu0,mu1,pi1,y0,y1)");
        const OracleDataset& d = std::get<OracleDataset>(loaded);
        if (d.n() < cfg.n_train + cfg.n_test)
            throw ConfigError("CSV has fewer rows than n_train + n_test");
        s.train = slice_oracle(d, 0, cfg.n_train);
        s.test = slice_oracle(d, cfg.n_train, cfg.n_test);
        return s;
    }
    DgpSpec tr = cfg.dgp;
    tr.n = cfg.n_train;
    tr.seed = derive_seed(derive_seed(cfg.dgp.seed, "train"), seed);
    DgpSpec te = cfg.dgp;
    te.n = cfg.n_test;
    te.seed = derive_seed(derive_seed(cfg.dgp.seed, "test"), seed);
    s.train = generate(tr);
    s.test = generate(te);
    return s;
}

inline double metric_for(Quantity q, const Vector& pred, const OracleDataset& test) {
    switch (q) {
        case Quantity::Capo0: return rmse_capo(pred, test.mu0);
        case Quantity::Capo1: return rmse_capo(pred, test.mu1);
        case Quantity::Cate: return rpehe(pred, test.tau);
    }
    throw OrlError("unreachable");
}

inline std::string metric_kind_of(Quantity q) {
    return q == Quantity::Cate ? "rpehe" : "rmse";
}

// Simple deterministic work pool: task t writes only results[t], so the
// output is independent of scheduling.
template <typename Fn>
void parallel_tasks(Index n_tasks, int jobs, Fn&& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1) {
        for (Index t = 0; t < n_tasks; ++t) fn(t);
        return;
    }
    std::atomic<Index> next{0};
    std::vector<std::thread> pool;
    int n_threads = std::min<Index>(jobs, n_tasks);
    std::exception_ptr first_error = nullptr;
    std::mutex err_mu;
    for (int w = 0; w < n_threads; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                Index t = next.fetch_add(1);
                if (t >= n_tasks) return;
                try {
                    fn(t);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline RepLearnerSpec family_spec(const ExperimentConfig& cfg, RepFamily family, bool invertible,
                                  IpmKind ipm, double alpha) {
    RepLearnerSpec spec = cfg.rep;
    spec.family = family;
    spec.invertible = invertible;
    spec.balancing.metric = ipm;
    spec.balancing.alpha = alpha;
    return spec;
}

// Optional per-run random-grid tuning of the stage-0 and stage-1
// hyperparameters (stage-2 settings stay fixed, apart from the target width
// following the tuned outcome-head width).
inline void tune_stages(const ExperimentConfig& cfg, const Dataset& train, uint64_t seed,
                        RepLearnerSpec& spec, NuisanceHyper& pi_hyper,
                        NuisanceHyper& outcome_hyper, TargetHyper& target,
                        bool needs_outcome_net) {
    if (!cfg.tuning_enabled) return;
    Index d_phi = spec.invertible ? train.dim() : spec.rep_dim;
    TuneGrid grid = TuneGrid::defaults(cfg.tune_multiplier, train.dim(), d_phi);
    TuneResult rep_res = tune(TuneStage::Rep, grid, spec, train, derive_seed(seed, "tune-rep"),
                              cfg.tune_draws, cfg.tune_folds);
    spec.learning_rate = rep_res.chosen.learning_rate;
    spec.weight_decay = rep_res.chosen.weight_decay;
    spec.batch_size = rep_res.chosen.batch_size;
    spec.rep_hidden = rep_res.chosen.rep_hidden;
    spec.head_hidden = rep_res.chosen.head_hidden;
    target.hidden = rep_res.chosen.head_hidden;

    TuneResult pi_res = tune(TuneStage::Propensity, grid, spec, train,
                             derive_seed(seed, "tune-propensity"), cfg.tune_draws, cfg.tune_folds);
    pi_hyper.hidden = pi_res.chosen.rep_hidden;
    pi_hyper.learning_rate = pi_res.chosen.learning_rate;
    pi_hyper.weight_decay = pi_res.chosen.weight_decay;
    pi_hyper.batch_size = pi_res.chosen.batch_size;

    if (needs_outcome_net) {
        TuneResult out_res = tune(TuneStage::Outcome, grid, spec, train,
                                  derive_seed(seed, "tune-outcome"), cfg.tune_draws,
                                  cfg.tune_folds);
        outcome_hyper.hidden = out_res.chosen.rep_hidden;
        outcome_hyper.learning_rate = out_res.chosen.learning_rate;
        outcome_hyper.weight_decay = out_res.chosen.weight_decay;
        outcome_hyper.batch_size = out_res.chosen.batch_size;
    }
}

inline OrthogonalLossSpec stage2_spec(LossKind kind, const std::string& selector,
                                      const TargetHyper& target, double ema_lambda) {
    OrthogonalLossSpec s;
    s.kind = kind;
    s.target = target;
    s.ema_lambda = ema_lambda;
    if (selector == "X") {
        s.selector = RepSelector::RawX;
    } else if (selector == "Xdeep") {
        s.selector = RepSelector::RawX;
        s.deep_target = true;
    } else if (selector == "Phi") {
        s.selector = RepSelector::Phi;
    } else if (selector == "Heads") {
        s.selector = RepSelector::Heads;
    } else {
        throw ConfigError("unknown selector: " + selector);
    }
    return s;
}

}  // namespace detail

// ---- Setting 1: selector/loss grid over unbalanced representations --------

inline std::vector<ResultRow> setting1_pipeline(const ExperimentConfig& cfg, uint64_t seed) {
    std::string hash = cfg.config_hash();
    detail::SplitData split = detail::make_split(cfg, seed);
    detail::OutcomeScaler scaler = detail::OutcomeScaler::fit(split.train.base.Y);
    Dataset train = scaler.standardized(split.train.base);
    std::vector<ResultRow> rows;
    for (RepFamily family : cfg.families) {
        RepLearnerSpec spec = detail::family_spec(cfg, family, false, cfg.rep.balancing.metric, 0.0);
        uint64_t rep_seed = derive_seed(derive_seed(seed, "s1-rep"), fnv1a64(to_string(family)));
        NuisanceHyper pi_hyper = cfg.nuisance;
        NuisanceHyper outcome_hyper = cfg.nuisance;
        TargetHyper target = cfg.target;
        detail::tune_stages(cfg, train, rep_seed, spec, pi_hyper, outcome_hyper, target, false);
        TrainedRepresentation tr = train_representation(spec, train, rep_seed);
        DenseNet pi = fit_propensity(train, pi_hyper, derive_seed(rep_seed, "s1-pi"));
        NuisanceSet ns = assemble_nuisances(&tr, train, NuisancePolicy::reuse_heads(),
                                            outcome_hyper, rep_seed, &pi);

        Matrix heads = tr.heads(split.test.base.X);
        double base_vals[3] = {
            detail::metric_for(Quantity::Capo0, scaler.raw_capo(heads.col(0)), split.test),
            detail::metric_for(Quantity::Capo1, scaler.raw_capo(heads.col(1)), split.test),
            detail::metric_for(Quantity::Cate,
                               scaler.raw_cate((heads.col(1) - heads.col(0)).eval()),
                               split.test)};
        Quantity quants[3] = {Quantity::Capo0, Quantity::Capo1, Quantity::Cate};
        for (int q = 0; q < 3; ++q) {
            ResultRow r;
            r.config_hash = hash;
            r.family = to_string(family);
            r.invertible = 0;
            r.metric_kind = detail::metric_kind_of(quants[q]);
            r.alpha = 0.0;
            r.ipm = "none";
            r.selector = "none";
            r.loss = "plugin";
            r.seed = seed;
            r.quantity = to_string(quants[q]);
            r.value = base_vals[q];
            r.baseline_value = base_vals[q];
            r.delta = 0.0;
            rows.push_back(r);
        }

        for (const std::string& sel : cfg.selectors) {
            for (LossKind kind : cfg.losses) {
                ResultRow r;
                r.config_hash = hash;
                r.family = to_string(family);
                r.invertible = 0;
                r.alpha = 0.0;
                r.ipm = "none";
                r.selector = sel;
                r.loss = to_string(kind);
                r.seed = seed;
                Quantity q = quantity_of(kind);
                r.quantity = to_string(q);
                r.metric_kind = detail::metric_kind_of(q);
                r.baseline_value = base_vals[static_cast<int>(q)];
                try {
                    OrthogonalLossSpec s2 =
                        detail::stage2_spec(kind, sel, target, cfg.ema_lambda);
                    uint64_t t_seed = derive_seed(derive_seed(rep_seed, "s1-target"),
                                                  fnv1a64(sel + "|" + to_string(kind)));
                    TargetModel tm = fit_target(s2, tr, ns, train, t_seed);
                    Vector pred = tm.predict(split.test.base.X);
                    pred = q == Quantity::Cate ? scaler.raw_cate(pred) : scaler.raw_capo(pred);
                    r.value = detail::metric_for(q, pred, split.test);
                    r.delta = r.value - r.baseline_value;
                } catch (const OrlError&) {
                    r.value = std::numeric_limits<double>::quiet_NaN();
                    r.delta = std::numeric_limits<double>::quiet_NaN();
                }
                rows.push_back(r);
            }
        }
    }
    return rows;
}

// ---- Setting 2: balancing-strength sweep -----------------------------------

struct Setting2Cell {
    bool invertible = false;
    IpmKind ipm = IpmKind::Mmd;
    double alpha = 0.0;
    uint64_t seed = 0;
};

inline std::vector<Setting2Cell> setting2_cells(const ExperimentConfig& cfg) {
    std::vector<Setting2Cell> cells;
    for (bool inv : cfg.sweep_invertible)
        for (IpmKind ipm : cfg.ipms)
            for (double alpha : cfg.alphas)
                for (uint64_t seed : cfg.seeds) cells.push_back({inv, ipm, alpha, seed});
    return cells;
}

inline std::vector<ResultRow> setting2_pipeline(const ExperimentConfig& cfg,
                                                const Setting2Cell& cell, ExpansionDiag* diag) {
    std::string hash = cfg.config_hash();
    detail::SplitData split = detail::make_split(cfg, cell.seed);
    detail::OutcomeScaler scaler = detail::OutcomeScaler::fit(split.train.base.Y);
    Dataset train = scaler.standardized(split.train.base);
    RepLearnerSpec spec =
        detail::family_spec(cfg, RepFamily::CFR, cell.invertible, cell.ipm, cell.alpha);
    std::ostringstream key;
    key << "s2|" << cell.invertible << "|" << to_string(cell.ipm) << "|" << fmt_full(cell.alpha);
    uint64_t rep_seed = derive_seed(derive_seed(cell.seed, "s2-rep"), fnv1a64(key.str()));
    NuisanceHyper pi_hyper = cfg.nuisance;
    NuisanceHyper outcome_hyper = cfg.nuisance;
    TargetHyper target = cfg.target;
    NuisancePolicy policy;
    policy.kind = default_outcome_policy(spec);
    detail::tune_stages(cfg, train, rep_seed, spec, pi_hyper, outcome_hyper, target,
                        policy.kind == NuisancePolicy::Kind::FreshOutcomeNet);
    TrainedRepresentation tr = train_representation(spec, train, rep_seed);
    DenseNet pi = fit_propensity(train, pi_hyper, derive_seed(rep_seed, "s2-pi"));
    NuisanceSet ns = assemble_nuisances(&tr, train, policy, outcome_hyper, rep_seed, &pi);

    std::string fam_name = cell.invertible ? "cfr_flow" : "cfr";
    Matrix heads = tr.heads(split.test.base.X);
    double base_vals[3] = {
        detail::metric_for(Quantity::Capo0, scaler.raw_capo(heads.col(0)), split.test),
        detail::metric_for(Quantity::Capo1, scaler.raw_capo(heads.col(1)), split.test),
        detail::metric_for(Quantity::Cate,
                           scaler.raw_cate((heads.col(1) - heads.col(0)).eval()), split.test)};
    std::vector<ResultRow> rows;
    Quantity quants[3] = {Quantity::Capo0, Quantity::Capo1, Quantity::Cate};
    for (int q = 0; q < 3; ++q) {
        ResultRow r;
        r.config_hash = hash;
        r.family = fam_name;
        r.invertible = cell.invertible ? 1 : 0;
        r.metric_kind = detail::metric_kind_of(quants[q]);
        r.alpha = cell.alpha;
        r.ipm = to_string(cell.ipm);
        r.selector = "none";
        r.loss = "plugin";
        r.seed = cell.seed;
        r.quantity = to_string(quants[q]);
        r.value = base_vals[q];
        r.baseline_value = base_vals[q];
        r.delta = 0.0;
        rows.push_back(r);
    }
    for (LossKind kind : cfg.setting2_losses) {
        ResultRow r;
        r.config_hash = hash;
        r.family = fam_name;
        r.invertible = cell.invertible ? 1 : 0;
        r.alpha = cell.alpha;
        r.ipm = to_string(cell.ipm);
        r.selector = "Phi";
        r.loss = to_string(kind);
        r.seed = cell.seed;
        Quantity q = quantity_of(kind);
        r.quantity = to_string(q);
        r.metric_kind = detail::metric_kind_of(q);
        r.baseline_value = base_vals[static_cast<int>(q)];
        try {
            OrthogonalLossSpec s2 = detail::stage2_spec(kind, "Phi", target, cfg.ema_lambda);
            uint64_t t_seed =
                derive_seed(derive_seed(rep_seed, "s2-target"), fnv1a64(to_string(kind)));
            TargetModel tm = fit_target(s2, tr, ns, train, t_seed);
            Vector pred = tm.predict(split.test.base.X);
            pred = q == Quantity::Cate ? scaler.raw_cate(pred) : scaler.raw_capo(pred);
            r.value = detail::metric_for(q, pred, split.test);
            r.delta = r.value - r.baseline_value;
        } catch (const OrlError&) {
            r.value = std::numeric_limits<double>::quiet_NaN();
            r.delta = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(r);
    }
    if (diag != nullptr) {
        ExpansionStats st = expansion_ratio(tr, split.test.base.X, 10000, cell.seed);
        diag->family = fam_name;
        diag->invertible = cell.invertible ? 1 : 0;
        diag->ipm = to_string(cell.ipm);
        diag->alpha = cell.alpha;
        diag->seed = cell.seed;
        diag->median = st.median;
        diag->q25 = st.q25;
        diag->q75 = st.q75;
    }
    return rows;
}

// ---- persistence, resume, merge --------------------------------------------

namespace detail {

inline std::map<std::string, std::string> read_existing_rows(const std::string& path) {
    std::map<std::string, std::string> rows;  // key -> full line
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 13) continue;
        std::string key = f[0] + "|" + f[1] + "|" + f[2] + "|" + f[4] + "|" + f[5] + "|" + f[6] +
                          "|" + f[7] + "|" + f[8] + "|" + f[9];
        rows[key] = line;
    }
    return rows;
}

inline void write_rows(const std::string& path,
                       const std::map<std::string, std::string>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write results CSV: " + path);
    out << kResultsHeader << "\n";
    for (const auto& [key, line] : rows) out << line << "\n";
}

}  // namespace detail

// Runs the Setting-1 grid: per seed, Stage 0 for each family, Stage 1, and
// the full selector x loss grid in Stage 2, reporting deltas against the
// plug-in baseline. Completed (config hash, seed, cell) rows found in the
// output file are not recomputed. The written CSV is byte-identical for any
// jobs count.
inline std::string run_setting1(const ExperimentConfig& cfg, int jobs = 1) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/setting1_results.csv";
    auto existing = detail::read_existing_rows(path);

    // a seed task is skipped when all its expected cells are already present
    std::string hash = cfg.config_hash();
    auto seed_complete = [&](uint64_t seed) {
        for (RepFamily family : cfg.families) {
            for (const char* q : {"capo0", "capo1", "cate"}) {
                std::string key = hash + "|" + to_string(family) + "|0|" + fmt_full(0.0) +
                                  "|none|none|plugin|" + std::to_string(seed) + "|" + q;
                if (!existing.count(key)) return false;
            }
            for (const std::string& sel : cfg.selectors)
                for (LossKind kind : cfg.losses) {
                    std::string key = hash + "|" + to_string(family) + "|0|" + fmt_full(0.0) +
                                      "|none|" + sel + "|" + to_string(kind) + "|" +
                                      std::to_string(seed) + "|" +
                                      to_string(quantity_of(kind));
                    if (!existing.count(key)) return false;
                }
        }
        return true;
    };

    std::vector<uint64_t> todo;
    for (uint64_t s : cfg.seeds)
        if (!seed_complete(s)) todo.push_back(s);

    std::vector<std::vector<ResultRow>> results(todo.size());
    detail::parallel_tasks(static_cast<Index>(todo.size()), jobs, [&](Index t) {
        results[static_cast<size_t>(t)] = setting1_pipeline(cfg, todo[static_cast<size_t>(t)]);
    });

    for (const auto& rows : results)
        for (const ResultRow& r : rows) existing.emplace(r.key(), r.csv_line());
    detail::write_rows(path, existing);
    return path;
}

// Runs the Setting-2 sweep over (invertible, IPM, alpha, seed) cells with
// CFR/CFRFlow, writes per-cell rows plus expansion diagnostics and the
// plot-ready ratio-vs-alpha curves (ratios are against the matched-seed
// alpha=0 run).
inline std::string run_setting2(const ExperimentConfig& cfg, int jobs = 1) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/setting2_results.csv";
    auto existing = detail::read_existing_rows(path);
    std::string hash = cfg.config_hash();

    std::vector<Setting2Cell> cells = setting2_cells(cfg);
    auto cell_complete = [&](const Setting2Cell& c) {
        std::string fam = c.invertible ? "cfr_flow" : "cfr";
        for (const char* q : {"capo0", "capo1", "cate"}) {
            std::string key = hash + "|" + fam + "|" + (c.invertible ? "1" : "0") + "|" +
                              fmt_full(c.alpha) + "|" + to_string(c.ipm) + "|none|plugin|" +
                              std::to_string(c.seed) + "|" + q;
            if (!existing.count(key)) return false;
        }
        for (LossKind kind : cfg.setting2_losses) {
            std::string key = hash + "|" + fam + "|" + (c.invertible ? "1" : "0") + "|" +
                              fmt_full(c.alpha) + "|" + to_string(c.ipm) + "|Phi|" +
                              to_string(kind) + "|" + std::to_string(c.seed) + "|" +
                              to_string(quantity_of(kind));
            if (!existing.count(key)) return false;
        }
        return true;
    };

    std::vector<Setting2Cell> todo;
    for (const auto& c : cells)
        if (!cell_complete(c)) todo.push_back(c);

    std::vector<std::vector<ResultRow>> results(todo.size());
    std::vector<ExpansionDiag> diags(todo.size());
    detail::parallel_tasks(static_cast<Index>(todo.size()), jobs, [&](Index t) {
        results[static_cast<size_t>(t)] =
            setting2_pipeline(cfg, todo[static_cast<size_t>(t)], &diags[static_cast<size_t>(t)]);
    });

    for (const auto& rows : results)
        for (const ResultRow& r : rows) existing.emplace(r.key(), r.csv_line());
    detail::write_rows(path, existing);

    // diagnostics (merged the same way; keyed by cell)
    {
        std::string dpath = cfg.out_dir + "/setting2_diagnostics.csv";
        std::map<std::string, std::string> drows;
        {
            std::ifstream in(dpath);
            std::string line;
            bool first = true;
            while (in && std::getline(in, line)) {
                if (first) {
                    first = false;
                    continue;
                }
                if (line.empty()) continue;
                auto f = split_csv_line(line);
                if (f.size() != 8) continue;
                drows[f[0] + "|" + f[1] + "|" + f[2] + "|" + f[3] + "|" + f[4]] = line;
            }
        }
        for (const auto& d : diags) {
            if (d.family.empty()) continue;
            std::ostringstream line;
            line << d.family << "," << d.invertible << "," << d.ipm << "," << fmt_full(d.alpha)
                 << "," << d.seed << "," << fmt_full(d.median) << "," << fmt_full(d.q25) << ","
                 << fmt_full(d.q75);
            drows[d.family + "|" + std::to_string(d.invertible) + "|" + d.ipm + "|" +
                  fmt_full(d.alpha) + "|" + std::to_string(d.seed)] = line.str();
        }
        std::ofstream out(dpath, std::ios::trunc);
        out << "family,invertible,ipm,alpha,seed,expansion_median,expansion_q25,expansion_q75\n";
        for (const auto& [k, line] : drows) out << line << "\n";
    }

    // ratio-vs-alpha curves: per (family, ipm, learner, quantity, alpha),
    // mean +- SE over seeds of value(alpha) / value(alpha=0), matched seeds
    {
        std::map<std::string, ResultRow> all;
        for (const auto& [key, line] : existing) {
            auto f = split_csv_line(line);
            ResultRow r;
            r.config_hash = f[0];
            r.family = f[1];
            r.invertible = std::stoi(f[2]);
            r.metric_kind = f[3];
            r.alpha = std::stod(f[4]);
            r.ipm = f[5];
            r.selector = f[6];
            r.loss = f[7];
            r.seed = std::stoull(f[8]);
            r.quantity = f[9];
            r.value = std::stod(f[10]);
            all[key] = r;
        }
        // index by (family, ipm, loss, quantity, seed) -> alpha -> value
        std::map<std::string, std::map<double, double>> series;
        for (const auto& [key, r] : all) {
            if (r.config_hash != hash) continue;
            std::string gk = r.family + "|" + r.ipm + "|" + r.loss + "|" + r.quantity + "|" +
                             std::to_string(r.seed);
            series[gk][r.alpha] = r.value;
        }
        std::map<std::string, std::map<double, std::vector<double>>> ratios;
        for (const auto& [gk, by_alpha] : series) {
            auto it0 = by_alpha.find(0.0);
            if (it0 == by_alpha.end() || !(it0->second > 0.0)) continue;
            std::string group = gk.substr(0, gk.rfind('|'));  // drop seed
            for (const auto& [alpha, v] : by_alpha)
                if (std::isfinite(v)) ratios[group][alpha].push_back(v / it0->second);
        }
        std::string cpath = cfg.out_dir + "/setting2_curves.csv";
        std::ofstream out(cpath, std::ios::trunc);
        out << "family,ipm,loss,quantity,alpha,mean_ratio,se_ratio,n_seeds\n";
        for (const auto& [group, by_alpha] : ratios) {
            std::string fam, ipm, loss, quant;
            {
                std::vector<std::string> parts;
                std::string cur;
                for (char ch : group) {
                    if (ch == '|') {
                        parts.push_back(cur);
                        cur.clear();
                    } else
                        cur += ch;
                }
                parts.push_back(cur);
                fam = parts[0];
                ipm = parts[1];
                loss = parts[2];
                quant = parts[3];
            }
            for (const auto& [alpha, vals] : by_alpha) {
                double mean = 0.0;
                for (double v : vals) mean += v;
                mean /= static_cast<double>(vals.size());
                double var = 0.0;
                for (double v : vals) var += (v - mean) * (v - mean);
                var /= std::max<double>(1.0, static_cast<double>(vals.size()) - 1.0);
                double se = std::sqrt(var / static_cast<double>(vals.size()));
                out << fam << "," << ipm << "," << loss << "," << quant << "," << fmt_full(alpha)
                    << "," << fmt_full(mean) << "," << fmt_full(se) << "," << vals.size() << "\n";
            }
        }
    }
    return path;
}

}  // namespace orl
