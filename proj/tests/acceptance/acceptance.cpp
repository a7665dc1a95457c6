// Acceptance suite: runs every acceptance criterion end to end and prints
// one pass/fail line per criterion. Returns the number of failed criteria.
//
// ORL_ACCEPT_ONLY=3,5 restricts the run to a subset (dev convenience).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "orl/harness.hpp"

using namespace orl;
namespace fs = std::filesystem;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void report(int id, bool pass, const std::string& what, const std::string& detail,
            double seconds) {
    std::ostringstream ss;
    ss << (pass ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << what;
    if (!detail.empty()) ss << " -- " << detail;
    ss << " (" << std::fixed << std::setprecision(1) << seconds << "s)";
    std::cout << ss.str() << std::endl;
}

// ---- finite differences over flattened parameters --------------------------

template <typename EvalFn>
Vector fd_grad(EvalFn&& eval, const std::vector<TensorView>& views, double h = 1e-5) {
    Vector theta = flatten(views);
    Vector g(theta.size());
    for (Index i = 0; i < theta.size(); ++i) {
        Vector tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        unflatten(tp, views);
        double lp = eval();
        unflatten(tm, views);
        double lm = eval();
        g[i] = (lp - lm) / (2.0 * h);
    }
    unflatten(theta, views);
    return g;
}

double rel_err(const Vector& analytic, const Vector& fd) {
    double scale = std::max(analytic.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff());
    double diff = (analytic - fd).cwiseAbs().maxCoeff();
    if (scale < 1e-10) return diff;
    return diff / scale;
}

OracleDataset kallus(Index n, uint64_t seed) {
    DgpSpec spec;
    spec.n = n;
    spec.seed = seed;
    return generate_kallus_synthetic(spec);
}

// =====================================================================
// 1. Gradient oracle: every trainable loss passes finite-difference
//    checks at relative error < 1e-3 on randomized small nets.
// =====================================================================
bool criterion1(std::string& detail) {
    OracleDataset d = kallus(64, 404);
    Matrix X = d.base.X.topRows(10);
    Vector A = d.base.A.head(10);
    Vector Y = d.base.Y.head(10);
    A[0] = 0;
    A[1] = 1;  // both arms present

    double worst = 0.0;
    std::ostringstream failures;

    // Losses are differentiable almost everywhere; jitter every parameter so
    // the check runs at a generic point (zero-init biases can otherwise park
    // hidden units exactly on the ReLU kink, where no gradient exists).
    auto jitter = [](std::vector<TensorView> views, uint64_t seed) {
        Rng rng(seed);
        for (auto& v : views)
            for (Index i = 0; i < v.size; ++i) v.data[i] += 0.05 * rng.normal();
    };

    auto check_rep = [&](const std::string& name, RepLearnerSpec spec, uint64_t seed) {
        Rng rng(seed);
        RepModel m = orl::detail::build_rep_model(spec, 2, rng);
        jitter(m.param_views(), seed + 500);
        RepGrads grads;
        grads.zero_like(m);
        orl::detail::eval_rep_batch(m, spec, X, A, Y, nullptr, &grads);
        Vector analytic = flatten(grads.views(m));
        auto views = m.param_views();
        Vector fd = fd_grad(
            [&] { return orl::detail::eval_rep_batch(m, spec, X, A, Y, nullptr, nullptr).total; },
            views);
        double e = rel_err(analytic, fd);
        worst = std::max(worst, e);
        if (e >= 1e-3) failures << " " << name << "=" << e;
    };

    RepLearnerSpec plug;  // plug-in factual MSE
    plug.family = RepFamily::TARNet;
    plug.rep_dim = 2;
    plug.rep_hidden = 3;
    plug.head_hidden = 2;
    check_rep("plugin_mse", plug, 1001);

    RepLearnerSpec bal_mmd = plug;  // balanced objective, MMD term
    bal_mmd.family = RepFamily::CFR;
    bal_mmd.balancing.alpha = 0.7;
    bal_mmd.balancing.metric = IpmKind::Mmd;
    bal_mmd.balancing.bandwidth = 1.0;
    check_rep("balanced_mmd", bal_mmd, 1002);

    RepLearnerSpec bal_wm = bal_mmd;  // balanced objective, Wasserstein term
    bal_wm.balancing.metric = IpmKind::Wm;
    bal_wm.balancing.epsilon = 0.1;
    bal_wm.balancing.iterations = 300;
    check_rep("balanced_wm", bal_wm, 1003);

    // BCE through the sigmoid propensity net
    {
        Rng rng(1004);
        DenseNet pi = DenseNet::make({2, 3, 1}, OutputAct::Sigmoid, rng);
        jitter(pi.param_views(), 1504);
        DenseNet::Cache cache;
        Matrix out = pi.forward_cached(X, cache);
        Matrix dOut = Matrix::Zero(X.rows(), 1);
        bce_loss(out, A, dOut);
        DenseNet::Grads g;
        g.zero_like(pi);
        pi.backward(cache, dOut, g);
        Vector analytic = flatten(pi.grad_views(g));
        auto views = pi.param_views();
        Vector fd = fd_grad(
            [&] {
                Matrix o = pi.forward(X);
                Matrix unused = Matrix::Zero(X.rows(), 1);
                return bce_loss(o, A, unused);
            },
            views);
        double e = rel_err(analytic, fd);
        worst = std::max(worst, e);
        if (e >= 1e-3) failures << " bce=" << e;
    }

    // the five orthogonal target losses through a randomized 2-4 unit net
    {
        Vector mu0 = d.mu0.head(10), mu1 = d.mu1.head(10), pi1 = d.pi1.head(10);
        Vector mu_mix =
            (Vector::Ones(10) - pi1).cwiseProduct(mu0) + pi1.cwiseProduct(mu1);
        Vector ps_cate = pseudo_dr_cate(Y, A, mu0, mu1, pi1);
        Vector ps_capo0 = pseudo_dr_capo(Y, A, 0, mu0, pi1);

        struct NamedLoss {
            std::string name;
            std::function<double(const Vector&, Vector*)> fn;
        };
        std::vector<NamedLoss> losses = {
            {"dr_k_capo", [&](const Vector& g, Vector* dg) { return loss_dr_k(g, ps_capo0, dg); }},
            {"dr_fs_capo",
             [&](const Vector& g, Vector* dg) {
                 return loss_dr_fs_capo(g, Y, A, 1, mu1, pi1, dg);
             }},
            {"dr_k_cate", [&](const Vector& g, Vector* dg) { return loss_dr_k(g, ps_cate, dg); }},
            {"r_cate",
             [&](const Vector& g, Vector* dg) { return loss_r_cate(g, Y, A, mu_mix, pi1, dg); }},
            {"ivw_cate",
             [&](const Vector& g, Vector* dg) { return loss_ivw_cate(g, ps_cate, A, pi1, dg); }},
        };
        uint64_t seed = 1010;
        for (auto& nl : losses) {
            Rng rng(seed++);
            DenseNet g = DenseNet::make({2, 4, 1}, OutputAct::Identity, rng);
            jitter(g.param_views(), seed + 500);
            DenseNet::Cache cache;
            Matrix out = g.forward_cached(X, cache);
            Vector dg;
            nl.fn(out.col(0), &dg);
            DenseNet::Grads grads;
            grads.zero_like(g);
            Matrix dOut = dg;
            g.backward(cache, dOut, grads);
            Vector analytic = flatten(g.grad_views(grads));
            auto views = g.param_views();
            Vector fd = fd_grad(
                [&] {
                    Matrix o = g.forward(X);
                    Vector col = o.col(0);
                    return nl.fn(col, nullptr);
                },
                views);
            double e = rel_err(analytic, fd);
            worst = std::max(worst, e);
            if (e >= 1e-3) failures << " " << nl.name << "=" << e;
        }
    }

    std::ostringstream ss;
    ss << "worst relative error " << std::scientific << std::setprecision(2) << worst;
    if (!failures.str().empty()) ss << "; failing:" << failures.str();
    detail = ss.str();
    return failures.str().empty();
}

// =====================================================================
// 2. Double robustness: binned conditional means of the DR CATE
//    pseudo-outcome match the closed-form tau within 3 SE per bin under
//    either nuisance distortion. The clipped estimator is exactly
//    unbiased wherever the 0.05 clip is inactive; distortion (b) is
//    therefore evaluated on the clip-inactive rows (the clipped corner
//    carries an irreducible O(1) bias by construction of the clip).
// =====================================================================
bool criterion2(std::string& detail) {
    OracleDataset d = kallus(100000, 3000);
    Index n = d.n();

    auto logit = [](double p) { return std::log(p / (1.0 - p)); };

    // (a) true mu, distorted propensity (logit shift +0.5), all rows
    Vector pi_distorted(n);
    for (Index i = 0; i < n; ++i) pi_distorted[i] = sigmoid(logit(d.pi1[i]) + 0.5);
    Vector pseudo_a = pseudo_dr_cate(d.base.Y, d.base.A, d.mu0, d.mu1, pi_distorted);

    // (b) true propensity, distorted mu (+1 on both arms), clip-inactive rows
    Vector mu0_d = d.mu0.array() + 1.0;
    Vector mu1_d = d.mu1.array() + 1.0;
    Vector pseudo_b = pseudo_dr_cate(d.base.Y, d.base.A, mu0_d, mu1_d, d.pi1);
    std::vector<Index> active;
    for (Index i = 0; i < n; ++i)
        if (d.pi1[i] >= kPropensityClip && 1.0 - d.pi1[i] >= kPropensityClip)
            active.push_back(i);

    auto binned_check = [&](const Vector& pseudo, const std::vector<Index>& rows, int grid,
                            int& worst_bin_n, double& worst_z) {
        // equiprobable grid x grid bins from per-coordinate quantiles
        std::vector<double> c1, c2;
        for (Index i : rows) {
            c1.push_back(d.base.X(i, 0));
            c2.push_back(d.base.X(i, 1));
        }
        std::sort(c1.begin(), c1.end());
        std::sort(c2.begin(), c2.end());
        auto edges = [&](const std::vector<double>& sorted) {
            std::vector<double> e;
            for (int k = 1; k < grid; ++k) e.push_back(sorted[sorted.size() * k / grid]);
            return e;
        };
        std::vector<double> e1 = edges(c1), e2 = edges(c2);
        auto bin_of = [](double v, const std::vector<double>& e) {
            int b = 0;
            while (b < static_cast<int>(e.size()) && v >= e[static_cast<size_t>(b)]) ++b;
            return b;
        };
        std::vector<std::vector<double>> bins(static_cast<size_t>(grid * grid));
        for (Index i : rows) {
            int b = bin_of(d.base.X(i, 0), e1) * grid + bin_of(d.base.X(i, 1), e2);
            bins[static_cast<size_t>(b)].push_back(pseudo[i] - d.tau[i]);
        }
        bool ok = true;
        worst_z = 0.0;
        worst_bin_n = static_cast<int>(rows.size());
        for (const auto& bin : bins) {
            if (bin.size() < 2) continue;
            double m = 0;
            for (double v : bin) m += v;
            m /= static_cast<double>(bin.size());
            double var = 0;
            for (double v : bin) var += (v - m) * (v - m);
            var /= static_cast<double>(bin.size() - 1);
            double se = std::sqrt(var / static_cast<double>(bin.size()));
            double z = std::abs(m) / std::max(se, 1e-12);
            if (z > worst_z) {
                worst_z = z;
                worst_bin_n = static_cast<int>(bin.size());
            }
            if (std::abs(m) > 3.0 * se) ok = false;
        }
        return ok;
    };

    std::vector<Index> all(n);
    for (Index i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    int bn_a = 0, bn_b = 0;
    double z_a = 0.0, z_b = 0.0;
    bool ok_a = binned_check(pseudo_a, all, 10, bn_a, z_a);
    bool ok_b = binned_check(pseudo_b, active, 10, bn_b, z_b);

    std::ostringstream ss;
    ss << "(a) distorted-pi worst |z|=" << std::setprecision(3) << z_a << " over 100 bins; "
       << "(b) distorted-mu worst |z|=" << z_b << " on " << active.size() << "/" << n
       << " clip-inactive rows";
    detail = ss.str();
    return ok_a && ok_b;
}

// =====================================================================
// 3. IPM axioms and the exact Wasserstein scaling homogeneity.
// =====================================================================
bool criterion3(std::string& detail) {
    Rng rng(33);
    auto sample = [&](Index n, double shift) {
        Matrix m(n, 3);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < 3; ++j) m(i, j) = rng.normal() + shift;
        return m;
    };
    bool ok = true;
    std::ostringstream why;
    for (int rep = 0; rep < 5; ++rep) {
        Matrix s0 = sample(9 + rep, 0.0);
        Matrix s1 = sample(12 - rep, 0.8);
        double m01 = mmd2(s0, s1, 1.0);
        double m10 = mmd2(s1, s0, 1.0);
        double w01 = wasserstein_sinkhorn(s0, s1, 0.1, 100);
        double w10 = wasserstein_sinkhorn(s1, s0, 0.1, 100);
        if (m01 < 0.0 || w01 < 0.0) { ok = false; why << " negativity"; }
        if (m01 != m10 || w01 != w10) { ok = false; why << " asymmetry"; }
        if (mmd2(s0, s0, 1.0) != 0.0 || wasserstein_sinkhorn(s0, s0, 0.1, 100) != 0.0) {
            ok = false;
            why << " nonzero-on-identical";
        }
        double worst_beta = 0.0;
        for (double beta : {0.3, 2.0, 9.0}) {
            double scaled =
                wasserstein_sinkhorn((beta * s0).eval(), (beta * s1).eval(), 0.1, 100);
            worst_beta = std::max(worst_beta, std::abs(scaled - beta * w01) / (beta * w01));
        }
        if (worst_beta > 1e-6) { ok = false; why << " homogeneity=" << worst_beta; }
    }
    detail = ok ? "nonnegative, symmetric, zero-on-identical; WM beta-scaling exact to 1e-6"
                : ("violations:" + why.str());
    return ok;
}

// =====================================================================
// 4. Expansion without balancing, contraction with it (flows).
// =====================================================================
bool criterion4(std::string& detail) {
    int n_seeds = 10;
    int expand_wins = 0, contract_wins = 0;
    std::ostringstream medians;
    for (int s = 1; s <= n_seeds; ++s) {
        OracleDataset train = kallus(500, 4000 + static_cast<uint64_t>(s));
        RepLearnerSpec spec;
        spec.family = RepFamily::CFR;
        spec.invertible = true;
        spec.rep_hidden = 8;
        spec.head_hidden = 8;
        spec.epochs = 200;
        spec.batch_size = 64;
        spec.learning_rate = 0.005;
        spec.balancing.metric = IpmKind::Mmd;

        spec.balancing.alpha = 0.0;
        TrainedRepresentation t0 =
            train_representation(spec, train.base, static_cast<uint64_t>(s));
        spec.balancing.alpha = 1.0;
        TrainedRepresentation t1 =
            train_representation(spec, train.base, static_cast<uint64_t>(s));

        double m0 = expansion_ratio(t0, train.base.X).median;
        double m1 = expansion_ratio(t1, train.base.X).median;
        if (m0 > 1.0) ++expand_wins;
        if (m1 < m0) ++contract_wins;
        medians << " s" << s << ":" << std::setprecision(3) << m0 << "/" << m1;
    }
    std::ostringstream ss;
    ss << "median ratio alpha=0 > 1 in " << expand_wins << "/10; alpha=1 < alpha=0 in "
       << contract_wins << "/10;" << medians.str();
    detail = ss.str();
    return expand_wins >= 7 && contract_wins >= 7;
}

// =====================================================================
// 5. RICB limit: huge balancing collapses a non-invertible representation
//    onto constants whose head predictions are the arm means, while the
//    oracle ATE differs from the difference in means.
// =====================================================================
bool criterion5(std::string& detail) {
    OracleDataset d = kallus(10000, 555);
    RepLearnerSpec spec;
    spec.family = RepFamily::CFR;
    spec.invertible = false;
    spec.rep_dim = 2;
    spec.rep_hidden = 8;
    spec.head_hidden = 8;
    spec.epochs = 200;
    spec.batch_size = 64;
    spec.learning_rate = 0.005;
    spec.balancing.metric = IpmKind::Mmd;
    spec.balancing.alpha = 1000.0;
    TrainedRepresentation tr = train_representation(spec, d.base, 5);

    Matrix phi = tr.phi(d.base.X);
    auto total_var = [](const Matrix& m) {
        double v = 0.0;
        for (Index j = 0; j < m.cols(); ++j) {
            double mean = m.col(j).mean();
            v += (m.col(j).array() - mean).square().sum() / static_cast<double>(m.rows() - 1);
        }
        return v;
    };
    double var_ratio = total_var(phi) / total_var(d.base.X);

    Matrix heads = tr.heads(d.base.X);
    double pred0 = heads.col(0).mean(), pred1 = heads.col(1).mean();
    double sd_pred0 = std::sqrt((heads.col(0).array() - pred0).square().mean());
    double sd_pred1 = std::sqrt((heads.col(1).array() - pred1).square().mean());

    std::vector<double> y0v, y1v;
    for (Index i = 0; i < d.n(); ++i) (d.base.A[i] > 0.5 ? y1v : y0v).push_back(d.base.Y[i]);
    auto mean_se = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - m) * (x - m);
        var /= static_cast<double>(v.size() - 1);
        return std::make_pair(m, std::sqrt(var / static_cast<double>(v.size())));
    };
    auto [arm0, se0] = mean_se(y0v);
    auto [arm1, se1] = mean_se(y1v);
    bool heads_match = std::abs(pred0 - arm0) <= 3.0 * se0 + sd_pred0 &&
                       std::abs(pred1 - arm1) <= 3.0 * se1 + sd_pred1;

    RicbReport probe = ricb_probe(d);

    std::ostringstream ss;
    ss << "rep variance ratio " << std::scientific << std::setprecision(2) << var_ratio
       << std::defaultfloat << "; heads (" << pred0 << ", " << pred1 << ") vs arm means ("
       << arm0 << ", " << arm1 << "); ATE " << probe.ate << " vs diff-in-means "
       << probe.diff_means;
    detail = ss.str();
    return var_ratio < 0.01 && heads_match && probe.ate_gap_flagged;
}

// ---- shared setting-1 artifacts (criteria 6, 7, 9) --------------------------

struct Setting1Artifacts {
    ExperimentConfig cfg;
    std::string dir_jobs1;
    std::string csv_jobs1;
    std::map<std::string, std::map<uint64_t, double>> delta;  // cell -> seed -> delta
};

ExperimentConfig setting1_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.dgp.kind = DgpKind::KallusSynthetic;
    cfg.dgp.seed = 20250808;
    cfg.n_train = 500;
    cfg.n_test = 2000;
    cfg.rep.rep_dim = 2;
    cfg.rep.rep_hidden = 8;
    cfg.rep.head_hidden = 4;
    cfg.rep.learning_rate = 0.01;
    cfg.rep.batch_size = 64;
    cfg.rep.epochs = 200;
    cfg.nuisance.hidden = 8;
    cfg.nuisance.learning_rate = 0.01;
    cfg.nuisance.weight_decay = 0.1;
    cfg.nuisance.batch_size = 64;
    cfg.nuisance.epochs = 200;
    cfg.target.hidden = 4;  // matches the outcome-head width
    cfg.target.learning_rate = 0.005;
    cfg.target.weight_decay = 0.01;
    cfg.target.batch_size = 64;
    cfg.target.epochs = 200;
    cfg.ema_lambda = 0.995;
    cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
    cfg.out_dir = out_dir;
    return cfg;
}

const Setting1Artifacts& setting1_artifacts() {
    static Setting1Artifacts art = [] {
        Setting1Artifacts a;
        a.dir_jobs1 = (fs::temp_directory_path() / "orl_accept_s1_jobs1").string();
        fs::remove_all(a.dir_jobs1);
        a.cfg = setting1_config(a.dir_jobs1);
        a.csv_jobs1 = run_setting1(a.cfg, 1);
        std::ifstream in(a.csv_jobs1);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto f = split_csv_line(line);
            if (f.size() != 13) continue;
            std::string cell = f[1] + "|" + f[6] + "|" + f[7] + "|" + f[9];
            a.delta[cell][std::stoull(f[8])] = std::stod(f[12]);
        }
        return a;
    }();
    return art;
}

// =====================================================================
// 6. Setting-1 analogue: mean delta(rPEHE) over 15 seeds is <= 0 for the
//    DR-K / R / IVW learners on representation inputs vs the TARNet
//    plug-in baseline.
// =====================================================================
bool criterion6(std::string& detail) {
    const Setting1Artifacts& art = setting1_artifacts();
    bool ok = true;
    std::ostringstream ss;
    for (const std::string& loss : {"dr_k_cate", "r_cate", "ivw_cate"}) {
        auto it = art.delta.find("tarnet|Phi|" + loss + "|cate");
        if (it == art.delta.end() || it->second.size() != 15) {
            detail = "missing cells for " + loss;
            return false;
        }
        double mean = 0.0;
        for (const auto& [seed, v] : it->second) mean += v;
        mean /= 15.0;
        double var = 0.0;
        for (const auto& [seed, v] : it->second) var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / 14.0);
        ss << loss << " " << std::showpos << std::setprecision(4) << mean << std::noshowpos
           << " +- " << sd << "; ";
        if (!(mean <= 0.0)) ok = false;
    }
    detail = "mean delta(rPEHE), V=Phi vs TARNet plug-in: " + ss.str();
    return ok;
}

// =====================================================================
// 7. Selector ordering: raw-covariate shallow targets are worse than
//    representation inputs for DR-K CAPO-0 on matched seeds.
// =====================================================================
bool criterion7(std::string& detail) {
    const Setting1Artifacts& art = setting1_artifacts();
    auto x_it = art.delta.find("tarnet|X|dr_k_capo0|capo0");
    auto phi_it = art.delta.find("tarnet|Phi|dr_k_capo0|capo0");
    if (x_it == art.delta.end() || phi_it == art.delta.end()) {
        detail = "missing cells";
        return false;
    }
    int wins = 0, total = 0;
    double mean_x = 0.0, mean_phi = 0.0;
    for (const auto& [seed, dx] : x_it->second) {
        auto pit = phi_it->second.find(seed);
        if (pit == phi_it->second.end()) continue;
        ++total;
        mean_x += dx;
        mean_phi += pit->second;
        if (dx > pit->second) ++wins;
    }
    std::ostringstream ss;
    ss << "delta(rMSE) X worse than Phi on " << wins << "/" << total
       << " seeds (means " << std::showpos << std::setprecision(4) << mean_x / total << " vs "
       << mean_phi / total << std::noshowpos << ")";
    detail = ss.str();
    return wins >= 10 && total == 15;
}

// =====================================================================
// 8. Setting-2 sweep: ratio curves for CFRFlow with MMD and WM, with the
//    DR-K ratio no worse than the plug-in ratio at the largest alpha.
// =====================================================================
bool criterion8(std::string& detail) {
    std::string dir = (fs::temp_directory_path() / "orl_accept_s2").string();
    fs::remove_all(dir);
    ExperimentConfig cfg = setting1_config(dir);
    // the sweep probes the asymptotic-regime direction; flows get the wider
    // heads/targets their warped inputs need
    cfg.n_train = 1000;
    cfg.rep.head_hidden = 8;
    cfg.target.hidden = 8;
    cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    cfg.sweep_invertible = {true};
    cfg.ipms = {IpmKind::Mmd, IpmKind::Wm};
    cfg.alphas = {0.0, 0.01, 0.05, 0.1, 0.5, 1.0};
    cfg.setting2_losses = {LossKind::DrKCate};
    run_setting2(cfg, 2);

    if (!fs::exists(dir + "/setting2_curves.csv")) {
        detail = "curves CSV missing";
        return false;
    }

    // Both curves are normalized by the same alpha=0 plug-in (TARFlow) run,
    // so the ratio comparison at the largest alpha is the direct performance
    // comparison there.
    std::map<std::string, std::map<uint64_t, std::map<double, double>>> plugin_vals, or_vals;
    std::ifstream in(dir + "/setting2_results.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 13 || f[9] != "cate") continue;
        double alpha = std::stod(f[4]);
        uint64_t seed = std::stoull(f[8]);
        double v = std::stod(f[10]);
        if (f[7] == "plugin") plugin_vals[f[5]][seed][alpha] = v;
        if (f[7] == "dr_k_cate") or_vals[f[5]][seed][alpha] = v;
    }
    bool ok = true;
    std::ostringstream ss;
    for (const std::string& ipm : {"mmd", "wm"}) {
        int wins = 0, total = 0;
        double plug_mean = 0.0, or_mean = 0.0;
        for (const auto& [seed, pv] : plugin_vals[ipm]) {
            auto ov = or_vals[ipm].find(seed);
            if (ov == or_vals[ipm].end()) continue;
            if (!pv.count(0.0) || !pv.count(1.0) || !ov->second.count(1.0)) continue;
            double base = pv.at(0.0);
            double plugin_ratio = pv.at(1.0) / base;
            double or_ratio = ov->second.at(1.0) / base;
            ++total;
            plug_mean += plugin_ratio;
            or_mean += or_ratio;
            if (or_ratio <= plugin_ratio) ++wins;
        }
        ss << ipm << ": OR <= plug-in at alpha=1 in " << wins << "/" << total << " (mean ratios "
           << std::setprecision(3) << or_mean / std::max(total, 1) << " vs "
           << plug_mean / std::max(total, 1) << "); ";
        if (!(wins >= 7 && total == 10)) ok = false;
    }
    detail = ss.str() + "curves in " + dir + "/setting2_curves.csv";
    return ok;
}

// =====================================================================
// 9. Determinism: rerunning the setting-1 grid with --jobs 4 reproduces
//    the --jobs 1 results CSV byte-for-byte.
// =====================================================================
bool criterion9(std::string& detail) {
    const Setting1Artifacts& art = setting1_artifacts();
    std::string dir4 = (fs::temp_directory_path() / "orl_accept_s1_jobs4").string();
    fs::remove_all(dir4);
    ExperimentConfig cfg = setting1_config(dir4);
    std::string csv4 = run_setting1(cfg, 4);
    auto read = [](const std::string& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    std::string a = read(art.csv_jobs1), b = read(csv4);
    detail = a == b ? "jobs=1 and jobs=4 results CSVs are byte-identical"
                    : "results CSVs differ between jobs=1 and jobs=4";
    return a == b && !a.empty();
}

// =====================================================================
// 10. DGP fidelity: Monte-Carlo means of the oracle columns match the
//     closed forms; the local effect at the origin is 2.
// =====================================================================
bool criterion10(std::string& detail) {
    OracleDataset d = kallus(100000, 1010);
    bool ok = true;
    std::ostringstream ss;

    // local-neighborhood regression of y1 - y0 near the origin
    std::vector<double> local;
    for (Index i = 0; i < d.n(); ++i)
        if (std::abs(d.base.X(i, 0)) < 0.2 && std::abs(d.base.X(i, 1)) < 0.2)
            local.push_back(d.y1[i] - d.y0[i]);
    double m = 0;
    for (double v : local) m += v;
    m /= static_cast<double>(local.size());
    double var = 0;
    for (double v : local) var += (v - m) * (v - m);
    var /= static_cast<double>(local.size() - 1);
    double se = std::sqrt(var / static_cast<double>(local.size()));
    ss << "local effect at origin " << std::setprecision(4) << m << " (se " << se << ", n="
       << local.size() << ") vs 2";
    if (std::abs(m - 2.0) > 3.0 * se) ok = false;

    // propensity column calibrates the treatment frequency
    double mean_a = d.base.A.mean();
    double se_a = std::sqrt(mean_a * (1 - mean_a) / static_cast<double>(d.n()));
    if (std::abs(d.pi1.mean() - mean_a) > 3.0 * se_a) {
        ok = false;
        ss << "; propensity/treatment mismatch";
    }

    // potential-outcome noise is centered on the oracle means
    Vector r0 = d.y0 - d.mu0, r1 = d.y1 - d.mu1;
    double se_r = 1.0 / std::sqrt(static_cast<double>(d.n()));
    if (std::abs(r0.mean()) > 3.0 * se_r || std::abs(r1.mean()) > 3.0 * se_r) {
        ok = false;
        ss << "; potential-outcome noise off-center";
    }

    detail = ss.str();
    return ok;
}

}  // namespace

int main() {
    std::set<int> only;
    if (const char* env = std::getenv("ORL_ACCEPT_ONLY")) {
        std::stringstream ss(env);
        std::string tok;
        while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    }

    struct Criterion {
        int id;
        const char* what;
        bool (*fn)(std::string&);
    };
    std::vector<Criterion> criteria = {
        {1, "gradient oracle for every trainable loss (rel err < 1e-3)", criterion1},
        {2, "double robustness of the DR CATE pseudo-outcome (3 SE per bin)", criterion2},
        {3, "IPM axioms and exact WM scaling homogeneity", criterion3},
        {4, "flow expansion without balancing, contraction with it (>= 7/10 seeds)", criterion4},
        {5, "RICB limit: collapse to arm means under huge balancing", criterion5},
        {6, "setting-1: mean delta(rPEHE) <= 0 for DR-K/R/IVW on V=Phi", criterion6},
        {7, "setting-1: selector X worse than Phi for DR-K CAPO-0 (>= 10/15 seeds)", criterion7},
        {8, "setting-2: ratio curves; OR ratio <= plug-in ratio at max alpha (>= 7/10)",
         criterion8},
        {9, "determinism: jobs=4 reproduces jobs=1 byte-for-byte", criterion9},
        {10, "DGP fidelity: oracle columns match closed forms (3 SE)", criterion10},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        Timer t;
        std::string detail;
        bool pass = false;
        try {
            pass = c.fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        report(c.id, pass, c.what, detail, t.seconds());
        if (!pass) ++failures;
    }
    if (failures == 0)
        std::cout << "all acceptance criteria passed" << std::endl;
    else
        std::cout << failures << " acceptance criteria FAILED" << std::endl;
    return failures;
}
