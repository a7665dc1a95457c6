#pragma once

#include <iostream>

#include "orl/nuisance.hpp"

namespace orl {

enum class Quantity { Capo0, Capo1, Cate };

inline std::string to_string(Quantity q) {
    switch (q) {
        case Quantity::Capo0: return "capo0";
        case Quantity::Capo1: return "capo1";
        case Quantity::Cate: return "cate";
    }
    return "cate";
}

// The five orthogonal target losses. There is no first-stage-style (FS)
// CATE variant; requesting one is a configuration error by construction.
enum class LossKind { DrKCapo0, DrFsCapo0, DrKCapo1, DrFsCapo1, DrKCate, RCate, IvwCate };

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::DrKCapo0: return "dr_k_capo0";
        case LossKind::DrFsCapo0: return "dr_fs_capo0";
        case LossKind::DrKCapo1: return "dr_k_capo1";
        case LossKind::DrFsCapo1: return "dr_fs_capo1";
        case LossKind::DrKCate: return "dr_k_cate";
        case LossKind::RCate: return "r_cate";
        case LossKind::IvwCate: return "ivw_cate";
    }
    return "dr_k_cate";
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "dr_k_capo0") return LossKind::DrKCapo0;
    if (s == "dr_fs_capo0") return LossKind::DrFsCapo0;
    if (s == "dr_k_capo1") return LossKind::DrKCapo1;
    if (s == "dr_fs_capo1") return LossKind::DrFsCapo1;
    if (s == "dr_k_cate") return LossKind::DrKCate;
    if (s == "r_cate") return LossKind::RCate;
    if (s == "ivw_cate") return LossKind::IvwCate;
    throw ConfigError("unknown loss kind: " + s);
}

inline Quantity quantity_of(LossKind k) {
    switch (k) {
        case LossKind::DrKCapo0:
        case LossKind::DrFsCapo0: return Quantity::Capo0;
        case LossKind::DrKCapo1:
        case LossKind::DrFsCapo1: return Quantity::Capo1;
        default: return Quantity::Cate;
    }
}

struct TargetHyper {
    int hidden = 8;
    double learning_rate = 0.005;
    double weight_decay = 0.01;
    int batch_size = 64;  // b_T
    int epochs = 200;
};

struct OrthogonalLossSpec {
    LossKind kind = LossKind::DrKCate;
    RepSelector selector = RepSelector::Phi;
    bool deep_target = false;  // mirror the representation network's depth
    TargetHyper target;
    double ema_lambda = 0.995;

    void validate() const {
        if (!(ema_lambda > 0.0 && ema_lambda < 1.0))
            throw ConfigError("ema_lambda must be in (0,1)");
        if (target.batch_size < 1 || target.epochs < 1 || target.hidden < 1)
            throw ConfigError("invalid target hyperparameters");
    }
};

// ---- pseudo-outcomes -------------------------------------------------------

// DR pseudo-outcome for CAPO a: alpha_a(A,x) (Y - mu_a) + mu_a.
inline double pseudo_dr_capo(double y, double A, int a, double mu_a, double pi1) {
    double w = clipped_inverse_weight(a, A, pi1);
    return w * (y - mu_a) + mu_a;
}

inline Vector pseudo_dr_capo(const Vector& y, const Vector& A, int a, const Vector& mu_a,
                             const Vector& pi1) {
    Vector out(y.size());
    for (Index i = 0; i < y.size(); ++i) out[i] = pseudo_dr_capo(y[i], A[i], a, mu_a[i], pi1[i]);
    return out;
}

// DR pseudo-outcome for the CATE with clipped weights:
// (alpha_1 - alpha_0)(Y - mu_A) + mu_1 - mu_0.
inline double pseudo_dr_cate(double y, double A, double mu0, double mu1, double pi1) {
    double a0 = clipped_inverse_weight(0, A, pi1);
    double a1 = clipped_inverse_weight(1, A, pi1);
    double mu_fact = A > 0.5 ? mu1 : mu0;
    return (a1 - a0) * (y - mu_fact) + mu1 - mu0;
}

inline Vector pseudo_dr_cate(const Vector& y, const Vector& A, const Vector& mu0,
                             const Vector& mu1, const Vector& pi1) {
    Vector out(y.size());
    for (Index i = 0; i < y.size(); ++i)
        out[i] = pseudo_dr_cate(y[i], A[i], mu0[i], mu1[i], pi1[i]);
    return out;
}

// ---- batch losses (value plus dL/dg) ---------------------------------------

// Plain squared distance to a pseudo-outcome (DR-K for CAPOs and CATE).
inline double loss_dr_k(const Vector& g, const Vector& pseudo, Vector* dg = nullptr) {
    Index n = g.size();
    Vector r = g - pseudo;
    if (dg) *dg = 2.0 * r / static_cast<double>(n);
    return r.squaredNorm() / static_cast<double>(n);
}

// DR-FS CAPO loss: alpha (Y - g)^2 + (1 - alpha)(mu_a - g)^2 with clipped alpha.
inline double loss_dr_fs_capo(const Vector& g, const Vector& y, const Vector& A, int a,
                              const Vector& mu_a, const Vector& pi1, Vector* dg = nullptr) {
    Index n = g.size();
    double loss = 0.0;
    if (dg) dg->setZero(n);
    for (Index i = 0; i < n; ++i) {
        double w = clipped_inverse_weight(a, A[i], pi1[i]);
        double ry = y[i] - g[i];
        double rm = mu_a[i] - g[i];
        loss += w * ry * ry + (1.0 - w) * rm * rm;
        if (dg) (*dg)[i] = (-2.0 * w * ry - 2.0 * (1.0 - w) * rm) / static_cast<double>(n);
    }
    return loss / static_cast<double>(n);
}

// R loss in product form: ((Y - mu_mix) - (A - pi1) g)^2. No inverse weights.
inline double loss_r_cate(const Vector& g, const Vector& y, const Vector& A,
                          const Vector& mu_mix, const Vector& pi1, Vector* dg = nullptr) {
    Index n = g.size();
    double loss = 0.0;
    if (dg) dg->setZero(n);
    for (Index i = 0; i < n; ++i) {
        double rho = A[i] - pi1[i];
        double e = (y[i] - mu_mix[i]) - rho * g[i];
        loss += e * e;
        if (dg) (*dg)[i] = -2.0 * rho * e / static_cast<double>(n);
    }
    return loss / static_cast<double>(n);
}

// IVW loss: (A - pi1)^2 (pseudo_dr_cate - g)^2.
inline double loss_ivw_cate(const Vector& g, const Vector& pseudo, const Vector& A,
                            const Vector& pi1, Vector* dg = nullptr) {
    Index n = g.size();
    double loss = 0.0;
    if (dg) dg->setZero(n);
    for (Index i = 0; i < n; ++i) {
        double rho = A[i] - pi1[i];
        double w = rho * rho;
        double r = pseudo[i] - g[i];
        loss += w * r * r;
        if (dg) (*dg)[i] = -2.0 * w * r / static_cast<double>(n);
    }
    return loss / static_cast<double>(n);
}

// Per-row nuisance material shared by every Stage-2 loss.
struct Stage2Data {
    Matrix V;
    Vector y, A, mu0, mu1, pi1, mu_mix, pseudo;
};

inline Stage2Data make_stage2_data(const OrthogonalLossSpec& spec,
                                   const TrainedRepresentation& tr, const NuisanceSet& ns,
                                   const Dataset& data) {
    Stage2Data s;
    s.V = rep_inputs(tr, data.X, spec.selector);
    s.y = data.Y;
    s.A = data.A;
    s.mu0 = ns.mu0(data.X);
    s.mu1 = ns.mu1(data.X);
    s.pi1 = ns.pi1(data.X);
    switch (spec.kind) {
        case LossKind::DrKCapo0:
            s.pseudo = pseudo_dr_capo(s.y, s.A, 0, s.mu0, s.pi1);
            break;
        case LossKind::DrKCapo1:
            s.pseudo = pseudo_dr_capo(s.y, s.A, 1, s.mu1, s.pi1);
            break;
        case LossKind::DrKCate:
        case LossKind::IvwCate:
            s.pseudo = pseudo_dr_cate(s.y, s.A, s.mu0, s.mu1, s.pi1);
            break;
        case LossKind::RCate:
            s.mu_mix = (Vector::Ones(s.pi1.size()) - s.pi1).cwiseProduct(s.mu0) +
                       s.pi1.cwiseProduct(s.mu1);
            break;
        default:
            break;  // DR-FS variants consume y / mu_a / pi1 directly
    }
    return s;
}

// Batch loss dispatch over precomputed rows.
inline double stage2_loss(LossKind kind, const Vector& g, const Stage2Data& s,
                          const std::vector<Index>& rows, Vector* dg) {
    Index b = static_cast<Index>(rows.size());
    auto gather = [&rows, b](const Vector& v) {
        Vector out(b);
        for (Index k = 0; k < b; ++k) out[k] = v[rows[static_cast<size_t>(k)]];
        return out;
    };
    switch (kind) {
        case LossKind::DrKCapo0:
        case LossKind::DrKCapo1:
        case LossKind::DrKCate:
            return loss_dr_k(g, gather(s.pseudo), dg);
        case LossKind::DrFsCapo0:
            return loss_dr_fs_capo(g, gather(s.y), gather(s.A), 0, gather(s.mu0), gather(s.pi1),
                                   dg);
        case LossKind::DrFsCapo1:
            return loss_dr_fs_capo(g, gather(s.y), gather(s.A), 1, gather(s.mu1), gather(s.pi1),
                                   dg);
        case LossKind::RCate:
            return loss_r_cate(g, gather(s.y), gather(s.A), gather(s.mu_mix), gather(s.pi1), dg);
        case LossKind::IvwCate:
            return loss_ivw_cate(g, gather(s.pseudo), gather(s.A), gather(s.pi1), dg);
    }
    throw OrlError("unreachable");
}

// Fitted target model. Predictions are served from the EMA shadow weights;
// predict() applies the input selector internally.
struct TargetModel {
    DenseNet g_raw;   // final optimizer iterate
    DenseNet g_ema;   // EMA shadow, used for prediction
    LossKind kind = LossKind::DrKCate;
    RepSelector selector = RepSelector::Phi;
    bool deep_target = false;
    Quantity quantity = Quantity::Cate;
    TrainedRepresentation rep;  // selector transform
    bool degenerate_r_weights = false;
    std::vector<double> loss_history;  // per-epoch means
    uint64_t spec_hash = 0;

    Vector predict(const Matrix& X_raw) const {
        Matrix V = rep_inputs(rep, X_raw, selector);
        return g_ema.forward(V).col(0);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "orl-target";
        j["version"] = 1;
        j["kind"] = orl::to_string(kind);
        j["selector"] = orl::to_string(selector);
        j["deep_target"] = deep_target;
        j["quantity"] = orl::to_string(quantity);
        j["spec_hash"] = spec_hash;
        j["g_raw"] = g_raw.to_json();
        j["g_ema"] = g_ema.to_json();
        j["rep"] = rep.to_json();
        return j;
    }
};

// Stage 2: minibatch AdamW on the chosen orthogonal loss with an EMA of the
// target weights. Deterministic given seed.
inline TargetModel fit_target(const OrthogonalLossSpec& spec, const TrainedRepresentation& tr,
                              const NuisanceSet& ns, const Dataset& data, uint64_t seed) {
    spec.validate();
    Stage2Data s = make_stage2_data(spec, tr, ns, data);
    Index n = data.n();
    Index d_v = s.V.cols();

    TargetModel model;
    model.kind = spec.kind;
    model.selector = spec.selector;
    model.deep_target = spec.deep_target;
    model.quantity = quantity_of(spec.kind);
    model.rep = tr;
    {
        nlohmann::json sj;
        sj["kind"] = to_string(spec.kind);
        sj["selector"] = to_string(spec.selector);
        sj["deep_target"] = spec.deep_target;
        sj["hidden"] = spec.target.hidden;
        sj["lr"] = spec.target.learning_rate;
        sj["batch"] = spec.target.batch_size;
        sj["epochs"] = spec.target.epochs;
        sj["ema_lambda"] = spec.ema_lambda;
        model.spec_hash = fnv1a64(sj.dump());
    }

    if (spec.kind == LossKind::RCate) {
        double max_resid = (s.A - s.pi1).cwiseAbs().maxCoeff();
        if (max_resid < 1e-4) {
            model.degenerate_r_weights = true;
            std::cerr << "[orl] warning: residual treatment A - pi1 is numerically zero; "
                         "the R loss does not identify g\n";
        }
    }

    Rng init_rng(derive_seed(seed, "stage2-init"));
    std::vector<int> dims;
    if (spec.deep_target) {
        dims = {static_cast<int>(d_v), tr.spec.rep_hidden, static_cast<int>(tr.model.d_phi),
                tr.spec.head_hidden, 1};
    } else {
        dims = {static_cast<int>(d_v), spec.target.hidden, 1};
    }
    DenseNet g = DenseNet::make(dims, OutputAct::Identity, init_rng);

    AdamW opt;
    opt.lr = spec.target.learning_rate;
    opt.weight_decay = spec.target.weight_decay;
    EmaTracker ema;
    ema.lambda = spec.ema_lambda;
    ema.init(g.param_views());

    Index b = std::min<Index>(spec.target.batch_size, n);
    for (int epoch = 0; epoch < spec.target.epochs; ++epoch) {
        Rng order(derive_seed(derive_seed(seed, "stage2-epoch"), static_cast<uint64_t>(epoch)));
        std::vector<Index> perm = order.permutation(n);
        double ep_loss = 0.0;
        Index n_batches = 0;
        for (Index start = 0; start < n; start += b) {
            Index len = std::min<Index>(b, n - start);
            std::vector<Index> rows(perm.begin() + start, perm.begin() + start + len);
            Matrix Vb(len, d_v);
            for (Index k = 0; k < len; ++k) Vb.row(k) = s.V.row(rows[static_cast<size_t>(k)]);
            DenseNet::Cache cache;
            Matrix out = g.forward_cached(Vb, cache);
            Vector gv = out.col(0);
            Vector dg;
            double loss = stage2_loss(spec.kind, gv, s, rows, &dg);
            if (!std::isfinite(loss)) throw NonFiniteLoss("stage-2 loss diverged");
            DenseNet::Grads grads;
            grads.zero_like(g);
            Matrix dOut = dg;
            g.backward(cache, dOut, grads);
            auto pv = g.param_views();
            opt.step(pv, g.grad_views(grads));
            ema.update(g.param_views());
            ep_loss += loss;
            ++n_batches;
        }
        model.loss_history.push_back(ep_loss / static_cast<double>(std::max<Index>(n_batches, 1)));
    }

    model.g_raw = g;
    model.g_ema = g;
    {
        auto pv = model.g_ema.param_views();
        ema.write_to(pv);
    }
    return model;
}

}  // namespace orl
