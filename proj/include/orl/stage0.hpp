#pragma once

#include <functional>
#include <optional>

#include "orl/balance.hpp"
#include "orl/dataset.hpp"
#include "orl/flow.hpp"
#include "orl/nn.hpp"

namespace orl {

enum class RepFamily { TARNet, BNN, CFR, RCFR, CfrIsw, Bwcfr };

inline std::string to_string(RepFamily f) {
    switch (f) {
        case RepFamily::TARNet: return "tarnet";
        case RepFamily::BNN: return "bnn";
        case RepFamily::CFR: return "cfr";
        case RepFamily::RCFR: return "rcfr";
        case RepFamily::CfrIsw: return "cfr_isw";
        case RepFamily::Bwcfr: return "bwcfr";
    }
    return "tarnet";
}

inline RepFamily rep_family_from_string(const std::string& s) {
    if (s == "tarnet") return RepFamily::TARNet;
    if (s == "bnn") return RepFamily::BNN;
    if (s == "cfr") return RepFamily::CFR;
    if (s == "rcfr") return RepFamily::RCFR;
    if (s == "cfr_isw") return RepFamily::CfrIsw;
    if (s == "bwcfr") return RepFamily::Bwcfr;
    throw ConfigError("unknown representation family: " + s);
}

struct RepLearnerSpec {
    RepFamily family = RepFamily::TARNet;
    bool invertible = false;
    BalancingSpec balancing;
    int rep_dim = 2;      // d_phi; forced to d_x for invertible variants
    int rep_hidden = 8;   // hidden units of FC_phi / of each flow subnet
    int head_hidden = 8;  // hidden units of FC_a (also pi / weight heads)
    int flow_blocks = 3;
    double learning_rate = 0.005;
    double weight_decay = 0.0;
    int batch_size = 64;
    int epochs = 200;
    bool log_batches = false;  // keep per-batch loss decomposition (last epoch)

    void validate(Index d_x) const {
        balancing.validate();
        if (rep_dim < 1) throw ConfigError("rep_dim must be >= 1");
        if (invertible && d_x < 2)
            throw DimensionTooSmall("invertible representation needs d_x >= 2");
        if (rep_hidden < 1 || head_hidden < 1) throw ConfigError("hidden widths must be >= 1");
        if (batch_size < 1 || epochs < 1) throw ConfigError("batch_size and epochs must be >= 1");
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["family"] = orl::to_string(family);
        j["invertible"] = invertible;
        j["alpha"] = balancing.alpha;
        j["ipm"] = orl::to_string(balancing.metric);
        j["bandwidth"] = balancing.bandwidth;
        j["epsilon"] = balancing.epsilon;
        j["iterations"] = balancing.iterations;
        j["rep_dim"] = rep_dim;
        j["rep_hidden"] = rep_hidden;
        j["head_hidden"] = head_hidden;
        j["flow_blocks"] = flow_blocks;
        j["learning_rate"] = learning_rate;
        j["weight_decay"] = weight_decay;
        j["batch_size"] = batch_size;
        j["epochs"] = epochs;
        return j;
    }

    static RepLearnerSpec from_json(const nlohmann::json& j) {
        RepLearnerSpec s;
        s.family = rep_family_from_string(j.value("family", "tarnet"));
        s.invertible = j.value("invertible", false);
        s.balancing.alpha = j.value("alpha", 0.0);
        s.balancing.metric = ipm_from_string(j.value("ipm", "mmd"));
        s.balancing.bandwidth = j.value("bandwidth", 0.0);
        s.balancing.epsilon = j.value("epsilon", 0.1);
        s.balancing.iterations = j.value("iterations", 100);
        s.rep_dim = j.value("rep_dim", 2);
        s.rep_hidden = j.value("rep_hidden", 8);
        s.head_hidden = j.value("head_hidden", 8);
        s.flow_blocks = j.value("flow_blocks", 3);
        s.learning_rate = j.value("learning_rate", 0.005);
        s.weight_decay = j.value("weight_decay", 0.0);
        s.batch_size = j.value("batch_size", 64);
        s.epochs = j.value("epochs", 200);
        return s;
    }
};

// Trainable state of a representation network: the representation itself
// (dense bottleneck or invertible flow), outcome heads in T wiring (two
// separate heads) or S wiring (single head over [phi, a]; used by BNN), and
// the optional propensity / weight heads.
struct RepModel {
    std::optional<DenseNet> phi_dense;
    std::optional<CouplingFlow> phi_flow;
    DenseNet h0, h1;
    bool shared_head = false;
    std::optional<DenseNet> pi_head;      // CFR-ISW
    std::optional<DenseNet> weight_head;  // RCFR
    Index d_x = 0, d_phi = 0;

    Matrix phi(const Matrix& X) const {
        return phi_flow ? phi_flow->forward(X) : phi_dense->forward(X);
    }

    // n x 2 matrix of (h0(phi), h1(phi)); for the shared head this evaluates
    // the head at a=0 and a=1.
    Matrix heads_on_phi(const Matrix& phi_vals) const {
        Index n = phi_vals.rows();
        Matrix out(n, 2);
        if (shared_head) {
            Matrix z(n, d_phi + 1);
            z.leftCols(d_phi) = phi_vals;
            z.col(d_phi).setZero();
            out.col(0) = h0.forward(z).col(0);
            z.col(d_phi).setOnes();
            out.col(1) = h0.forward(z).col(0);
        } else {
            out.col(0) = h0.forward(phi_vals).col(0);
            out.col(1) = h1.forward(phi_vals).col(0);
        }
        return out;
    }

    Matrix heads(const Matrix& X) const { return heads_on_phi(phi(X)); }

    std::vector<TensorView> param_views() {
        std::vector<TensorView> v;
        auto add = [&v](std::vector<TensorView> w) { v.insert(v.end(), w.begin(), w.end()); };
        if (phi_dense) add(phi_dense->param_views());
        if (phi_flow) add(phi_flow->param_views());
        add(h0.param_views());
        if (!shared_head) add(h1.param_views());
        if (pi_head) add(pi_head->param_views());
        if (weight_head) add(weight_head->param_views());
        return v;
    }
};

struct RepGrads {
    DenseNet::Grads phi_dense;
    CouplingFlow::Grads phi_flow;
    DenseNet::Grads h0, h1, pi_head, weight_head;

    void zero_like(const RepModel& m) {
        if (m.phi_dense) phi_dense.zero_like(*m.phi_dense);
        if (m.phi_flow) phi_flow.zero_like(*m.phi_flow);
        h0.zero_like(m.h0);
        if (!m.shared_head) h1.zero_like(m.h1);
        if (m.pi_head) pi_head.zero_like(*m.pi_head);
        if (m.weight_head) weight_head.zero_like(*m.weight_head);
    }

    std::vector<TensorView> views(const RepModel& m) {
        std::vector<TensorView> v;
        auto add = [&v](std::vector<TensorView> w) { v.insert(v.end(), w.begin(), w.end()); };
        if (m.phi_dense) add(m.phi_dense->grad_views(phi_dense));
        if (m.phi_flow) add(m.phi_flow->grad_views(phi_flow));
        add(m.h0.grad_views(h0));
        if (!m.shared_head) add(m.h1.grad_views(h1));
        if (m.pi_head) add(m.pi_head->grad_views(pi_head));
        if (m.weight_head) add(m.weight_head->grad_views(weight_head));
        return v;
    }
};

struct BatchLog {
    std::vector<Index> rows;
    double factual = 0.0, balance = 0.0, bce = 0.0, total = 0.0;
    bool balance_skipped = false;
};

struct TrainHistory {
    std::vector<double> factual;  // per-epoch means of the weighted factual MSE
    std::vector<double> balance;  // empty for TARNet (no IPM term exists)
    std::vector<double> bce;      // CFR-ISW only
    int balance_skipped_batches = 0;
    int weight_skipped_batches = 0;  // batches whose weights summed to zero
    std::vector<BatchLog> batch_logs;
};

struct TrainedRepresentation {
    RepLearnerSpec spec;
    RepModel model;
    TrainHistory history;

    Matrix phi(const Matrix& X) const { return model.phi(X); }
    Matrix heads(const Matrix& X) const { return model.heads(X); }
    Vector predict_mu(const Matrix& X, int a) const { return model.heads(X).col(a); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "orl-representation";
        j["version"] = 1;
        j["spec"] = spec.to_json();
        j["spec_hash"] = fnv1a64(spec.to_json().dump());
        j["d_x"] = model.d_x;
        j["d_phi"] = model.d_phi;
        j["shared_head"] = model.shared_head;
        if (model.phi_dense) j["phi_dense"] = model.phi_dense->to_json();
        if (model.phi_flow) j["phi_flow"] = model.phi_flow->to_json();
        j["h0"] = model.h0.to_json();
        if (!model.shared_head) j["h1"] = model.h1.to_json();
        if (model.pi_head) j["pi_head"] = model.pi_head->to_json();
        if (model.weight_head) j["weight_head"] = model.weight_head->to_json();
        return j;
    }

    static TrainedRepresentation from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "orl-representation")
            throw ConfigError("not a representation blob");
        TrainedRepresentation tr;
        tr.spec = RepLearnerSpec::from_json(j.at("spec"));
        tr.model.d_x = j.at("d_x").get<Index>();
        tr.model.d_phi = j.at("d_phi").get<Index>();
        tr.model.shared_head = j.at("shared_head").get<bool>();
        if (j.count("phi_dense")) tr.model.phi_dense = DenseNet::from_json(j["phi_dense"]);
        if (j.count("phi_flow")) tr.model.phi_flow = CouplingFlow::from_json(j["phi_flow"]);
        tr.model.h0 = DenseNet::from_json(j.at("h0"));
        if (!tr.model.shared_head) tr.model.h1 = DenseNet::from_json(j.at("h1"));
        if (j.count("pi_head")) tr.model.pi_head = DenseNet::from_json(j["pi_head"]);
        if (j.count("weight_head")) tr.model.weight_head = DenseNet::from_json(j["weight_head"]);
        return tr;
    }
};

enum class RepSelector { RawX, Phi, Heads };

inline std::string to_string(RepSelector s) {
    switch (s) {
        case RepSelector::RawX: return "X";
        case RepSelector::Phi: return "Phi";
        case RepSelector::Heads: return "Heads";
    }
    return "X";
}

// Target-model input per the selector: the raw covariates, the learned
// representation, or the pair of plug-in head predictions.
inline Matrix rep_inputs(const TrainedRepresentation& tr, const Matrix& X, RepSelector sel) {
    if (X.cols() != tr.model.d_x)
        throw ShapeMismatch("rep_inputs: X has " + std::to_string(X.cols()) +
                            " columns, expected " + std::to_string(tr.model.d_x));
    switch (sel) {
        case RepSelector::RawX: return X;
        case RepSelector::Phi: return tr.phi(X);
        case RepSelector::Heads: return tr.heads(X);
    }
    return X;
}

namespace detail {

inline double softplus(double z) {
    return z > 30.0 ? z : std::log1p(std::exp(z));
}

struct RepBatchEval {
    double factual = 0.0, balance = 0.0, bce = 0.0, total = 0.0;
    bool balance_skipped = false;  // one treatment arm missing from the batch
    bool weight_skipped = false;   // weights summed to zero; no step possible
};

// Evaluates the Stage-0 loss on one batch and (optionally) accumulates
// parameter gradients. The decomposition is
//   total = weighted factual MSE + alpha * balance + BCE(ISW propensity head).
// Stop-gradient semantics: propensity / weight heads consume representation
// values but do not push gradients into it; inverse-propensity weights are
// constants in the gradient.
inline RepBatchEval eval_rep_batch(RepModel& m, const RepLearnerSpec& spec, const Matrix& Xb,
                                   const Vector& Ab, const Vector& Yb,
                                   const Vector* bwcfr_weights, RepGrads* grads) {
    Index b = Xb.rows();
    RepBatchEval ev;

    DenseNet::Cache phi_dense_cache;
    CouplingFlow::Cache phi_flow_cache;
    Matrix phi = m.phi_flow ? m.phi_flow->forward_cached(Xb, phi_flow_cache)
                            : m.phi_dense->forward_cached(Xb, phi_dense_cache);

    // ---- family weights -------------------------------------------------
    Vector W = Vector::Ones(b);
    Matrix pi_phi;  // CFR-ISW propensity head output on detached phi
    DenseNet::Cache pi_cache;
    Vector w_raw, w_sp;  // RCFR weight head: raw output, softplus
    DenseNet::Cache w_cache;
    if (spec.family == RepFamily::CfrIsw) {
        pi_phi = m.pi_head->forward_cached(phi, pi_cache);
        for (Index i = 0; i < b; ++i) {
            double p1 = pi_phi(i, 0);
            double pa = Ab[i] > 0.5 ? p1 : 1.0 - p1;
            W[i] = pa >= 0.05 ? 1.0 / pa : 0.0;
        }
    } else if (spec.family == RepFamily::Bwcfr) {
        if (bwcfr_weights == nullptr || bwcfr_weights->size() != b)
            throw ConfigError("BWCFR requires precomputed covariate propensity weights");
        W = *bwcfr_weights;
    } else if (spec.family == RepFamily::RCFR) {
        Matrix wz = m.weight_head->forward_cached(phi, w_cache);
        w_raw = wz.col(0);
        w_sp.resize(b);
        for (Index i = 0; i < b; ++i) w_sp[i] = softplus(w_raw[i]);
        double mean_sp = w_sp.mean();
        W = w_sp / mean_sp;  // batch-normalized to mean 1
    }

    double sumW = W.sum();
    if (sumW <= 0.0) {
        ev.weight_skipped = true;
        return ev;
    }

    // ---- weighted factual MSE -------------------------------------------
    Matrix head_out;      // b x 1 of h_A
    DenseNet::Cache c0, c1, cs;
    Matrix z_shared;
    if (m.shared_head) {
        z_shared.resize(b, m.d_phi + 1);
        z_shared.leftCols(m.d_phi) = phi;
        z_shared.col(m.d_phi) = Ab;
        head_out = m.h0.forward_cached(z_shared, cs);
    } else {
        Matrix o0 = m.h0.forward_cached(phi, c0);
        Matrix o1 = m.h1.forward_cached(phi, c1);
        head_out.resize(b, 1);
        for (Index i = 0; i < b; ++i) head_out(i, 0) = Ab[i] > 0.5 ? o1(i, 0) : o0(i, 0);
    }
    Vector r = Yb - head_out.col(0);
    ev.factual = W.dot(r.cwiseProduct(r)) / sumW;

    // dL/dW of the factual term, needed only for RCFR
    Vector dW = Vector::Zero(b);
    if (spec.family == RepFamily::RCFR)
        for (Index i = 0; i < b; ++i) dW[i] = (r[i] * r[i] - ev.factual) / sumW;

    Matrix dPhi = Matrix::Zero(b, m.d_phi);
    if (grads) {
        Vector dH = (-2.0 / sumW) * W.cwiseProduct(r);
        if (m.shared_head) {
            Matrix dOut = dH;
            Matrix dZ = m.h0.backward(cs, dOut, grads->h0);
            dPhi += dZ.leftCols(m.d_phi);
        } else {
            Matrix d0 = Matrix::Zero(b, 1), d1 = Matrix::Zero(b, 1);
            for (Index i = 0; i < b; ++i)
                (Ab[i] > 0.5 ? d1 : d0)(i, 0) = dH[i];
            dPhi += m.h0.backward(c0, d0, grads->h0);
            dPhi += m.h1.backward(c1, d1, grads->h1);
        }
    }

    // ---- balance term ----------------------------------------------------
    double alpha = spec.balancing.alpha;
    bool wants_balance = spec.family != RepFamily::TARNet && alpha > 0.0;
    if (wants_balance) {
        std::vector<Index> i0, i1;
        for (Index i = 0; i < b; ++i) (Ab[i] > 0.5 ? i1 : i0).push_back(i);
        if (i0.empty() || i1.empty()) {
            ev.balance_skipped = true;
        } else {
            Matrix phi0(static_cast<Index>(i0.size()), m.d_phi);
            Matrix phi1(static_cast<Index>(i1.size()), m.d_phi);
            for (size_t k = 0; k < i0.size(); ++k) phi0.row(static_cast<Index>(k)) = phi.row(i0[k]);
            for (size_t k = 0; k < i1.size(); ++k) phi1.row(static_cast<Index>(k)) = phi.row(i1[k]);
            bool weighted = spec.family == RepFamily::CfrIsw ||
                            spec.family == RepFamily::Bwcfr || spec.family == RepFamily::RCFR;
            Vector w0, w1;
            const Vector *pw0 = nullptr, *pw1 = nullptr;
            if (weighted) {
                w0.resize(static_cast<Index>(i0.size()));
                w1.resize(static_cast<Index>(i1.size()));
                for (size_t k = 0; k < i0.size(); ++k) w0[static_cast<Index>(k)] = W[i0[k]];
                for (size_t k = 0; k < i1.size(); ++k) w1[static_cast<Index>(k)] = W[i1[k]];
                if (w0.sum() <= 0.0 || w1.sum() <= 0.0) {
                    ev.balance_skipped = true;
                } else {
                    pw0 = &w0;
                    pw1 = &w1;
                }
            }
            if (!ev.balance_skipped) {
                BalanceGrad bg =
                    ipm_grad(spec.balancing, phi0, phi1, pw0, pw1, grads != nullptr);
                ev.balance = bg.value;
                if (grads) {
                    for (size_t k = 0; k < i0.size(); ++k)
                        dPhi.row(i0[k]) += alpha * bg.g0.row(static_cast<Index>(k));
                    for (size_t k = 0; k < i1.size(); ++k)
                        dPhi.row(i1[k]) += alpha * bg.g1.row(static_cast<Index>(k));
                    if (spec.family == RepFamily::RCFR) {
                        for (size_t k = 0; k < i0.size(); ++k)
                            dW[i0[k]] += alpha * bg.gw0[static_cast<Index>(k)];
                        for (size_t k = 0; k < i1.size(); ++k)
                            dW[i1[k]] += alpha * bg.gw1[static_cast<Index>(k)];
                    }
                }
            }
        }
    }

    // ---- CFR-ISW propensity head BCE (detached representation) -----------
    if (spec.family == RepFamily::CfrIsw) {
        double bce = 0.0;
        Matrix dP = Matrix::Zero(b, 1);
        for (Index i = 0; i < b; ++i) {
            double p = pi_phi(i, 0);
            double y = Ab[i];
            bce += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
            dP(i, 0) = (p - y) / (p * (1.0 - p)) / static_cast<double>(b);
        }
        ev.bce = bce / static_cast<double>(b);
        if (grads) m.pi_head->backward(pi_cache, dP, grads->pi_head);  // input grad dropped
    }

    // ---- RCFR weight head (detached representation) -----------------------
    if (spec.family == RepFamily::RCFR && grads) {
        double mean_sp = w_sp.mean();
        double inner = dW.dot(W) / static_cast<double>(b);
        Matrix dRaw(b, 1);
        for (Index i = 0; i < b; ++i) {
            double d_sp = (dW[i] - inner) / mean_sp;       // through mean-1 normalization
            dRaw(i, 0) = d_sp * sigmoid(w_raw[i]);          // softplus derivative
        }
        m.weight_head->backward(w_cache, dRaw, grads->weight_head);  // input grad dropped
    }

    // ---- backprop into the representation ---------------------------------
    if (grads) {
        if (m.phi_flow)
            m.phi_flow->backward(phi_flow_cache, dPhi, grads->phi_flow);
        else
            m.phi_dense->backward(phi_dense_cache, dPhi, grads->phi_dense);
    }

    ev.total = ev.factual + alpha * ev.balance + ev.bce;
    if (!std::isfinite(ev.total)) throw NonFiniteLoss("stage-0 loss diverged");
    return ev;
}

inline RepModel build_rep_model(const RepLearnerSpec& spec, Index d_x, Rng& rng) {
    RepModel m;
    m.d_x = d_x;
    m.d_phi = spec.invertible ? d_x : spec.rep_dim;
    if (spec.invertible)
        m.phi_flow = CouplingFlow::make(d_x, spec.flow_blocks, spec.rep_hidden, rng);
    else
        m.phi_dense = DenseNet::make({static_cast<int>(d_x), spec.rep_hidden,
                                      static_cast<int>(m.d_phi)},
                                     OutputAct::Identity, rng);
    m.shared_head = spec.family == RepFamily::BNN;
    if (m.shared_head) {
        m.h0 = DenseNet::make({static_cast<int>(m.d_phi) + 1, spec.head_hidden, 1},
                              OutputAct::Identity, rng);
    } else {
        m.h0 = DenseNet::make({static_cast<int>(m.d_phi), spec.head_hidden, 1},
                              OutputAct::Identity, rng);
        m.h1 = DenseNet::make({static_cast<int>(m.d_phi), spec.head_hidden, 1},
                              OutputAct::Identity, rng);
    }
    if (spec.family == RepFamily::CfrIsw)
        m.pi_head = DenseNet::make({static_cast<int>(m.d_phi), spec.head_hidden, 1},
                                   OutputAct::Sigmoid, rng);
    if (spec.family == RepFamily::RCFR)
        m.weight_head = DenseNet::make({static_cast<int>(m.d_phi), spec.head_hidden, 1},
                                       OutputAct::Identity, rng);
    return m;
}

}  // namespace detail

// Stage 0: fit the representation network of the requested family by
// minibatch AdamW on the weighted factual MSE plus the balancing term.
// Deterministic given (spec, data, seed). For BWCFR, `bwcfr_pi1` must hold
// the covariate propensity evaluated at the training rows.
inline TrainedRepresentation train_representation(const RepLearnerSpec& spec, const Dataset& data,
                                                  uint64_t seed,
                                                  const Vector* bwcfr_pi1 = nullptr) {
    data.validate();
    spec.validate(data.dim());
    Index n = data.n();

    Vector bwcfr_w;
    if (spec.family == RepFamily::Bwcfr) {
        if (bwcfr_pi1 == nullptr || bwcfr_pi1->size() != n)
            throw ConfigError("BWCFR requires a prefit covariate propensity");
        bwcfr_w.resize(n);
        for (Index i = 0; i < n; ++i) {
            double p1 = (*bwcfr_pi1)[i];
            double pa = data.A[i] > 0.5 ? p1 : 1.0 - p1;
            bwcfr_w[i] = pa >= 0.05 ? 1.0 / pa : 0.0;
        }
    }

    Rng init_rng(derive_seed(seed, "stage0-init"));
    TrainedRepresentation tr;
    tr.spec = spec;
    tr.model = detail::build_rep_model(spec, data.dim(), init_rng);

    AdamW opt;
    opt.lr = spec.learning_rate;
    opt.weight_decay = spec.weight_decay;

    bool track_balance = spec.family != RepFamily::TARNet;
    bool track_bce = spec.family == RepFamily::CfrIsw;

    Index b = std::min<Index>(spec.batch_size, n);
    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        Rng order_rng(derive_seed(derive_seed(seed, "stage0-epoch"), static_cast<uint64_t>(epoch)));
        std::vector<Index> perm = order_rng.permutation(n);
        double ep_factual = 0.0, ep_balance = 0.0, ep_bce = 0.0;
        Index n_batches = 0;
        for (Index start = 0; start < n; start += b) {
            Index len = std::min<Index>(b, n - start);
            Matrix Xb(len, data.dim());
            Vector Ab(len), Yb(len), Wb;
            if (spec.family == RepFamily::Bwcfr) Wb.resize(len);
            for (Index k = 0; k < len; ++k) {
                Index row = perm[static_cast<size_t>(start + k)];
                Xb.row(k) = data.X.row(row);
                Ab[k] = data.A[row];
                Yb[k] = data.Y[row];
                if (spec.family == RepFamily::Bwcfr) Wb[k] = bwcfr_w[row];
            }
            RepGrads grads;
            grads.zero_like(tr.model);
            detail::RepBatchEval ev = detail::eval_rep_batch(
                tr.model, spec, Xb, Ab, Yb,
                spec.family == RepFamily::Bwcfr ? &Wb : nullptr, &grads);
            if (ev.weight_skipped) {
                ++tr.history.weight_skipped_batches;
                continue;
            }
            if (ev.balance_skipped) ++tr.history.balance_skipped_batches;
            auto pv = tr.model.param_views();
            opt.step(pv, grads.views(tr.model));
            ep_factual += ev.factual;
            ep_balance += ev.balance;
            ep_bce += ev.bce;
            ++n_batches;
            if (spec.log_batches && epoch == spec.epochs - 1) {
                BatchLog log;
                log.rows.assign(perm.begin() + start, perm.begin() + start + len);
                log.factual = ev.factual;
                log.balance = ev.balance;
                log.bce = ev.bce;
                log.total = ev.total;
                log.balance_skipped = ev.balance_skipped;
                tr.history.batch_logs.push_back(std::move(log));
            }
        }
        double denom = std::max<Index>(n_batches, 1);
        tr.history.factual.push_back(ep_factual / denom);
        if (track_balance) tr.history.balance.push_back(ep_balance / denom);
        if (track_bce) tr.history.bce.push_back(ep_bce / denom);
    }
    return tr;
}

}  // namespace orl
