#pragma once

#include <cstring>
#include <unordered_map>

#include "orl/stage0.hpp"

namespace orl {

struct NuisanceHyper {
    int hidden = 8;
    double learning_rate = 0.005;
    double weight_decay = 0.0;
    int batch_size = 64;
    int epochs = 200;
};

// Stage-1 propensity: one-hidden-layer sigmoid net on the covariates,
// trained with AdamW on BCE. Deterministic given seed.
inline DenseNet fit_propensity(const Dataset& data, const NuisanceHyper& hyper, uint64_t seed) {
    data.validate();
    double mean_a = data.A.mean();
    if (mean_a == 0.0 || mean_a == 1.0)
        throw SingleArmData("propensity fit needs both treatment arms");
    Rng rng(derive_seed(seed, "propensity-init"));
    DenseNet net = DenseNet::make({static_cast<int>(data.dim()), hyper.hidden, 1},
                                  OutputAct::Sigmoid, rng);
    AdamW opt;
    opt.lr = hyper.learning_rate;
    opt.weight_decay = hyper.weight_decay;
    Index n = data.n();
    Index b = std::min<Index>(hyper.batch_size, n);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng order(derive_seed(derive_seed(seed, "propensity-epoch"), static_cast<uint64_t>(epoch)));
        std::vector<Index> perm = order.permutation(n);
        for (Index start = 0; start < n; start += b) {
            Index len = std::min<Index>(b, n - start);
            Matrix Xb(len, data.dim());
            Vector Ab(len);
            for (Index k = 0; k < len; ++k) {
                Index row = perm[static_cast<size_t>(start + k)];
                Xb.row(k) = data.X.row(row);
                Ab[k] = data.A[row];
            }
            grad_step(net, Xb,
                      [&](const Matrix& out, Matrix& dOut) { return bce_loss(out, Ab, dOut); },
                      opt);
        }
    }
    return net;
}

// Fresh Stage-1 outcome model: two linear heads over a shared ReLU hidden
// layer on the raw covariates, trained on the unweighted factual MSE.
struct OutcomeNet {
    DenseNet trunk;         // d_x -> hidden, ReLU output
    DenseNet head0, head1;  // hidden -> 1

    Vector predict(const Matrix& X, int a) const {
        Matrix h = trunk.forward(X);
        return (a == 0 ? head0 : head1).forward(h).col(0);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "orl-outcome-net";
        j["version"] = 1;
        j["trunk"] = trunk.to_json();
        j["head0"] = head0.to_json();
        j["head1"] = head1.to_json();
        return j;
    }

    static OutcomeNet from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "orl-outcome-net")
            throw ConfigError("not an outcome-net blob");
        OutcomeNet o;
        o.trunk = DenseNet::from_json(j.at("trunk"));
        o.head0 = DenseNet::from_json(j.at("head0"));
        o.head1 = DenseNet::from_json(j.at("head1"));
        return o;
    }
};

inline OutcomeNet fit_outcome_net(const Dataset& data, const NuisanceHyper& hyper, uint64_t seed) {
    data.validate();
    Rng rng(derive_seed(seed, "outcome-init"));
    OutcomeNet net;
    net.trunk = DenseNet::make({static_cast<int>(data.dim()), hyper.hidden}, OutputAct::Relu, rng);
    net.head0 = DenseNet::make({hyper.hidden, 1}, OutputAct::Identity, rng);
    net.head1 = DenseNet::make({hyper.hidden, 1}, OutputAct::Identity, rng);
    AdamW opt;
    opt.lr = hyper.learning_rate;
    opt.weight_decay = hyper.weight_decay;
    Index n = data.n();
    Index b = std::min<Index>(hyper.batch_size, n);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng order(derive_seed(derive_seed(seed, "outcome-epoch"), static_cast<uint64_t>(epoch)));
        std::vector<Index> perm = order.permutation(n);
        for (Index start = 0; start < n; start += b) {
            Index len = std::min<Index>(b, n - start);
            Matrix Xb(len, data.dim());
            Vector Ab(len), Yb(len);
            for (Index k = 0; k < len; ++k) {
                Index row = perm[static_cast<size_t>(start + k)];
                Xb.row(k) = data.X.row(row);
                Ab[k] = data.A[row];
                Yb[k] = data.Y[row];
            }
            DenseNet::Cache ct, c0, c1;
            Matrix h = net.trunk.forward_cached(Xb, ct);
            Matrix o0 = net.head0.forward_cached(h, c0);
            Matrix o1 = net.head1.forward_cached(h, c1);
            Vector r(len);
            for (Index k = 0; k < len; ++k)
                r[k] = (Ab[k] > 0.5 ? o1(k, 0) : o0(k, 0)) - Yb[k];
            double loss = r.squaredNorm() / static_cast<double>(len);
            if (!std::isfinite(loss)) throw NonFiniteLoss("outcome net loss diverged");
            Matrix d0 = Matrix::Zero(len, 1), d1 = Matrix::Zero(len, 1);
            for (Index k = 0; k < len; ++k)
                (Ab[k] > 0.5 ? d1 : d0)(k, 0) = 2.0 * r[k] / static_cast<double>(len);
            DenseNet::Grads gt, g0, g1;
            gt.zero_like(net.trunk);
            g0.zero_like(net.head0);
            g1.zero_like(net.head1);
            Matrix dh = net.head0.backward(c0, d0, g0) + net.head1.backward(c1, d1, g1);
            net.trunk.backward(ct, dh, gt);
            std::vector<TensorView> pv, gv;
            auto add = [](std::vector<TensorView>& dst, std::vector<TensorView> src) {
                dst.insert(dst.end(), src.begin(), src.end());
            };
            add(pv, net.trunk.param_views());
            add(pv, net.head0.param_views());
            add(pv, net.head1.param_views());
            add(gv, net.trunk.grad_views(gt));
            add(gv, net.head0.grad_views(g0));
            add(gv, net.head1.grad_views(g1));
            opt.step(pv, gv);
        }
    }
    return net;
}

// Exact-row lookup into a stored oracle dataset; used by the oracle nuisance
// policy in property tests.
struct OracleTable {
    Matrix X;
    Vector mu0, mu1, pi1;
    std::unordered_map<std::string, Index> index;

    static OracleTable from(const OracleDataset& d) {
        OracleTable t;
        t.X = d.base.X;
        t.mu0 = d.mu0;
        t.mu1 = d.mu1;
        t.pi1 = d.pi1;
        for (Index i = 0; i < d.n(); ++i) t.index.emplace(t.row_key(t.X.row(i)), i);
        return t;
    }

    std::string row_key(const Eigen::RowVectorXd& row) const {
        std::string key(static_cast<size_t>(row.size()) * sizeof(double), '\0');
        std::memcpy(key.data(), row.data(), key.size());
        return key;
    }

    Index find(const Eigen::RowVectorXd& row) const {
        auto it = index.find(row_key(row));
        if (it == index.end())
            throw OracleUnavailable("oracle nuisance queried at a covariate row it has not seen");
        return it->second;
    }
};

enum class NuisanceProvenance { FromRepresentationHeads, FreshOutcomeNet, Oracle };

inline std::string to_string(NuisanceProvenance p) {
    switch (p) {
        case NuisanceProvenance::FromRepresentationHeads: return "representation_heads";
        case NuisanceProvenance::FreshOutcomeNet: return "fresh_outcome_net";
        case NuisanceProvenance::Oracle: return "oracle";
    }
    return "oracle";
}

// The fitted nuisance set eta = (mu0, mu1, pi1). Immutable after assembly.
// pi0 is always 1 - pi1 (a single classifier keeps probabilities coherent).
struct NuisanceSet {
    NuisanceProvenance provenance = NuisanceProvenance::Oracle;
    std::optional<TrainedRepresentation> rep;  // heads binding
    std::optional<OutcomeNet> outcome;
    std::optional<DenseNet> propensity;
    std::optional<OracleTable> oracle;

    Vector mu(const Matrix& X, int a) const {
        switch (provenance) {
            case NuisanceProvenance::FromRepresentationHeads:
                return rep->heads(X).col(a);
            case NuisanceProvenance::FreshOutcomeNet:
                return outcome->predict(X, a);
            case NuisanceProvenance::Oracle: {
                Vector out(X.rows());
                for (Index i = 0; i < X.rows(); ++i) {
                    Index r = oracle->find(X.row(i));
                    out[i] = a == 0 ? oracle->mu0[r] : oracle->mu1[r];
                }
                return out;
            }
        }
        throw OrlError("unreachable");
    }

    Vector mu0(const Matrix& X) const { return mu(X, 0); }
    Vector mu1(const Matrix& X) const { return mu(X, 1); }

    Vector pi1(const Matrix& X) const {
        if (provenance == NuisanceProvenance::Oracle) {
            Vector out(X.rows());
            for (Index i = 0; i < X.rows(); ++i) out[i] = oracle->pi1[oracle->find(X.row(i))];
            return out;
        }
        return propensity->forward(X).col(0);
    }

    // mu_hat^x = (1 - pi1) mu0 + pi1 mu1, the R-loss residualization target.
    Vector mu_mix(const Matrix& X) const {
        Vector p = pi1(X);
        Vector m0 = mu0(X);
        Vector m1 = mu1(X);
        return (Vector::Ones(p.size()) - p).cwiseProduct(m0) + p.cwiseProduct(m1);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "orl-nuisances";
        j["version"] = 1;
        j["provenance"] = to_string(provenance);
        if (rep) j["rep"] = rep->to_json();
        if (outcome) j["outcome"] = outcome->to_json();
        if (propensity) j["propensity"] = propensity->to_json();
        return j;
    }
};

struct NuisancePolicy {
    enum class Kind { ReuseHeads, FreshOutcomeNet, Oracle };
    Kind kind = Kind::ReuseHeads;
    const OracleDataset* oracle_data = nullptr;

    static NuisancePolicy reuse_heads() { return {Kind::ReuseHeads, nullptr}; }
    static NuisancePolicy fresh_outcome_net() { return {Kind::FreshOutcomeNet, nullptr}; }
    static NuisancePolicy oracle(const OracleDataset& d) { return {Kind::Oracle, &d}; }
};

// The Stage-1 branch rule: reuse the representation heads when no balancing
// was applied or the representation is invertible; otherwise refit a fresh
// outcome network on the raw covariates.
inline NuisancePolicy::Kind default_outcome_policy(const RepLearnerSpec& spec) {
    if (spec.balancing.alpha > 0.0 && !spec.invertible)
        return NuisancePolicy::Kind::FreshOutcomeNet;
    return NuisancePolicy::Kind::ReuseHeads;
}

// Stage 1 assembly. `prefit_propensity` lets BWCFR hand its Stage-0
// covariate propensity through; otherwise a propensity net is fitted here.
inline NuisanceSet assemble_nuisances(const TrainedRepresentation* tr, const Dataset& data,
                                      const NuisancePolicy& policy, const NuisanceHyper& hyper,
                                      uint64_t seed, const DenseNet* prefit_propensity = nullptr) {
    NuisanceSet ns;
    switch (policy.kind) {
        case NuisancePolicy::Kind::ReuseHeads:
            if (tr == nullptr)
                throw ConfigError("reuse_heads policy needs a trained representation");
            ns.provenance = NuisanceProvenance::FromRepresentationHeads;
            ns.rep = *tr;
            break;
        case NuisancePolicy::Kind::FreshOutcomeNet:
            ns.provenance = NuisanceProvenance::FreshOutcomeNet;
            ns.outcome = fit_outcome_net(data, hyper, derive_seed(seed, "nuisance-outcome"));
            break;
        case NuisancePolicy::Kind::Oracle:
            if (policy.oracle_data == nullptr)
                throw OracleUnavailable("oracle nuisance policy without oracle data");
            ns.provenance = NuisanceProvenance::Oracle;
            ns.oracle = OracleTable::from(*policy.oracle_data);
            return ns;  // oracle provides the propensity as well
    }
    if (prefit_propensity != nullptr)
        ns.propensity = *prefit_propensity;
    else
        ns.propensity = fit_propensity(data, hyper, derive_seed(seed, "nuisance-propensity"));
    return ns;
}

// alpha_a(A, x) = 1{A=a} * 1{pi_a >= 0.05} / pi_a with pi_0 = 1 - pi_1.
// Values are 0 (off-arm or clipped) or in [1, 20].
inline constexpr double kPropensityClip = 0.05;

inline double clipped_inverse_weight(int a, double A, double pi1) {
    if (static_cast<int>(A) != a) return 0.0;
    double pa = a == 1 ? pi1 : 1.0 - pi1;
    return pa >= kPropensityClip ? 1.0 / pa : 0.0;
}

inline Vector clipped_inverse_weights(int a, const Vector& A, const Vector& pi1) {
    Vector w(A.size());
    for (Index i = 0; i < A.size(); ++i) w[i] = clipped_inverse_weight(a, A[i], pi1[i]);
    return w;
}

}  // namespace orl
