#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "orl/common.hpp"

namespace orl {

enum class IpmKind { Mmd, Wm };

inline std::string to_string(IpmKind k) { return k == IpmKind::Mmd ? "mmd" : "wm"; }

inline IpmKind ipm_from_string(const std::string& s) {
    if (s == "mmd") return IpmKind::Mmd;
    if (s == "wm") return IpmKind::Wm;
    throw ConfigError("unknown IPM kind: " + s);
}

// Balancing term configuration. bandwidth <= 0 selects the median pairwise
// distance heuristic over the pooled minibatch, recomputed per batch.
struct BalancingSpec {
    IpmKind metric = IpmKind::Mmd;
    double bandwidth = 0.0;
    double epsilon = 0.1;
    int iterations = 100;
    double alpha = 0.0;

    void validate() const {
        if (alpha < 0.0) throw ConfigError("balancing strength alpha must be >= 0");
        if (epsilon <= 0.0) throw ConfigError("sinkhorn epsilon must be > 0");
        if (iterations < 1) throw ConfigError("sinkhorn iterations must be >= 1");
    }
};

namespace detail {

inline void check_samples(const Matrix& s0, const Matrix& s1) {
    if (s0.rows() == 0 || s1.rows() == 0) throw EmptySample("IPM needs nonempty samples");
    if (s0.cols() != s1.cols())
        throw DimensionMismatch("sample dimensions differ: " + std::to_string(s0.cols()) +
                                " vs " + std::to_string(s1.cols()));
}

// Deterministic ordering of sample matrices. Both metrics canonicalize the
// argument order before summing, so dist(S0,S1) == dist(S1,S0) holds exactly
// in floating point (the sums run in an identical order either way).
inline bool canonical_order_swapped(const Matrix& s0, const Matrix& s1) {
    if (s0.rows() != s1.rows()) return s1.rows() < s0.rows();
    for (Index i = 0; i < s0.rows(); ++i)
        for (Index j = 0; j < s0.cols(); ++j) {
            if (s0(i, j) < s1(i, j)) return false;
            if (s1(i, j) < s0(i, j)) return true;
        }
    return false;  // equal contents: keep as given
}

inline Vector normalized_weights(const Matrix& s, const Vector* w) {
    Index n = s.rows();
    if (w == nullptr) return Vector::Constant(n, 1.0 / static_cast<double>(n));
    if (w->size() != n) throw LengthMismatch("weight length != sample count");
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) {
        if ((*w)[i] < 0.0) throw OrlError("negative IPM weight");
        sum += (*w)[i];
    }
    if (sum <= 0.0) throw AllZeroWeights("IPM weights sum to zero");
    return *w / sum;
}

}  // namespace detail

inline double median_pairwise_distance(const Matrix& pooled) {
    Index n = pooled.rows();
    std::vector<double> d;
    d.reserve(static_cast<size_t>(n * (n - 1) / 2));
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            double dist = (pooled.row(i) - pooled.row(j)).norm();
            if (dist > 0.0) d.push_back(dist);
        }
    if (d.empty()) return 1.0;
    size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<long>(mid), d.end());
    return d[mid];
}

// ---- MMD^2, biased V-statistic, RBF kernel --------------------------------

struct BalanceGrad {
    double value = 0.0;
    Matrix g0, g1;   // d value / d sample coordinates
    Vector gw0, gw1; // d value / d (unnormalized) weights
};

// Weighted squared MMD with kernel exp(-||u-v||^2 / (2 sigma^2)). Weights are
// normalized internally; uniform weights reduce to the plain V-statistic.
inline BalanceGrad mmd2_grad(const Matrix& s0_in, const Matrix& s1_in, double sigma,
                             const Vector* w0_in = nullptr, const Vector* w1_in = nullptr,
                             bool want_grads = true) {
    detail::check_samples(s0_in, s1_in);
    if (!(sigma > 0.0)) throw ConfigError("MMD bandwidth must be > 0");
    bool swapped = detail::canonical_order_swapped(s0_in, s1_in);
    const Matrix& s0 = swapped ? s1_in : s0_in;
    const Matrix& s1 = swapped ? s0_in : s1_in;
    const Vector* w0 = swapped ? w1_in : w0_in;
    const Vector* w1 = swapped ? w0_in : w1_in;
    Vector a = detail::normalized_weights(s0, w0);
    Vector b = detail::normalized_weights(s1, w1);
    Index n = s0.rows(), m = s1.rows();
    double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    BalanceGrad out;
    if (want_grads) {
        out.g0 = Matrix::Zero(n, s0.cols());
        out.g1 = Matrix::Zero(m, s1.cols());
    }
    Vector dVda = Vector::Zero(n);
    Vector dVdb = Vector::Zero(m);

    double t00 = 0.0, t01 = 0.0, t11 = 0.0;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            double k = std::exp(-(s0.row(i) - s0.row(j)).squaredNorm() * inv2s2);
            t00 += a[i] * a[j] * k;
            dVda[i] += 2.0 * a[j] * k;
            if (want_grads && i != j)
                out.g0.row(i) += -2.0 * a[i] * a[j] * k / (sigma * sigma) *
                                 (s0.row(i) - s0.row(j));
        }
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) {
            double k = std::exp(-(s0.row(i) - s1.row(j)).squaredNorm() * inv2s2);
            t01 += a[i] * b[j] * k;
            dVda[i] += -2.0 * b[j] * k;
            dVdb[j] += -2.0 * a[i] * k;
            if (want_grads) {
                Eigen::RowVectorXd dir =
                    -k / (sigma * sigma) * (s0.row(i) - s1.row(j));
                out.g0.row(i) += -2.0 * a[i] * b[j] * dir;
                out.g1.row(j) += 2.0 * a[i] * b[j] * dir;
            }
        }
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) {
            double k = std::exp(-(s1.row(i) - s1.row(j)).squaredNorm() * inv2s2);
            t11 += b[i] * b[j] * k;
            dVdb[i] += 2.0 * b[j] * k;
            if (want_grads && i != j)
                out.g1.row(i) += -2.0 * b[i] * b[j] * k / (sigma * sigma) *
                                 (s1.row(i) - s1.row(j));
        }
    out.value = t00 - 2.0 * t01 + t11;
    if (out.value < 0.0) out.value = 0.0;

    if (want_grads) {
        // chain through internal weight normalization
        double sa = (w0 != nullptr) ? w0->sum() : static_cast<double>(n);
        double sb = (w1 != nullptr) ? w1->sum() : static_cast<double>(m);
        out.gw0 = (dVda.array() - (dVda.dot(a))).matrix() / sa;
        out.gw1 = (dVdb.array() - (dVdb.dot(b))).matrix() / sb;
        if (swapped) {
            std::swap(out.g0, out.g1);
            std::swap(out.gw0, out.gw1);
        }
    }
    return out;
}

inline double mmd2(const Matrix& s0, const Matrix& s1, double sigma) {
    return mmd2_grad(s0, s1, sigma, nullptr, nullptr, false).value;
}

inline double mmd2_w(const Matrix& s0, const Vector& w0, const Matrix& s1, const Vector& w1,
                     double sigma) {
    return mmd2_grad(s0, s1, sigma, &w0, &w1, false).value;
}

// ---- entropic optimal transport (log domain) -------------------------------

namespace detail {

struct OtSolution {
    double value = 0.0;  // dual objective <f,a> + <g,b> - eps*(sum P - 1)
    double kl = 0.0;     // KL(P || a x b), the epsilon-sensitivity of the value
    Matrix P;            // transport plan
    Vector f, g;         // dual potentials
};

inline Matrix pairwise_distances(const Matrix& u, const Matrix& v) {
    Index n = u.rows(), m = v.rows();
    Matrix C(n, m);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) C(i, j) = (u.row(i) - v.row(j)).norm();
    return C;
}

// Damped symmetric Sinkhorn updates: both potentials advance in parallel from
// the previous iterate, so swapping the inputs swaps (f, g) exactly and the
// value is symmetric by construction. Stops early only when the update is
// below float resolution, which leaves the result unchanged.
inline OtSolution entropic_ot(const Matrix& C, const Vector& a, const Vector& b, double eps,
                              int iterations) {
    if (!(eps > 0.0) || !std::isfinite(eps))
        throw NumericalUnderflow("sinkhorn regularization underflowed");
    Index n = C.rows(), m = C.cols();
    Vector loga = a.array().log().matrix();
    Vector logb = b.array().log().matrix();
    Vector f = Vector::Zero(n), g = Vector::Zero(m);

    auto lse_rows = [&](const Matrix& M) -> Vector {  // LSE over columns per row
        Vector mx = M.rowwise().maxCoeff();
        return (mx.array() +
                ((M.colwise() - mx).array().exp().rowwise().sum()).log())
            .matrix();
    };

    for (int it = 0; it < iterations; ++it) {
        // rows: (g_j - C_ij)/eps + log b_j ; cols: (f_i - C_ij)/eps + log a_i
        Matrix Mf = ((-C).rowwise() + g.transpose()) / eps;
        Mf.rowwise() += logb.transpose();
        Vector f_new = 0.5 * f - 0.5 * eps * lse_rows(Mf);
        Matrix Mg = ((-C.transpose()).rowwise() + f.transpose()) / eps;
        Mg.rowwise() += loga.transpose();
        Vector g_new = 0.5 * g - 0.5 * eps * lse_rows(Mg);
        double delta = std::max((f_new - f).cwiseAbs().maxCoeff(),
                                (g_new - g).cwiseAbs().maxCoeff());
        f = f_new;
        g = g_new;
        if (delta < 1e-13 * (1.0 + eps + f.cwiseAbs().maxCoeff())) break;
    }
    if (!f.allFinite() || !g.allFinite())
        throw NumericalUnderflow("sinkhorn potentials diverged; epsilon too small");

    OtSolution sol;
    Matrix logP = (((-C).colwise() + f).rowwise() + g.transpose()) / eps;
    logP.colwise() += loga;
    logP.rowwise() += logb.transpose();
    sol.P = logP.array().exp().matrix();
    double mass = sol.P.sum();
    sol.value = f.dot(a) + g.dot(b) - eps * (mass - 1.0);
    sol.kl = 0.0;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j)
            sol.kl += sol.P(i, j) * ((f[i] + g[j] - C(i, j)) / eps);
    sol.f = std::move(f);
    sol.g = std::move(g);
    return sol;
}

}  // namespace detail

// Debiased entropic Wasserstein (Sinkhorn divergence) with Euclidean ground
// cost and uniform (or supplied) marginals:
//   WM = OT_eps(s0, s1) - OT_eps(s0, s0)/2 - OT_eps(s1, s1)/2.
// The effective regularization eps * mean(cost) is scale-equivariant, so the
// value is exactly homogeneous under rescaling of both samples, and the
// debiasing makes it zero on identical samples and symmetric.
inline BalanceGrad wm_grad(const Matrix& s0_in, const Matrix& s1_in, double epsilon,
                           int iterations, const Vector* w0_in = nullptr,
                           const Vector* w1_in = nullptr, bool want_grads = true) {
    detail::check_samples(s0_in, s1_in);
    if (!(epsilon > 0.0)) throw ConfigError("sinkhorn epsilon must be > 0");
    bool swapped = detail::canonical_order_swapped(s0_in, s1_in);
    const Matrix& s0 = swapped ? s1_in : s0_in;
    const Matrix& s1 = swapped ? s0_in : s1_in;
    const Vector* w0 = swapped ? w1_in : w0_in;
    const Vector* w1 = swapped ? w0_in : w1_in;
    Vector a = detail::normalized_weights(s0, w0);
    Vector b = detail::normalized_weights(s1, w1);
    Index n = s0.rows(), m = s1.rows();

    Matrix Cab = detail::pairwise_distances(s0, s1);
    double mean_cost = a.transpose() * Cab * b;
    BalanceGrad out;
    if (want_grads) {
        out.g0 = Matrix::Zero(n, s0.cols());
        out.g1 = Matrix::Zero(m, s1.cols());
        out.gw0 = Vector::Zero(n);
        out.gw1 = Vector::Zero(m);
    }
    auto unswap = [&] {
        if (swapped && want_grads) {
            std::swap(out.g0, out.g1);
            std::swap(out.gw0, out.gw1);
        }
        return out;
    };
    if (mean_cost <= 0.0) return unswap();  // all points coincide

    double eps = epsilon * mean_cost;
    Matrix Caa = detail::pairwise_distances(s0, s0);
    Matrix Cbb = detail::pairwise_distances(s1, s1);
    detail::OtSolution ab = detail::entropic_ot(Cab, a, b, eps, iterations);
    detail::OtSolution aa = detail::entropic_ot(Caa, a, a, eps, iterations);
    detail::OtSolution bb = detail::entropic_ot(Cbb, b, b, eps, iterations);

    out.value = ab.value - 0.5 * aa.value - 0.5 * bb.value;
    if (out.value < 0.0) out.value = 0.0;
    if (!want_grads) return out;

    double dV_deps = ab.kl - 0.5 * aa.kl - 0.5 * bb.kl;
    // dS/dC_ab = P_ab + dS/deps * epsilon * a_i b_j  (eps = epsilon * <a,C b>)
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) {
            double coeff = ab.P(i, j) + dV_deps * epsilon * a[i] * b[j];
            double dist = Cab(i, j);
            if (dist > 0.0) {
                Eigen::RowVectorXd dir = (s0.row(i) - s1.row(j)) / dist;
                out.g0.row(i) += coeff * dir;
                out.g1.row(j) -= coeff * dir;
            }
        }
    // self terms: each point appears as row and column; plans are symmetric
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            double dist = Caa(i, j);
            if (dist > 0.0)
                out.g0.row(i) -= aa.P(i, j) * (s0.row(i) - s0.row(j)) / dist;
        }
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) {
            double dist = Cbb(i, j);
            if (dist > 0.0)
                out.g1.row(i) -= bb.P(i, j) * (s1.row(i) - s1.row(j)) / dist;
        }

    // Weight gradients via the dual potentials (envelope theorem); the
    // per-group normalization chain removes the additive gauge freedom.
    // Self terms see each point's weight in both marginals, hence 2f.
    double sa = (w0 != nullptr) ? w0->sum() : static_cast<double>(n);
    double sb = (w1 != nullptr) ? w1->sum() : static_cast<double>(m);
    Vector dS_da = ab.f - (aa.f + aa.g);
    Vector dS_db = ab.g - (bb.f + bb.g);
    dS_da += dV_deps * epsilon * (Cab * b);  // eps depends on weights via mean cost
    dS_db += dV_deps * epsilon * (Cab.transpose() * a);
    out.gw0 = (dS_da.array() - dS_da.dot(a)).matrix() / sa;
    out.gw1 = (dS_db.array() - dS_db.dot(b)).matrix() / sb;
    return unswap();
}

inline double wasserstein_sinkhorn(const Matrix& s0, const Matrix& s1, double epsilon,
                                   int iterations) {
    return wm_grad(s0, s1, epsilon, iterations, nullptr, nullptr, false).value;
}

inline double wm_w(const Matrix& s0, const Vector& w0, const Matrix& s1, const Vector& w1,
                   double epsilon, int iterations) {
    return wm_grad(s0, s1, epsilon, iterations, &w0, &w1, false).value;
}

// Dispatch helper used by the representation trainers.
inline BalanceGrad ipm_grad(const BalancingSpec& spec, const Matrix& s0, const Matrix& s1,
                            const Vector* w0 = nullptr, const Vector* w1 = nullptr,
                            bool want_grads = true) {
    if (spec.metric == IpmKind::Mmd) {
        double sigma = spec.bandwidth;
        if (sigma <= 0.0) {
            Matrix pooled(s0.rows() + s1.rows(), s0.cols());
            pooled << s0, s1;
            sigma = median_pairwise_distance(pooled);
        }
        return mmd2_grad(s0, s1, sigma, w0, w1, want_grads);
    }
    return wm_grad(s0, s1, spec.epsilon, spec.iterations, w0, w1, want_grads);
}

}  // namespace orl
