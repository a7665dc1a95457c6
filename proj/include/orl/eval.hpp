#pragma once

#include <fstream>

#include "orl/csv.hpp"
#include "orl/ortho.hpp"

namespace orl {

struct MetricReport {
    Quantity quantity = Quantity::Cate;
    double value = 0.0;  // rMSE for CAPOs, rPEHE for the CATE
    Index n_eval = 0;
    std::string method;
    uint64_t seed = 0;
};

// Root precision in estimating heterogeneous effects: the RMSE of the CATE
// estimate against the oracle effect.
inline double rpehe(const Vector& tau_hat, const Vector& tau_true) {
    if (tau_hat.size() != tau_true.size() || tau_hat.size() < 1)
        throw LengthMismatch("rpehe needs equal nonzero lengths");
    return std::sqrt((tau_hat - tau_true).squaredNorm() /
                     static_cast<double>(tau_hat.size()));
}

// Same contract for CAPOs against the oracle expected potential outcome.
inline double rmse_capo(const Vector& xi_hat, const Vector& mu_true) {
    if (xi_hat.size() != mu_true.size() || xi_hat.size() < 1)
        throw LengthMismatch("rmse_capo needs equal nonzero lengths");
    return std::sqrt((xi_hat - mu_true).squaredNorm() / static_cast<double>(xi_hat.size()));
}

// Orthogonal-learner metric minus plug-in baseline metric; negative means
// the orthogonal learner improved on the baseline.
inline double delta_vs_baseline(const MetricReport& or_report, const MetricReport& baseline) {
    if (or_report.quantity != baseline.quantity)
        throw MismatchedQuantity("delta requires matching quantities");
    if (or_report.n_eval != baseline.n_eval)
        throw MismatchedQuantity("delta requires the same evaluation set");
    return or_report.value - baseline.value;
}

struct ExpansionStats {
    double median = 0.0, q25 = 0.0, q75 = 0.0;
    Index n_pairs = 0;
};

// Median (and quartiles) of the pairwise ratio ||phi(x)-phi(x')|| / ||x-x'||.
// All pairs are used up to a cap, beyond which pairs are subsampled
// deterministically.
template <typename PhiFn>
    requires std::invocable<PhiFn, const Matrix&>
ExpansionStats expansion_ratio(PhiFn&& phi, const Matrix& X, Index max_pairs = 10000,
                               uint64_t seed = 0) {
    Index n = X.rows();
    if (n < 2) throw DegenerateSample("expansion_ratio needs at least two rows");
    Matrix P = phi(X);
    std::vector<double> ratios;
    Index total_pairs = n * (n - 1) / 2;
    auto push_pair = [&](Index i, Index j) {
        double dx = (X.row(i) - X.row(j)).norm();
        if (dx <= 1e-9) return;
        double dp = (P.row(i) - P.row(j)).norm();
        ratios.push_back(dp / dx);
    };
    if (total_pairs <= max_pairs) {
        for (Index i = 0; i < n; ++i)
            for (Index j = i + 1; j < n; ++j) push_pair(i, j);
    } else {
        Rng rng(derive_seed(seed, "expansion-pairs"));
        for (Index k = 0; k < max_pairs; ++k) {
            Index i = static_cast<Index>(rng.below(static_cast<uint32_t>(n)));
            Index j = static_cast<Index>(rng.below(static_cast<uint32_t>(n - 1)));
            if (j >= i) ++j;
            push_pair(i, j);
        }
    }
    if (ratios.empty()) throw DegenerateSample("all rows coincide; no valid pairs");
    std::sort(ratios.begin(), ratios.end());
    auto quantile = [&ratios](double q) {
        double pos = q * static_cast<double>(ratios.size() - 1);
        size_t lo = static_cast<size_t>(pos);
        size_t hi = std::min(lo + 1, ratios.size() - 1);
        double w = pos - static_cast<double>(lo);
        return (1.0 - w) * ratios[lo] + w * ratios[hi];
    };
    ExpansionStats st;
    st.median = quantile(0.5);
    st.q25 = quantile(0.25);
    st.q75 = quantile(0.75);
    st.n_pairs = static_cast<Index>(ratios.size());
    return st;
}

inline ExpansionStats expansion_ratio(const TrainedRepresentation& tr, const Matrix& X,
                                      Index max_pairs = 10000, uint64_t seed = 0) {
    return expansion_ratio([&tr](const Matrix& M) { return tr.phi(M); }, X, max_pairs, seed);
}

// Point-pair table of how a flow transforms a regular grid; plot-ready CSV
// rows (x..., phi...), no rendering.
inline std::string grid_transform_table(const CouplingFlow& flow, double lo, double hi,
                                        int steps) {
    if (steps < 2) throw ConfigError("grid needs at least 2 steps per axis");
    Index d = flow.dim;
    Index rows = 1;
    for (Index k = 0; k < d; ++k) rows *= steps;
    Matrix X(rows, d);
    for (Index r = 0; r < rows; ++r) {
        Index rem = r;
        for (Index k = 0; k < d; ++k) {
            Index idx = rem % steps;
            rem /= steps;
            X(r, k) = lo + (hi - lo) * static_cast<double>(idx) / static_cast<double>(steps - 1);
        }
    }
    Matrix P = flow.forward(X);
    std::ostringstream ss;
    for (Index k = 0; k < d; ++k) ss << "x" << (k + 1) << ",";
    for (Index k = 0; k < d; ++k) ss << "phi" << (k + 1) << (k + 1 < d ? "," : "");
    ss << "\n";
    for (Index r = 0; r < rows; ++r) {
        for (Index k = 0; k < d; ++k) ss << fmt_full(X(r, k)) << ",";
        for (Index k = 0; k < d; ++k) ss << fmt_full(P(r, k)) << (k + 1 < d ? "," : "");
        ss << "\n";
    }
    return ss.str();
}

inline void grid_transform_export(const CouplingFlow& flow, double lo, double hi, int steps,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write grid CSV: " + path);
    out << grid_transform_table(flow, lo, hi, steps);
}

// Monte-Carlo comparison of adjusted vs unadjusted constant-representation
// quantities: the average potential outcome E[Y[a]] against the arm mean
// E[Y | A=a], and the ATE against the difference in means. A gap beyond
// 3 SE flags confounding that a collapsed representation cannot adjust away.
struct RicbReport {
    double apo0 = 0, apo1 = 0, se_apo0 = 0, se_apo1 = 0;
    double arm_mean0 = 0, arm_mean1 = 0, se_arm0 = 0, se_arm1 = 0;
    double ate = 0, se_ate = 0;
    double diff_means = 0, se_diff = 0;
    bool gap0_flagged = false, gap1_flagged = false, ate_gap_flagged = false;
};

namespace detail {

inline std::pair<double, double> mean_se(const Vector& v) {
    double m = v.mean();
    double var = (v.array() - m).square().sum() / std::max<double>(1.0, v.size() - 1);
    return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace detail

inline RicbReport ricb_probe(const OracleDataset& d) {
    RicbReport r;
    std::tie(r.apo0, r.se_apo0) = detail::mean_se(d.y0);
    std::tie(r.apo1, r.se_apo1) = detail::mean_se(d.y1);
    std::tie(r.ate, r.se_ate) = detail::mean_se((d.y1 - d.y0).eval());

    std::vector<double> v0, v1;
    for (Index i = 0; i < d.n(); ++i)
        (d.base.A[i] > 0.5 ? v1 : v0).push_back(d.base.Y[i]);
    if (v0.empty() || v1.empty()) throw SingleArmData("ricb probe needs both arms");
    Vector arm0 = Eigen::Map<Vector>(v0.data(), static_cast<Index>(v0.size()));
    Vector arm1 = Eigen::Map<Vector>(v1.data(), static_cast<Index>(v1.size()));
    std::tie(r.arm_mean0, r.se_arm0) = detail::mean_se(arm0);
    std::tie(r.arm_mean1, r.se_arm1) = detail::mean_se(arm1);
    r.diff_means = r.arm_mean1 - r.arm_mean0;
    r.se_diff = std::sqrt(r.se_arm0 * r.se_arm0 + r.se_arm1 * r.se_arm1);

    auto gap = [](double a, double b, double se_a, double se_b) {
        return std::abs(a - b) > 3.0 * std::sqrt(se_a * se_a + se_b * se_b);
    };
    r.gap0_flagged = gap(r.apo0, r.arm_mean0, r.se_apo0, r.se_arm0);
    r.gap1_flagged = gap(r.apo1, r.arm_mean1, r.se_apo1, r.se_arm1);
    r.ate_gap_flagged = gap(r.ate, r.diff_means, r.se_ate, r.se_diff);
    return r;
}

inline RicbReport ricb_probe(const DgpSpec& spec) { return ricb_probe(generate(spec)); }

}  // namespace orl
