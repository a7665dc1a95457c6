#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "orl/common.hpp"
#include "orl/rng.hpp"

namespace orl {

// Observational triple (X, A, Y). Immutable after construction by convention;
// all consumers take it by const reference.
struct Dataset {
    Matrix X;  // n x d_x covariates
    Vector A;  // treatment in {0,1}
    Vector Y;  // outcome

    Index n() const { return X.rows(); }
    Index dim() const { return X.cols(); }

    void validate() const {
        if (X.rows() < 1) throw EmptySample("dataset has no rows");
        if (A.size() != X.rows() || Y.size() != X.rows())
            throw LengthMismatch("X, A, Y must have the same number of rows");
        for (Index i = 0; i < A.size(); ++i) {
            if (A[i] != 0.0 && A[i] != 1.0)
                throw NonBinaryTreatment("treatment not in {0,1} at row " + std::to_string(i + 1));
        }
        if (!X.allFinite()) throw NonFiniteValue("non-finite covariate value");
        if (!Y.allFinite()) throw NonFiniteValue("non-finite outcome value");
    }
};

// Dataset plus the ground truth needed to score estimators exactly:
// nuisances (mu0, mu1, pi1), the effect tau, and both sampled potential
// outcomes.
struct OracleDataset {
    Dataset base;
    Vector mu0, mu1, pi1, tau, y0, y1;

    Index n() const { return base.n(); }
    Index dim() const { return base.dim(); }

    void validate() const {
        base.validate();
        Index m = base.n();
        if (mu0.size() != m || mu1.size() != m || pi1.size() != m || tau.size() != m ||
            y0.size() != m || y1.size() != m)
            throw LengthMismatch("oracle columns must match dataset length");
        for (Index i = 0; i < m; ++i) {
            if (tau[i] != mu1[i] - mu0[i])
                throw OrlError("tau[i] != mu1[i] - mu0[i] at row " + std::to_string(i + 1));
            if (!(pi1[i] > 0.0 && pi1[i] < 1.0))
                throw OrlError("pi1 outside (0,1) at row " + std::to_string(i + 1));
            double y = base.A[i] * y1[i] + (1.0 - base.A[i]) * y0[i];
            if (y != base.Y[i])
                throw OrlError("consistency Y = A*y1 + (1-A)*y0 violated at row " +
                               std::to_string(i + 1));
        }
    }
};

enum class DgpKind { KallusSynthetic, HcMnistLike };

struct DgpSpec {
    DgpKind kind = DgpKind::KallusSynthetic;
    Index n = 500;
    uint64_t seed = 0;
    double gamma_star = std::exp(1.0);  // HC-MNIST-like only
    // Per-pixel noise scale of the synthetic image surrogate. The benchmark
    // description leaves this free; 1 is the default.
    double blob_sigma = 1.0;

    void validate() const {
        if (n < 1) throw ConfigError("DgpSpec.n must be >= 1");
        if (gamma_star < 1.0) throw ConfigError("DgpSpec.gamma_star must be >= 1");
        if (blob_sigma <= 0.0) throw ConfigError("DgpSpec.blob_sigma must be > 0");
    }
};

// ---- closed forms of the 2-d synthetic benchmark -------------------------

inline double kallus_mu1(double x1, double x2) {
    return x1 + 1.0 - 2.0 * std::sin(2.0 * x1 + x2) - 2.0 * x2 * (1.0 + 0.5 * x1);
}

inline double kallus_mu0(double x1, double x2) {
    return -x1 - 1.0 - 2.0 * std::sin(-2.0 * x1 + x2) - 2.0 * x2 * (1.0 + 0.5 * x1);
}

inline double kallus_pi1(double x1, double x2) {
    return sigmoid(0.75 * x1 - x2 + 0.5);
}

inline double kallus_tau(double x1, double x2) {
    return kallus_mu1(x1, x2) - kallus_mu0(x1, x2);
}

// X1 ~ Unif(-2,2), X2 ~ N(0,1), A ~ Bern(sigmoid(0.75 X1 - X2 + 0.5)),
// Y ~ N(mu_A(x), 1). Both potential outcomes are drawn from the same stream
// so Y = A*y1 + (1-A)*y0 holds exactly. Pure function of the spec.
inline OracleDataset generate_kallus_synthetic(const DgpSpec& spec) {
    spec.validate();
    if (spec.kind != DgpKind::KallusSynthetic)
        throw ConfigError("generate_kallus_synthetic requires kind = KallusSynthetic");
    Rng rng(derive_seed(spec.seed, "kallus"));
    Index n = spec.n;
    OracleDataset d;
    d.base.X.resize(n, 2);
    d.base.A.resize(n);
    d.base.Y.resize(n);
    d.mu0.resize(n);
    d.mu1.resize(n);
    d.pi1.resize(n);
    d.tau.resize(n);
    d.y0.resize(n);
    d.y1.resize(n);
    for (Index i = 0; i < n; ++i) {
        double x1 = rng.uniform(-2.0, 2.0);
        double x2 = rng.normal();
        double p = kallus_pi1(x1, x2);
        double a = rng.bernoulli(p) ? 1.0 : 0.0;
        double m0 = kallus_mu0(x1, x2);
        double m1 = kallus_mu1(x1, x2);
        double e0 = rng.normal();
        double e1 = rng.normal();
        d.base.X(i, 0) = x1;
        d.base.X(i, 1) = x2;
        d.base.A[i] = a;
        d.mu0[i] = m0;
        d.mu1[i] = m1;
        d.pi1[i] = p;
        d.tau[i] = m1 - m0;
        d.y0[i] = m0 + e0;
        d.y1[i] = m1 + e1;
        d.base.Y[i] = a * d.y1[i] + (1.0 - a) * d.y0[i];
    }
    return d;
}

// ---- HC-MNIST-style benchmark with a synthetic image surrogate -----------

inline double hcmnist_alpha(double phi, double gamma) {
    return 1.0 / (gamma * sigmoid(0.75 * phi + 0.5)) + 1.0 - 1.0 / gamma;
}

inline double hcmnist_beta(double phi, double gamma) {
    return gamma / sigmoid(0.75 * phi + 0.5) + 1.0 - gamma;
}

inline double hcmnist_mu(int a, double phi, double u) {
    double s = 2.0 * a - 1.0;
    return s * phi + s - 2.0 * std::sin(2.0 * s * phi) - 2.0 * (2.0 * u - 1.0) * (1.0 + 0.5 * phi);
}

inline double hcmnist_pi1(double phi, double u, double gamma) {
    return u / hcmnist_alpha(phi, gamma) + (1.0 - u) / hcmnist_beta(phi, gamma);
}

inline constexpr int kBlobPixels = 784;

// Maps the clipped per-class standardized intensity onto [Min_c, Max_c], so
// the ten classes tile [-2, 2] with one latent coordinate.
inline double hcmnist_phi_from_intensity(double standardized, int c) {
    double clip = std::min(1.4, std::max(-1.4, standardized));
    double min_c = -2.0 + 0.4 * c;
    double max_c = -2.0 + 0.4 * (c + 1);
    return min_c + (clip + 1.4) * (max_c - min_c) / 2.8;
}

// Each "image" is a 784-pixel Gaussian blob with class-dependent mean
// intensity; the blob's mean intensity is standardized per class (population
// constants) and compressed into phi. U ~ Bern(0.5) is appended as the last
// observed covariate, so d_x = 785.
inline OracleDataset generate_hcmnist_like(const DgpSpec& spec) {
    spec.validate();
    if (spec.kind != DgpKind::HcMnistLike)
        throw ConfigError("generate_hcmnist_like requires kind = HcMnistLike");
    Rng rng(derive_seed(spec.seed, "hcmnist"));
    Index n = spec.n;
    int dpix = kBlobPixels;
    OracleDataset d;
    d.base.X.resize(n, dpix + 1);
    d.base.A.resize(n);
    d.base.Y.resize(n);
    d.mu0.resize(n);
    d.mu1.resize(n);
    d.pi1.resize(n);
    d.tau.resize(n);
    d.y0.resize(n);
    d.y1.resize(n);
    double sigma_c = spec.blob_sigma / std::sqrt(static_cast<double>(dpix));
    for (Index i = 0; i < n; ++i) {
        int c = static_cast<int>(rng.below(10));
        double m_c = 0.10 + 0.01 * c;  // class-dependent mean intensity
        double sum = 0.0;
        for (int p = 0; p < dpix; ++p) {
            double v = rng.normal(m_c, spec.blob_sigma);
            d.base.X(i, p) = v;
            sum += v;
        }
        double u = rng.bernoulli(0.5) ? 1.0 : 0.0;
        d.base.X(i, dpix) = u;
        double standardized = (sum / dpix - m_c) / sigma_c;
        double phi = hcmnist_phi_from_intensity(standardized, c);
        double p1 = hcmnist_pi1(phi, u, spec.gamma_star);
        double a = rng.bernoulli(p1) ? 1.0 : 0.0;
        double m0 = hcmnist_mu(0, phi, u);
        double m1 = hcmnist_mu(1, phi, u);
        double e0 = rng.normal();
        double e1 = rng.normal();
        d.base.A[i] = a;
        d.mu0[i] = m0;
        d.mu1[i] = m1;
        d.pi1[i] = p1;
        d.tau[i] = m1 - m0;
        d.y0[i] = m0 + e0;
        d.y1[i] = m1 + e1;
        d.base.Y[i] = a * d.y1[i] + (1.0 - a) * d.y0[i];
    }
    return d;
}

inline OracleDataset generate(const DgpSpec& spec) {
    return spec.kind == DgpKind::KallusSynthetic ? generate_kallus_synthetic(spec)
                                                 : generate_hcmnist_like(spec);
}

}  // namespace orl
