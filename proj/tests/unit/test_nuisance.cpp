#include <doctest.h>

#include "orl/nuisance.hpp"

using namespace orl;

namespace {

NuisanceHyper quick_hyper(int epochs = 20) {
    NuisanceHyper h;
    h.hidden = 8;
    h.epochs = epochs;
    return h;
}

}  // namespace

TEST_SUITE("nuisance") {

TEST_CASE("propensity on unconfounded data concentrates near one half") {
    Rng rng(1);
    Index n = 10000;
    Dataset d;
    d.X.resize(n, 2);
    d.A.resize(n);
    d.Y.resize(n);
    for (Index i = 0; i < n; ++i) {
        d.X(i, 0) = rng.normal();
        d.X(i, 1) = rng.normal();
        d.A[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        d.Y[i] = rng.normal();
    }
    DenseNet pi = fit_propensity(d, quick_hyper(10), 7);
    Vector p = pi.forward(d.X).col(0);
    CHECK((p.array() - 0.5).abs().mean() < 0.05);
}

TEST_CASE("separable data stays within the probability clamp") {
    Dataset d;
    Index n = 60;
    d.X.resize(n, 1);
    d.A.resize(n);
    d.Y = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
        d.X(i, 0) = i < n / 2 ? -2.0 : 2.0;
        d.A[i] = i < n / 2 ? 0.0 : 1.0;
    }
    DenseNet pi = fit_propensity(d, quick_hyper(500), 3);
    Vector p = pi.forward(d.X).col(0);
    for (Index i = 0; i < n; ++i) {
        CHECK(p[i] >= 1e-6);
        CHECK(p[i] <= 1.0 - 1e-6);
    }
    CHECK(p.head(n / 2).maxCoeff() < 0.01);  // separable: fits hard toward 0/1
    CHECK(p.tail(n / 2).minCoeff() > 0.99);
}

TEST_CASE("propensity is calibrated on kallus data") {
    DgpSpec spec;
    spec.n = 10000;
    spec.seed = 5;
    OracleDataset d = generate_kallus_synthetic(spec);
    DenseNet pi = fit_propensity(d.base, quick_hyper(15), 11);
    Vector p = pi.forward(d.base.X).col(0);
    double mean_a = d.base.A.mean();
    double se = std::sqrt(mean_a * (1.0 - mean_a) / static_cast<double>(d.n()));
    CHECK(std::abs(p.mean() - mean_a) < 3.0 * se);
}

TEST_CASE("single-arm data is rejected") {
    Dataset d;
    d.X = Matrix::Random(20, 2);
    d.A = Vector::Ones(20);
    d.Y = Vector::Random(20);
    CHECK_THROWS_AS(fit_propensity(d, quick_hyper(1), 1), SingleArmData);
}

TEST_CASE("clipped inverse weights") {
    CHECK(clipped_inverse_weight(1, 1.0, 0.5) == 2.0);
    CHECK(clipped_inverse_weight(1, 0.0, 0.9) == 0.0);
    CHECK(clipped_inverse_weight(1, 1.0, 0.01) == 0.0);  // below the 0.05 clip
    CHECK(clipped_inverse_weight(0, 0.0, 0.3) == doctest::Approx(1.0 / 0.7));
    CHECK(clipped_inverse_weight(0, 0.0, 0.97) == 0.0);  // pi_0 = 0.03 clipped

    // support is {0} or [1, 20]
    Rng rng(3);
    for (int k = 0; k < 2000; ++k) {
        double pi1 = rng.uniform(0.001, 0.999);
        double A = rng.bernoulli(0.5) ? 1.0 : 0.0;
        int a = rng.bernoulli(0.5) ? 1 : 0;
        double w = clipped_inverse_weight(a, A, pi1);
        CHECK((w == 0.0 || (w >= 1.0 && w <= 20.0 + 1e-12)));
    }
}

TEST_CASE("oracle policy reproduces the stored columns exactly") {
    DgpSpec spec;
    spec.n = 200;
    spec.seed = 4;
    OracleDataset d = generate_kallus_synthetic(spec);
    NuisanceSet ns = assemble_nuisances(nullptr, d.base, NuisancePolicy::oracle(d),
                                        quick_hyper(1), 1);
    CHECK((ns.mu0(d.base.X) - d.mu0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ns.mu1(d.base.X) - d.mu1).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ns.pi1(d.base.X) - d.pi1).cwiseAbs().maxCoeff() == 0.0);

    Matrix unseen = Matrix::Constant(1, 2, 123.456);
    CHECK_THROWS_AS(ns.mu0(unseen), OracleUnavailable);
}

TEST_CASE("reuse_heads binds mu to the representation heads") {
    DgpSpec spec;
    spec.n = 150;
    spec.seed = 6;
    OracleDataset d = generate_kallus_synthetic(spec);
    RepLearnerSpec rs;
    rs.family = RepFamily::TARNet;
    rs.epochs = 3;
    TrainedRepresentation tr = train_representation(rs, d.base, 2);
    NuisanceSet ns =
        assemble_nuisances(&tr, d.base, NuisancePolicy::reuse_heads(), quick_hyper(2), 3);
    Matrix heads = rep_inputs(tr, d.base.X, RepSelector::Heads);
    CHECK((ns.mu0(d.base.X) - heads.col(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ns.mu1(d.base.X) - heads.col(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fresh outcome net is not bound to the heads") {
    DgpSpec spec;
    spec.n = 150;
    spec.seed = 7;
    OracleDataset d = generate_kallus_synthetic(spec);
    RepLearnerSpec rs;
    rs.family = RepFamily::CFR;
    rs.balancing.alpha = 0.1;
    rs.balancing.bandwidth = 1.0;
    rs.epochs = 3;
    CHECK(default_outcome_policy(rs) == NuisancePolicy::Kind::FreshOutcomeNet);
    rs.invertible = true;
    CHECK(default_outcome_policy(rs) == NuisancePolicy::Kind::ReuseHeads);
    rs.invertible = false;
    rs.balancing.alpha = 0.0;
    CHECK(default_outcome_policy(rs) == NuisancePolicy::Kind::ReuseHeads);

    rs.balancing.alpha = 0.1;
    TrainedRepresentation tr = train_representation(rs, d.base, 4);
    NuisanceSet ns =
        assemble_nuisances(&tr, d.base, NuisancePolicy::fresh_outcome_net(), quick_hyper(3), 5);
    Matrix heads = rep_inputs(tr, d.base.X, RepSelector::Heads);
    CHECK((ns.mu0(d.base.X) - heads.col(0)).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("mu_mix identity holds exactly") {
    DgpSpec spec;
    spec.n = 100;
    spec.seed = 8;
    OracleDataset d = generate_kallus_synthetic(spec);
    NuisanceSet ns = assemble_nuisances(nullptr, d.base, NuisancePolicy::oracle(d),
                                        quick_hyper(1), 1);
    Vector mix = ns.mu_mix(d.base.X);
    Vector expected = (Vector::Ones(d.n()) - d.pi1).cwiseProduct(d.mu0) +
                      d.pi1.cwiseProduct(d.mu1);
    CHECK((mix - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("nuisance sets serialize with their provenance tag") {
    DgpSpec spec;
    spec.n = 120;
    spec.seed = 9;
    OracleDataset d = generate_kallus_synthetic(spec);
    RepLearnerSpec rs;
    rs.family = RepFamily::TARNet;
    rs.epochs = 2;
    TrainedRepresentation tr = train_representation(rs, d.base, 1);
    NuisanceSet ns =
        assemble_nuisances(&tr, d.base, NuisancePolicy::reuse_heads(), quick_hyper(2), 2);
    nlohmann::json j = ns.to_json();
    CHECK(j["provenance"] == "representation_heads");
    CHECK(j.count("rep") == 1);
    CHECK(j.count("propensity") == 1);

    NuisanceSet fresh =
        assemble_nuisances(nullptr, d.base, NuisancePolicy::fresh_outcome_net(), quick_hyper(2), 3);
    CHECK(fresh.to_json()["provenance"] == "fresh_outcome_net");
}

TEST_CASE("oracle policy without data throws") {
    Dataset d;
    d.X = Matrix::Random(10, 2);
    d.A = Vector::Zero(10);
    d.A[0] = 1;
    d.Y = Vector::Random(10);
    NuisancePolicy p;
    p.kind = NuisancePolicy::Kind::Oracle;
    CHECK_THROWS_AS(assemble_nuisances(nullptr, d, p, quick_hyper(1), 1), OracleUnavailable);
}

}  // TEST_SUITE
