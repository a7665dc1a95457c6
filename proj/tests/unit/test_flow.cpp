#include <doctest.h>

#include "orl/flow.hpp"
#include "testutil.hpp"

using namespace orl;

TEST_SUITE("flow") {

TEST_CASE("freshly initialized flow is the identity map") {
    Rng rng(5);
    CouplingFlow flow = CouplingFlow::make(4, 3, 6, rng);
    Matrix X = Matrix::Random(10, 4);
    CHECK((flow.forward(X) - X).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("random flow round trips within 1e-8") {
    Rng rng(5);
    CouplingFlow flow = CouplingFlow::make(3, 4, 6, rng);
    // make it a non-trivial map
    Rng wrng(6);
    for (auto& blk : flow.blocks) {
        auto& last = blk.subnet.layers.back();
        for (Index i = 0; i < last.W.rows(); ++i)
            for (Index j = 0; j < last.W.cols(); ++j) last.W(i, j) = 0.3 * wrng.normal();
        for (Index i = 0; i < last.b.size(); ++i) last.b[i] = 0.2 * wrng.normal();
    }
    Matrix X = Matrix::Random(50, 3);
    Matrix phi = flow.forward(X);
    CHECK((phi - X).cwiseAbs().maxCoeff() > 1e-3);  // genuinely moved
    CHECK((flow.inverse(phi) - X).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("single block with hand-set scale and shift") {
    Rng rng(7);
    CouplingFlow flow = CouplingFlow::make(2, 1, 3, rng);
    // subnet maps x_keep (coordinate 0) to [s, t]; force constants via bias
    auto& blk = flow.blocks[0];
    REQUIRE(blk.keep == std::vector<Index>{0});
    REQUIRE(blk.change == std::vector<Index>{1});
    auto& last = blk.subnet.layers.back();
    last.W.setZero();
    last.b << 0.7, -0.3;  // raw scale 0.7, shift -0.3
    Matrix X(1, 2);
    X << 5.0, 2.0;
    Matrix phi = flow.forward(X);
    double s = CouplingFlow::scale_of(0.7);
    CHECK(phi(0, 0) == 5.0);
    CHECK(phi(0, 1) == doctest::Approx(2.0 * std::exp(s) - 0.3).epsilon(1e-12));
}

TEST_CASE("dimension below 2 is rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(CouplingFlow::make(1, 3, 4, rng), DimensionTooSmall);
}

TEST_CASE("backward matches finite differences through a scalar loss") {
    Rng rng(11);
    CouplingFlow flow = CouplingFlow::make(2, 2, 4, rng);
    Rng wrng(12);
    for (auto& blk : flow.blocks) {
        auto& last = blk.subnet.layers.back();
        for (Index i = 0; i < last.W.rows(); ++i)
            for (Index j = 0; j < last.W.cols(); ++j) last.W(i, j) = 0.2 * wrng.normal();
    }
    Matrix X = Matrix::Random(5, 2);
    Vector t = Vector::Random(5);
    auto eval = [&] {
        Matrix phi = flow.forward(X);
        return (phi.col(0) + phi.col(1) - t).squaredNorm() / 5.0;
    };

    CouplingFlow::Cache cache;
    Matrix phi = flow.forward_cached(X, cache);
    Vector r = phi.col(0) + phi.col(1) - t;
    Matrix dPhi(5, 2);
    dPhi.col(0) = 2.0 * r / 5.0;
    dPhi.col(1) = 2.0 * r / 5.0;
    CouplingFlow::Grads g;
    g.zero_like(flow);
    flow.backward(cache, dPhi, g);
    Vector analytic = flatten(flow.grad_views(g));

    auto views = flow.param_views();
    Vector fd = testutil::fd_grad(eval, views);
    CHECK(testutil::grad_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("input gradients are exact for hand-set coupling") {
    Rng rng(7);
    CouplingFlow flow = CouplingFlow::make(2, 1, 3, rng);
    auto& last = flow.blocks[0].subnet.layers.back();
    last.W.setZero();
    last.b << 0.5, 0.0;  // phi2 = x2 * e^{scale_of(0.5)}
    Matrix X(1, 2);
    X << 1.0, 2.0;
    CouplingFlow::Cache cache;
    flow.forward_cached(X, cache);
    Matrix dPhi(1, 2);
    dPhi << 0.0, 1.0;
    CouplingFlow::Grads g;
    g.zero_like(flow);
    Matrix dX = flow.backward(cache, dPhi, g);
    CHECK(dX(0, 1) ==
          doctest::Approx(std::exp(CouplingFlow::scale_of(0.5))).epsilon(1e-12));
}

TEST_CASE("flow serialization round trips") {
    Rng rng(19);
    CouplingFlow flow = CouplingFlow::make(3, 3, 4, rng);
    Rng wrng(20);
    for (auto& blk : flow.blocks)
        for (auto& l : blk.subnet.layers)
            for (Index i = 0; i < l.b.size(); ++i) l.b[i] += 0.1 * wrng.normal();
    CouplingFlow copy = CouplingFlow::from_json(flow.to_json());
    Matrix X = Matrix::Random(6, 3);
    CHECK((flow.forward(X) - copy.forward(X)).cwiseAbs().maxCoeff() == 0.0);
}

}  // TEST_SUITE
