#pragma once

#include <json.hpp>
#include <vector>

#include "orl/nn.hpp"

namespace orl {

// Invertible representation built from affine coupling blocks over
// alternating coordinate partitions. Each block leaves one partition fixed
// and maps the other as y = x .* exp(s) + t, where (s, t) come from a small
// subnet of the fixed partition. Inversion is exact and needs no iteration.
// Subnet output layers start at zero, so a fresh flow is the identity map.
struct CouplingFlow {
    struct Block {
        std::vector<Index> keep, change;
        DenseNet subnet;  // n_keep -> 2 * n_change, columns [s_raw | t]
    };
    std::vector<Block> blocks;
    Index dim = 0;

    // The log-scale is soft-capped, s = cap * tanh(s_raw / cap), keeping
    // every block's expansion within e^cap so the analytic inverse stays
    // numerically exact (round trips hold to well under 1e-8).
    static constexpr double kScaleCap = 5.0;

    static double scale_of(double s_raw) {
        return kScaleCap * std::tanh(s_raw / kScaleCap);
    }

    static CouplingFlow make(Index dim, int n_blocks, int hidden, Rng& rng) {
        if (dim < 2) throw DimensionTooSmall("coupling flow needs dimension >= 2");
        CouplingFlow f;
        f.dim = dim;
        for (int b = 0; b < n_blocks; ++b) {
            Block blk;
            for (Index i = 0; i < dim; ++i) {
                bool even = (i % 2 == 0);
                if (even == (b % 2 == 0))
                    blk.keep.push_back(i);
                else
                    blk.change.push_back(i);
            }
            int nk = static_cast<int>(blk.keep.size());
            int nc = static_cast<int>(blk.change.size());
            blk.subnet = DenseNet::make({nk, hidden, 2 * nc}, OutputAct::Identity, rng);
            blk.subnet.zero_last_layer();
            f.blocks.push_back(std::move(blk));
        }
        return f;
    }

    Index in_dim() const { return dim; }
    Index out_dim() const { return dim; }

    struct BlockCache {
        Matrix xkeep, xchange, st;
        DenseNet::Cache subnet_cache;
    };
    struct Cache {
        std::vector<BlockCache> blocks;
    };

    Matrix forward(const Matrix& X) const {
        Cache c;
        return forward_cached(X, c);
    }

    Matrix forward_cached(const Matrix& X, Cache& cache) const {
        if (X.cols() != dim)
            throw ShapeMismatch("flow input width " + std::to_string(X.cols()) +
                                " != " + std::to_string(dim));
        cache.blocks.clear();
        cache.blocks.resize(blocks.size());
        Matrix h = X;
        for (size_t b = 0; b < blocks.size(); ++b) {
            const Block& blk = blocks[b];
            BlockCache& bc = cache.blocks[b];
            bc.xkeep = gather(h, blk.keep);
            bc.xchange = gather(h, blk.change);
            bc.st = blk.subnet.forward_cached(bc.xkeep, bc.subnet_cache);
            Index nc = static_cast<Index>(blk.change.size());
            Matrix s = bc.st.leftCols(nc).unaryExpr([](double v) { return scale_of(v); });
            Matrix t = bc.st.rightCols(nc);
            Matrix ych = bc.xchange.cwiseProduct(s.array().exp().matrix()) + t;
            scatter(h, blk.change, ych);
        }
        return h;
    }

    Matrix inverse(const Matrix& Phi) const {
        if (Phi.cols() != dim)
            throw ShapeMismatch("flow inverse width " + std::to_string(Phi.cols()) +
                                " != " + std::to_string(dim));
        Matrix h = Phi;
        for (size_t b = blocks.size(); b-- > 0;) {
            const Block& blk = blocks[b];
            Matrix keep = gather(h, blk.keep);
            Matrix st = blk.subnet.forward(keep);
            Index nc = static_cast<Index>(blk.change.size());
            Matrix s = st.leftCols(nc).unaryExpr([](double v) { return scale_of(v); });
            Matrix t = st.rightCols(nc);
            Matrix ych = gather(h, blk.change);
            Matrix xch = (ych - t).cwiseProduct((-s.array()).exp().matrix());
            scatter(h, blk.change, xch);
        }
        return h;
    }

    struct Grads {
        std::vector<DenseNet::Grads> subnets;

        void zero_like(const CouplingFlow& f) {
            subnets.resize(f.blocks.size());
            for (size_t b = 0; b < f.blocks.size(); ++b)
                subnets[b].zero_like(f.blocks[b].subnet);
        }
    };

    // Backprop through the whole flow; returns dL/dX.
    Matrix backward(const Cache& cache, const Matrix& dPhi, Grads& g) const {
        Matrix dh = dPhi;
        for (size_t b = blocks.size(); b-- > 0;) {
            const Block& blk = blocks[b];
            const BlockCache& bc = cache.blocks[b];
            Index nc = static_cast<Index>(blk.change.size());
            Matrix s = bc.st.leftCols(nc).unaryExpr([](double v) { return scale_of(v); });
            Matrix es = s.array().exp().matrix();
            // ds/ds_raw = 1 - (s / cap)^2 from the tanh cap
            Matrix dscale =
                (1.0 - (s / kScaleCap).array().square()).matrix();
            Matrix dych = gather(dh, blk.change);
            Matrix dkeep_direct = gather(dh, blk.keep);
            // y_c = x_c .* exp(s) + t
            Matrix dxchange = dych.cwiseProduct(es);
            Matrix dst(dych.rows(), 2 * nc);
            dst.leftCols(nc) =
                dych.cwiseProduct(bc.xchange).cwiseProduct(es).cwiseProduct(dscale);
            dst.rightCols(nc) = dych;  // dL/dt
            Matrix dkeep_subnet = blk.subnet.backward(bc.subnet_cache, dst, g.subnets[b]);
            Matrix dkeep = dkeep_direct + dkeep_subnet;
            scatter(dh, blk.keep, dkeep);
            scatter(dh, blk.change, dxchange);
        }
        return dh;
    }

    std::vector<TensorView> param_views() {
        std::vector<TensorView> v;
        for (auto& blk : blocks) {
            auto sv = blk.subnet.param_views();
            v.insert(v.end(), sv.begin(), sv.end());
        }
        return v;
    }

    std::vector<TensorView> grad_views(Grads& g) const {
        std::vector<TensorView> v;
        for (size_t b = 0; b < blocks.size(); ++b) {
            auto sv = blocks[b].subnet.grad_views(g.subnets[b]);
            v.insert(v.end(), sv.begin(), sv.end());
        }
        return v;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "orl-flow";
        j["version"] = 1;
        j["dim"] = dim;
        nlohmann::json bs = nlohmann::json::array();
        for (const auto& blk : blocks) {
            nlohmann::json bj;
            bj["keep"] = blk.keep;
            bj["change"] = blk.change;
            bj["subnet"] = blk.subnet.to_json();
            bs.push_back(bj);
        }
        j["blocks"] = bs;
        return j;
    }

    static CouplingFlow from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "orl-flow") throw ConfigError("not a flow parameter blob");
        CouplingFlow f;
        f.dim = j.at("dim").get<Index>();
        for (const auto& bj : j.at("blocks")) {
            Block blk;
            blk.keep = bj.at("keep").get<std::vector<Index>>();
            blk.change = bj.at("change").get<std::vector<Index>>();
            blk.subnet = DenseNet::from_json(bj.at("subnet"));
            f.blocks.push_back(std::move(blk));
        }
        return f;
    }

private:
    static Matrix gather(const Matrix& m, const std::vector<Index>& idx) {
        Matrix out(m.rows(), static_cast<Index>(idx.size()));
        for (size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = m.col(idx[j]);
        return out;
    }

    static void scatter(Matrix& m, const std::vector<Index>& idx, const Matrix& cols) {
        for (size_t j = 0; j < idx.size(); ++j) m.col(idx[j]) = cols.col(static_cast<Index>(j));
    }
};

}  // namespace orl
