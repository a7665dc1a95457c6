#pragma once

#include <json.hpp>
#include <vector>

#include "orl/common.hpp"
#include "orl/rng.hpp"

namespace orl {

enum class OutputAct { Identity, Sigmoid, Relu };

inline std::string to_string(OutputAct a) {
    switch (a) {
        case OutputAct::Identity: return "identity";
        case OutputAct::Sigmoid: return "sigmoid";
        case OutputAct::Relu: return "relu";
    }
    return "identity";
}

inline OutputAct output_act_from_string(const std::string& s) {
    if (s == "identity") return OutputAct::Identity;
    if (s == "sigmoid") return OutputAct::Sigmoid;
    if (s == "relu") return OutputAct::Relu;
    throw ConfigError("unknown activation: " + s);
}

// Mutable view over one parameter tensor; the optimizer and EMA tracker
// operate on these so dense nets and flows share the same machinery.
struct TensorView {
    double* data;
    Index size;
};

// Fully-connected net: affine layers with ReLU on hidden layers and a
// configurable output activation. Sigmoid outputs are clamped to
// [1e-6, 1-1e-6] when read as probabilities.
struct DenseNet {
    struct Layer {
        Matrix W;  // out x in
        Vector b;
    };
    std::vector<Layer> layers;
    OutputAct output_act = OutputAct::Identity;

    // Kaiming-uniform init with nonzero uniform biases, U(+-1/sqrt(fan_in)).
    // At the small widths used here, zero biases leave whole rows of hidden
    // units dead and measurably cap what the nets can reach.
    static DenseNet make(const std::vector<int>& dims, OutputAct act, Rng& rng) {
        if (dims.size() < 2) throw ConfigError("DenseNet needs at least input and output dims");
        DenseNet net;
        net.output_act = act;
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            Layer layer;
            layer.W.resize(dims[l + 1], dims[l]);
            layer.b.resize(dims[l + 1]);
            double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
            for (Index i = 0; i < layer.W.rows(); ++i)
                for (Index j = 0; j < layer.W.cols(); ++j)
                    layer.W(i, j) = rng.uniform(-bound, bound);
            for (Index i = 0; i < layer.b.size(); ++i) layer.b[i] = rng.uniform(-bound, bound);
            net.layers.push_back(std::move(layer));
        }
        return net;
    }

    Index in_dim() const { return layers.front().W.cols(); }
    Index out_dim() const { return layers.back().W.rows(); }

    void zero_last_layer() {
        layers.back().W.setZero();
        layers.back().b.setZero();
    }

    // Batched forward; rows are samples.
    Matrix forward(const Matrix& X) const {
        if (X.cols() != in_dim())
            throw ShapeMismatch("DenseNet input width " + std::to_string(X.cols()) +
                                " != expected " + std::to_string(in_dim()));
        Matrix h = X;
        for (size_t l = 0; l < layers.size(); ++l) {
            Matrix z = (h * layers[l].W.transpose()).rowwise() + layers[l].b.transpose();
            if (l + 1 < layers.size())
                h = z.cwiseMax(0.0);
            else
                h = apply_output(z);
        }
        return h;
    }

    Vector forward1(const Vector& x) const {
        Matrix row = x.transpose();
        return forward(row).row(0).transpose();
    }

    struct Cache {
        std::vector<Matrix> inputs;  // input to each layer
        Matrix preact;               // pre-activation of the output layer
        Matrix out;
    };

    Matrix forward_cached(const Matrix& X, Cache& cache) const {
        if (X.cols() != in_dim())
            throw ShapeMismatch("DenseNet input width " + std::to_string(X.cols()) +
                                " != expected " + std::to_string(in_dim()));
        cache.inputs.clear();
        Matrix h = X;
        for (size_t l = 0; l < layers.size(); ++l) {
            cache.inputs.push_back(h);
            Matrix z = (h * layers[l].W.transpose()).rowwise() + layers[l].b.transpose();
            if (l + 1 < layers.size()) {
                h = z.cwiseMax(0.0);
            } else {
                cache.preact = z;
                h = apply_output(z);
            }
        }
        cache.out = h;
        return h;
    }

    struct Grads {
        std::vector<Layer> layers;

        void zero_like(const DenseNet& net) {
            layers.resize(net.layers.size());
            for (size_t l = 0; l < net.layers.size(); ++l) {
                layers[l].W = Matrix::Zero(net.layers[l].W.rows(), net.layers[l].W.cols());
                layers[l].b = Vector::Zero(net.layers[l].b.size());
            }
        }
    };

    // Backprop: accumulates parameter grads into `g`, returns dL/dX.
    // The probability clamp is flat, so rows clamped at the sigmoid output
    // propagate zero gradient, matching the computed loss exactly.
    Matrix backward(const Cache& cache, const Matrix& dOut, Grads& g) const {
        Matrix delta;  // dL/dz for current layer
        switch (output_act) {
            case OutputAct::Identity:
                delta = dOut;
                break;
            case OutputAct::Sigmoid: {
                delta = dOut;
                for (Index i = 0; i < delta.rows(); ++i)
                    for (Index j = 0; j < delta.cols(); ++j) {
                        double p = sigmoid(cache.preact(i, j));
                        double dp = (p <= kProbClamp || p >= 1.0 - kProbClamp)
                                        ? 0.0
                                        : p * (1.0 - p);
                        delta(i, j) *= dp;
                    }
                break;
            }
            case OutputAct::Relu:
                delta = dOut.cwiseProduct(
                    (cache.preact.array() > 0.0).cast<double>().matrix());
                break;
        }
        for (size_t l = layers.size(); l-- > 0;) {
            g.layers[l].W.noalias() += delta.transpose() * cache.inputs[l];
            g.layers[l].b += delta.colwise().sum().transpose();
            Matrix dIn = delta * layers[l].W;
            if (l > 0) {
                // ReLU mask of the previous hidden layer
                const Matrix& prev_in = cache.inputs[l];
                delta = dIn.cwiseProduct((prev_in.array() > 0.0).cast<double>().matrix());
            } else {
                delta = dIn;
            }
        }
        return delta;
    }

    std::vector<TensorView> param_views() {
        std::vector<TensorView> v;
        for (auto& l : layers) {
            v.push_back({l.W.data(), l.W.size()});
            v.push_back({l.b.data(), l.b.size()});
        }
        return v;
    }

    std::vector<TensorView> grad_views(Grads& g) const {
        std::vector<TensorView> v;
        for (auto& l : g.layers) {
            v.push_back({l.W.data(), l.W.size()});
            v.push_back({l.b.data(), l.b.size()});
        }
        return v;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "orl-dense";
        j["version"] = 1;
        j["output_act"] = to_string(output_act);
        nlohmann::json ls = nlohmann::json::array();
        for (const auto& l : layers) {
            nlohmann::json lj;
            lj["shape"] = {l.W.rows(), l.W.cols()};
            std::vector<double> w;
            w.reserve(static_cast<size_t>(l.W.size()));
            for (Index i = 0; i < l.W.rows(); ++i)  // row-major export
                for (Index j2 = 0; j2 < l.W.cols(); ++j2) w.push_back(l.W(i, j2));
            lj["W"] = w;
            lj["b"] = std::vector<double>(l.b.data(), l.b.data() + l.b.size());
            ls.push_back(lj);
        }
        j["layers"] = ls;
        return j;
    }

    static DenseNet from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "orl-dense")
            throw ConfigError("not a dense-net parameter blob");
        DenseNet net;
        net.output_act = output_act_from_string(j.at("output_act").get<std::string>());
        for (const auto& lj : j.at("layers")) {
            Layer l;
            Index r = lj.at("shape")[0], c = lj.at("shape")[1];
            std::vector<double> w = lj.at("W").get<std::vector<double>>();
            if (static_cast<Index>(w.size()) != r * c)
                throw ConfigError("layer shape/data mismatch");
            l.W.resize(r, c);
            for (Index i = 0; i < r; ++i)
                for (Index j2 = 0; j2 < c; ++j2) l.W(i, j2) = w[static_cast<size_t>(i * c + j2)];
            std::vector<double> b = lj.at("b").get<std::vector<double>>();
            l.b = Eigen::Map<Vector>(b.data(), static_cast<Index>(b.size()));
            net.layers.push_back(std::move(l));
        }
        return net;
    }

private:
    Matrix apply_output(const Matrix& z) const {
        switch (output_act) {
            case OutputAct::Identity: return z;
            case OutputAct::Relu: return z.cwiseMax(0.0);
            case OutputAct::Sigmoid: {
                Matrix p = z;
                for (Index i = 0; i < p.rows(); ++i)
                    for (Index j = 0; j < p.cols(); ++j) p(i, j) = clamp_prob(sigmoid(z(i, j)));
                return p;
            }
        }
        return z;
    }
};

// AdamW with decoupled weight decay. Moment state mirrors parameter shapes.
struct AdamW {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<Eigen::ArrayXd> m, v;

    void step(const std::vector<TensorView>& params, const std::vector<TensorView>& grads) {
        if (params.size() != grads.size()) throw ShapeMismatch("optimizer param/grad mismatch");
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m[i] = Eigen::ArrayXd::Zero(params[i].size);
                v[i] = Eigen::ArrayXd::Zero(params[i].size);
            }
        }
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            if (params[i].size != grads[i].size || m[i].size() != params[i].size)
                throw ShapeMismatch("optimizer state shape mismatch");
            Eigen::Map<Eigen::ArrayXd> p(params[i].data, params[i].size);
            Eigen::Map<const Eigen::ArrayXd> g(grads[i].data, grads[i].size);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g.square();
            p -= lr * ((m[i] / bc1) / ((v[i] / bc2).sqrt() + eps)) + lr * weight_decay * p;
        }
    }
};

// Exponential moving average of parameters; predictions are served from the
// shadow copy. shadow <- lambda*shadow + (1-lambda)*current after each step.
struct EmaTracker {
    double lambda = 0.995;
    std::vector<Eigen::ArrayXd> shadow;

    void init(const std::vector<TensorView>& params) {
        shadow.clear();
        for (const auto& p : params)
            shadow.push_back(Eigen::Map<const Eigen::ArrayXd>(p.data, p.size));
    }

    void update(const std::vector<TensorView>& params) {
        if (shadow.empty()) {
            init(params);
            return;
        }
        for (size_t i = 0; i < params.size(); ++i) {
            Eigen::Map<const Eigen::ArrayXd> p(params[i].data, params[i].size);
            shadow[i] = lambda * shadow[i] + (1.0 - lambda) * p;
        }
    }

    void write_to(const std::vector<TensorView>& params) const {
        for (size_t i = 0; i < params.size(); ++i) {
            Eigen::Map<Eigen::ArrayXd> p(params[i].data, params[i].size);
            p = shadow[i];
        }
    }
};

// ---- flat parameter vector helpers (serialization, gradient checks) ------

inline Index total_size(const std::vector<TensorView>& vs) {
    Index s = 0;
    for (const auto& v : vs) s += v.size;
    return s;
}

inline Vector flatten(const std::vector<TensorView>& vs) {
    Vector out(total_size(vs));
    Index at = 0;
    for (const auto& v : vs) {
        out.segment(at, v.size) = Eigen::Map<const Vector>(v.data, v.size);
        at += v.size;
    }
    return out;
}

inline void unflatten(const Vector& flat, const std::vector<TensorView>& vs) {
    if (flat.size() != total_size(vs)) throw ShapeMismatch("flat parameter size mismatch");
    Index at = 0;
    for (const auto& v : vs) {
        Eigen::Map<Vector>(v.data, v.size) = flat.segment(at, v.size);
        at += v.size;
    }
}

// One optimizer step of `net` against an arbitrary batch loss.
// loss_fn(out, dOut) returns the loss value and fills dOut with dL/dout.
// Returns the pre-step loss; throws NonFiniteLoss on divergence.
template <typename LossFn>
double grad_step(DenseNet& net, const Matrix& X, LossFn&& loss_fn, AdamW& opt) {
    DenseNet::Cache cache;
    Matrix out = net.forward_cached(X, cache);
    Matrix dOut = Matrix::Zero(out.rows(), out.cols());
    double loss = loss_fn(out, dOut);
    if (!std::isfinite(loss)) throw NonFiniteLoss("loss diverged (non-finite value)");
    DenseNet::Grads g;
    g.zero_like(net);
    net.backward(cache, dOut, g);
    auto pv = net.param_views();
    opt.step(pv, net.grad_views(g));
    return loss;
}

// Mean squared error against targets t; fills dOut.
inline double mse_loss(const Matrix& out, const Vector& t, Matrix& dOut) {
    Index n = out.rows();
    Vector r = out.col(0) - t;
    dOut.col(0) = 2.0 * r / static_cast<double>(n);
    return r.squaredNorm() / static_cast<double>(n);
}

// Binary cross-entropy on clamped probabilities; fills dOut with dL/dp.
inline double bce_loss(const Matrix& out, const Vector& labels, Matrix& dOut) {
    Index n = out.rows();
    double loss = 0.0;
    for (Index i = 0; i < n; ++i) {
        double p = out(i, 0);
        double y = labels[i];
        loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        dOut(i, 0) = (p - y) / (p * (1.0 - p)) / static_cast<double>(n);
    }
    return loss / static_cast<double>(n);
}

}  // namespace orl
