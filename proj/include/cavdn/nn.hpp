#pragma once

// Dense ReLU network with hand-written backpropagation and Adam.
//
// Batches are column-major: every column of an input matrix is one sample.
// Hidden layers use ReLU, the output layer is linear.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cavdn/errors.hpp"

namespace cavdn::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DenseLayer {
    Matrix weights; // out x in
    Vector bias;    // out

    bool operator==(const DenseLayer &o) const {
        return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
               bias.size() == o.bias.size() && weights == o.weights && bias == o.bias;
    }
};

class Mlp {
public:
    Mlp() = default;

    // Zero-initialized network. layer_dims = {input, hidden..., output}.
    explicit Mlp(std::vector<int> layer_dims) : dims_(std::move(layer_dims)) {
        if (dims_.size() < 2)
            throw ShapeError("Mlp needs at least an input and an output dimension");
        for (int d : dims_)
            if (d <= 0) throw ShapeError("Mlp layer dimensions must be positive");
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
            layers_.push_back({Matrix::Zero(dims_[l + 1], dims_[l]), Vector::Zero(dims_[l + 1])});
    }

    // Uniform initialization in +-1/sqrt(fan_in) for weights and biases.
    template <class Rng>
    static Mlp uniform_fan_in(std::vector<int> layer_dims, Rng &rng) {
        Mlp net(std::move(layer_dims));
        for (auto &layer : net.layers_) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weights.cols()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
                for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
                    layer.weights(r, c) = dist(rng);
            for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
                layer.bias(r) = dist(rng);
        }
        return net;
    }

    const std::vector<int> &layer_dims() const { return dims_; }
    int input_dim() const { return dims_.front(); }
    int output_dim() const { return dims_.back(); }

    std::vector<DenseLayer> &layers() { return layers_; }
    const std::vector<DenseLayer> &layers() const { return layers_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto &l : layers_)
            n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
        return n;
    }

    bool same_architecture(const Mlp &o) const { return dims_ == o.dims_; }

    bool operator==(const Mlp &o) const { return dims_ == o.dims_ && layers_ == o.layers_; }

private:
    std::vector<int> dims_;
    std::vector<DenseLayer> layers_;
};

// Post-activation values of every layer; activations[0] is the input batch.
struct ForwardCache {
    std::vector<Matrix> activations;

    const Matrix &output() const { return activations.back(); }
};

using Gradients = std::vector<DenseLayer>;

inline void check_input(const Mlp &net, Eigen::Index rows) {
    if (rows != net.input_dim())
        throw ShapeError("input has " + std::to_string(rows) + " rows, network expects " +
                         std::to_string(net.input_dim()));
}

inline ForwardCache forward_cached(const Mlp &net, const Matrix &inputs) {
    check_input(net, inputs.rows());
    ForwardCache cache;
    cache.activations.reserve(net.layers().size() + 1);
    cache.activations.push_back(inputs);
    const auto &layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].weights * cache.activations.back();
        z.colwise() += layers[l].bias;
        if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
        cache.activations.push_back(std::move(z));
    }
    return cache;
}

inline Matrix forward_batch(const Mlp &net, const Matrix &inputs) {
    check_input(net, inputs.rows());
    const auto &layers = net.layers();
    Matrix a = inputs;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].weights * a;
        z.colwise() += layers[l].bias;
        if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a;
}

inline Vector forward(const Mlp &net, const Vector &input) {
    return forward_batch(net, input);
}

// Gradient of a scalar loss w.r.t. every parameter, given dLoss/dOutput for every
// sample column. Contributions are summed over the batch.
inline Gradients backward(const Mlp &net, const ForwardCache &cache, const Matrix &output_grad) {
    const auto &layers = net.layers();
    if (cache.activations.size() != layers.size() + 1)
        throw ShapeError("forward cache does not belong to this network");
    if (output_grad.rows() != net.output_dim() || output_grad.cols() != cache.output().cols())
        throw ShapeError("output gradient shape does not match network output");

    Gradients grads(layers.size());
    Matrix delta = output_grad;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const Matrix &a_prev = cache.activations[l];
        grads[l].weights.noalias() = delta * a_prev.transpose();
        grads[l].bias = delta.rowwise().sum();
        if (l == 0) break;
        Matrix upstream = layers[l].weights.transpose() * delta;
        // ReLU derivative, read off the post-activation.
        delta = upstream.cwiseProduct((a_prev.array() > 0.0).cast<double>().matrix());
    }
    return grads;
}

inline Gradients backward(const Mlp &net, const Matrix &inputs, const Matrix &output_grad) {
    return backward(net, forward_cached(net, inputs), output_grad);
}

struct AdamState {
    std::vector<DenseLayer> first_moment;
    std::vector<DenseLayer> second_moment;
    std::int64_t step = 0;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;

    explicit AdamState(const Mlp &net, double lr = 0.001) : learning_rate(lr) {
        for (const auto &l : net.layers()) {
            first_moment.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()),
                                    Vector::Zero(l.bias.size())});
        }
        second_moment = first_moment;
    }
};

inline void check_same_shape(const std::vector<DenseLayer> &a, const std::vector<DenseLayer> &b,
                             const char *what) {
    bool ok = a.size() == b.size();
    for (std::size_t l = 0; ok && l < a.size(); ++l) {
        ok = a[l].weights.rows() == b[l].weights.rows() &&
             a[l].weights.cols() == b[l].weights.cols() && a[l].bias.size() == b[l].bias.size();
    }
    if (!ok) throw ShapeError(std::string(what) + " shapes do not match network parameters");
}

// One bias-corrected Adam update. Rejects non-finite gradients before touching anything.
inline void adam_step(Mlp &net, const Gradients &grads, AdamState &opt) {
    check_same_shape(net.layers(), grads, "gradient");
    check_same_shape(net.layers(), opt.first_moment, "Adam moment");
    for (std::size_t l = 0; l < grads.size(); ++l) {
        if (!grads[l].weights.allFinite() || !grads[l].bias.allFinite())
            throw NumericError("non-finite gradient in layer " + std::to_string(l));
    }

    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);

    auto update = [&](auto &param, auto &m, auto &v, const auto &g) {
        m = opt.beta1 * m + (1.0 - opt.beta1) * g;
        v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
        param.array() -= opt.learning_rate * (m.array() / c1) /
                         ((v.array() / c2).sqrt() + opt.epsilon);
    };

    auto &layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        update(layers[l].weights, opt.first_moment[l].weights, opt.second_moment[l].weights,
               grads[l].weights);
        update(layers[l].bias, opt.first_moment[l].bias, opt.second_moment[l].bias,
               grads[l].bias);
    }
}

inline void copy_parameters(const Mlp &src, Mlp &dst) {
    if (!src.same_architecture(dst))
        throw ShapeError("copy_parameters: source and destination architectures differ");
    dst.layers() = src.layers();
}

// ---------------------------------------------------------------------------
// Snapshot format (little-endian):
//   "CAVDNMLP" | u32 version | u32 dim_count | u32 dims[dim_count] | f64 params...
// Parameters are written layer by layer, weights column-major then bias.

inline constexpr char kSnapshotMagic[8] = {'C', 'A', 'V', 'D', 'N', 'M', 'L', 'P'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream &os, const T &v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream &is) {
    T v{};
    if (!is.read(reinterpret_cast<char *>(&v), sizeof(T)))
        throw ConfigError("truncated network snapshot");
    return v;
}

} // namespace detail

inline void save(std::ostream &os, const Mlp &net) {
    os.write(kSnapshotMagic, sizeof(kSnapshotMagic));
    detail::write_pod(os, kSnapshotVersion);
    detail::write_pod(os, static_cast<std::uint32_t>(net.layer_dims().size()));
    for (int d : net.layer_dims())
        detail::write_pod(os, static_cast<std::uint32_t>(d));
    for (const auto &l : net.layers()) {
        os.write(reinterpret_cast<const char *>(l.weights.data()),
                 static_cast<std::streamsize>(l.weights.size() * sizeof(double)));
        os.write(reinterpret_cast<const char *>(l.bias.data()),
                 static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
    }
}

inline Mlp load(std::istream &is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kSnapshotMagic))
        throw ConfigError("not a network snapshot (bad magic)");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kSnapshotVersion)
        throw ConfigError("unsupported snapshot version " + std::to_string(version));
    const auto count = detail::read_pod<std::uint32_t>(is);
    if (count < 2 || count > 64) throw ConfigError("corrupt snapshot layer count");
    std::vector<int> dims;
    for (std::uint32_t i = 0; i < count; ++i)
        dims.push_back(static_cast<int>(detail::read_pod<std::uint32_t>(is)));
    Mlp net(dims);
    for (auto &l : net.layers()) {
        if (!is.read(reinterpret_cast<char *>(l.weights.data()),
                     static_cast<std::streamsize>(l.weights.size() * sizeof(double))) ||
            !is.read(reinterpret_cast<char *>(l.bias.data()),
                     static_cast<std::streamsize>(l.bias.size() * sizeof(double))))
            throw ConfigError("truncated network snapshot");
    }
    return net;
}

} // namespace cavdn::nn
