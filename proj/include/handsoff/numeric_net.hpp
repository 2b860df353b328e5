#pragma once

// Small dense-network machinery: row-major matrices, fixed 2-hidden-layer MLPs
// with hand-written backpropagation, softmax cross-entropy / (weighted) MSE
// losses, and SGD / Adam updates.
//
// Parameters are stored in the net's scalar type (float in production, double
// for gradient checking). Loss values and gradient accumulators are always
// double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "handsoff/errors.hpp"
#include "handsoff/rng.hpp"

namespace handsoff::nn {

template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    T* row(std::size_t r) { return data_.data() + r * cols_; }
    const T* row(std::size_t r) const { return data_.data() + r * cols_; }

    void resize(std::size_t rows, std::size_t cols) {
        rows_ = rows;
        cols_ = cols;
        data_.assign(rows * cols, T{});
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

enum class LossKind { cross_entropy, mse };
enum class OptimizerKind { sgd, adam };

/// (input, hidden1, hidden2, output)
using LayerWidths = std::array<std::size_t, 4>;

inline constexpr std::size_t kLayerCount = 3;

template <typename T>
struct Layer {
    Matrix<T> weight;  // fan_in x fan_out
    std::vector<T> bias;

    bool operator==(const Layer&) const = default;
};

template <typename T>
class BasicDenseNet {
public:
    BasicDenseNet() = default;

    /// Glorot-uniform weights drawn from `seed`, zero biases.
    BasicDenseNet(const LayerWidths& widths, std::uint64_t seed) : widths_(widths) {
        for (std::size_t w : widths) {
            if (w == 0) throw ShapeError("layer widths must be positive");
        }
        Rng rng(seed);
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            const std::size_t fan_in = widths[l];
            const std::size_t fan_out = widths[l + 1];
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            layers_[l].weight = Matrix<T>(fan_in, fan_out);
            for (T& v : layers_[l].weight.values()) v = static_cast<T>(uniform(rng, -limit, limit));
            layers_[l].bias.assign(fan_out, T{});
        }
    }

    const LayerWidths& widths() const { return widths_; }
    std::size_t input_width() const { return widths_[0]; }
    std::size_t output_width() const { return widths_[3]; }

    std::array<Layer<T>, kLayerCount>& layers() { return layers_; }
    const std::array<Layer<T>, kLayerCount>& layers() const { return layers_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& layer : layers_) {
            for (T v : layer.weight.values()) {
                if (!std::isfinite(v)) return false;
            }
            for (T v : layer.bias) {
                if (!std::isfinite(v)) return false;
            }
        }
        return true;
    }

    bool operator==(const BasicDenseNet&) const = default;

private:
    LayerWidths widths_{};
    std::array<Layer<T>, kLayerCount> layers_;
};

using DenseNet = BasicDenseNet<float>;

/// Parameter-shaped double buffers (gradients, optimizer moments).
struct ParamBuffers {
    std::array<Matrix<double>, kLayerCount> weight;
    std::array<std::vector<double>, kLayerCount> bias;

    template <typename T>
    static ParamBuffers zeros_like(const BasicDenseNet<T>& net) {
        ParamBuffers b;
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            const auto& layer = net.layers()[l];
            b.weight[l] = Matrix<double>(layer.weight.rows(), layer.weight.cols());
            b.bias[l].assign(layer.bias.size(), 0.0);
        }
        return b;
    }

    template <typename T>
    bool matches(const BasicDenseNet<T>& net) const {
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            const auto& layer = net.layers()[l];
            if (weight[l].rows() != layer.weight.rows() || weight[l].cols() != layer.weight.cols() ||
                bias[l].size() != layer.bias.size()) {
                return false;
            }
        }
        return true;
    }
};

using Gradients = ParamBuffers;

/// Training targets. Cross-entropy uses `classes` (one per row); MSE uses
/// `values` (rows x outputs) and optional non-negative `weights` of the same
/// shape. Weighted MSE normalises by the weight sum.
template <typename T>
struct Targets {
    LossKind kind = LossKind::mse;
    std::span<const int> classes;
    const Matrix<T>* values = nullptr;
    const Matrix<T>* weights = nullptr;

    static Targets of_classes(std::span<const int> c) {
        Targets t;
        t.kind = LossKind::cross_entropy;
        t.classes = c;
        return t;
    }
    static Targets of_values(const Matrix<T>& v, const Matrix<T>* w = nullptr) {
        Targets t;
        t.kind = LossKind::mse;
        t.values = &v;
        t.weights = w;
        return t;
    }
};

struct LossAndGradients {
    double loss = 0.0;
    Gradients gradients;
};

namespace detail {

inline std::string width_message(const char* what, std::size_t expected, std::size_t actual) {
    return std::string(what) + ": expected width " + std::to_string(expected) + ", got " +
           std::to_string(actual);
}

/// out = x * W + b, optionally rectified.
template <typename T>
void affine(const Matrix<T>& x, const Layer<T>& layer, Matrix<T>& out, bool relu) {
    const std::size_t batch = x.rows();
    const std::size_t fan_in = layer.weight.rows();
    const std::size_t fan_out = layer.weight.cols();
    out.resize(batch, fan_out);
    for (std::size_t i = 0; i < batch; ++i) {
        T* y = out.row(i);
        const T* xr = x.row(i);
        std::copy(layer.bias.begin(), layer.bias.end(), y);
        for (std::size_t k = 0; k < fan_in; ++k) {
            const T v = xr[k];
            if (v == T{}) continue;
            const T* w = layer.weight.row(k);
            for (std::size_t j = 0; j < fan_out; ++j) y[j] += v * w[j];
        }
        if (relu) {
            for (std::size_t j = 0; j < fan_out; ++j) y[j] = std::max(y[j], T{});
        }
    }
}

/// grad_w += x^T * delta, grad_b += column sums of delta.
template <typename T>
void accumulate_layer_gradient(const Matrix<T>& x, const Matrix<double>& delta, Matrix<double>& grad_w,
                               std::vector<double>& grad_b) {
    const std::size_t fan_in = x.cols();
    const std::size_t fan_out = delta.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const T* xr = x.row(i);
        const double* d = delta.row(i);
        for (std::size_t j = 0; j < fan_out; ++j) grad_b[j] += d[j];
        for (std::size_t k = 0; k < fan_in; ++k) {
            const double v = static_cast<double>(xr[k]);
            if (v == 0.0) continue;
            double* g = grad_w.row(k);
            for (std::size_t j = 0; j < fan_out; ++j) g[j] += v * d[j];
        }
    }
}

/// delta_prev = (delta * W^T) masked by the rectifier of `activation`.
template <typename T>
void propagate_delta(const Matrix<double>& delta, const Layer<T>& layer, const Matrix<T>& activation,
                     Matrix<double>& delta_prev) {
    const std::size_t fan_in = layer.weight.rows();
    const std::size_t fan_out = layer.weight.cols();
    delta_prev.resize(delta.rows(), fan_in);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
        const double* d = delta.row(i);
        const T* a = activation.row(i);
        double* out = delta_prev.row(i);
        for (std::size_t k = 0; k < fan_in; ++k) {
            if (a[k] <= T{}) continue;
            const T* w = layer.weight.row(k);
            double s = 0.0;
            for (std::size_t j = 0; j < fan_out; ++j) s += d[j] * static_cast<double>(w[j]);
            out[k] = s;
        }
    }
}

/// Output-layer loss and its gradient with respect to the logits/outputs.
template <typename T>
double output_delta(const Matrix<T>& outputs, const Targets<T>& targets, Matrix<double>* delta) {
    const std::size_t batch = outputs.rows();
    const std::size_t width = outputs.cols();
    if (delta) delta->resize(batch, width);
    double loss = 0.0;
    if (targets.kind == LossKind::cross_entropy) {
        if (targets.classes.size() != batch) {
            throw ShapeError(width_message("cross-entropy targets", batch, targets.classes.size()));
        }
        for (std::size_t i = 0; i < batch; ++i) {
            const int c = targets.classes[i];
            if (c < 0 || static_cast<std::size_t>(c) >= width) {
                throw InputError("class index " + std::to_string(c) + " at row " + std::to_string(i) +
                                 " is outside [0, " + std::to_string(width) + ")");
            }
        }
        const double inv_batch = batch ? 1.0 / static_cast<double>(batch) : 0.0;
        std::vector<double> p(width);
        for (std::size_t i = 0; i < batch; ++i) {
            const T* z = outputs.row(i);
            double zmax = static_cast<double>(z[0]);
            for (std::size_t j = 1; j < width; ++j) zmax = std::max(zmax, static_cast<double>(z[j]));
            double sum = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
                p[j] = std::exp(static_cast<double>(z[j]) - zmax);
                sum += p[j];
            }
            const auto c = static_cast<std::size_t>(targets.classes[i]);
            loss += std::log(sum) + zmax - static_cast<double>(z[c]);
            if (delta) {
                double* d = delta->row(i);
                for (std::size_t j = 0; j < width; ++j) d[j] = (p[j] / sum - (j == c ? 1.0 : 0.0)) * inv_batch;
            }
        }
        return loss * inv_batch;
    }

    const Matrix<T>* values = targets.values;
    if (!values || values->rows() != batch || values->cols() != width) {
        throw ShapeError(width_message("mse targets", width, values ? values->cols() : 0));
    }
    const Matrix<T>* weights = targets.weights;
    if (weights && (weights->rows() != batch || weights->cols() != width)) {
        throw ShapeError(width_message("mse weights", width, weights->cols()));
    }
    double norm = static_cast<double>(batch * width);
    if (weights) {
        norm = 0.0;
        for (T w : weights->values()) norm += static_cast<double>(w);
    }
    if (norm <= 0.0) return 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const T* y = outputs.row(i);
        const T* t = values->row(i);
        const T* w = weights ? weights->row(i) : nullptr;
        for (std::size_t j = 0; j < width; ++j) {
            const double wj = w ? static_cast<double>(w[j]) : 1.0;
            const double diff = static_cast<double>(y[j]) - static_cast<double>(t[j]);
            loss += wj * diff * diff;
            if (delta) (*delta)(i, j) = 2.0 * wj * diff / norm;
        }
    }
    return loss / norm;
}

template <typename T>
void check_input(const BasicDenseNet<T>& net, const Matrix<T>& inputs) {
    if (inputs.cols() != net.input_width()) {
        throw ShapeError(width_message("dense net input", net.input_width(), inputs.cols()));
    }
}

}  // namespace detail

template <typename T>
Matrix<T> forward(const BasicDenseNet<T>& net, const Matrix<T>& inputs) {
    detail::check_input(net, inputs);
    Matrix<T> h1, h2, out;
    detail::affine(inputs, net.layers()[0], h1, true);
    detail::affine(h1, net.layers()[1], h2, true);
    detail::affine(h2, net.layers()[2], out, false);
    return out;
}

template <typename T>
double evaluate_loss(const BasicDenseNet<T>& net, const Matrix<T>& inputs, const Targets<T>& targets) {
    return detail::output_delta(forward(net, inputs), targets, nullptr);
}

template <typename T>
LossAndGradients backward(const BasicDenseNet<T>& net, const Matrix<T>& inputs, const Targets<T>& targets) {
    detail::check_input(net, inputs);
    const auto& layers = net.layers();
    Matrix<T> h1, h2, out;
    detail::affine(inputs, layers[0], h1, true);
    detail::affine(h1, layers[1], h2, true);
    detail::affine(h2, layers[2], out, false);

    LossAndGradients result;
    result.gradients = Gradients::zeros_like(net);
    auto& g = result.gradients;

    Matrix<double> d3, d2, d1;
    result.loss = detail::output_delta(out, targets, &d3);
    detail::accumulate_layer_gradient(h2, d3, g.weight[2], g.bias[2]);
    detail::propagate_delta(d3, layers[2], h2, d2);
    detail::accumulate_layer_gradient(h1, d2, g.weight[1], g.bias[1]);
    detail::propagate_delta(d2, layers[1], h1, d1);
    detail::accumulate_layer_gradient(inputs, d1, g.weight[0], g.bias[0]);
    return result;
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimState {
    OptimizerConfig config;
    std::uint64_t steps = 0;
    ParamBuffers first_moment;   // empty for plain SGD
    ParamBuffers second_moment;  // empty for plain SGD
};

template <typename T>
OptimState make_optim_state(const BasicDenseNet<T>& net, const OptimizerConfig& config) {
    if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    OptimState state;
    state.config = config;
    if (config.kind == OptimizerKind::adam) {
        state.first_moment = ParamBuffers::zeros_like(net);
        state.second_moment = ParamBuffers::zeros_like(net);
    }
    return state;
}

template <typename T>
void step(BasicDenseNet<T>& net, const Gradients& grads, OptimState& state) {
    if (!grads.matches(net)) throw ShapeError("gradient buffers do not match the network's parameter shapes");
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        for (double v : grads.weight[l].values()) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient in layer " + std::to_string(l) + " weights");
        }
        for (double v : grads.bias[l]) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient in layer " + std::to_string(l) + " bias");
        }
    }
    ++state.steps;
    const auto& cfg = state.config;
    auto update = [&](T* params, const double* g, double* m, double* v, std::size_t n) {
        if (cfg.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < n; ++i) {
                params[i] = static_cast<T>(static_cast<double>(params[i]) - cfg.learning_rate * g[i]);
            }
            return;
        }
        const double t = static_cast<double>(state.steps);
        const double c1 = 1.0 - std::pow(cfg.beta1, t);
        const double c2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            params[i] = static_cast<T>(static_cast<double>(params[i]) -
                                       cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
        }
    };
    const bool adam = cfg.kind == OptimizerKind::adam;
    if (adam && !state.first_moment.matches(net)) throw ShapeError("optimizer state does not match the network");
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        auto& layer = net.layers()[l];
        update(layer.weight.data(), grads.weight[l].data(), adam ? state.first_moment.weight[l].data() : nullptr,
               adam ? state.second_moment.weight[l].data() : nullptr, layer.weight.size());
        update(layer.bias.data(), grads.bias[l].data(), adam ? state.first_moment.bias[l].data() : nullptr,
               adam ? state.second_moment.bias[l].data() : nullptr, layer.bias.size());
    }
    if (!net.all_finite()) throw NumericError("optimizer step produced non-finite parameters");
}

struct FitParams {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    OptimizerConfig optimizer;
};

/// Minibatch training over all rows of `inputs`, reshuffled every epoch from
/// `rng`. Returns the mean minibatch loss of each epoch.
template <typename T>
std::vector<double> fit(BasicDenseNet<T>& net, const Matrix<T>& inputs, const Targets<T>& targets,
                        const FitParams& params, Rng& rng, OptimState* resume = nullptr) {
    detail::check_input(net, inputs);
    const std::size_t n = inputs.rows();
    if (params.batch_size == 0) throw ConfigError("batch size must be positive");
    OptimState local;
    OptimState& state = resume ? *resume : local;
    if (!resume) state = make_optim_state(net, params.optimizer);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t in_w = inputs.cols();
    const std::size_t out_w = net.output_width();

    Matrix<T> xb, vb, wb;
    std::vector<int> cb;
    std::vector<double> history;
    history.reserve(params.epochs);
    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += params.batch_size) {
            const std::size_t b = std::min(params.batch_size, n - start);
            xb.resize(b, in_w);
            for (std::size_t r = 0; r < b; ++r) std::copy_n(inputs.row(order[start + r]), in_w, xb.row(r));
            Targets<T> tb;
            tb.kind = targets.kind;
            if (targets.kind == LossKind::cross_entropy) {
                cb.resize(b);
                for (std::size_t r = 0; r < b; ++r) cb[r] = targets.classes[order[start + r]];
                tb.classes = cb;
            } else {
                vb.resize(b, out_w);
                for (std::size_t r = 0; r < b; ++r) std::copy_n(targets.values->row(order[start + r]), out_w, vb.row(r));
                tb.values = &vb;
                if (targets.weights) {
                    wb.resize(b, out_w);
                    for (std::size_t r = 0; r < b; ++r) {
                        std::copy_n(targets.weights->row(order[start + r]), out_w, wb.row(r));
                    }
                    tb.weights = &wb;
                }
            }
            auto lg = backward(net, xb, tb);
            step(net, lg.gradients, state);
            total += lg.loss;
            ++batches;
        }
        history.push_back(batches ? total / static_cast<double>(batches) : 0.0);
    }
    return history;
}

/// Writes `<prefix>layer{i}.w.hoff` / `<prefix>layer{i}.b.hoff` into `dir`.
void save_net(const std::filesystem::path& dir, const DenseNet& net, const std::string& prefix = "");
DenseNet load_net(const std::filesystem::path& dir, const std::string& prefix = "");

}  // namespace handsoff::nn
