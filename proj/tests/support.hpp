#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "handsoff/numeric_net.hpp"
#include "handsoff/scene.hpp"

namespace testing_support {

using handsoff::nn::BasicDenseNet;
using handsoff::nn::Matrix;

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Triple-loop forward pass written without the library helpers.
template <typename T>
Matrix<double> naive_forward(const BasicDenseNet<T>& net, const Matrix<T>& x, std::vector<Matrix<double>>* pre = nullptr) {
    Matrix<double> a(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) a(i, j) = x(i, j);
    }
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& layer = net.layers()[l];
        Matrix<double> z(a.rows(), layer.weight.cols());
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
                double s = layer.bias[j];
                for (std::size_t k = 0; k < layer.weight.rows(); ++k) s += a(i, k) * layer.weight(k, j);
                z(i, j) = s;
            }
        }
        if (pre) pre->push_back(z);
        if (l < 2) {
            for (auto& v : z.values()) v = std::max(v, 0.0);
        }
        a = z;
    }
    return a;
}

/// Reference loss computed from naive_forward.
inline double naive_loss(const BasicDenseNet<double>& net, const Matrix<double>& x, const std::vector<int>* classes,
                         const Matrix<double>* targets) {
    const auto out = naive_forward(net, x);
    double loss = 0.0;
    if (classes) {
        for (std::size_t i = 0; i < out.rows(); ++i) {
            double m = out(i, 0);
            for (std::size_t j = 1; j < out.cols(); ++j) m = std::max(m, out(i, j));
            double s = 0.0;
            for (std::size_t j = 0; j < out.cols(); ++j) s += std::exp(out(i, j) - m);
            loss += std::log(s) + m - out(i, static_cast<std::size_t>((*classes)[i]));
        }
        return loss / static_cast<double>(out.rows());
    }
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) loss += (out(i, j) - (*targets)(i, j)) * (out(i, j) - (*targets)(i, j));
    }
    return loss / static_cast<double>(out.size());
}

inline std::vector<bool> relu_pattern(const BasicDenseNet<double>& net, const Matrix<double>& x) {
    std::vector<Matrix<double>> pre;
    naive_forward(net, x, &pre);
    std::vector<bool> mask;
    for (std::size_t l = 0; l < 2; ++l) {
        for (double v : pre[l].values()) mask.push_back(v > 0.0);
    }
    return mask;
}

struct GradCheck {
    double worst = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation crossed a rectifier kink
};

/// Central differences (eps 1e-4) against backward() for every parameter of a
/// small seeded net; alternates cross-entropy and mse with the seed.
inline GradCheck numeric_net_gradient_check(std::uint64_t seed) {
    using namespace handsoff;
    const nn::LayerWidths widths{3, 6, 5, 3};
    nn::BasicDenseNet<double> net(widths, seed);
    Rng rng(seed * 7919 + 1);
    for (auto& layer : net.layers()) {
        for (auto& b : layer.bias) b = uniform(rng, -0.3, 0.3);
    }
    const std::size_t batch = 5;
    Matrix<double> x(batch, widths[0]), t(batch, widths[3]);
    for (auto& v : x.values()) v = uniform(rng, -1.0, 1.0);
    for (auto& v : t.values()) v = uniform(rng, -1.0, 1.0);
    std::vector<int> classes(batch);
    for (auto& c : classes) c = static_cast<int>(uniform_index(rng, widths[3]));
    const bool ce = seed % 2 == 0;
    const auto targets = ce ? nn::Targets<double>::of_classes(classes) : nn::Targets<double>::of_values(t);
    const auto analytic = nn::backward(net, x, targets);
    const auto base_mask = relu_pattern(net, x);

    GradCheck r;
    const double eps = 1e-4;
    auto probe = [&](double& p, double g) {
        const double keep = p;
        p = keep + eps;
        const double up = naive_loss(net, x, ce ? &classes : nullptr, &t);
        const bool kink_up = relu_pattern(net, x) != base_mask;
        p = keep - eps;
        const double down = naive_loss(net, x, ce ? &classes : nullptr, &t);
        const bool kink_down = relu_pattern(net, x) != base_mask;
        p = keep;
        if (kink_up || kink_down) {
            ++r.skipped;
            return;
        }
        r.worst = std::max(r.worst, rel_err(g, (up - down) / (2 * eps)));
        ++r.checked;
    };
    for (std::size_t l = 0; l < 3; ++l) {
        auto& layer = net.layers()[l];
        for (std::size_t i = 0; i < layer.weight.size(); ++i) probe(layer.weight.values()[i], analytic.gradients.weight[l].values()[i]);
        for (std::size_t i = 0; i < layer.bias.size(); ++i) probe(layer.bias[i], analytic.gradients.bias[l][i]);
    }
    return r;
}

/// Central differences (eps 1e-3) of <cotangent, render> against
/// render_gradient on every latent coordinate of a sampled scene.
inline double scene_gradient_check(std::uint64_t seed, const handsoff::scene::SceneConfig& config) {
    using namespace handsoff;
    Rng rng(seed);
    auto w = scene::sample_latent(rng, config);
    const auto base = scene::render_image_exact(w, config);
    std::vector<double> cot(base.size());
    for (auto& c : cot) c = uniform(rng, -1.0, 1.0);
    const auto g = scene::render_gradient(w, config, cot);
    double worst = 0.0;
    const double eps = 1e-3;
    for (std::size_t i = 0; i < w.values.size(); ++i) {
        const double keep = w.values[i];
        auto dot = [&](double v) {
            w.values[i] = v;
            const auto img = scene::render_image_exact(w, config);
            double s = 0.0;
            for (std::size_t j = 0; j < img.size(); ++j) s += cot[j] * img[j];
            return s;
        };
        const double fd = (dot(keep + eps) - dot(keep - eps)) / (2 * eps);
        w.values[i] = keep;
        worst = std::max(worst, rel_err(g[i], fd));
    }
    return worst;
}

}  // namespace testing_support
