#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "handsoff/numeric_net.hpp"
#include "support.hpp"

using namespace handsoff;
using namespace handsoff::nn;

namespace {

BasicDenseNet<double> unit_chain() {
    BasicDenseNet<double> net({1, 1, 1, 1}, 0);
    for (auto& layer : net.layers()) {
        layer.weight(0, 0) = 1.0;
        layer.bias[0] = 0.0;
    }
    return net;
}

Gradients single_weight_grad(const BasicDenseNet<double>& net, double g) {
    auto grads = ParamBuffers::zeros_like(net);
    grads.weight[0](0, 0) = g;
    return grads;
}

}  // namespace

TEST_CASE("zero weights give zero output") {
    DenseNet net({4, 8, 6, 3}, 11);
    for (auto& layer : net.layers()) {
        for (auto& w : layer.weight.values()) w = 0.0f;
    }
    Matrix<float> x(5, 4);
    Rng rng(3);
    for (auto& v : x.values()) v = static_cast<float>(uniform(rng, -5.0, 5.0));
    const auto y = forward(net, x);
    for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("unit chain is the identity on positive inputs") {
    auto net = unit_chain();
    Matrix<double> x(1, 1, 2.0);
    CHECK(forward(net, x)(0, 0) == 2.0);
}

TEST_CASE("forward matches a triple-loop oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        DenseNet net({7, 9, 5, 4}, seed);
        Rng rng(seed + 100);
        for (auto& layer : net.layers()) {
            for (auto& b : layer.bias) b = static_cast<float>(uniform(rng, -0.5, 0.5));
        }
        Matrix<float> x(6, 7);
        for (auto& v : x.values()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
        const auto got = forward(net, x);
        const auto want = testing_support::naive_forward(net, x);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got.values()[i] - want.values()[i]) <= 1e-6);
    }
}

TEST_CASE("input width mismatch is a shape error") {
    DenseNet net({3, 4, 4, 2}, 0);
    Matrix<float> x(2, 5);
    CHECK_THROWS_AS(forward(net, x), ShapeError);
}

TEST_CASE("mse at the target has zero loss and zero gradients") {
    DenseNet net({3, 5, 4, 2}, 5);
    Matrix<float> x(4, 3, 0.3f);
    const auto y = forward(net, x);
    const auto lg = backward(net, x, Targets<float>::of_values(y));
    CHECK(lg.loss == 0.0);
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        for (double g : lg.gradients.weight[l].values()) CHECK(g == 0.0);
        for (double g : lg.gradients.bias[l]) CHECK(g == 0.0);
    }
}

TEST_CASE("cross-entropy of equal logits is ln 2") {
    BasicDenseNet<double> net({1, 1, 1, 2}, 0);
    for (auto& layer : net.layers()) {
        for (auto& w : layer.weight.values()) w = 0.0;
    }
    Matrix<double> x(1, 1, 1.0);
    const std::vector<int> cls{0};
    CHECK(evaluate_loss(net, x, Targets<double>::of_classes(cls)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross-entropy decreases toward zero as the correct logit grows") {
    BasicDenseNet<double> net({1, 1, 1, 2}, 0);
    for (auto& layer : net.layers()) {
        for (auto& w : layer.weight.values()) w = 0.0;
    }
    Matrix<double> x(1, 1, 1.0);
    const std::vector<int> cls{1};
    double prev = evaluate_loss(net, x, Targets<double>::of_classes(cls));
    for (int k = 1; k <= 30; ++k) {
        net.layers()[2].bias[1] = k;
        const double loss = evaluate_loss(net, x, Targets<double>::of_classes(cls));
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-12);
}

TEST_CASE("out-of-range class index is an input error") {
    DenseNet net({2, 3, 3, 3}, 0);
    Matrix<float> x(2, 2);
    const std::vector<int> cls{0, 3};
    CHECK_THROWS_AS(backward(net, x, Targets<float>::of_classes(cls)), InputError);
}

TEST_CASE("backward agrees with central differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = testing_support::numeric_net_gradient_check(seed);
        CHECK(r.checked > 40);
        CHECK(r.worst <= 1e-3);
    }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
        DenseNet net({3, 4, 4, 2}, 8);
        const auto before = net;
        auto state = make_optim_state(net, {kind, 0.1});
        step(net, ParamBuffers::zeros_like(net), state);
        CHECK(net == before);
    }
}

TEST_CASE("sgd step on a single parameter") {
    auto net = unit_chain();
    auto state = make_optim_state(net, {OptimizerKind::sgd, 0.1});
    step(net, single_weight_grad(net, 0.5), state);
    CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("sgd minimises a quadratic") {
    auto net = unit_chain();
    net.layers()[0].weight(0, 0) = 0.0;
    auto state = make_optim_state(net, {OptimizerKind::sgd, 0.1});
    for (int i = 0; i < 200; ++i) {
        const double p = net.layers()[0].weight(0, 0);
        step(net, single_weight_grad(net, 2.0 * (p - 3.0)), state);
    }
    CHECK(std::abs(net.layers()[0].weight(0, 0) - 3.0) <= 1e-3);
}

TEST_CASE("non-finite gradient names the layer") {
    DenseNet net({2, 3, 3, 1}, 0);
    auto grads = ParamBuffers::zeros_like(net);
    grads.bias[1][2] = std::nan("");
    auto state = make_optim_state(net, {OptimizerKind::sgd, 0.1});
    try {
        step(net, grads, state);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("non-positive learning rate is a config error") {
    DenseNet net({2, 3, 3, 1}, 0);
    CHECK_THROWS_AS(make_optim_state(net, {OptimizerKind::adam, 0.0}), ConfigError);
}

TEST_CASE("training is bit-identical for identical seeds") {
    auto train = [] {
        DenseNet net({4, 8, 8, 3}, 21);
        Rng data(4);
        Matrix<float> x(50, 4);
        std::vector<int> cls(50);
        for (std::size_t i = 0; i < 50; ++i) {
            for (std::size_t j = 0; j < 4; ++j) x(i, j) = static_cast<float>(uniform(data, -1.0, 1.0));
            cls[i] = x(i, 0) > 0 ? (x(i, 1) > 0 ? 2 : 1) : 0;
        }
        Rng rng(9);
        const auto hist = fit(net, x, Targets<float>::of_classes(cls), {20, 8, {OptimizerKind::adam, 0.01}}, rng);
        return std::make_pair(net, hist);
    };
    const auto a = train();
    const auto b = train();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.second.back() < a.second.front());
}

TEST_CASE("save and load round-trip") {
    DenseNet net({5, 7, 3, 2}, 77);
    const auto dir = std::filesystem::temp_directory_path() / "handsoff_test_net";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    save_net(dir, net, "m0_");
    CHECK(load_net(dir, "m0_") == net);
    std::filesystem::remove_all(dir);
}
