#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "handsoff/errors.hpp"
#include "handsoff/label_generator.hpp"
#include "oracles.hpp"

using namespace handsoff;
using namespace handsoff::labelgen;

namespace {

/// Member whose output ignores its input.
nn::DenseNet constant_member(std::size_t width, std::vector<float> out) {
    nn::DenseNet net({width, 4, 4, out.size()}, 1);
    for (auto& layer : net.layers()) std::fill(layer.weight.values().begin(), layer.weight.values().end(), 0.0f);
    net.layers()[2].bias = std::move(out);
    return net;
}

hypercolumn::HypercolumnField random_field(int res, std::size_t channels, Rng& rng) {
    hypercolumn::HypercolumnField f;
    f.resolution = res;
    f.values = nn::Matrix<float>(static_cast<std::size_t>(res) * res, channels);
    for (auto& v : f.values.values()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
    return f;
}

EnsembleModel random_ensemble(std::size_t M, std::size_t width, int outputs, TaskKind task, Rng& rng) {
    EnsembleModel model;
    model.spec = {task, outputs, 1.0f};
    for (std::size_t m = 0; m < M; ++m) {
        nn::DenseNet net({width, 8, 8, static_cast<std::size_t>(outputs)}, rng());
        for (auto& layer : net.layers()) {
            for (auto& b : layer.bias) b = static_cast<float>(uniform(rng, -0.5, 0.5));
        }
        model.members.push_back(net);
        model.member_seeds.push_back(m);
        model.final_losses.push_back(0.0);
    }
    return model;
}

}  // namespace

TEST_CASE("js divergence stays in [0, ln M] and matches the entropy oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t M = 1 + uniform_index(rng, 10);
        const std::size_t P = 2 + uniform_index(rng, 6);
        std::vector<double> d(M * P);
        for (std::size_t m = 0; m < M; ++m) {
            double s = 0.0;
            for (std::size_t c = 0; c < P; ++c) s += d[m * P + c] = std::pow(uniform01(rng), 3.0);
            for (std::size_t c = 0; c < P; ++c) d[m * P + c] /= s;
        }
        const double js = js_divergence(d, M, P);
        CHECK(js >= 0.0);
        CHECK(js <= std::log(static_cast<double>(M)));
        CHECK(std::abs(js - testing_support::js_oracle(d, M, P)) <= 1e-9);
    }
}

TEST_CASE("js divergence of identical and orthogonal members") {
    const std::vector<double> same{0.2, 0.5, 0.3, 0.2, 0.5, 0.3, 0.2, 0.5, 0.3};
    CHECK(js_divergence(same, 3, 3) <= 1e-9);
    const std::vector<double> ortho{1.0, 0.0, 0.0, 1.0};
    CHECK(std::abs(js_divergence(ortho, 2, 2) - std::log(2.0)) <= 1e-9);
    const std::vector<double> close{0.5, 0.5, 0.5 + 1e-3, 0.5 - 1e-3};
    CHECK(js_divergence(close, 2, 2) > 0.0);
    CHECK_THROWS_AS(js_divergence(ortho, 3, 2), ShapeError);
}

TEST_CASE("identical members give zero uncertainty") {
    Rng rng(1);
    const auto field = random_field(6, 5, rng);
    auto model = random_ensemble(1, 5, 3, TaskKind::segmentation, rng);
    model.members.assign(4, model.members[0]);
    const auto pred = predict(model, field);
    for (double u : pred.uncertainty.values) CHECK(u <= 1e-9);
}

TEST_CASE("two confident opposite members give ln 2") {
    Rng rng(2);
    const auto field = random_field(3, 4, rng);
    EnsembleModel model;
    model.spec = {TaskKind::segmentation, 2, 1.0f};
    model.members = {constant_member(4, {60.0f, -60.0f}), constant_member(4, {-60.0f, 60.0f})};
    const auto pred = predict(model, field);
    CHECK(pred.uncertainty.kind == UncertaintyKind::js_divergence);
    for (double u : pred.uncertainty.values) CHECK(std::abs(u - std::log(2.0)) <= 1e-9);
    // A 1-1 vote goes to the lower class.
    for (auto c : pred.label.classes) CHECK(c == 0);
}

TEST_CASE("strict majority decides the vote") {
    Rng rng(3);
    const auto field = random_field(3, 4, rng);
    EnsembleModel model;
    model.spec = {TaskKind::segmentation, 3, 1.0f};
    model.members = {constant_member(4, {0.0f, 0.0f, 1.0f}), constant_member(4, {3.0f, 0.0f, 0.0f}),
                     constant_member(4, {0.0f, 0.0f, 0.2f})};
    for (auto c : predict(model, field).label.classes) CHECK(c == 2);
}

TEST_CASE("continuous members average with population variance") {
    Rng rng(4);
    const auto field = random_field(2, 3, rng);
    EnsembleModel model;
    model.spec = {TaskKind::depth, 1, 1.0f};
    model.members = {constant_member(3, {1.0f}), constant_member(3, {3.0f})};
    const auto pred = predict(model, field);
    CHECK(pred.uncertainty.kind == UncertaintyKind::variance);
    for (float v : pred.label.values) CHECK(v == 2.0f);
    for (double u : pred.uncertainty.values) CHECK(u == 1.0);
}

TEST_CASE("continuous mean matches a loop oracle") {
    Rng rng(5);
    const auto field = random_field(5, 6, rng);
    auto model = random_ensemble(7, 6, 3, TaskKind::keypoints, rng);
    const auto pred = predict(model, field);
    std::vector<nn::Matrix<float>> outs;
    for (const auto& m : model.members) outs.push_back(nn::forward(m, field.values));
    const std::size_t pixels = 25;
    for (std::size_t p = 0; p < pixels; ++p) {
        double var = 0.0;
        for (std::size_t d = 0; d < 3; ++d) {
            double mean = 0.0;
            for (const auto& o : outs) mean += o(p, d);
            mean /= 7.0;
            double v = 0.0;
            for (const auto& o : outs) v += (o(p, d) - mean) * (o(p, d) - mean);
            var += v / 7.0;
            CHECK(std::abs(pred.label.values[d * pixels + p] - mean) <= 1e-6);
        }
        CHECK(std::abs(pred.uncertainty.values[p] - var / 3.0) <= 1e-9);
    }
}

TEST_CASE("member order does not change aggregation") {
    Rng rng(6);
    const auto field = random_field(8, 5, rng);
    for (auto task : {TaskKind::segmentation, TaskKind::depth}) {
        const int outputs = task == TaskKind::segmentation ? 4 : 1;
        auto model = random_ensemble(6, 5, outputs, task, rng);
        const auto a = predict(model, field);
        std::reverse(model.members.begin(), model.members.end());
        std::swap(model.members[1], model.members[4]);
        const auto b = predict(model, field);
        CHECK(a.label == b.label);
        CHECK(a.uncertainty.values == b.uncertainty.values);
    }
}

TEST_CASE("image uncertainty sums pixels") {
    UncertaintyMap zero{2, UncertaintyKind::js_divergence, std::vector<double>(4, 0.0)};
    CHECK(image_uncertainty(zero) == 0.0);
    UncertaintyMap quarter{2, UncertaintyKind::js_divergence, std::vector<double>(4, 0.25)};
    CHECK(image_uncertainty(quarter) == 1.0);
    Rng rng(7);
    UncertaintyMap map{16, UncertaintyKind::variance, std::vector<double>(256)};
    for (auto& v : map.values) v = uniform(rng, 0.0, 3.0);
    CHECK(image_uncertainty(map) == testing_support::image_uncertainty_oracle(map));
}

TEST_CASE("single member memorises a constant label") {
    Rng rng(8);
    const auto field = random_field(16, 6, rng);
    LabelPlane label;
    label.resolution = 16;
    label.classes.assign(256, 2);
    const std::vector<TrainingExample> ex{{&field, &label}};
    TrainParams params;
    params.members = 1;
    params.fit.epochs = 30;
    const auto model = train_ensemble(3, ex, {TaskKind::segmentation, 3, 1.0f}, params);
    const auto pred = predict(model, field);
    const auto right = std::count(pred.label.classes.begin(), pred.label.classes.end(), 2);
    CHECK(static_cast<double>(right) / 256.0 >= 0.99);
}

TEST_CASE("identical member seeds give identical members") {
    Rng rng(9);
    const auto field = random_field(8, 5, rng);
    LabelPlane label;
    label.resolution = 8;
    label.classes.resize(64);
    for (auto& c : label.classes) c = static_cast<std::uint8_t>(uniform_index(rng, 3));
    const std::vector<TrainingExample> ex{{&field, &label}};
    TrainParams params;
    params.members = 3;
    params.member_seeds = {42, 42, 42};
    params.fit.epochs = 3;
    const auto model = train_ensemble(0, ex, {TaskKind::segmentation, 3, 1.0f}, params);
    CHECK(model.members[0] == model.members[1]);
    CHECK(model.members[1] == model.members[2]);
    params.member_seeds.clear();
    const auto varied = train_ensemble(0, ex, {TaskKind::segmentation, 3, 1.0f}, params);
    CHECK_FALSE(varied.members[0] == varied.members[1]);
    const auto again = train_ensemble(0, ex, {TaskKind::segmentation, 3, 1.0f}, params);
    CHECK(again.members == varied.members);
}

TEST_CASE("ensemble labels held-out oracle images") {
    scene::SceneConfig config;
    const int classes = config.classes;
    std::vector<hypercolumn::HypercolumnField> fields;
    std::vector<LabelPlane> labels;
    Rng rng(123);
    for (int i = 0; i < 70; ++i) {
        const auto w = scene::sample_latent(rng, config);
        fields.push_back(hypercolumn::build(scene::render(w, config).features, config.resolution));
        LabelPlane l;
        l.resolution = config.resolution;
        l.classes = scene::oracle_labels(w, config).segmentation;
        labels.push_back(std::move(l));
    }
    std::vector<TrainingExample> train;
    for (int i = 0; i < 50; ++i) train.push_back({&fields[i], &labels[i]});
    const auto model = train_ensemble(5, train, {TaskKind::segmentation, classes, 1.0f}, TrainParams{});
    CHECK(model.members.size() == 10);
    std::size_t right = 0, total = 0;
    for (int i = 50; i < 70; ++i) {
        const auto pred = predict(model, fields[i]);
        for (std::size_t p = 0; p < pred.label.classes.size(); ++p) right += pred.label.classes[p] == labels[i].classes[p];
        total += pred.label.classes.size();
    }
    CHECK(static_cast<double>(right) / static_cast<double>(total) >= 0.90);
}

TEST_CASE("bad training inputs are rejected") {
    Rng rng(10);
    const auto field = random_field(4, 3, rng);
    LabelPlane label;
    label.resolution = 4;
    label.classes.assign(16, 5);
    const std::vector<TrainingExample> ex{{&field, &label}};
    CHECK_THROWS_AS(train_ensemble(0, ex, {TaskKind::segmentation, 3, 1.0f}, TrainParams{}), InputError);

    LabelPlane depth;
    depth.task = TaskKind::depth;
    depth.resolution = 4;
    depth.values.assign(16, 1.0f);
    depth.valid.assign(16, 0);
    const std::vector<TrainingExample> masked{{&field, &depth}};
    CHECK_THROWS_AS(train_ensemble(0, masked, {TaskKind::depth, 1, 1.0f}, TrainParams{}), InputError);

    auto model = random_ensemble(2, 5, 3, TaskKind::segmentation, rng);
    CHECK_THROWS_AS(predict(model, field), ShapeError);
}

TEST_CASE("ensembles round-trip through a directory") {
    Rng rng(12);
    auto model = random_ensemble(3, 5, 4, TaskKind::keypoints, rng);
    model.spec.output_scale = 10.0f;
    model.final_losses = {0.1, 0.25, 1.0 / 3.0};
    const auto dir = std::filesystem::temp_directory_path() / "handsoff_ensemble";
    std::filesystem::remove_all(dir);
    save_ensemble(dir, model);
    const auto back = load_ensemble(dir);
    CHECK(back.members == model.members);
    CHECK(back.member_seeds == model.member_seeds);
    CHECK(back.final_losses == model.final_losses);
    CHECK(back.spec.output_scale == 10.0f);
    CHECK(back.spec.task == TaskKind::keypoints);
    std::filesystem::remove_all(dir);
}
