#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "handsoff/downstream.hpp"
#include "handsoff/errors.hpp"
#include "handsoff/label_codec.hpp"

using namespace handsoff;
using namespace handsoff::downstream;

namespace {

const labelgen::TaskSpec kSeg{TaskKind::segmentation, 5, 1.0f};

struct OracleSet {
    std::vector<Rgb8Image> images;
    std::vector<LabelPlane> labels;

    std::vector<Sample> samples() const {
        std::vector<Sample> s;
        for (std::size_t i = 0; i < images.size(); ++i) s.push_back({&images[i], &labels[i]});
        return s;
    }
};

OracleSet oracle_set(const scene::SceneConfig& config, std::uint64_t seed, int n) {
    OracleSet set;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const auto w = scene::sample_latent(rng, config);
        set.images.push_back(quantize(scene::render_image(w, config)));
        LabelPlane l;
        l.resolution = config.resolution;
        l.classes = scene::oracle_labels(w, config).segmentation;
        set.labels.push_back(std::move(l));
    }
    return set;
}

std::vector<scene::Latent> latents(const scene::SceneConfig& config, std::uint64_t seed, int n) {
    Rng rng(seed);
    std::vector<scene::Latent> out;
    for (int i = 0; i < n; ++i) out.push_back(scene::sample_latent(rng, config));
    return out;
}

}  // namespace

TEST_CASE("patches clamp at the edges") {
    Rgb8Image img(4, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
    const int r = 2;
    std::vector<float> out(3 * 25);
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) {
            patch(img, r, x, y, out.data());
            std::size_t k = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const int sx = std::clamp(x + dx, 0, 3);
                    const int sy = std::clamp(y + dy, 0, 2);
                    for (int c = 0; c < 3; ++c) CHECK(out[k++] == doctest::Approx(img.at(sy, sx, c) / 255.0f));
                }
            }
        }
    }
}

TEST_CASE("a constant label is memorised") {
    scene::SceneConfig config;
    config.resolution = 16;
    auto set = oracle_set(config, 1, 1);
    std::fill(set.labels[0].classes.begin(), set.labels[0].classes.end(), 3);
    DownstreamParams params;
    params.epochs = 60;
    const auto model = train_downstream(2, set.samples(), kSeg, params);
    const auto pred = predict(model, set.images[0]);
    const auto right = std::count(pred.classes.begin(), pred.classes.end(), 3);
    CHECK(static_cast<double>(right) / 256.0 >= 0.99);
}

TEST_CASE("zero epochs return the initial model") {
    scene::SceneConfig config;
    config.resolution = 16;
    const auto set = oracle_set(config, 1, 2);
    DownstreamParams params;
    params.epochs = 0;
    const auto model = train_downstream(5, set.samples(), kSeg, params);
    CHECK(model.net == make_model(5, kSeg, params).net);
    CHECK(model.loss_history.empty());
}

TEST_CASE("finetune: zero epochs, non-increasing loss, task checks") {
    scene::SceneConfig config;
    config.resolution = 16;
    const auto set = oracle_set(config, 3, 8);
    DownstreamParams params;
    params.epochs = 3;
    auto model = train_downstream(4, set.samples(), kSeg, params);
    const auto before = model.net;
    FinetuneParams ft;
    CHECK(finetune(model, 1, set.samples(), ft).size() <= 1);
    CHECK(model.net == before);

    ft.epochs = 15;
    ft.learning_rate = 5e-3;
    const auto traj = finetune(model, 1, set.samples(), ft);
    REQUIRE(traj.size() == 16);
    for (std::size_t i = 1; i < traj.size(); ++i) CHECK(traj[i] <= traj[i - 1]);
    CHECK(traj.back() < traj.front());

    LabelPlane depth;
    depth.task = TaskKind::depth;
    depth.resolution = 16;
    depth.values.assign(256, 30.0f);
    const std::vector<Sample> wrong{{&set.images[0], &depth}};
    CHECK_THROWS_AS(finetune(model, 1, wrong, ft), InputError);
}

TEST_CASE("oracle stubs score perfectly") {
    scene::SceneConfig config;
    const auto test = latents(config, 9, 10);

    const Predictor seg = [&](std::size_t i, const Rgb8Image&) {
        LabelPlane l;
        l.resolution = config.resolution;
        l.classes = scene::oracle_labels(test[i], config).segmentation;
        return l;
    };
    EvalOptions opt;
    const auto rs = evaluate_downstream(seg, test, config, TaskKind::segmentation, opt);
    CHECK(rs.value("miou") == 1.0);
    CHECK(rs.columns.front() == "miou");
    CHECK(rs.columns.size() == 1 + static_cast<std::size_t>(config.classes));
    CHECK(rs.columns[1] == "iou_class_0");
    CHECK(rs.rows.size() == 10);

    const Predictor depth = [&](std::size_t i, const Rgb8Image&) {
        LabelPlane l;
        l.task = TaskKind::depth;
        l.resolution = config.resolution;
        l.values = scene::oracle_labels(test[i], config).depth;
        return l;
    };
    const auto rd = evaluate_downstream(depth, test, config, TaskKind::depth, opt);
    CHECK(rd.columns == std::vector<std::string>{"mnmse", "rmse", "rmse_log"});
    CHECK(rd.value("mnmse") == 0.0);
    CHECK(rd.value("rmse") == 0.0);

    const Predictor kp = [&](std::size_t i, const Rgb8Image&) {
        LabelPlane l;
        l.task = TaskKind::keypoints;
        l.resolution = config.resolution;
        auto kps = scene::oracle_labels(test[i], config).keypoints;
        for (auto& k : kps) {
            k.x = std::round(k.x);
            k.y = std::round(k.y);
            k.visible = true;
        }
        l.channels = config.slots;
        l.values = codec::encode_keypoints(kps, config.resolution, 2.0).values;
        return l;
    };
    const auto rk = evaluate_downstream(kp, test, config, TaskKind::keypoints, opt);
    CHECK(rk.columns == std::vector<std::string>{"pck_0.10", "pck_0.05", "pck_0.02"});
    // Rounding moves each prediction by up to half a pixel diagonal, which
    // only matters for objects whose visible box is a few pixels wide.
    CHECK(rk.value("pck_0.10") >= 0.9);
    CHECK(rk.value("pck_0.10") >= rk.value("pck_0.05"));
    CHECK(rk.value("pck_0.05") >= rk.value("pck_0.02"));
}

TEST_CASE("a trained model beats its initialisation") {
    scene::SceneConfig config;
    const auto train = oracle_set(config, 11, 30);
    const auto test = latents(config, 12, 20);
    DownstreamParams params;
    params.epochs = 0;
    const auto untrained = train_downstream(1, train.samples(), kSeg, params);
    params.epochs = 10;
    const auto trained = train_downstream(1, train.samples(), kSeg, params);
    EvalOptions opt;
    const double a = evaluate_downstream(as_predictor(untrained), test, config, TaskKind::segmentation, opt).value("miou");
    const double b = evaluate_downstream(as_predictor(trained), test, config, TaskKind::segmentation, opt).value("miou");
    CHECK(b > a);
    CHECK(b > 0.5);
}

TEST_CASE("models and reports are written") {
    scene::SceneConfig config;
    config.resolution = 16;
    const auto set = oracle_set(config, 2, 2);
    DownstreamParams params;
    params.epochs = 1;
    const auto model = train_downstream(7, set.samples(), kSeg, params);
    const auto dir = std::filesystem::temp_directory_path() / "handsoff_patch_model";
    std::filesystem::remove_all(dir);
    save_model(dir, model);
    const auto back = load_model(dir);
    CHECK(back.net == model.net);
    CHECK(back.radius == model.radius);
    CHECK(back.spec.task == TaskKind::segmentation);

    const auto test = latents(config, 3, 2);
    const auto report = evaluate_downstream(as_predictor(model), test, config, TaskKind::segmentation, EvalOptions{});
    write_report_csv(dir / "metrics.csv", report);
    std::ifstream in(dir / "metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("id,miou,iou_class_0", 0) == 0);
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
    std::filesystem::remove_all(dir);
}
