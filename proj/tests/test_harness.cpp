#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "handsoff/errors.hpp"
#include "handsoff/harness.hpp"

using namespace handsoff;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
    return parse_config(R"(
[experiment]
seed = 3
pool_size = 4
dataset_size = 12
test_size = 4
[scene]
resolution = 16
[inversion]
iterations = 4
encoder_pairs = 60
encoder_epochs = 2
encoder_hidden1 = 16
encoder_hidden2 = 16
[labelgen]
members = 2
epochs = 2
pixels_per_image = 100
[downstream]
epochs = 2
)");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("handsoff_harness_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("heat colormap is monotone from black to white") {
    CHECK(harness::heat_color(0.0) == std::array<std::uint8_t, 3>{0, 0, 0});
    CHECK(harness::heat_color(1.0) == std::array<std::uint8_t, 3>{255, 255, 255});
    auto prev = harness::heat_color(0.0);
    for (int i = 1; i <= 1000; ++i) {
        const auto c = harness::heat_color(i / 1000.0);
        for (int k = 0; k < 3; ++k) CHECK(c[k] >= prev[k]);
        CHECK(c[0] + c[1] + c[2] >= prev[0] + prev[1] + prev[2]);
        prev = c;
    }
    CHECK(harness::heat_color(-1.0) == harness::heat_color(0.0));
    CHECK(harness::heat_color(5.0) == harness::heat_color(1.0));
}

TEST_CASE("ablation axes map onto config keys") {
    auto cfg = tiny();
    harness::apply_axis(cfg, "mlp_widths", "8x4");
    CHECK(cfg.labelgen.hidden1 == 8);
    CHECK(cfg.labelgen.hidden2 == 4);
    harness::apply_axis(cfg, "refine_iters", "0");
    CHECK(cfg.inversion.iterations == 0);
    for (const auto& axis : harness::kAblationAxes) CHECK_FALSE(harness::axis_keys(axis).empty());
    CHECK_THROWS_AS(harness::axis_keys("colour"), ConfigError);
    CHECK_THROWS_AS(harness::apply_axis(cfg, "mlp_widths", "8"), ConfigError);
}

TEST_CASE("experiments are deterministic and write their artifacts") {
    const auto cfg = tiny();
    const auto a = scratch("a"), b = scratch("b");
    {
        pipeline::Workspace ws;
        harness::run_experiment(cfg, a, ws);
    }
    {
        pipeline::Workspace ws;
        harness::run_experiment(cfg, b, ws, {false, false});
    }
    for (const char* f : {"config.txt", "metrics.csv", "inversion.csv", "inversion_trajectories.hoff",
                          "downstream_loss.csv"}) {
        CAPTURE(f);
        REQUIRE(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
    }
    CHECK(fs::exists(a / "dataset" / "manifest.csv"));
    CHECK(fs::exists(a / "labelgen" / "manifest.txt"));
    CHECK_FALSE(fs::exists(b / "dataset"));
    const auto manifest = synthesis::read_manifest(a / "dataset" / "manifest.csv");
    CHECK(manifest.entries.size() == 12 - synthesis::rejected_count(12, 0.1));
    CHECK(manifest.config_hash == config_hash(cfg));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("test latents never appear in training") {
    const auto cfg = tiny();
    pipeline::Workspace ws;
    const auto r = pipeline::run(cfg, ws);
    std::set<std::vector<double>> seen;
    for (const auto& e : r.pool) seen.insert(e.latent.values);
    for (const auto& d : r.dataset.retained) seen.insert(d.latent.values);
    for (const auto& d : r.dataset.rejected) seen.insert(d.latent.values);
    for (const auto& w : pipeline::test_latents(cfg)) CHECK(seen.count(w.values) == 0);
}

TEST_CASE("a shared workspace matches fresh ones across seeds") {
    auto cfg = tiny();
    pipeline::Workspace shared;
    for (std::uint64_t seed : {3u, 4u}) {
        cfg.seed = seed;
        synthesis::PoolSpec spec;
        spec.base_size = 4;
        spec.proportion = 0.5;
        const auto pool = synthesis::build_pool(seed, cfg.scene, spec);
        pipeline::Workspace fresh;
        const auto a = pipeline::run(cfg, shared, &pool);
        const auto b = pipeline::run(cfg, fresh, &pool);
        CAPTURE(seed);
        // Classes missing from the test set score NaN, so compare bytes.
        const auto& va = a.report.aggregate.values;
        const auto& vb = b.report.aggregate.values;
        REQUIRE(va.size() == vb.size());
        CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0);
        CHECK(a.mean_final_inversion_loss == b.mean_final_inversion_loss);
    }
}

TEST_CASE("filter fraction ablation retains n, 0.9n and 0.7n") {
    auto cfg = tiny();
    cfg.dataset_size = 20;
    cfg.sweep.axis = "filter_fraction";
    cfg.sweep.values = {"0", "0.1", "0.3"};
    pipeline::Workspace ws;
    const auto out = scratch("ablation");
    const auto rows = harness::run_ablation(cfg, out, ws);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].retained == 20);
    CHECK(rows[1].retained == 18);
    CHECK(rows[2].retained == 14);
    CHECK(rows[0].base_hash == rows[2].base_hash);
    std::ifstream in(out / "ablation.csv");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 4);
    fs::remove_all(out);
}

TEST_CASE("ensemble size ablation gives one row per value") {
    auto cfg = tiny();
    cfg.sweep.axis = "ensemble_size";
    cfg.sweep.values = {"1", "3", "10"};
    pipeline::Workspace ws;
    const auto rows = harness::run_ablation(cfg, {}, ws);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].value == cfg.sweep.values[i]);
        CHECK(rows[i].base_hash == rows[0].base_hash);
    }
}

TEST_CASE("refinement lowers the final inversion loss") {
    auto cfg = tiny();
    cfg.sweep.axis = "refine_iters";
    cfg.sweep.values = {"0", "20"};
    pipeline::Workspace ws;
    const auto rows = harness::run_ablation(cfg, {}, ws);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].final_inversion_loss < rows[0].final_inversion_loss);
}

TEST_CASE("long-tail sweep rows follow the configured order") {
    auto cfg = tiny();
    cfg.longtail.seeds = 1;
    cfg.longtail.base_size = 4;
    cfg.longtail.proportions = {0.25, 0.5};
    pipeline::Workspace ws;
    const auto out = scratch("longtail");
    const auto rows = harness::run_longtail(cfg, out, ws);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].proportion == 0.25);
    CHECK(rows[1].proportion == 0.5);
    std::ifstream in(out / "longtail.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "mode,seed,proportion,added,arm,rare_iou,nonrare_miou,miou");
    fs::remove_all(out);
}

TEST_CASE("uncertainty views: identical members give the coldest colour") {
    const auto cfg = tiny();
    const auto width = hypercolumn::hypercolumn_dim(cfg.scene.block_channels());
    labelgen::EnsembleModel model;
    model.spec = pipeline::task_spec(cfg);
    model.members.assign(3, nn::DenseNet({width, 4, 4, static_cast<std::size_t>(cfg.scene.classes)}, 5));
    Rng rng(1);
    const std::vector<scene::Latent> latents{scene::sample_latent(rng, cfg.scene)};
    const auto out = scratch("views");
    harness::export_uncertainty_view(model, latents, cfg, out);
    const auto heat = read_png(out / "view_0_uncertainty.png");
    for (auto v : heat.pixels) CHECK(v == 0);
    CHECK(fs::exists(out / "view_0_label.png"));
    fs::remove_all(out);
}
