#pragma once

// Downstream task model: a per-pixel MLP over a clamp-to-edge RGB patch,
// trained on synthesized datasets and scored against oracle labels.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "handsoff/image.hpp"
#include "handsoff/label_generator.hpp"
#include "handsoff/labels.hpp"
#include "handsoff/numeric_net.hpp"
#include "handsoff/scene.hpp"

namespace handsoff::downstream {

struct Sample {
    const Rgb8Image* image = nullptr;
    const LabelPlane* label = nullptr;
};

struct DownstreamParams {
    int radius = 3;
    std::size_t hidden1 = 64;
    std::size_t hidden2 = 32;
    std::size_t epochs = 20;
    std::size_t pixels_per_image = 64;  // fresh uniform draw every epoch
    std::size_t batch_size = 64;
    nn::OptimizerConfig optimizer{nn::OptimizerKind::adam, 1e-3};
};

struct PatchModel {
    int radius = 3;
    labelgen::TaskSpec spec;
    nn::DenseNet net;
    std::vector<double> loss_history;

    std::size_t input_width() const { return 3 * static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1); }
};

/// Untrained model; train_downstream with zero epochs returns exactly this.
PatchModel make_model(std::uint64_t seed, const labelgen::TaskSpec& spec, const DownstreamParams& params);

/// Patch features of pixel (x, y), edges clamped, channel-interleaved, in [0, 1].
void patch(const Rgb8Image& image, int radius, int x, int y, float* out);

PatchModel train_downstream(std::uint64_t seed, std::span<const Sample> data, const labelgen::TaskSpec& spec,
                            const DownstreamParams& params);

struct FinetuneParams {
    std::size_t epochs = 0;
    std::size_t pixels_per_image = 256;  // one fixed draw for the whole run
    std::size_t batch_size = 64;
    double learning_rate = 5e-4;
};

/// Continues training on the original labeled pool only. An epoch that would
/// raise the loss over the fixed pool pixels is rolled back and the learning
/// rate halved, so the recorded trajectory never increases. Returns it.
std::vector<double> finetune(PatchModel& model, std::uint64_t seed, std::span<const Sample> pool,
                             const FinetuneParams& params);

LabelPlane predict(const PatchModel& model, const Rgb8Image& image);

/// Maps a test image index and image to a label (lets tests plug in stubs).
using Predictor = std::function<LabelPlane(std::size_t, const Rgb8Image&)>;

Predictor as_predictor(const PatchModel& model);

struct EvalOptions {
    int classes = 0;                      // segmentation
    std::vector<double> pck_alphas{0.10, 0.05, 0.02};
    double corrupt_fraction = 0.25;       // depth: share of truth pixels replaced by corrupt_value
    float corrupt_value = 0.0f;
    std::uint64_t corrupt_seed = 0;
};

struct MetricRow {
    std::string id;
    std::vector<double> values;  // NaN where a metric is undefined for the image
};

struct EvalReport {
    TaskKind task = TaskKind::segmentation;
    std::vector<std::string> columns;  // metric names, excluding id
    std::vector<MetricRow> rows;
    MetricRow aggregate;

    double value(const std::string& column) const;  // aggregate value
};

/// Renders each test latent, predicts, and scores against the oracle. The
/// aggregate pools IOU and PCK counts over images and averages depth metrics.
EvalReport evaluate_downstream(const Predictor& predictor, std::span<const scene::Latent> test_latents,
                               const scene::SceneConfig& config, TaskKind task, const EvalOptions& options);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

/// HOFF parameter entries plus model.txt with radius and task.
void save_model(const std::filesystem::path& dir, const PatchModel& model);
PatchModel load_model(const std::filesystem::path& dir);

}  // namespace handsoff::downstream
