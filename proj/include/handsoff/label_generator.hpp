#pragma once

// Ensemble of per-pixel MLPs mapping hypercolumns to labels. Discrete labels
// aggregate by majority vote with Jensen-Shannon uncertainty; continuous
// labels aggregate by mean with across-member variance.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "handsoff/hypercolumn.hpp"
#include "handsoff/labels.hpp"
#include "handsoff/numeric_net.hpp"

namespace handsoff::labelgen {

enum class UncertaintyKind { js_divergence, variance };

struct TaskSpec {
    TaskKind task = TaskKind::segmentation;
    int outputs = 0;            // classes, heatmaps, or 1 for depth
    float output_scale = 1.0f;  // continuous targets are divided by this for training

    bool discrete() const { return task == TaskKind::segmentation; }
};

struct EnsembleModel {
    TaskSpec spec;
    std::vector<nn::DenseNet> members;
    std::vector<std::uint64_t> member_seeds;
    std::vector<double> final_losses;

    std::size_t input_width() const { return members.empty() ? 0 : members.front().input_width(); }
};

struct TrainingExample {
    const hypercolumn::HypercolumnField* field = nullptr;
    const LabelPlane* label = nullptr;
};

struct TrainParams {
    std::size_t members = 10;
    std::size_t hidden1 = 32;
    std::size_t hidden2 = 16;
    std::size_t pixels_per_image = 2000;
    bool class_balanced = false;
    nn::FitParams fit{8, 64, {nn::OptimizerKind::adam, 1e-3}};
    std::vector<std::uint64_t> member_seeds;  // overrides the derived per-member seeds when non-empty
};

EnsembleModel train_ensemble(std::uint64_t seed, std::span<const TrainingExample> examples, const TaskSpec& spec,
                             const TrainParams& params);

struct UncertaintyMap {
    int resolution = 0;
    UncertaintyKind kind = UncertaintyKind::js_divergence;
    std::vector<double> values;  // row-major (y, x)
};

struct Prediction {
    LabelPlane label;
    UncertaintyMap uncertainty;
};

Prediction predict(const EnsembleModel& model, const hypercolumn::HypercolumnField& field);

/// Entropy of the mean minus the mean entropy of `members` distributions over
/// `classes` outcomes (natural log, uniform weights), laid out member-major.
double js_divergence(std::span<const double> distributions, std::size_t members, std::size_t classes);

/// Sum over pixels in row-major order.
double image_uncertainty(const UncertaintyMap& map);

/// Directory with manifest.txt and member{m}_layer{i}.{w,b}.hoff entries.
void save_ensemble(const std::filesystem::path& dir, const EnsembleModel& model);
EnsembleModel load_ensemble(const std::filesystem::path& dir);

}  // namespace handsoff::labelgen
