#pragma once

// Experiment drivers that write results directories: single runs, long-tail
// pool sweeps, ablation sweeps and uncertainty views.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "handsoff/config.hpp"
#include "handsoff/pipeline.hpp"

namespace handsoff::harness {

struct RunOptions {
    bool write_dataset = true;  // images, labels and manifest of the retained set
    bool write_models = true;
};

/// Runs the pipeline and writes config.txt, metrics.csv, inversion.csv,
/// inversion_trajectories.hoff, downstream_loss.csv, and optionally the
/// dataset and model checkpoints.
pipeline::RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out,
                                   pipeline::Workspace& workspace, const RunOptions& options = {});

struct LongtailRow {
    std::string mode;
    std::uint64_t seed = 0;
    double proportion = 0.0;   // substitute
    std::size_t added = 0;     // add
    std::string arm;           // add: +rare / -rare
    double rare_iou = 0.0;
    double nonrare_miou = 0.0;
    double miou = 0.0;
};

/// One experiment per pool spec and seed (config.seed, config.seed + 1, ...).
/// Writes longtail.csv when `out` is non-empty.
std::vector<LongtailRow> run_longtail(const ExperimentConfig& config, const std::filesystem::path& out,
                                      pipeline::Workspace& workspace);

/// Rare-class IOU and mean IOU over the remaining defined classes.
std::pair<double, double> rare_split(const downstream::EvalReport& report, int rare_class);

inline const std::vector<std::string> kAblationAxes{"channel_caps", "ensemble_size", "mlp_widths", "pool_size",
                                                    "refine_iters", "dataset_size", "filter_fraction"};

/// Config keys an ablation axis controls.
std::vector<std::string> axis_keys(const std::string& axis);
void apply_axis(ExperimentConfig& config, const std::string& axis, const std::string& value);

struct AblationRow {
    std::string axis;
    std::string value;
    std::string base_hash;  // hash of everything except the swept keys
    std::size_t retained = 0;
    std::size_t hypercolumn_dim = 0;
    double final_inversion_loss = 0.0;
    downstream::EvalReport report;
};

/// One experiment per sweep value; writes ablation.csv when `out` is non-empty.
std::vector<AblationRow> run_ablation(const ExperimentConfig& config, const std::filesystem::path& out,
                                      pipeline::Workspace& workspace);

/// Black -> red -> yellow -> white; every channel non-decreasing in t.
std::array<std::uint8_t, 3> heat_color(double t);

/// Colour of a class index (background dark grey).
std::array<std::uint8_t, 3> class_view_color(int cls);

/// Writes view_{i}_label.png and view_{i}_uncertainty.png per latent.
/// Uncertainty is scaled by ln M for JS maps and by the image maximum for
/// variance maps.
void export_uncertainty_view(const labelgen::EnsembleModel& model, std::span<const scene::Latent> latents,
                             const ExperimentConfig& config, const std::filesystem::path& out);

}  // namespace handsoff::harness
