#pragma once

// Stage functions shared by every experiment: labeled pool -> inversion ->
// hypercolumns -> ensemble -> synthesis + filtering -> downstream -> evaluation.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "handsoff/config.hpp"
#include "handsoff/downstream.hpp"
#include "handsoff/hypercolumn.hpp"
#include "handsoff/inversion.hpp"
#include "handsoff/label_generator.hpp"
#include "handsoff/synthesis.hpp"

namespace handsoff::pipeline {

struct PoolEntry {
    std::string key;
    scene::Latent latent;            // latent that produced the "real" image
    Rgb8Image image;
    scene::OracleLabels oracle;
    LabelPlane label;                // task label used for training
    inversion::InversionResult inversion;
    hypercolumn::HypercolumnField field;  // from the inverted latent
};

labelgen::TaskSpec task_spec(const ExperimentConfig& config);

/// Task label for oracle output. Depth labels get `corrupt_fraction` of their
/// pixels corrupted (value 0) and masked out; keypoint labels carry visibility
/// as channel weights.
LabelPlane task_label(const scene::OracleLabels& oracle, const ExperimentConfig& config, const std::string& key);

/// Natural labeled pool of config.pool_size items.
std::vector<synthesis::PoolItem> natural_pool(const ExperimentConfig& config);

/// Held-out evaluation latents, drawn from their own stream.
std::vector<scene::Latent> test_latents(const ExperimentConfig& config);

/// Caches encoders and inverted pool items so sweeps that share items or seeds
/// do not redo them. Cached values are pure functions of their keys.
class Workspace {
public:
    const inversion::Encoder& encoder(const ExperimentConfig& config);
    std::vector<PoolEntry> prepare_pool(const ExperimentConfig& config, const std::vector<synthesis::PoolItem>& items);

private:
    struct Inverted {
        inversion::InversionResult result;
        hypercolumn::HypercolumnField field;
    };
    std::map<std::string, std::shared_ptr<inversion::Encoder>> encoders_;
    std::map<std::string, std::shared_ptr<Inverted>> inverted_;
};

struct RunResult {
    std::vector<PoolEntry> pool;
    labelgen::EnsembleModel model;
    synthesis::SynthesisResult dataset;
    downstream::PatchModel downstream;
    std::vector<double> finetune_trajectory;
    downstream::EvalReport report;
    double mean_initial_inversion_loss = 0.0;
    double mean_final_inversion_loss = 0.0;
    double mean_reconstruction_error = 0.0;
};

/// Full experiment. `pool` overrides the natural labeled pool.
RunResult run(const ExperimentConfig& config, Workspace& workspace,
              const std::vector<synthesis::PoolItem>* pool = nullptr);

downstream::EvalOptions eval_options(const ExperimentConfig& config);

}  // namespace handsoff::pipeline
