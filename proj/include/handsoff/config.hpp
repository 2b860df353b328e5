#pragma once

// Experiment configuration: `[section]` headers with `key = value` lines,
// `#` comments. Unknown sections or keys are errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "handsoff/downstream.hpp"
#include "handsoff/hypercolumn.hpp"
#include "handsoff/inversion.hpp"
#include "handsoff/label_generator.hpp"
#include "handsoff/labels.hpp"
#include "handsoff/scene.hpp"

namespace handsoff {

struct SweepSpec {
    std::string axis;                 // empty when no sweep is configured
    std::vector<std::string> values;  // `;`-separated in the file
};

struct LongtailSpec {
    std::string mode = "substitute";  // substitute | add
    std::vector<double> proportions{1.0 / 16.0, 0.25, 0.5};
    std::size_t base_size = 16;
    std::vector<std::size_t> added_counts{5, 10};
    std::size_t seeds = 3;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    TaskKind task = TaskKind::segmentation;
    std::size_t pool_size = 50;
    std::size_t dataset_size = 1000;
    double filter_fraction = 0.10;
    std::size_t test_size = 100;

    scene::SceneConfig scene;
    inversion::InversionParams inversion;
    inversion::EncoderParams encoder;
    labelgen::TrainParams labelgen;
    std::optional<hypercolumn::ChannelCaps> channel_caps;
    downstream::DownstreamParams downstream;
    downstream::FinetuneParams finetune;
    double heatmap_sigma = 2.0;
    double corrupt_fraction = 0.25;

    SweepSpec sweep;
    LongtailSpec longtail;

    void validate() const;
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets `section.key`; throws ConfigError on unknown keys or bad values.
void set_config_value(ExperimentConfig& config, std::string_view dotted_key, std::string_view value);
std::string get_config_value(const ExperimentConfig& config, std::string_view dotted_key);

/// One `section.key = value` line per field, in a fixed order.
std::string canonical_text(const ExperimentConfig& config);

/// FNV-1a of the canonical text as 16 hex digits; keys in `exclude` are left out.
std::string config_hash(const ExperimentConfig& config, const std::vector<std::string>& exclude = {});

}  // namespace handsoff
