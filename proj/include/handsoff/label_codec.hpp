#pragma once

// Label transformations: class-collapse remapping, Gaussian keypoint heatmaps
// and depth validity masks.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "handsoff/scene.hpp"

namespace handsoff::codec {

inline constexpr float kHeatmapPeak = 10.0f;

/// Total many-to-one map from source classes [0, source_classes) onto
/// target classes [0, target_classes); every target has a preimage.
class CollapseMap {
public:
    static CollapseMap identity(int classes);
    static CollapseMap from_targets(std::vector<int> targets);
    /// One `src=tgt` pair per line; blank lines and `#` comments ignored.
    static CollapseMap parse(std::string_view text);
    static CollapseMap load(const std::filesystem::path& path);

    int source_classes() const { return static_cast<int>(targets_.size()); }
    int target_classes() const { return target_classes_; }
    int operator()(int source) const;
    const std::vector<int>& targets() const { return targets_; }

private:
    std::vector<int> targets_;
    int target_classes_ = 0;
};

std::vector<std::uint8_t> collapse(std::span<const std::uint8_t> mask, const CollapseMap& map);

struct HeatmapSet {
    int resolution = 0;
    double sigma = 1.0;
    std::vector<float> values;  // (keypoint, y, x)

    int count() const {
        return resolution ? static_cast<int>(values.size() / (static_cast<std::size_t>(resolution) * resolution)) : 0;
    }
    float at(int k, int y, int x) const {
        return values[(static_cast<std::size_t>(k) * resolution + y) * resolution + x];
    }
};

/// Peak-normalised Gaussian bumps scaled to kHeatmapPeak; invisible keypoints
/// give all-zero grids.
HeatmapSet encode_keypoints(std::span<const scene::Keypoint> keypoints, int resolution, double sigma);

struct DecodedKeypoint {
    double x = 0.0;
    double y = 0.0;
    bool degenerate = false;  // grid was constant
};

/// Integer argmax per grid; ties go to the lowest row-major index.
std::vector<DecodedKeypoint> decode_heatmaps(const HeatmapSet& set);
std::vector<DecodedKeypoint> decode_heatmaps(std::span<const float> values, int channels, int resolution);

std::vector<std::uint8_t> validity_mask(std::span<const float> depth, float corrupt_value);

/// Copy of depth with round(fraction * size) pixels, drawn without
/// replacement, set to corrupt_value.
std::vector<float> corrupt_depth(std::span<const float> depth, double fraction, float corrupt_value, Rng& rng);

}  // namespace handsoff::codec
