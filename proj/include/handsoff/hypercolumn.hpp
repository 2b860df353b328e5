#pragma once

// Per-pixel hypercolumns: every feature block resampled to the target
// resolution (bilinear with corner alignment when upsampling, average pooling
// when downsampling) and concatenated in block order.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "handsoff/numeric_net.hpp"
#include "handsoff/scene.hpp"

namespace handsoff::hypercolumn {

/// Per-block channel caps; a negative entry leaves that block uncapped.
using ChannelCaps = std::vector<int>;

struct HypercolumnField {
    int resolution = 0;
    nn::Matrix<float> values;       // one row per pixel (row-major y, x), C columns
    std::vector<int> block_offsets; // first channel of each block

    std::size_t channels() const { return values.cols(); }
    std::span<const float> pixel_span(int x, int y) const {
        return {values.row(static_cast<std::size_t>(y) * resolution + x), values.cols()};
    }
};

/// Total width for the given block channel counts and optional caps.
std::size_t hypercolumn_dim(std::span<const int> block_channels, const std::optional<ChannelCaps>& caps = {});

/// Caps that zero out every block below `min_resolution`.
ChannelCaps drop_low_resolution(std::span<const int> block_resolutions, int min_resolution);

ChannelCaps parse_caps(std::string_view text);

HypercolumnField build(const scene::FeatureStack& features, int target_res,
                       const std::optional<ChannelCaps>& caps = {});

/// Contiguous copy of one pixel's channels; throws InputError out of bounds.
std::vector<float> pixel(const HypercolumnField& field, int x, int y);

/// Same vector as pixel(build(...), x, y) without materialising the field.
std::vector<float> pixel_on_demand(const scene::FeatureStack& features, int target_res, int x, int y,
                                   const std::optional<ChannelCaps>& caps = {});

/// f32 [R, R, C] tensor.
void save_field(const std::filesystem::path& path, const HypercolumnField& field);
HypercolumnField load_field(const std::filesystem::path& path);

}  // namespace handsoff::hypercolumn
