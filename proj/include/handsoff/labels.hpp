#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace handsoff {

enum class TaskKind { segmentation, keypoints, depth };

std::string to_string(TaskKind task);
/// Throws ConfigError on an unknown name.
TaskKind parse_task(std::string_view name);

/// The per-pixel label being generated: a class grid, a keypoint heatmap
/// stack, or a depth grid.
struct LabelPlane {
    TaskKind task = TaskKind::segmentation;
    int resolution = 0;
    int channels = 1;                    // heatmap count for keypoints, otherwise 1
    std::vector<std::uint8_t> classes;   // segmentation, R x R
    std::vector<float> values;           // continuous tasks, channel-major (channel, y, x)
    std::vector<std::uint8_t> valid;     // optional per-pixel validity; empty means all valid
    std::vector<float> channel_weight;   // optional per-channel weight; empty means all 1

    std::size_t pixel_count() const { return static_cast<std::size_t>(resolution) * resolution; }
    bool pixel_valid(std::size_t p) const { return valid.empty() || valid[p] != 0; }

    bool operator==(const LabelPlane&) const = default;
};

/// Label tensor as HOFF: u8 [R, R] for segmentation, f32 [channels, R, R] otherwise.
/// Validity masks and channel weights are not part of this file.
void save_label(const std::filesystem::path& path, const LabelPlane& label);
LabelPlane load_label(const std::filesystem::path& path, TaskKind task);

}  // namespace handsoff
