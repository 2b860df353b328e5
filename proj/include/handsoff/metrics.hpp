#pragma once

// Evaluation metrics: per-class IOU / mIOU, PCK-alpha over the visible-keypoint
// bounding box, masked normalised MSE, and centre-cropped clamped RMSE pairs.

#include <cstdint>
#include <span>
#include <vector>

namespace handsoff::metrics {

inline constexpr double kDepthFloor = 0.001;
inline constexpr double kDepthCeiling = 80.0;

struct SegScore {
    std::vector<double> iou;       // 0 for undefined classes
    std::vector<bool> defined;     // class occurs in prediction or truth
    std::vector<std::uint64_t> intersection;
    std::vector<std::uint64_t> union_count;
    double miou = 0.0;             // mean over defined classes
};

SegScore iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int n_classes);

/// Score from accumulated counts (pooled over many images).
SegScore iou_from_counts(std::vector<std::uint64_t> intersection, std::vector<std::uint64_t> union_count);

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct PckCount {
    std::size_t correct = 0;
    std::size_t visible = 0;
};

/// Visible keypoints within alpha * max(h, w) of the truth (boundary counts),
/// with (h, w) the box around the visible true keypoints.
PckCount pck_count(std::span<const Point> pred, std::span<const Point> truth, const std::vector<bool>& visible,
                   double alpha);
double pck(std::span<const Point> pred, std::span<const Point> truth, const std::vector<bool>& visible, double alpha);

/// ||(pred - truth) on valid||^2 / ||truth on valid||^2.
double mnmse(std::span<const float> pred, std::span<const float> truth, std::span<const std::uint8_t> valid);

struct RmsePair {
    double rmse = 0.0;
    double rmse_log = 0.0;
};

/// Over the centred half-height, half-width crop. Predictions are clamped to
/// [0.001, 80]; truth is clamped only inside the log.
RmsePair rmse_pair(std::span<const float> pred, std::span<const float> truth, int width, int height);

/// First row/column of the centred crop and its extent along a side of length n.
inline int crop_start(int n) { return (n - n / 2) / 2; }
inline int crop_extent(int n) { return n / 2; }

}  // namespace handsoff::metrics
