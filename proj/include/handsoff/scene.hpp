#pragma once

// Procedural differentiable scene generator.
//
// A latent holds six parameters per object slot (presence logit, class
// offset, centre x/y, log-radius, depth). Objects are soft-edged discs
// composited front-to-back over a latent-keyed grey background. Alongside the
// image the generator emits one feature grid per block resolution
// (4, 8, ..., R) and an analytic oracle emits the exact labels.
//
// Coordinates: pixel (x, y) samples the canvas point (x, y); the canvas spans
// [-0.5, R - 0.5] on both axes.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "handsoff/image.hpp"
#include "handsoff/rng.hpp"

namespace handsoff::scene {

/// Per-slot parameter order inside a latent.
enum SlotParam : std::size_t { kPresence = 0, kClassOffset, kCenterX, kCenterY, kLogRadius, kDepth, kSlotParams };

inline constexpr double kLatentRange = 3.0;
inline constexpr double kPresenceSlope = 6.0;
inline constexpr double kClassSoftness = 0.05;
inline constexpr double kDepthSoftness = 0.05;
inline constexpr double kEdgeSharpness = 2.0;
inline constexpr double kRadiusScale = 0.35;
inline constexpr int kRejectionBudget = 10000;

struct SceneConfig {
    int resolution = 64;
    int slots = 4;
    int classes = 5;                 // class 0 is background
    double tau = 1.5;                // edge softness in pixels
    int rare_class = -1;             // -1 selects classes - 1
    double rare_frequency = 0.05;    // fraction of natural scenes containing the rare class
    double presence_prob = 0.6;
    bool slot_bound_classes = false; // slot k always carries foreground class 1 + k mod (classes - 1)
    double base_radius = 0.12;       // fraction of the resolution
    double far_depth = 80.0;

    void validate() const;

    int block_count() const;
    std::vector<int> block_resolutions() const;
    int channels_per_block() const { return classes + 3; }
    std::vector<int> block_channels() const;
    std::size_t latent_dim() const { return static_cast<std::size_t>(slots) * kSlotParams; }
    int foreground_classes() const { return classes - 1; }
    int effective_rare_class() const { return rare_class < 0 ? classes - 1 : rare_class; }

    bool operator==(const SceneConfig&) const = default;
};

struct Latent {
    std::vector<double> values;

    double& at(int slot, SlotParam p) { return values[static_cast<std::size_t>(slot) * kSlotParams + p]; }
    double at(int slot, SlotParam p) const { return values[static_cast<std::size_t>(slot) * kSlotParams + p]; }

    bool operator==(const Latent&) const = default;
};

/// One block output: res x res x channels, interleaved (y, x, channel).
struct FeatureGrid {
    int resolution = 0;
    int channels = 0;
    std::vector<float> values;

    float at(int y, int x, int c) const {
        return values[(static_cast<std::size_t>(y) * resolution + x) * channels + c];
    }
};

struct FeatureStack {
    std::vector<FeatureGrid> blocks;
};

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    bool visible = false;
};

struct OracleLabels {
    int resolution = 0;
    std::vector<std::uint8_t> segmentation;  // R x R class indices
    std::vector<Keypoint> keypoints;         // one per slot (object centre)
    std::vector<float> depth;                // R x R
    std::vector<bool> presence;              // per class
};

struct Rendered {
    RgbImage image;
    FeatureStack features;
};

/// Foreground palette colour of class c >= 1 (class 0 has no fixed colour).
std::array<double, 3> class_color(int cls);

/// Hard class of a class offset (foreground class in [1, classes)).
int class_of_offset(double offset, const SceneConfig& config);

/// Depth label for a latent depth coordinate.
double depth_of(double z);

/// Background grey level keyed on the latent.
double background_shade(const Latent& latent, const SceneConfig& config);

Latent sample_latent(Rng& rng, const SceneConfig& config, std::optional<double> rare_bias = std::nullopt);

Rendered render(const Latent& latent, const SceneConfig& config);
RgbImage render_image(const Latent& latent, const SceneConfig& config);

/// Double-precision image, interleaved (y, x, channel).
std::vector<double> render_image_exact(const Latent& latent, const SceneConfig& config);

/// Vector-Jacobian product of render_image_exact with `pixel_cotangent`
/// (same layout). Returns a latent-shaped gradient.
std::vector<double> render_gradient(const Latent& latent, const SceneConfig& config,
                                    std::span<const double> pixel_cotangent);

OracleLabels oracle_labels(const Latent& latent, const SceneConfig& config);

}  // namespace handsoff::scene
