#pragma once

// Latent inversion: an encoder regresses an initial latent from a pooled
// image, then projected gradient steps refine it against the frozen generator
// while staying inside a ball around the encoder's guess.

#include <cstdint>
#include <span>
#include <vector>

#include "handsoff/image.hpp"
#include "handsoff/numeric_net.hpp"
#include "handsoff/scene.hpp"

namespace handsoff::inversion {

enum class PerceptualKind { multiscale_l2, none };

inline constexpr int kEncoderPool = 16;

struct InversionParams {
    double c_reg = 0.5;       // squared radius of the trust ball around w_e
    double lambda_l2 = 0.1;
    int iterations = 300;
    double step_size = 0.05;  // Euclidean length of a full step
    int max_halvings = 8;
    PerceptualKind perceptual = PerceptualKind::multiscale_l2;

    void validate() const;
};

struct InversionResult {
    scene::Latent latent;
    scene::Latent initial;
    std::vector<double> trajectory;  // objective before the first step and after each step
    std::vector<double> ball_distances;  // ||w - w_e||^2 before the first step and after each step
    double reconstruction_error = 0.0;  // mean squared pixel error at the final latent
    double initial_reconstruction_error = 0.0;
};

/// Sum over pooling factors 1, 2 and 4 of the mean squared difference of the
/// average-pooled images.
double perceptual_loss(const RgbImage& a, const RgbImage& b);

/// Mean squared pixel difference.
double reconstruction_error(const RgbImage& a, const RgbImage& b);

/// Rescales w about center onto the ball ||w - center||^2 <= c_reg when outside.
void project_to_ball(std::span<double> w, std::span<const double> center, double c_reg);

struct EncoderParams {
    std::uint64_t seed = 0;     // the encoder belongs to the generator, not to an experiment
    bool uniform_classes = true;  // train on scenes where every foreground class is equally likely
    std::size_t pairs = 6000;
    std::size_t validation_pairs = 500;
    std::size_t hidden1 = 256;
    std::size_t hidden2 = 128;
    nn::FitParams fit{40, 32, {nn::OptimizerKind::adam, 1e-3}};
};

struct Encoder {
    nn::DenseNet net;
    double training_mse = 0.0;
    double validation_mse = 0.0;
    double mean_predictor_mse = 0.0;  // constant mean-latent baseline on the validation pairs
};

/// 16 x 16 average-pooled, flattened image.
std::vector<float> encoder_input(const RgbImage& image);

/// Scene config the encoder trains on: with uniform_classes the rare class is
/// drawn as often as any other foreground class.
scene::SceneConfig encoder_scene(const scene::SceneConfig& config, const EncoderParams& params);

Encoder train_encoder(const scene::SceneConfig& config, const EncoderParams& params);

/// Encoder guess clamped to the nominal latent range.
scene::Latent encode(const nn::DenseNet& encoder, const RgbImage& image, const scene::SceneConfig& config);

InversionResult refine(const RgbImage& image, const scene::Latent& w_e, const InversionParams& params,
                       const scene::SceneConfig& config);

}  // namespace handsoff::inversion
