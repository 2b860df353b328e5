#include "handsoff/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "handsoff/errors.hpp"
#include "handsoff/rng.hpp"

namespace handsoff::inversion {
namespace {

constexpr int kScales[] = {1, 2, 4};

/// Average pool of an interleaved (y, x, channel) image by `factor`.
std::vector<double> pool(std::span<const double> img, int width, int height, int factor) {
    const int w = width / factor;
    const int h = height / factor;
    std::vector<double> out(static_cast<std::size_t>(w) * h * 3, 0.0);
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < h * factor; ++y) {
        for (int x = 0; x < w * factor; ++x) {
            const double* p = img.data() + (static_cast<std::size_t>(y) * width + x) * 3;
            double* o = out.data() + (static_cast<std::size_t>(y / factor) * w + x / factor) * 3;
            for (int c = 0; c < 3; ++c) o[c] += p[c] * inv;
        }
    }
    return out;
}

std::vector<double> widen(const RgbImage& img) { return {img.pixels.begin(), img.pixels.end()}; }

void check_same(const RgbImage& a, const RgbImage& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ShapeError("image shapes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height));
    }
}

struct Objective {
    const std::vector<double>& target;
    int width;
    int height;
    const InversionParams& params;
    std::vector<std::vector<double>> target_pools;

    Objective(const std::vector<double>& t, int w, int h, const InversionParams& p)
        : target(t), width(w), height(h), params(p) {
        if (p.perceptual == PerceptualKind::multiscale_l2) {
            for (int s : kScales) target_pools.push_back(pool(target, width, height, s));
        }
    }

    /// Loss, and when `cotangent` is given, d loss / d rendered pixel.
    double operator()(const std::vector<double>& rendered, std::vector<double>* cotangent) const {
        const std::size_t n = rendered.size();
        if (cotangent) cotangent->assign(n, 0.0);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = rendered[i] - target[i];
            loss += d * d;
            if (cotangent) (*cotangent)[i] = 2.0 * params.lambda_l2 * d / static_cast<double>(n);
        }
        loss *= params.lambda_l2 / static_cast<double>(n);
        if (params.perceptual == PerceptualKind::none) return loss;
        for (std::size_t si = 0; si < std::size(kScales); ++si) {
            const int s = kScales[si];
            const auto p = pool(rendered, width, height, s);
            const auto& t = target_pools[si];
            double sum = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] - t[i]) * (p[i] - t[i]);
            loss += sum / static_cast<double>(p.size());
            if (!cotangent) continue;
            const int pw = width / s;
            const double scale = 2.0 / (static_cast<double>(p.size()) * s * s);
            for (int y = 0; y < (height / s) * s; ++y) {
                for (int x = 0; x < pw * s; ++x) {
                    const std::size_t pi = (static_cast<std::size_t>(y / s) * pw + x / s) * 3;
                    double* g = cotangent->data() + (static_cast<std::size_t>(y) * width + x) * 3;
                    for (int c = 0; c < 3; ++c) g[c] += scale * (p[pi + c] - t[pi + c]);
                }
            }
        }
        return loss;
    }
};

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

double mean_squared(std::span<const double> a, std::span<const double> b) {
    return a.empty() ? 0.0 : squared_distance(a, b) / static_cast<double>(a.size());
}

}  // namespace

void InversionParams::validate() const {
    if (!(c_reg > 0.0)) throw ConfigError("c_reg must be positive");
    if (!(lambda_l2 >= 0.0)) throw ConfigError("lambda_l2 must be non-negative");
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (!(step_size > 0.0)) throw ConfigError("step size must be positive");
    if (max_halvings < 0) throw ConfigError("max_halvings must be non-negative");
}

double perceptual_loss(const RgbImage& a, const RgbImage& b) {
    check_same(a, b);
    const auto da = widen(a);
    const auto db = widen(b);
    double loss = 0.0;
    for (int s : kScales) loss += mean_squared(pool(da, a.width, a.height, s), pool(db, b.width, b.height, s));
    return loss;
}

double reconstruction_error(const RgbImage& a, const RgbImage& b) {
    check_same(a, b);
    return mean_squared(widen(a), widen(b));
}

void project_to_ball(std::span<double> w, std::span<const double> center, double c_reg) {
    if (w.size() != center.size()) throw ShapeError("projection operands differ in dimension");
    const double d2 = squared_distance(w, center);
    if (d2 <= c_reg) return;
    const std::vector<double> offset(w.begin(), w.end());
    double scale = std::sqrt(c_reg / d2);
    // Rounding can leave the point a hair outside; shrink until it is not.
    for (;;) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = center[i] + scale * (offset[i] - center[i]);
        if (squared_distance(w, center) <= c_reg) break;
        scale *= 1.0 - 1e-12;
    }
}

std::vector<float> encoder_input(const RgbImage& image) {
    if (image.width % kEncoderPool != 0 || image.height % kEncoderPool != 0) {
        throw ShapeError("encoder input needs image sides divisible by " + std::to_string(kEncoderPool));
    }
    const auto pooled = pool(widen(image), image.width, image.height, image.width / kEncoderPool);
    return {pooled.begin(), pooled.end()};
}

scene::SceneConfig encoder_scene(const scene::SceneConfig& config, const EncoderParams& params) {
    scene::SceneConfig cfg = config;
    if (params.uniform_classes && !cfg.slot_bound_classes && cfg.foreground_classes() >= 2) {
        const double per_object = cfg.presence_prob / cfg.foreground_classes();
        cfg.rare_frequency = 1.0 - std::pow(1.0 - per_object, cfg.slots);
    }
    return cfg;
}

Encoder train_encoder(const scene::SceneConfig& scene_config, const EncoderParams& params) {
    scene_config.validate();
    const auto config = encoder_scene(scene_config, params);
    const std::uint64_t seed = params.seed;
    if (params.pairs == 0) throw InputError("encoder training needs at least one pair");
    const std::size_t in_w = static_cast<std::size_t>(kEncoderPool) * kEncoderPool * 3;
    const std::size_t out_w = config.latent_dim();

    auto make_set = [&](std::string_view tag, std::size_t n, nn::Matrix<float>& x, nn::Matrix<float>& y) {
        x.resize(n, in_w);
        y.resize(n, out_w);
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = make_stream(seed, tag, i);
            const auto w = scene::sample_latent(rng, config);
            const auto in = encoder_input(scene::render_image(w, config));
            std::copy(in.begin(), in.end(), x.row(i));
            for (std::size_t j = 0; j < out_w; ++j) y(i, j) = static_cast<float>(w.values[j]);
        }
    };
    nn::Matrix<float> x, y, vx, vy;
    make_set("encoder-train", params.pairs, x, y);
    make_set("encoder-val", params.validation_pairs, vx, vy);

    Encoder enc;
    enc.net = nn::DenseNet({in_w, params.hidden1, params.hidden2, out_w}, stream_seed(seed, "encoder-init"));
    Rng rng = make_stream(seed, "encoder-fit");
    nn::fit(enc.net, x, nn::Targets<float>::of_values(y), params.fit, rng);
    enc.training_mse = nn::evaluate_loss(enc.net, x, nn::Targets<float>::of_values(y));
    if (params.validation_pairs > 0) {
        enc.validation_mse = nn::evaluate_loss(enc.net, vx, nn::Targets<float>::of_values(vy));
        nn::Matrix<float> mean(vy.rows(), out_w);
        std::vector<double> mu(out_w, 0.0);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            for (std::size_t j = 0; j < out_w; ++j) mu[j] += y(i, j);
        }
        for (std::size_t i = 0; i < mean.rows(); ++i) {
            for (std::size_t j = 0; j < out_w; ++j) mean(i, j) = static_cast<float>(mu[j] / static_cast<double>(y.rows()));
        }
        enc.mean_predictor_mse = nn::detail::output_delta(mean, nn::Targets<float>::of_values(vy), nullptr);
    }
    return enc;
}

scene::Latent encode(const nn::DenseNet& encoder, const RgbImage& image, const scene::SceneConfig& config) {
    const auto in = encoder_input(image);
    nn::Matrix<float> x(1, in.size());
    std::copy(in.begin(), in.end(), x.row(0));
    const auto out = nn::forward(encoder, x);
    if (out.cols() != config.latent_dim()) throw ShapeError("encoder output width does not match the latent dimension");
    scene::Latent w;
    w.values.resize(out.cols());
    for (std::size_t j = 0; j < out.cols(); ++j) {
        w.values[j] = std::clamp(static_cast<double>(out(0, j)), -scene::kLatentRange, scene::kLatentRange);
    }
    return w;
}

InversionResult refine(const RgbImage& image, const scene::Latent& w_e, const InversionParams& params,
                       const scene::SceneConfig& config) {
    params.validate();
    config.validate();
    if (w_e.values.size() != config.latent_dim()) throw ShapeError("initial latent does not match the scene config");
    if (image.width != config.resolution || image.height != config.resolution) {
        throw ShapeError("image resolution does not match the scene config");
    }
    const auto target = widen(image);
    const Objective objective(target, image.width, image.height, params);

    InversionResult result;
    result.initial = w_e;
    result.latent = w_e;
    auto rendered = scene::render_image_exact(w_e, config);
    double loss = objective(rendered, nullptr);
    result.initial_reconstruction_error = mean_squared(rendered, target);
    result.trajectory.reserve(static_cast<std::size_t>(params.iterations) + 1);
    result.trajectory.push_back(loss);
    result.ball_distances.reserve(result.trajectory.capacity());
    result.ball_distances.push_back(0.0);
    if (!std::isfinite(loss)) throw NumericError("non-finite inversion loss at iteration 0");

    std::vector<double> cotangent;
    scene::Latent trial;
    for (int it = 1; it <= params.iterations; ++it) {
        objective(rendered, &cotangent);
        const auto grad = scene::render_gradient(result.latent, config, cotangent);
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (!std::isfinite(norm)) throw NumericError("non-finite inversion gradient at iteration " + std::to_string(it));
        if (norm > 0.0) {
            double step = params.step_size;
            for (int h = 0; h <= params.max_halvings; ++h, step *= 0.5) {
                trial = result.latent;
                for (std::size_t i = 0; i < grad.size(); ++i) trial.values[i] -= step * grad[i] / norm;
                project_to_ball(trial.values, w_e.values, params.c_reg);
                auto trial_render = scene::render_image_exact(trial, config);
                const double trial_loss = objective(trial_render, nullptr);
                if (!std::isfinite(trial_loss)) {
                    throw NumericError("non-finite inversion loss at iteration " + std::to_string(it));
                }
                if (trial_loss < loss) {
                    result.latent = trial;
                    rendered = std::move(trial_render);
                    loss = trial_loss;
                    break;
                }
            }
        }
        result.trajectory.push_back(loss);
        double d2 = 0.0;
        for (std::size_t i = 0; i < w_e.values.size(); ++i) {
            const double d = result.latent.values[i] - w_e.values[i];
            d2 += d * d;
        }
        result.ball_distances.push_back(d2);
    }
    result.reconstruction_error = mean_squared(rendered, target);
    return result;
}

}  // namespace handsoff::inversion
