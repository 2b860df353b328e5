#include "handsoff/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "handsoff/errors.hpp"

namespace handsoff::scene {
namespace {

constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.90, 0.10, 0.10},
    {0.10, 0.80, 0.15},
    {0.10, 0.20, 0.90},
    {0.95, 0.85, 0.10},
    {0.85, 0.10, 0.85},
    {0.10, 0.85, 0.85},
    {1.00, 0.50, 0.00},
    {0.97, 0.97, 0.97},
}};

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

int grid_side(int slots) {
    int g = 1;
    while (g * g < slots) ++g;
    return g;
}

struct SlotState {
    double presence = 0.0;  // soft presence weight
    double dpresence = 0.0; // d presence / d logit
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;
    double z = 0.0;
    double depth = 0.0;
    std::array<double, 3> color{};
    std::vector<double> membership;   // per foreground class
    std::vector<double> dmembership;  // d membership / d class offset
};

struct SceneState {
    int slots = 0;
    double cell = 0.0;
    std::vector<SlotState> slot;
    std::vector<double> front;  // front[j * K + k]: soft indicator that slot j lies in front of slot k
    double background = 0.5;
    double dbackground_dz = 0.0;  // same for every slot
};

void check_latent(const Latent& latent, const SceneConfig& config) {
    if (latent.values.size() != config.latent_dim()) {
        throw ShapeError("latent has dimension " + std::to_string(latent.values.size()) + ", scene expects " +
                         std::to_string(config.latent_dim()));
    }
}

double class_boundary(int foreground_index, const SceneConfig& config) {
    const double width = 2.0 * kLatentRange / config.foreground_classes();
    return -kLatentRange + foreground_index * width;
}

SceneState prepare(const Latent& latent, const SceneConfig& config) {
    check_latent(latent, config);
    const int K = config.slots;
    const int F = config.foreground_classes();
    const int g = grid_side(K);
    SceneState s;
    s.slots = K;
    s.cell = static_cast<double>(config.resolution) / g;
    s.slot.resize(static_cast<std::size_t>(K));
    double zsum = 0.0;
    for (int k = 0; k < K; ++k) {
        SlotState& st = s.slot[static_cast<std::size_t>(k)];
        st.presence = sigmoid(kPresenceSlope * latent.at(k, kPresence));
        st.dpresence = kPresenceSlope * st.presence * (1.0 - st.presence);
        const double ax = (k % g + 0.5) * s.cell - 0.5;
        const double ay = (k / g + 0.5) * s.cell - 0.5;
        st.cx = ax + latent.at(k, kCenterX) * s.cell / 8.0;
        st.cy = ay + latent.at(k, kCenterY) * s.cell / 8.0;
        st.radius = config.base_radius * config.resolution * std::exp(kRadiusScale * latent.at(k, kLogRadius));
        st.z = latent.at(k, kDepth);
        st.depth = depth_of(st.z);
        zsum += st.z;

        const double b = latent.at(k, kClassOffset);
        st.membership.assign(static_cast<std::size_t>(F), 0.0);
        st.dmembership.assign(static_cast<std::size_t>(F), 0.0);
        for (int f = 0; f < F; ++f) {
            double lo = 1.0, dlo = 0.0, hi = 0.0, dhi = 0.0;
            if (f > 0) {
                lo = sigmoid((b - class_boundary(f, config)) / kClassSoftness);
                dlo = lo * (1.0 - lo) / kClassSoftness;
            }
            if (f < F - 1) {
                hi = sigmoid((b - class_boundary(f + 1, config)) / kClassSoftness);
                dhi = hi * (1.0 - hi) / kClassSoftness;
            }
            st.membership[static_cast<std::size_t>(f)] = lo - hi;
            st.dmembership[static_cast<std::size_t>(f)] = dlo - dhi;
            const auto& pal = class_color(f + 1);
            for (int c = 0; c < 3; ++c) st.color[static_cast<std::size_t>(c)] += (lo - hi) * pal[static_cast<std::size_t>(c)];
        }
    }
    s.front.assign(static_cast<std::size_t>(K * K), 0.0);
    for (int j = 0; j < K; ++j) {
        for (int k = 0; k < K; ++k) {
            if (j == k) continue;
            s.front[static_cast<std::size_t>(j * K + k)] =
                sigmoid((s.slot[static_cast<std::size_t>(k)].z - s.slot[static_cast<std::size_t>(j)].z) / kDepthSoftness);
        }
    }
    const double t = std::tanh(zsum / K);
    s.background = 0.5 + 0.15 * t;
    s.dbackground_dz = 0.15 * (1.0 - t * t) / K;
    return s;
}

/// Soft composition at one canvas point. Buffers are sized by the caller.
struct PixelEval {
    std::vector<double> dx, dy, dist, edge, alpha, transmit, weight;
    double background_weight = 0.0;
    double total = 0.0;

    explicit PixelEval(int K)
        : dx(K), dy(K), dist(K), edge(K), alpha(K), transmit(K), weight(K) {}

    void evaluate(const SceneState& s, double px, double py, double tau) {
        const int K = s.slots;
        for (int k = 0; k < K; ++k) {
            const SlotState& st = s.slot[static_cast<std::size_t>(k)];
            dx[k] = px - st.cx;
            dy[k] = py - st.cy;
            dist[k] = std::sqrt(dx[k] * dx[k] + dy[k] * dy[k]);
            edge[k] = sigmoid(kEdgeSharpness * (st.radius - dist[k]) / tau);
            alpha[k] = st.presence * edge[k];
        }
        background_weight = 1.0;
        total = 0.0;
        for (int k = 0; k < K; ++k) {
            double t = 1.0;
            for (int j = 0; j < K; ++j) {
                if (j != k) t *= 1.0 - alpha[j] * s.front[static_cast<std::size_t>(j * K + k)];
            }
            transmit[k] = t;
            weight[k] = alpha[k] * t;
            total += weight[k];
            background_weight *= 1.0 - alpha[k];
        }
        total += background_weight;
    }

    std::array<double, 3> color(const SceneState& s) const {
        std::array<double, 3> c{};
        for (int ch = 0; ch < 3; ++ch) {
            double n = background_weight * s.background;
            for (int k = 0; k < s.slots; ++k) n += weight[k] * s.slot[static_cast<std::size_t>(k)].color[ch];
            c[ch] = n / total;
        }
        return c;
    }
};

struct Adjoints {
    std::vector<double> presence, radius, cx, cy;
    std::vector<std::array<double, 3>> color;
    std::vector<double> front;
    double background = 0.0;

    explicit Adjoints(int K)
        : presence(K), radius(K), cx(K), cy(K), color(K), front(static_cast<std::size_t>(K * K)) {}
};

/// Reverse pass of PixelEval::color for one pixel.
void accumulate_pixel(const SceneState& s, const PixelEval& e, const std::array<double, 3>& color,
                      const double* cot, double tau, Adjoints& adj, std::vector<double>& alpha_bar,
                      std::vector<double>& transmit_bar) {
    const int K = s.slots;
    const double inv_total = 1.0 / e.total;
    double bg_dot = 0.0;
    for (int ch = 0; ch < 3; ++ch) bg_dot += cot[ch] * (s.background - color[ch]);
    const double wb_bar = bg_dot * inv_total;
    adj.background += (cot[0] + cot[1] + cot[2]) * e.background_weight * inv_total;

    for (int k = 0; k < K; ++k) {
        const SlotState& st = s.slot[static_cast<std::size_t>(k)];
        double dot = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            dot += cot[ch] * (st.color[ch] - color[ch]);
            adj.color[k][ch] += cot[ch] * e.weight[k] * inv_total;
        }
        const double w_bar = dot * inv_total;
        alpha_bar[k] = w_bar * e.transmit[k];
        transmit_bar[k] = w_bar * e.alpha[k];
    }
    // Transmittance products.
    for (int k = 0; k < K; ++k) {
        if (transmit_bar[k] == 0.0) continue;
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            double others = 1.0;
            for (int i = 0; i < K; ++i) {
                if (i != k && i != j) others *= 1.0 - e.alpha[i] * s.front[static_cast<std::size_t>(i * K + k)];
            }
            const double f_bar = transmit_bar[k] * others;
            const std::size_t jk = static_cast<std::size_t>(j * K + k);
            alpha_bar[j] -= f_bar * s.front[jk];
            adj.front[jk] -= f_bar * e.alpha[j];
        }
    }
    // Background weight product.
    for (int j = 0; j < K; ++j) {
        double others = 1.0;
        for (int i = 0; i < K; ++i) {
            if (i != j) others *= 1.0 - e.alpha[i];
        }
        alpha_bar[j] -= wb_bar * others;
    }
    for (int k = 0; k < K; ++k) {
        const SlotState& st = s.slot[static_cast<std::size_t>(k)];
        adj.presence[k] += alpha_bar[k] * e.edge[k];
        const double edge_bar = alpha_bar[k] * st.presence;
        const double u_bar = edge_bar * e.edge[k] * (1.0 - e.edge[k]) * kEdgeSharpness / tau;
        adj.radius[k] += u_bar;
        if (e.dist[k] > 0.0) {
            adj.cx[k] += u_bar * e.dx[k] / e.dist[k];
            adj.cy[k] += u_bar * e.dy[k] / e.dist[k];
        }
    }
}

FeatureGrid render_block(const SceneState& s, const SceneConfig& config, int res) {
    const int K = s.slots;
    const int P = config.classes;
    const int F = config.foreground_classes();
    const double scale = static_cast<double>(config.resolution) / res;
    const double tau = config.tau * scale;
    const double margin_scale = config.resolution / 8.0;
    FeatureGrid grid;
    grid.resolution = res;
    grid.channels = config.channels_per_block();
    grid.values.assign(static_cast<std::size_t>(res) * res * grid.channels, 0.0f);
    PixelEval e(K);
    std::vector<double> ch(static_cast<std::size_t>(grid.channels));
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            e.evaluate(s, (x + 0.5) * scale - 0.5, (y + 0.5) * scale - 0.5, tau);
            std::fill(ch.begin(), ch.end(), 0.0);
            const double inv = 1.0 / e.total;
            const double wb = e.background_weight * inv;
            ch[0] = wb;
            double depth = wb * config.far_depth;
            for (int k = 0; k < K; ++k) {
                const SlotState& st = s.slot[static_cast<std::size_t>(k)];
                const double w = e.weight[k] * inv;
                for (int f = 0; f < F; ++f) ch[static_cast<std::size_t>(f + 1)] += w * st.membership[static_cast<std::size_t>(f)];
                ch[static_cast<std::size_t>(P)] += w * std::tanh((st.radius - e.dist[k]) / margin_scale);
                depth += w * st.depth;
                const double half = 0.5 * st.radius;
                ch[static_cast<std::size_t>(P + 2)] += w * std::exp(-e.dist[k] * e.dist[k] / (2.0 * half * half));
            }
            ch[static_cast<std::size_t>(P + 1)] = depth / config.far_depth;
            float* out = grid.values.data() + (static_cast<std::size_t>(y) * res + x) * grid.channels;
            for (int c = 0; c < grid.channels; ++c) out[c] = static_cast<float>(ch[static_cast<std::size_t>(c)]);
        }
    }
    return grid;
}

}  // namespace

void SceneConfig::validate() const {
    if (resolution < 16 || (resolution & (resolution - 1)) != 0) {
        throw ConfigError("scene resolution must be a power of two >= 16, got " + std::to_string(resolution));
    }
    if (slots < 1 || slots > 16) throw ConfigError("scene slots must be in [1, 16]");
    if (classes < 2 || classes > static_cast<int>(kPalette.size()) + 1) {
        throw ConfigError("scene classes must be in [2, " + std::to_string(kPalette.size() + 1) + "]");
    }
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(rare_frequency > 0.0 && rare_frequency < 1.0)) throw ConfigError("rare frequency must lie in (0, 1)");
    const int rare = effective_rare_class();
    if (rare < 1 || rare >= classes) throw ConfigError("rare class must be a foreground class");
    if (!(presence_prob > 0.0 && presence_prob <= 1.0)) throw ConfigError("presence probability must lie in (0, 1]");
    if (!(base_radius > 0.0)) throw ConfigError("base radius must be positive");
    if (!(far_depth > 0.0)) throw ConfigError("far depth must be positive");
}

int SceneConfig::block_count() const {
    int l = 0;
    for (int r = 4; r <= resolution; r *= 2) ++l;
    return l;
}

std::vector<int> SceneConfig::block_resolutions() const {
    std::vector<int> out;
    for (int r = 4; r <= resolution; r *= 2) out.push_back(r);
    return out;
}

std::vector<int> SceneConfig::block_channels() const {
    return std::vector<int>(static_cast<std::size_t>(block_count()), channels_per_block());
}

std::array<double, 3> class_color(int cls) {
    if (cls < 1 || cls > static_cast<int>(kPalette.size())) {
        throw InputError("no palette colour for class " + std::to_string(cls));
    }
    return kPalette[static_cast<std::size_t>(cls - 1)];
}

int class_of_offset(double offset, const SceneConfig& config) {
    const int F = config.foreground_classes();
    const double width = 2.0 * kLatentRange / F;
    const int f = static_cast<int>(std::floor((offset + kLatentRange) / width));
    return 1 + std::clamp(f, 0, F - 1);
}

double depth_of(double z) { return 20.0 + 6.0 * z; }

double background_shade(const Latent& latent, const SceneConfig& config) {
    check_latent(latent, config);
    double zsum = 0.0;
    for (int k = 0; k < config.slots; ++k) zsum += latent.at(k, kDepth);
    return 0.5 + 0.15 * std::tanh(zsum / config.slots);
}

namespace {

Latent sample_natural(Rng& rng, const SceneConfig& config) {
    const int K = config.slots;
    const int F = config.foreground_classes();
    const int rare = config.effective_rare_class();
    // Per-object rare probability giving the configured scene-level frequency.
    const double rare_per_object =
        std::min(1.0, (1.0 - std::pow(1.0 - config.rare_frequency, 1.0 / K)) / config.presence_prob);
    Latent w;
    w.values.assign(config.latent_dim(), 0.0);
    std::vector<int> order(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), 0);
    for (int i = K; i > 1; --i) std::swap(order[static_cast<std::size_t>(i - 1)], order[uniform_index(rng, static_cast<std::uint64_t>(i))]);
    for (int k = 0; k < K; ++k) {
        const bool present = bernoulli(rng, config.presence_prob);
        w.at(k, kPresence) = (present ? 1.0 : -1.0) * uniform(rng, 1.0, 3.0);
        int cls;
        if (config.slot_bound_classes) {
            cls = 1 + k % F;
        } else if (F >= 2) {
            if (bernoulli(rng, rare_per_object)) {
                cls = rare;
            } else {
                cls = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(F - 1)));
                if (cls >= rare) ++cls;
            }
        } else {
            cls = 1;
        }
        const double width = 2.0 * kLatentRange / F;
        w.at(k, kClassOffset) = class_boundary(cls - 1, config) + width * uniform(rng, 0.2, 0.8);
        w.at(k, kCenterX) = uniform(rng, -2.0, 2.0);
        w.at(k, kCenterY) = uniform(rng, -2.0, 2.0);
        w.at(k, kLogRadius) = uniform(rng, -1.0, 1.0);
        // Stratified depths keep every pair of objects at least 0.3 strata apart.
        const double stratum = 2.0 * 2.5 / K;
        w.at(k, kDepth) = -2.5 + stratum * (order[static_cast<std::size_t>(k)] + uniform(rng, 0.15, 0.85));
    }
    return w;
}

}  // namespace

Latent sample_latent(Rng& rng, const SceneConfig& config, std::optional<double> rare_bias) {
    config.validate();
    if (!rare_bias) return sample_natural(rng, config);
    if (!(*rare_bias >= 0.0 && *rare_bias <= 1.0)) throw InputError("rare bias must lie in [0, 1]");
    const bool want = bernoulli(rng, *rare_bias);
    const int rare = config.effective_rare_class();
    int hits = 0;
    for (int draw = 1; draw <= kRejectionBudget; ++draw) {
        Latent w = sample_natural(rng, config);
        const bool has = oracle_labels(w, config).presence[static_cast<std::size_t>(rare)];
        hits += has ? 1 : 0;
        if (has == want) return w;
    }
    throw InputError("rejection budget of " + std::to_string(kRejectionBudget) + " draws exhausted; rare class " +
                     std::to_string(rare) + " observed in " +
                     std::to_string(static_cast<double>(hits) / kRejectionBudget) + " of draws, requested " +
                     (want ? "present" : "absent"));
}

std::vector<double> render_image_exact(const Latent& latent, const SceneConfig& config) {
    const SceneState s = prepare(latent, config);
    const int R = config.resolution;
    std::vector<double> out(static_cast<std::size_t>(R) * R * 3);
    PixelEval e(s.slots);
    for (int y = 0; y < R; ++y) {
        for (int x = 0; x < R; ++x) {
            e.evaluate(s, x, y, config.tau);
            const auto c = e.color(s);
            std::copy(c.begin(), c.end(), out.begin() + (static_cast<std::ptrdiff_t>(y) * R + x) * 3);
        }
    }
    return out;
}

RgbImage render_image(const Latent& latent, const SceneConfig& config) {
    const auto exact = render_image_exact(latent, config);
    RgbImage img(config.resolution, config.resolution);
    for (std::size_t i = 0; i < exact.size(); ++i) img.pixels[i] = static_cast<float>(exact[i]);
    return img;
}

Rendered render(const Latent& latent, const SceneConfig& config) {
    Rendered out;
    out.image = render_image(latent, config);
    const SceneState s = prepare(latent, config);
    for (int res : config.block_resolutions()) out.features.blocks.push_back(render_block(s, config, res));
    return out;
}

std::vector<double> render_gradient(const Latent& latent, const SceneConfig& config,
                                    std::span<const double> pixel_cotangent) {
    const SceneState s = prepare(latent, config);
    const int R = config.resolution;
    const int K = s.slots;
    if (pixel_cotangent.size() != static_cast<std::size_t>(R) * R * 3) {
        throw ShapeError("pixel cotangent has " + std::to_string(pixel_cotangent.size()) + " values, expected " +
                         std::to_string(R * R * 3));
    }
    Adjoints adj(K);
    PixelEval e(K);
    std::vector<double> alpha_bar(static_cast<std::size_t>(K)), transmit_bar(static_cast<std::size_t>(K));
    for (int y = 0; y < R; ++y) {
        for (int x = 0; x < R; ++x) {
            const double* cot = pixel_cotangent.data() + (static_cast<std::size_t>(y) * R + x) * 3;
            if (cot[0] == 0.0 && cot[1] == 0.0 && cot[2] == 0.0) continue;
            e.evaluate(s, x, y, config.tau);
            accumulate_pixel(s, e, e.color(s), cot, config.tau, adj, alpha_bar, transmit_bar);
        }
    }

    std::vector<double> grad(config.latent_dim(), 0.0);
    const int F = config.foreground_classes();
    for (int k = 0; k < K; ++k) {
        const SlotState& st = s.slot[static_cast<std::size_t>(k)];
        const std::size_t base = static_cast<std::size_t>(k) * kSlotParams;
        grad[base + kPresence] = adj.presence[k] * st.dpresence;
        double db = 0.0;
        for (int f = 0; f < F; ++f) {
            const auto pal = class_color(f + 1);
            double dot = 0.0;
            for (int ch = 0; ch < 3; ++ch) dot += adj.color[k][ch] * pal[ch];
            db += dot * st.dmembership[static_cast<std::size_t>(f)];
        }
        grad[base + kClassOffset] = db;
        grad[base + kCenterX] = adj.cx[k] * s.cell / 8.0;
        grad[base + kCenterY] = adj.cy[k] * s.cell / 8.0;
        grad[base + kLogRadius] = adj.radius[k] * kRadiusScale * st.radius;
        double dz = adj.background * s.dbackground_dz;
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            const double s_jk = s.front[static_cast<std::size_t>(j * K + k)];
            const double s_kj = s.front[static_cast<std::size_t>(k * K + j)];
            dz += adj.front[static_cast<std::size_t>(j * K + k)] * s_jk * (1.0 - s_jk) / kDepthSoftness;
            dz -= adj.front[static_cast<std::size_t>(k * K + j)] * s_kj * (1.0 - s_kj) / kDepthSoftness;
        }
        grad[base + kDepth] = dz;
    }
    return grad;
}

OracleLabels oracle_labels(const Latent& latent, const SceneConfig& config) {
    const SceneState s = prepare(latent, config);
    const int R = config.resolution;
    const int K = s.slots;
    OracleLabels out;
    out.resolution = R;
    out.segmentation.assign(static_cast<std::size_t>(R) * R, 0);
    out.depth.assign(static_cast<std::size_t>(R) * R, static_cast<float>(config.far_depth));
    out.presence.assign(static_cast<std::size_t>(config.classes), false);

    std::vector<int> cls(static_cast<std::size_t>(K));
    std::vector<bool> present(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        cls[static_cast<std::size_t>(k)] = class_of_offset(latent.at(k, kClassOffset), config);
        present[static_cast<std::size_t>(k)] = latent.at(k, kPresence) > 0.0;
    }
    std::vector<int> covered(static_cast<std::size_t>(K), 0), won(static_cast<std::size_t>(K), 0);
    for (int y = 0; y < R; ++y) {
        for (int x = 0; x < R; ++x) {
            int winner = -1;
            for (int k = 0; k < K; ++k) {
                if (!present[static_cast<std::size_t>(k)]) continue;
                const SlotState& st = s.slot[static_cast<std::size_t>(k)];
                const double dx = x - st.cx;
                const double dy = y - st.cy;
                if (std::sqrt(dx * dx + dy * dy) >= st.radius) continue;
                ++covered[static_cast<std::size_t>(k)];
                if (winner < 0 || st.z < s.slot[static_cast<std::size_t>(winner)].z) winner = k;
            }
            const std::size_t idx = static_cast<std::size_t>(y) * R + x;
            if (winner >= 0) {
                ++won[static_cast<std::size_t>(winner)];
                out.segmentation[idx] = static_cast<std::uint8_t>(cls[static_cast<std::size_t>(winner)]);
                out.depth[idx] = static_cast<float>(s.slot[static_cast<std::size_t>(winner)].depth);
            }
            out.presence[out.segmentation[idx]] = true;
        }
    }
    for (int k = 0; k < K; ++k) {
        const SlotState& st = s.slot[static_cast<std::size_t>(k)];
        Keypoint kp;
        kp.x = st.cx;
        kp.y = st.cy;
        const int n = covered[static_cast<std::size_t>(k)];
        const bool inside = st.cx >= 0.0 && st.cx <= R - 1 && st.cy >= 0.0 && st.cy <= R - 1;
        kp.visible = present[static_cast<std::size_t>(k)] && n > 0 && inside &&
                     4 * won[static_cast<std::size_t>(k)] >= n;
        out.keypoints.push_back(kp);
    }
    return out;
}

}  // namespace handsoff::scene
