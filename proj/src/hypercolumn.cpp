#include "handsoff/hypercolumn.hpp"

#include <algorithm>
#include <charconv>
#include <string>

#include "handsoff/errors.hpp"
#include "handsoff/hoff.hpp"

namespace handsoff::hypercolumn {
namespace {

int kept_channels(int channels, const std::optional<ChannelCaps>& caps, std::size_t block) {
    if (!caps) return channels;
    const int cap = (*caps)[block];
    return cap < 0 ? channels : std::min(channels, cap);
}

void check_caps(std::size_t blocks, const std::optional<ChannelCaps>& caps) {
    if (caps && caps->size() != blocks) {
        throw ShapeError("channel caps list has " + std::to_string(caps->size()) + " entries for " +
                         std::to_string(blocks) + " blocks");
    }
}

/// Source sample positions for one axis of a corner-aligned upsample. Integer
/// arithmetic keeps grid-aligned targets exactly on source samples.
struct Tap {
    int lo = 0;
    int hi = 0;
    double t = 0.0;
};

Tap upsample_tap(int i, int src, int dst) {
    Tap tap;
    if (dst == 1 || src == 1) return tap;
    const long num = static_cast<long>(i) * (src - 1);
    tap.lo = static_cast<int>(num / (dst - 1));
    const long rem = num % (dst - 1);
    tap.hi = std::min(tap.lo + 1, src - 1);
    tap.t = static_cast<double>(rem) / (dst - 1);
    return tap;
}

/// Writes `kept` channels of grid g at target pixel (x, y) into out.
void sample(const scene::FeatureGrid& g, int target_res, int x, int y, int kept, float* out) {
    const int r = g.resolution;
    if (r == target_res) {
        for (int c = 0; c < kept; ++c) out[c] = g.at(y, x, c);
        return;
    }
    if (r > target_res) {
        const int f = r / target_res;
        const double inv = 1.0 / (f * f);
        for (int c = 0; c < kept; ++c) {
            double s = 0.0;
            for (int dy = 0; dy < f; ++dy) {
                for (int dx = 0; dx < f; ++dx) s += g.at(y * f + dy, x * f + dx, c);
            }
            out[c] = static_cast<float>(s * inv);
        }
        return;
    }
    const Tap ty = upsample_tap(y, r, target_res);
    const Tap tx = upsample_tap(x, r, target_res);
    for (int c = 0; c < kept; ++c) {
        const double a = g.at(ty.lo, tx.lo, c);
        const double b = g.at(ty.lo, tx.hi, c);
        const double d = g.at(ty.hi, tx.lo, c);
        const double e = g.at(ty.hi, tx.hi, c);
        const double top = (1.0 - tx.t) * a + tx.t * b;
        const double bottom = (1.0 - tx.t) * d + tx.t * e;
        out[c] = static_cast<float>((1.0 - ty.t) * top + ty.t * bottom);
    }
}

void check_block(const scene::FeatureGrid& g, int target_res) {
    if (g.resolution <= 0 || g.values.size() != static_cast<std::size_t>(g.resolution) * g.resolution * g.channels) {
        throw ShapeError("feature grid storage does not match its shape");
    }
    if (g.resolution > target_res && g.resolution % target_res != 0) {
        throw ShapeError("block resolution " + std::to_string(g.resolution) + " is not a multiple of target " +
                         std::to_string(target_res));
    }
}

}  // namespace

std::size_t hypercolumn_dim(std::span<const int> block_channels, const std::optional<ChannelCaps>& caps) {
    check_caps(block_channels.size(), caps);
    std::size_t total = 0;
    for (std::size_t l = 0; l < block_channels.size(); ++l) {
        total += static_cast<std::size_t>(kept_channels(block_channels[l], caps, l));
    }
    return total;
}

ChannelCaps drop_low_resolution(std::span<const int> block_resolutions, int min_resolution) {
    ChannelCaps caps;
    for (int r : block_resolutions) caps.push_back(r < min_resolution ? 0 : -1);
    return caps;
}

ChannelCaps parse_caps(std::string_view text) {
    ChannelCaps caps;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        std::string_view item = text.substr(start, comma - start);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        int v = 0;
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
            throw ConfigError("channel caps must be comma-separated integers, got '" + std::string(text) + "'");
        }
        caps.push_back(v);
        start = comma + 1;
    }
    return caps;
}

HypercolumnField build(const scene::FeatureStack& features, int target_res, const std::optional<ChannelCaps>& caps) {
    if (target_res <= 0) throw ShapeError("target resolution must be positive");
    const std::size_t blocks = features.blocks.size();
    check_caps(blocks, caps);
    HypercolumnField field;
    field.resolution = target_res;
    int offset = 0;
    std::vector<int> kept(blocks);
    for (std::size_t l = 0; l < blocks; ++l) {
        check_block(features.blocks[l], target_res);
        field.block_offsets.push_back(offset);
        kept[l] = kept_channels(features.blocks[l].channels, caps, l);
        offset += kept[l];
    }
    const auto pixels = static_cast<std::size_t>(target_res) * target_res;
    field.values = nn::Matrix<float>(pixels, static_cast<std::size_t>(offset));
    for (std::size_t l = 0; l < blocks; ++l) {
        if (kept[l] == 0) continue;
        for (int y = 0; y < target_res; ++y) {
            for (int x = 0; x < target_res; ++x) {
                float* row = field.values.row(static_cast<std::size_t>(y) * target_res + x);
                sample(features.blocks[l], target_res, x, y, kept[l], row + field.block_offsets[l]);
            }
        }
    }
    return field;
}

std::vector<float> pixel(const HypercolumnField& field, int x, int y) {
    if (x < 0 || y < 0 || x >= field.resolution || y >= field.resolution) {
        throw InputError("pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") outside a " +
                         std::to_string(field.resolution) + "x" + std::to_string(field.resolution) + " field");
    }
    const auto s = field.pixel_span(x, y);
    return {s.begin(), s.end()};
}

std::vector<float> pixel_on_demand(const scene::FeatureStack& features, int target_res, int x, int y,
                                   const std::optional<ChannelCaps>& caps) {
    if (x < 0 || y < 0 || x >= target_res || y >= target_res) throw InputError("pixel outside the target grid");
    check_caps(features.blocks.size(), caps);
    std::vector<float> out;
    for (std::size_t l = 0; l < features.blocks.size(); ++l) {
        const auto& g = features.blocks[l];
        check_block(g, target_res);
        const int kept = kept_channels(g.channels, caps, l);
        const std::size_t start = out.size();
        out.resize(start + static_cast<std::size_t>(kept));
        if (kept > 0) sample(g, target_res, x, y, kept, out.data() + start);
    }
    return out;
}

void save_field(const std::filesystem::path& path, const HypercolumnField& field) {
    const auto r = static_cast<std::uint32_t>(field.resolution);
    hoff::write(path, hoff::Tensor::of_floats({r, r, static_cast<std::uint32_t>(field.channels())}, field.values.values()));
}

HypercolumnField load_field(const std::filesystem::path& path) {
    const auto t = hoff::read(path);
    if (t.dtype != hoff::DType::f32 || t.dims.size() != 3 || t.dims[0] != t.dims[1]) {
        throw IoError(path.string() + " is not an [R, R, C] f32 field");
    }
    HypercolumnField field;
    field.resolution = static_cast<int>(t.dims[0]);
    field.values = nn::Matrix<float>(static_cast<std::size_t>(t.dims[0]) * t.dims[1], t.dims[2]);
    field.values.values() = t.f32;
    return field;
}

}  // namespace handsoff::hypercolumn
