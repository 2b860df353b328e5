#include "handsoff/label_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "handsoff/errors.hpp"
#include "handsoff/hoff.hpp"
#include "handsoff/labels.hpp"

namespace handsoff {

std::string to_string(TaskKind task) {
    switch (task) {
        case TaskKind::segmentation: return "segmentation";
        case TaskKind::keypoints: return "keypoints";
        case TaskKind::depth: return "depth";
    }
    return "unknown";
}

TaskKind parse_task(std::string_view name) {
    if (name == "segmentation") return TaskKind::segmentation;
    if (name == "keypoints") return TaskKind::keypoints;
    if (name == "depth") return TaskKind::depth;
    throw ConfigError("unknown task '" + std::string(name) + "' (expected segmentation, keypoints or depth)");
}

void save_label(const std::filesystem::path& path, const LabelPlane& label) {
    const auto r = static_cast<std::uint32_t>(label.resolution);
    if (label.task == TaskKind::segmentation) {
        hoff::write(path, hoff::Tensor::of_bytes({r, r}, label.classes));
    } else {
        hoff::write(path, hoff::Tensor::of_floats({static_cast<std::uint32_t>(label.channels), r, r}, label.values));
    }
}

LabelPlane load_label(const std::filesystem::path& path, TaskKind task) {
    const hoff::Tensor t = hoff::read(path);
    LabelPlane label;
    label.task = task;
    if (task == TaskKind::segmentation) {
        if (t.dtype != hoff::DType::u8 || t.dims.size() != 2 || t.dims[0] != t.dims[1]) {
            throw IoError(path.string() + " is not a square u8 segmentation tensor");
        }
        label.resolution = static_cast<int>(t.dims[0]);
        label.classes = t.u8;
    } else {
        if (t.dtype != hoff::DType::f32 || t.dims.size() != 3 || t.dims[1] != t.dims[2]) {
            throw IoError(path.string() + " is not a [channels, R, R] f32 label tensor");
        }
        label.channels = static_cast<int>(t.dims[0]);
        label.resolution = static_cast<int>(t.dims[1]);
        label.values = t.f32;
    }
    return label;
}

}  // namespace handsoff

namespace handsoff::codec {

CollapseMap CollapseMap::identity(int classes) {
    std::vector<int> t(static_cast<std::size_t>(classes));
    for (int i = 0; i < classes; ++i) t[static_cast<std::size_t>(i)] = i;
    return from_targets(std::move(t));
}

CollapseMap CollapseMap::from_targets(std::vector<int> targets) {
    if (targets.empty()) throw InputError("collapse map is empty");
    CollapseMap m;
    int max_target = -1;
    for (int t : targets) {
        if (t < 0) throw InputError("collapse map has a negative target class");
        max_target = std::max(max_target, t);
    }
    std::vector<bool> hit(static_cast<std::size_t>(max_target + 1), false);
    for (int t : targets) hit[static_cast<std::size_t>(t)] = true;
    for (int t = 0; t <= max_target; ++t) {
        if (!hit[static_cast<std::size_t>(t)]) {
            throw InputError("collapse map leaves target class " + std::to_string(t) + " without a source");
        }
    }
    m.targets_ = std::move(targets);
    m.target_classes_ = max_target + 1;
    return m;
}

CollapseMap CollapseMap::parse(std::string_view text) {
    std::map<int, int> pairs;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InputError("collapse map line " + std::to_string(line_no) + ": expected src=tgt");
        try {
            const int src = std::stoi(line.substr(0, eq));
            const int tgt = std::stoi(line.substr(eq + 1));
            if (src < 0) throw InputError("negative source class");
            if (!pairs.emplace(src, tgt).second) {
                throw InputError("collapse map line " + std::to_string(line_no) + ": source " + std::to_string(src) +
                                 " mapped twice");
            }
        } catch (const std::logic_error&) {
            throw InputError("collapse map line " + std::to_string(line_no) + ": expected integers");
        }
    }
    if (pairs.empty()) throw InputError("collapse map is empty");
    const int sources = pairs.rbegin()->first + 1;
    std::vector<int> targets(static_cast<std::size_t>(sources), -1);
    for (auto [s, t] : pairs) targets[static_cast<std::size_t>(s)] = t;
    for (int s = 0; s < sources; ++s) {
        if (targets[static_cast<std::size_t>(s)] < 0) throw InputError("collapse map has no entry for source class " + std::to_string(s));
    }
    return from_targets(std::move(targets));
}

CollapseMap CollapseMap::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open collapse map " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

int CollapseMap::operator()(int source) const {
    if (source < 0 || source >= source_classes()) throw InputError("unmapped class " + std::to_string(source));
    return targets_[static_cast<std::size_t>(source)];
}

std::vector<std::uint8_t> collapse(std::span<const std::uint8_t> mask, const CollapseMap& map) {
    std::vector<std::uint8_t> out(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = static_cast<std::uint8_t>(map(mask[i]));
    return out;
}

HeatmapSet encode_keypoints(std::span<const scene::Keypoint> keypoints, int resolution, double sigma) {
    if (!(sigma > 0.0)) throw InputError("heatmap sigma must be positive");
    HeatmapSet set;
    set.resolution = resolution;
    set.sigma = sigma;
    const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
    set.values.assign(plane * keypoints.size(), 0.0f);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t k = 0; k < keypoints.size(); ++k) {
        const auto& kp = keypoints[k];
        if (!kp.visible) continue;
        float* grid = set.values.data() + k * plane;
        for (int y = 0; y < resolution; ++y) {
            const double dy = y - kp.y;
            for (int x = 0; x < resolution; ++x) {
                const double dx = x - kp.x;
                grid[static_cast<std::size_t>(y) * resolution + x] =
                    static_cast<float>(kHeatmapPeak * std::exp(-(dx * dx + dy * dy) * inv));
            }
        }
    }
    return set;
}

std::vector<DecodedKeypoint> decode_heatmaps(std::span<const float> values, int channels, int resolution) {
    const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
    if (values.size() != plane * static_cast<std::size_t>(channels)) throw ShapeError("heatmap stack has the wrong size");
    std::vector<DecodedKeypoint> out;
    out.reserve(static_cast<std::size_t>(channels));
    for (int k = 0; k < channels; ++k) {
        const float* grid = values.data() + static_cast<std::size_t>(k) * plane;
        std::size_t best = 0;
        float lo = grid[0];
        for (std::size_t i = 1; i < plane; ++i) {
            if (grid[i] > grid[best]) best = i;
            lo = std::min(lo, grid[i]);
        }
        DecodedKeypoint d;
        d.x = static_cast<double>(best % static_cast<std::size_t>(resolution));
        d.y = static_cast<double>(best / static_cast<std::size_t>(resolution));
        d.degenerate = grid[best] == lo;
        out.push_back(d);
    }
    return out;
}

std::vector<DecodedKeypoint> decode_heatmaps(const HeatmapSet& set) {
    return decode_heatmaps(set.values, set.count(), set.resolution);
}

std::vector<std::uint8_t> validity_mask(std::span<const float> depth, float corrupt_value) {
    std::vector<std::uint8_t> out(depth.size());
    for (std::size_t i = 0; i < depth.size(); ++i) out[i] = depth[i] != corrupt_value ? 1 : 0;
    return out;
}

std::vector<float> corrupt_depth(std::span<const float> depth, double fraction, float corrupt_value, Rng& rng) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw InputError("corruption fraction must lie in [0, 1]");
    std::vector<float> out(depth.begin(), depth.end());
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(out.size())));
    std::vector<std::size_t> order(out.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
        out[order[i]] = corrupt_value;
    }
    return out;
}

}  // namespace handsoff::codec
