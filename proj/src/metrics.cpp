#include "handsoff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "handsoff/errors.hpp"

namespace handsoff::metrics {
namespace {

double clamp_depth(double v) { return std::clamp(v, kDepthFloor, kDepthCeiling); }

}  // namespace

SegScore iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int n_classes) {
    if (pred.size() != truth.size()) {
        throw ShapeError("iou operands differ in size: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
    }
    if (n_classes <= 0) throw InputError("iou needs a positive class count");
    const auto P = static_cast<std::size_t>(n_classes);
    std::vector<std::uint64_t> inter(P, 0), pc(P, 0), tc(P, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] >= P || truth[i] >= P) throw InputError("class index outside [0, " + std::to_string(P) + ")");
        ++pc[pred[i]];
        ++tc[truth[i]];
        if (pred[i] == truth[i]) ++inter[pred[i]];
    }
    std::vector<std::uint64_t> uni(P);
    for (std::size_t c = 0; c < P; ++c) uni[c] = pc[c] + tc[c] - inter[c];
    return iou_from_counts(std::move(inter), std::move(uni));
}

SegScore iou_from_counts(std::vector<std::uint64_t> intersection, std::vector<std::uint64_t> union_count) {
    if (intersection.size() != union_count.size()) throw ShapeError("count vectors differ in size");
    SegScore s;
    const std::size_t P = intersection.size();
    s.iou.assign(P, 0.0);
    s.defined.assign(P, false);
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < P; ++c) {
        if (union_count[c] == 0) continue;
        s.defined[c] = true;
        s.iou[c] = static_cast<double>(intersection[c]) / static_cast<double>(union_count[c]);
        sum += s.iou[c];
        ++defined;
    }
    s.miou = defined ? sum / static_cast<double>(defined) : 0.0;
    s.intersection = std::move(intersection);
    s.union_count = std::move(union_count);
    return s;
}

PckCount pck_count(std::span<const Point> pred, std::span<const Point> truth, const std::vector<bool>& visible,
                   double alpha) {
    if (pred.size() != truth.size() || visible.size() != truth.size()) {
        throw ShapeError("pck needs equal keypoint counts");
    }
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    bool any = false;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (!visible[k]) continue;
        if (!any) {
            x0 = x1 = truth[k].x;
            y0 = y1 = truth[k].y;
            any = true;
        }
        x0 = std::min(x0, truth[k].x);
        x1 = std::max(x1, truth[k].x);
        y0 = std::min(y0, truth[k].y);
        y1 = std::max(y1, truth[k].y);
    }
    if (!any) throw InputError("pck needs at least one visible keypoint");
    const double threshold = alpha * std::max(x1 - x0, y1 - y0);
    PckCount count;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (!visible[k]) continue;
        ++count.visible;
        const double d = std::hypot(pred[k].x - truth[k].x, pred[k].y - truth[k].y);
        if (d <= threshold) ++count.correct;
    }
    return count;
}

double pck(std::span<const Point> pred, std::span<const Point> truth, const std::vector<bool>& visible, double alpha) {
    const auto c = pck_count(pred, truth, visible, alpha);
    return static_cast<double>(c.correct) / static_cast<double>(c.visible);
}

double mnmse(std::span<const float> pred, std::span<const float> truth, std::span<const std::uint8_t> valid) {
    if (pred.size() != truth.size() || valid.size() != truth.size()) throw ShapeError("mnmse operands differ in size");
    double num = 0.0, den = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!valid[i]) continue;
        const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
        num += d * d;
        den += static_cast<double>(truth[i]) * static_cast<double>(truth[i]);
        ++count;
    }
    if (count == 0) throw InputError("mnmse has no valid pixels");
    if (den == 0.0) throw InputError("mnmse truth is all zero on the valid pixels");
    return num / den;
}

RmsePair rmse_pair(std::span<const float> pred, std::span<const float> truth, int width, int height) {
    if (width < 2 || height < 2) throw ShapeError("rmse_pair needs at least a 2x2 grid");
    const auto n = static_cast<std::size_t>(width) * height;
    if (pred.size() != n || truth.size() != n) throw ShapeError("rmse_pair grids do not match width x height");
    const int x0 = crop_start(width), y0 = crop_start(height);
    const int w = crop_extent(width), h = crop_extent(height);
    double se = 0.0, sl = 0.0;
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            const double p = clamp_depth(pred[i]);
            const double t = truth[i];
            se += (p - t) * (p - t);
            const double dl = std::log(p) - std::log(clamp_depth(t));
            sl += dl * dl;
        }
    }
    const double count = static_cast<double>(w) * h;
    return {std::sqrt(se / count), std::sqrt(sl / count)};
}

}  // namespace handsoff::metrics
