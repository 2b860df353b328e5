#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "handsoff/label_generator.hpp"
#include "handsoff/metrics.hpp"

namespace testing_support {

/// Per-class IOU from index sets; classes absent from both grids score 0 and
/// are left out of the mean.
inline std::vector<double> iou_oracle(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                                      int classes, double* miou) {
    std::vector<double> out(static_cast<std::size_t>(classes), 0.0);
    double sum = 0.0;
    int defined = 0;
    for (int c = 0; c < classes; ++c) {
        std::set<std::size_t> p, t, both, either;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == c) p.insert(i);
            if (truth[i] == c) t.insert(i);
        }
        for (auto i : p) (t.count(i) ? both : either).insert(i);
        for (auto i : t) either.insert(i);
        if (either.empty()) continue;
        out[static_cast<std::size_t>(c)] = static_cast<double>(both.size()) / static_cast<double>(either.size());
        sum += out[static_cast<std::size_t>(c)];
        ++defined;
    }
    *miou = defined ? sum / defined : 0.0;
    return out;
}

inline double pck_oracle(const std::vector<handsoff::metrics::Point>& pred,
                         const std::vector<handsoff::metrics::Point>& truth, const std::vector<bool>& vis, double alpha) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (!vis[k]) continue;
        x0 = std::min(x0, truth[k].x);
        x1 = std::max(x1, truth[k].x);
        y0 = std::min(y0, truth[k].y);
        y1 = std::max(y1, truth[k].y);
    }
    const double thr = alpha * std::max(x1 - x0, y1 - y0);
    int ok = 0, n = 0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (!vis[k]) continue;
        ++n;
        ok += std::hypot(pred[k].x - truth[k].x, pred[k].y - truth[k].y) <= thr;
    }
    return static_cast<double>(ok) / n;
}

inline double mnmse_oracle(const std::vector<float>& p, const std::vector<float>& t, const std::vector<std::uint8_t>& v) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!v[i]) continue;
        const double d = static_cast<double>(p[i]) - t[i];
        num += d * d;
        den += static_cast<double>(t[i]) * t[i];
    }
    return num / den;
}

/// Symmetric central band of half of each side; needs sides that are multiples of 4.
inline handsoff::metrics::RmsePair rmse_oracle(const std::vector<float>& p, const std::vector<float>& t, int w, int h) {
    double se = 0.0, sl = 0.0;
    int n = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (std::abs(y - (h - 1) / 2.0) >= h / 4.0 || std::abs(x - (w - 1) / 2.0) >= w / 4.0) continue;
            const double pc = std::clamp<double>(p[static_cast<std::size_t>(y * w + x)], 0.001, 80.0);
            const double tv = t[static_cast<std::size_t>(y * w + x)];
            se += (pc - tv) * (pc - tv);
            sl += (std::log(pc) - std::log(tv)) * (std::log(pc) - std::log(tv));
            ++n;
        }
    }
    return {std::sqrt(se / n), std::sqrt(sl / n)};
}

inline double entropy_oracle(const double* p, std::size_t n) {
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    }
    return h;
}

/// Entropy of the mean minus mean entropy, member-major layout.
inline double js_oracle(const std::vector<double>& d, std::size_t M, std::size_t P) {
    std::vector<double> mean(P, 0.0);
    double mean_h = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t c = 0; c < P; ++c) mean[c] += d[m * P + c] / static_cast<double>(M);
        mean_h += entropy_oracle(&d[m * P], P) / static_cast<double>(M);
    }
    return entropy_oracle(mean.data(), P) - mean_h;
}

/// Row-major double loop over the map.
inline double image_uncertainty_oracle(const handsoff::labelgen::UncertaintyMap& map) {
    double s = 0.0;
    for (int y = 0; y < map.resolution; ++y) {
        for (int x = 0; x < map.resolution; ++x) s += map.values[static_cast<std::size_t>(y) * map.resolution + x];
    }
    return s;
}

/// ceil(n * pct / 100) in integers.
inline std::size_t rejected_oracle(std::size_t n, std::size_t pct) { return (n * pct + 99) / 100; }

}  // namespace testing_support
