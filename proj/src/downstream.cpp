#include "handsoff/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "handsoff/errors.hpp"
#include "handsoff/label_codec.hpp"
#include "handsoff/metrics.hpp"
#include "handsoff/parallel.hpp"
#include "handsoff/rng.hpp"

namespace handsoff::downstream {
namespace {

void check_sample(const Sample& s, const labelgen::TaskSpec& spec) {
    if (!s.image || !s.label) throw InputError("downstream sample is missing its image or label");
    if (s.label->task != spec.task) {
        throw InputError("label task " + to_string(s.label->task) + " does not match model task " + to_string(spec.task));
    }
    if (s.image->width != s.label->resolution || s.image->height != s.label->resolution) {
        throw ShapeError("image and label resolutions differ");
    }
    if (!spec.discrete() && s.label->channels != spec.outputs) throw ShapeError("label channel count does not match the task");
}

/// Rows of patch inputs and targets for the given (sample, pixel) picks.
struct Batch {
    nn::Matrix<float> x;
    nn::Matrix<float> y;
    nn::Matrix<float> w;
    std::vector<int> classes;
    bool weighted = false;

    nn::Targets<float> targets(const labelgen::TaskSpec& spec) const {
        return spec.discrete() ? nn::Targets<float>::of_classes(classes)
                               : nn::Targets<float>::of_values(y, weighted ? &w : nullptr);
    }
};

Batch gather(std::span<const Sample> data, const std::vector<std::pair<std::size_t, std::size_t>>& picks,
             const PatchModel& model) {
    const auto& spec = model.spec;
    const auto D = static_cast<std::size_t>(spec.outputs);
    Batch b;
    b.x.resize(picks.size(), model.input_width());
    for (const auto& s : data) b.weighted = b.weighted || !s.label->channel_weight.empty();
    if (spec.discrete()) {
        b.classes.resize(picks.size());
    } else {
        b.y.resize(picks.size(), D);
        if (b.weighted) b.w.resize(picks.size(), D);
    }
    for (std::size_t r = 0; r < picks.size(); ++r) {
        const auto& s = data[picks[r].first];
        const std::size_t p = picks[r].second;
        const int res = s.label->resolution;
        patch(*s.image, model.radius, static_cast<int>(p % static_cast<std::size_t>(res)),
              static_cast<int>(p / static_cast<std::size_t>(res)), b.x.row(r));
        if (spec.discrete()) {
            b.classes[r] = s.label->classes[p];
            continue;
        }
        const std::size_t plane = s.label->pixel_count();
        for (std::size_t d = 0; d < D; ++d) {
            b.y(r, d) = s.label->values[d * plane + p] / spec.output_scale;
            if (b.weighted) b.w(r, d) = s.label->channel_weight.empty() ? 1.0f : s.label->channel_weight[d];
        }
    }
    return b;
}

/// Uniform draw of up to `per_image` valid pixels per sample.
std::vector<std::pair<std::size_t, std::size_t>> draw_pixels(Rng& rng, std::span<const Sample> data,
                                                             std::size_t per_image) {
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& label = *data[i].label;
        candidates.clear();
        for (std::size_t p = 0; p < label.pixel_count(); ++p) {
            if (label.pixel_valid(p)) candidates.push_back(p);
        }
        const std::size_t take = std::min(per_image, candidates.size());
        for (std::size_t k = 0; k < take; ++k) {
            std::swap(candidates[k], candidates[k + uniform_index(rng, candidates.size() - k)]);
            picks.emplace_back(i, candidates[k]);
        }
    }
    return picks;
}

std::string format_value(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

PatchModel make_model(std::uint64_t seed, const labelgen::TaskSpec& spec, const DownstreamParams& params) {
    if (params.radius < 0) throw ConfigError("patch radius must be non-negative");
    if (spec.outputs <= 0) throw ConfigError("task needs a positive output count");
    PatchModel model;
    model.radius = params.radius;
    model.spec = spec;
    model.net = nn::DenseNet({model.input_width(), params.hidden1, params.hidden2, static_cast<std::size_t>(spec.outputs)},
                             stream_seed(seed, "downstream-init"));
    return model;
}

void patch(const Rgb8Image& image, int radius, int x, int y, float* out) {
    for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = std::clamp(y + dy, 0, image.height - 1);
        for (int dx = -radius; dx <= radius; ++dx) {
            const int xx = std::clamp(x + dx, 0, image.width - 1);
            for (int c = 0; c < 3; ++c) *out++ = image.at(yy, xx, c) / 255.0f;
        }
    }
}

PatchModel train_downstream(std::uint64_t seed, std::span<const Sample> data, const labelgen::TaskSpec& spec,
                            const DownstreamParams& params) {
    if (data.empty()) throw InputError("downstream training set is empty");
    for (const auto& s : data) check_sample(s, spec);
    PatchModel model = make_model(seed, spec, params);
    auto state = nn::make_optim_state(model.net, params.optimizer);
    Rng rng = make_stream(seed, "downstream-train");
    nn::FitParams fit{1, params.batch_size, params.optimizer};
    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        const auto picks = draw_pixels(rng, data, params.pixels_per_image);
        if (picks.empty()) throw InputError("downstream training set has no valid pixels");
        const Batch b = gather(data, picks, model);
        const auto h = nn::fit(model.net, b.x, b.targets(spec), fit, rng, &state);
        model.loss_history.push_back(h.front());
    }
    return model;
}

std::vector<double> finetune(PatchModel& model, std::uint64_t seed, std::span<const Sample> pool,
                             const FinetuneParams& params) {
    if (pool.empty()) throw InputError("finetune pool is empty");
    for (const auto& s : pool) check_sample(s, model.spec);
    std::vector<double> trajectory;
    if (params.epochs == 0) return trajectory;
    Rng rng = make_stream(seed, "finetune");
    const Batch b = gather(pool, draw_pixels(rng, pool, params.pixels_per_image), model);
    const auto targets = b.targets(model.spec);
    double loss = nn::evaluate_loss(model.net, b.x, targets);
    trajectory.push_back(loss);
    nn::FitParams fit{1, params.batch_size, {nn::OptimizerKind::adam, params.learning_rate}};
    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        nn::DenseNet trial = model.net;
        nn::fit(trial, b.x, targets, fit, rng);
        const double trial_loss = nn::evaluate_loss(trial, b.x, targets);
        if (trial_loss <= loss) {
            model.net = std::move(trial);
            loss = trial_loss;
        } else {
            fit.optimizer.learning_rate *= 0.5;
        }
        trajectory.push_back(loss);
    }
    return trajectory;
}

LabelPlane predict(const PatchModel& model, const Rgb8Image& image) {
    if (image.width != image.height) throw ShapeError("downstream model expects square images");
    const int res = image.width;
    const auto pixels = static_cast<std::size_t>(res) * res;
    nn::Matrix<float> x(pixels, model.input_width());
    for (int y = 0; y < res; ++y) {
        for (int xx = 0; xx < res; ++xx) patch(image, model.radius, xx, y, x.row(static_cast<std::size_t>(y) * res + xx));
    }
    const auto out = nn::forward(model.net, x);
    LabelPlane label;
    label.task = model.spec.task;
    label.resolution = res;
    const auto D = static_cast<std::size_t>(model.spec.outputs);
    if (model.spec.discrete()) {
        label.classes.resize(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            const float* z = out.row(p);
            std::size_t arg = 0;
            for (std::size_t c = 1; c < D; ++c) {
                if (z[c] > z[arg]) arg = c;
            }
            label.classes[p] = static_cast<std::uint8_t>(arg);
        }
        return label;
    }
    label.channels = static_cast<int>(D);
    label.values.resize(pixels * D);
    for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t d = 0; d < D; ++d) label.values[d * pixels + p] = out(p, d) * model.spec.output_scale;
    }
    return label;
}

Predictor as_predictor(const PatchModel& model) {
    return [&model](std::size_t, const Rgb8Image& image) { return predict(model, image); };
}

double EvalReport::value(const std::string& column) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == column) return aggregate.values[i];
    }
    throw InputError("report has no column '" + column + "'");
}

EvalReport evaluate_downstream(const Predictor& predictor, std::span<const scene::Latent> test_latents,
                               const scene::SceneConfig& config, TaskKind task, const EvalOptions& options) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EvalReport report;
    report.task = task;
    const auto P = static_cast<std::size_t>(options.classes > 0 ? options.classes : config.classes);
    switch (task) {
        case TaskKind::segmentation:
            report.columns.push_back("miou");
            for (std::size_t c = 0; c < P; ++c) report.columns.push_back("iou_class_" + std::to_string(c));
            break;
        case TaskKind::keypoints:
            for (double a : options.pck_alphas) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "pck_%.2f", a);
                report.columns.push_back(buf);
            }
            break;
        case TaskKind::depth:
            report.columns = {"mnmse", "rmse", "rmse_log"};
            break;
    }

    const std::size_t n = test_latents.size();
    report.rows.resize(n);
    std::vector<std::vector<std::uint64_t>> inter(n), uni(n);
    std::vector<std::vector<metrics::PckCount>> counts(n);
    parallel_for(n, [&](std::size_t i) {
        const auto& w = test_latents[i];
        const auto image = quantize(scene::render_image(w, config));
        const auto truth = scene::oracle_labels(w, config);
        const LabelPlane pred = predictor(i, image);
        auto& row = report.rows[i];
        row.id = std::to_string(i);
        if (task == TaskKind::segmentation) {
            const auto s = metrics::iou(pred.classes, truth.segmentation, static_cast<int>(P));
            row.values.push_back(s.miou);
            for (std::size_t c = 0; c < P; ++c) row.values.push_back(s.defined[c] ? s.iou[c] : nan);
            inter[i] = s.intersection;
            uni[i] = s.union_count;
        } else if (task == TaskKind::keypoints) {
            const auto decoded = codec::decode_heatmaps(pred.values, pred.channels, pred.resolution);
            if (decoded.size() != truth.keypoints.size()) throw ShapeError("predicted heatmap count does not match the keypoints");
            std::vector<metrics::Point> pp, tp;
            std::vector<bool> vis;
            for (std::size_t k = 0; k < decoded.size(); ++k) {
                pp.push_back({decoded[k].x, decoded[k].y});
                tp.push_back({truth.keypoints[k].x, truth.keypoints[k].y});
                vis.push_back(truth.keypoints[k].visible);
            }
            const bool any = std::find(vis.begin(), vis.end(), true) != vis.end();
            for (double a : options.pck_alphas) {
                if (!any) {
                    counts[i].push_back({});
                    row.values.push_back(nan);
                    continue;
                }
                const auto c = metrics::pck_count(pp, tp, vis, a);
                counts[i].push_back(c);
                row.values.push_back(static_cast<double>(c.correct) / static_cast<double>(c.visible));
            }
        } else {
            Rng rng = make_stream(options.corrupt_seed, "corrupt-test", i);
            const auto corrupted = codec::corrupt_depth(truth.depth, options.corrupt_fraction, options.corrupt_value, rng);
            const auto valid = codec::validity_mask(corrupted, options.corrupt_value);
            row.values.push_back(metrics::mnmse(pred.values, corrupted, valid));
            const auto r = metrics::rmse_pair(pred.values, truth.depth, truth.resolution, truth.resolution);
            row.values.push_back(r.rmse);
            row.values.push_back(r.rmse_log);
        }
    });

    report.aggregate.id = "aggregate";
    if (task == TaskKind::segmentation) {
        std::vector<std::uint64_t> ti(P, 0), tu(P, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < P; ++c) {
                ti[c] += inter[i][c];
                tu[c] += uni[i][c];
            }
        }
        const auto s = metrics::iou_from_counts(ti, tu);
        report.aggregate.values.push_back(s.miou);
        for (std::size_t c = 0; c < P; ++c) report.aggregate.values.push_back(s.defined[c] ? s.iou[c] : nan);
    } else if (task == TaskKind::keypoints) {
        for (std::size_t a = 0; a < options.pck_alphas.size(); ++a) {
            std::size_t correct = 0, visible = 0;
            for (std::size_t i = 0; i < n; ++i) {
                correct += counts[i][a].correct;
                visible += counts[i][a].visible;
            }
            report.aggregate.values.push_back(visible ? static_cast<double>(correct) / static_cast<double>(visible) : nan);
        }
    } else {
        for (std::size_t c = 0; c < 3; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += report.rows[i].values[c];
            report.aggregate.values.push_back(n ? s / static_cast<double>(n) : nan);
        }
    }
    return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "id";
    for (const auto& c : report.columns) out << ',' << c;
    out << "\n";
    auto emit = [&](const MetricRow& row) {
        out << row.id;
        for (double v : row.values) out << ',' << format_value(v);
        out << "\n";
    };
    for (const auto& row : report.rows) emit(row);
    emit(report.aggregate);
    if (!out) throw IoError("failed writing " + path.string());
}

void save_model(const std::filesystem::path& dir, const PatchModel& model) {
    std::filesystem::create_directories(dir);
    nn::save_net(dir, model.net);
    std::ofstream out(dir / "model.txt");
    out.precision(17);
    out << "radius " << model.radius << "\ntask " << to_string(model.spec.task) << "\noutputs " << model.spec.outputs
        << "\noutput_scale " << model.spec.output_scale << "\n";
    if (!out) throw IoError("cannot write " + (dir / "model.txt").string());
}

PatchModel load_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.txt");
    if (!in) throw IoError("cannot open " + (dir / "model.txt").string());
    PatchModel model;
    std::string key, task;
    in >> key >> model.radius >> key >> task >> key >> model.spec.outputs >> key >> model.spec.output_scale;
    if (!in) throw IoError("malformed " + (dir / "model.txt").string());
    model.spec.task = parse_task(task);
    model.net = nn::load_net(dir);
    if (model.net.input_width() != model.input_width()) throw IoError("patch model weights do not match its radius");
    return model;
}

}  // namespace handsoff::downstream
