#include "handsoff/label_generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "handsoff/errors.hpp"
#include "handsoff/parallel.hpp"
#include "handsoff/rng.hpp"

namespace handsoff::labelgen {
namespace {

void check_example(const TrainingExample& ex, const TaskSpec& spec, std::size_t width) {
    if (!ex.field || !ex.label) throw InputError("training example is missing its field or label");
    const auto& f = *ex.field;
    const auto& l = *ex.label;
    if (f.channels() != width) throw ShapeError("training fields have different channel counts");
    if (l.task != spec.task) throw InputError("label task " + to_string(l.task) + " does not match " + to_string(spec.task));
    if (l.resolution != f.resolution) throw ShapeError("label and field resolutions differ");
    if (!l.valid.empty() && l.valid.size() != l.pixel_count()) throw ShapeError("validity mask has the wrong size");
    if (spec.discrete()) {
        if (l.classes.size() != l.pixel_count()) throw ShapeError("class grid has the wrong size");
        for (std::size_t p = 0; p < l.classes.size(); ++p) {
            if (l.pixel_valid(p) && l.classes[p] >= spec.outputs) {
                throw InputError("class index " + std::to_string(l.classes[p]) + " is outside [0, " +
                                 std::to_string(spec.outputs) + ")");
            }
        }
    } else {
        if (l.channels != spec.outputs || l.values.size() != l.pixel_count() * static_cast<std::size_t>(l.channels)) {
            throw ShapeError("continuous label has " + std::to_string(l.channels) + " channels, task expects " +
                             std::to_string(spec.outputs));
        }
        if (!l.channel_weight.empty() && l.channel_weight.size() != static_cast<std::size_t>(l.channels)) {
            throw ShapeError("channel weights do not match the label channels");
        }
    }
}

std::vector<std::size_t> sample_pixels(Rng& rng, const LabelPlane& label, const TaskSpec& spec,
                                       const TrainParams& params) {
    std::vector<std::size_t> candidates;
    for (std::size_t p = 0; p < label.pixel_count(); ++p) {
        if (label.pixel_valid(p)) candidates.push_back(p);
    }
    const std::size_t budget = params.pixels_per_image;
    if (!params.class_balanced || !spec.discrete()) {
        if (candidates.size() <= budget) return candidates;
        for (std::size_t i = 0; i < budget; ++i) {
            std::swap(candidates[i], candidates[i + uniform_index(rng, candidates.size() - i)]);
        }
        candidates.resize(budget);
        return candidates;
    }
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(spec.outputs));
    for (std::size_t p : candidates) buckets[label.classes[p]].push_back(p);
    for (auto& b : buckets) {
        for (std::size_t i = b.size(); i > 1; --i) std::swap(b[i - 1], b[uniform_index(rng, i)]);
    }
    std::vector<std::size_t> out;
    for (std::size_t round = 0; out.size() < budget && out.size() < candidates.size(); ++round) {
        for (const auto& b : buckets) {
            if (round < b.size() && out.size() < budget) out.push_back(b[round]);
        }
    }
    return out;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

/// Order-independent sum: the same multiset of terms always gives the same result.
double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

}  // namespace

EnsembleModel train_ensemble(std::uint64_t seed, std::span<const TrainingExample> examples, const TaskSpec& spec,
                             const TrainParams& params) {
    if (examples.empty()) throw InputError("label generator needs at least one training image");
    if (params.members == 0) throw ConfigError("ensemble needs at least one member");
    if (spec.outputs <= 0) throw ConfigError("task needs a positive output count");
    if (!params.member_seeds.empty() && params.member_seeds.size() != params.members) {
        throw ConfigError("member_seeds must list one seed per member");
    }
    if (params.pixels_per_image == 0) throw ConfigError("pixels_per_image must be positive");
    const std::size_t width = examples.front().field ? examples.front().field->channels() : 0;
    for (const auto& ex : examples) check_example(ex, spec, width);

    EnsembleModel model;
    model.spec = spec;
    const std::size_t M = params.members;
    model.members.resize(M);
    model.final_losses.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
        model.member_seeds.push_back(params.member_seeds.empty() ? stream_seed(seed, "member", m) : params.member_seeds[m]);
    }
    const auto D = static_cast<std::size_t>(spec.outputs);
    const nn::LayerWidths widths{width, params.hidden1, params.hidden2, D};

    parallel_for(M, [&](std::size_t m) {
        Rng rng(model.member_seeds[m]);
        std::vector<std::vector<std::size_t>> picks;
        std::size_t rows = 0;
        for (const auto& ex : examples) {
            picks.push_back(sample_pixels(rng, *ex.label, spec, params));
            rows += picks.back().size();
        }
        if (rows == 0) throw InputError("no valid pixels to train on");

        nn::Matrix<float> x(rows, width), y, w;
        std::vector<int> cls;
        if (spec.discrete()) {
            cls.reserve(rows);
        } else {
            y.resize(rows, D);
        }
        bool weighted = false;
        for (const auto& ex : examples) weighted = weighted || !ex.label->channel_weight.empty();
        if (weighted) w.resize(rows, D);

        std::size_t r = 0;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            const auto& field = *examples[i].field;
            const auto& label = *examples[i].label;
            const std::size_t plane = label.pixel_count();
            for (std::size_t p : picks[i]) {
                std::copy_n(field.values.row(p), width, x.row(r));
                if (spec.discrete()) {
                    cls.push_back(label.classes[p]);
                } else {
                    for (std::size_t d = 0; d < D; ++d) y(r, d) = label.values[d * plane + p] / spec.output_scale;
                    if (weighted) {
                        for (std::size_t d = 0; d < D; ++d) {
                            w(r, d) = label.channel_weight.empty() ? 1.0f : label.channel_weight[d];
                        }
                    }
                }
                ++r;
            }
        }

        nn::DenseNet net(widths, stream_seed(model.member_seeds[m], "init"));
        const auto targets = spec.discrete() ? nn::Targets<float>::of_classes(cls)
                                             : nn::Targets<float>::of_values(y, weighted ? &w : nullptr);
        const auto history = nn::fit(net, x, targets, params.fit, rng);
        model.final_losses[m] = history.empty() ? nn::evaluate_loss(net, x, targets) : history.back();
        model.members[m] = std::move(net);
    });
    return model;
}

double js_divergence(std::span<const double> distributions, std::size_t members, std::size_t classes) {
    if (members == 0 || classes == 0 || distributions.size() != members * classes) {
        throw ShapeError("distribution tuple has the wrong size");
    }
    std::vector<double> mean(classes), terms(members);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t m = 0; m < members; ++m) terms[m] = distributions[m * classes + c];
        mean[c] = sorted_sum(terms) / static_cast<double>(members);
    }
    for (std::size_t m = 0; m < members; ++m) terms[m] = entropy(distributions.subspan(m * classes, classes));
    const double js = entropy(mean) - sorted_sum(terms) / static_cast<double>(members);
    return std::clamp(js, 0.0, std::log(static_cast<double>(members)));
}

double image_uncertainty(const UncertaintyMap& map) {
    double s = 0.0;
    for (int y = 0; y < map.resolution; ++y) {
        for (int x = 0; x < map.resolution; ++x) s += map.values[static_cast<std::size_t>(y) * map.resolution + x];
    }
    return s;
}

Prediction predict(const EnsembleModel& model, const hypercolumn::HypercolumnField& field) {
    if (model.members.empty()) throw InputError("ensemble has no members");
    if (field.channels() != model.input_width()) {
        throw ShapeError("field has " + std::to_string(field.channels()) + " channels, ensemble expects " +
                         std::to_string(model.input_width()));
    }
    const std::size_t M = model.members.size();
    const auto D = static_cast<std::size_t>(model.spec.outputs);
    const std::size_t pixels = field.values.rows();
    std::vector<nn::Matrix<float>> outputs(M);
    for (std::size_t m = 0; m < M; ++m) outputs[m] = nn::forward(model.members[m], field.values);

    Prediction pred;
    pred.label.task = model.spec.task;
    pred.label.resolution = field.resolution;
    pred.uncertainty.resolution = field.resolution;
    pred.uncertainty.values.assign(pixels, 0.0);

    std::vector<double> terms(M);
    if (model.spec.discrete()) {
        pred.uncertainty.kind = UncertaintyKind::js_divergence;
        pred.label.classes.assign(pixels, 0);
        std::vector<double> probs(M * D);
        std::vector<int> votes(D);
        for (std::size_t p = 0; p < pixels; ++p) {
            std::fill(votes.begin(), votes.end(), 0);
            for (std::size_t m = 0; m < M; ++m) {
                const float* z = outputs[m].row(p);
                std::size_t arg = 0;
                for (std::size_t c = 1; c < D; ++c) {
                    if (z[c] > z[arg]) arg = c;
                }
                ++votes[arg];
                const double zmax = z[arg];
                double sum = 0.0;
                for (std::size_t c = 0; c < D; ++c) sum += probs[m * D + c] = std::exp(static_cast<double>(z[c]) - zmax);
                for (std::size_t c = 0; c < D; ++c) probs[m * D + c] /= sum;
            }
            std::size_t best = 0;
            for (std::size_t c = 1; c < D; ++c) {
                if (votes[c] > votes[best]) best = c;
            }
            pred.label.classes[p] = static_cast<std::uint8_t>(best);
            pred.uncertainty.values[p] = js_divergence(probs, M, D);
        }
        return pred;
    }

    pred.uncertainty.kind = UncertaintyKind::variance;
    pred.label.channels = static_cast<int>(D);
    pred.label.values.assign(pixels * D, 0.0f);
    const double scale = model.spec.output_scale;
    for (std::size_t p = 0; p < pixels; ++p) {
        double var_sum = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t m = 0; m < M; ++m) terms[m] = scale * static_cast<double>(outputs[m](p, d));
            std::vector<double> sorted = terms;
            const double mean = sorted_sum(sorted) / static_cast<double>(M);
            for (std::size_t m = 0; m < M; ++m) sorted[m] = (terms[m] - mean) * (terms[m] - mean);
            var_sum += sorted_sum(sorted) / static_cast<double>(M);
            pred.label.values[d * pixels + p] = static_cast<float>(mean);
        }
        pred.uncertainty.values[p] = var_sum / static_cast<double>(D);
    }
    return pred;
}

void save_ensemble(const std::filesystem::path& dir, const EnsembleModel& model) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
    out.precision(17);
    out << "task " << to_string(model.spec.task) << "\n";
    out << "outputs " << model.spec.outputs << "\n";
    out << "output_scale " << model.spec.output_scale << "\n";
    out << "members " << model.members.size() << "\n";
    for (std::size_t m = 0; m < model.members.size(); ++m) {
        const auto& w = model.members[m].widths();
        out << "member " << m << " seed " << model.member_seeds[m] << " widths " << w[0] << ' ' << w[1] << ' ' << w[2]
            << ' ' << w[3] << " final_loss " << model.final_losses[m] << "\n";
        nn::save_net(dir, model.members[m], "member" + std::to_string(m) + "_");
    }
    if (!out) throw IoError("failed writing " + (dir / "manifest.txt").string());
}

EnsembleModel load_ensemble(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw IoError("cannot open " + (dir / "manifest.txt").string());
    EnsembleModel model;
    std::string key, task;
    std::size_t count = 0;
    in >> key >> task;
    model.spec.task = parse_task(task);
    in >> key >> model.spec.outputs >> key >> model.spec.output_scale >> key >> count;
    if (!in) throw IoError("malformed ensemble manifest in " + dir.string());
    for (std::size_t m = 0; m < count; ++m) {
        std::string line;
        std::size_t index = 0;
        std::uint64_t seed = 0;
        in >> key >> index >> key >> seed;
        std::getline(in, line);
        if (!in || index != m) throw IoError("malformed member entry " + std::to_string(m) + " in ensemble manifest");
        std::istringstream rest(line);
        std::size_t w0, w1, w2, w3;
        double loss = 0.0;
        rest >> key >> w0 >> w1 >> w2 >> w3 >> key >> loss;
        model.member_seeds.push_back(seed);
        model.final_losses.push_back(loss);
        model.members.push_back(nn::load_net(dir, "member" + std::to_string(m) + "_"));
    }
    return model;
}

}  // namespace handsoff::labelgen
