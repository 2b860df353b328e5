#include "handsoff/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "handsoff/errors.hpp"
#include "handsoff/hoff.hpp"
#include "handsoff/label_codec.hpp"

namespace handsoff::harness {
namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void write_inversion(const std::filesystem::path& out, const std::vector<pipeline::PoolEntry>& pool) {
    auto csv = open_csv(out / "inversion.csv");
    csv << "key,initial_loss,final_loss,initial_reconstruction_error,final_reconstruction_error\n";
    std::vector<float> traj;
    std::size_t length = 0;
    for (const auto& e : pool) {
        const auto& t = e.inversion.trajectory;
        csv << e.key << ',' << num(t.front()) << ',' << num(t.back()) << ','
            << num(e.inversion.initial_reconstruction_error) << ',' << num(e.inversion.reconstruction_error) << "\n";
        length = t.size();
        for (double v : t) traj.push_back(static_cast<float>(v));
    }
    hoff::write(out / "inversion_trajectories.hoff",
                hoff::Tensor::of_floats({static_cast<std::uint32_t>(pool.size()), static_cast<std::uint32_t>(length)},
                                        std::move(traj)));
    std::vector<float> latents;
    for (const auto& e : pool) {
        for (double v : e.inversion.latent.values) latents.push_back(static_cast<float>(v));
    }
    const auto dim = pool.empty() ? 0u : static_cast<std::uint32_t>(pool.front().inversion.latent.values.size());
    hoff::write(out / "inverted_latents.hoff",
                hoff::Tensor::of_floats({static_cast<std::uint32_t>(pool.size()), dim}, std::move(latents)));
}

}  // namespace

pipeline::RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out,
                                   pipeline::Workspace& workspace, const RunOptions& options) {
    config.validate();
    std::filesystem::create_directories(out);
    auto r = pipeline::run(config, workspace);
    {
        std::ofstream cfg(out / "config.txt");
        cfg << "# config_hash=" << config_hash(config) << "\n" << canonical_text(config);
        if (!cfg) throw IoError("cannot write " + (out / "config.txt").string());
    }
    downstream::write_report_csv(out / "metrics.csv", r.report);
    write_inversion(out, r.pool);
    {
        auto csv = open_csv(out / "downstream_loss.csv");
        csv << "phase,epoch,loss\n";
        for (std::size_t i = 0; i < r.downstream.loss_history.size(); ++i) {
            csv << "train," << i << ',' << num(r.downstream.loss_history[i]) << "\n";
        }
        for (std::size_t i = 0; i < r.finetune_trajectory.size(); ++i) {
            csv << "finetune," << i << ',' << num(r.finetune_trajectory[i]) << "\n";
        }
    }
    if (options.write_models) {
        labelgen::save_ensemble(out / "labelgen", r.model);
        downstream::save_model(out / "downstream", r.downstream);
    }
    if (options.write_dataset) {
        synthesis::write_dataset(out / "dataset", r.dataset.retained, config.seed, config_hash(config));
        auto csv = open_csv(out / "dataset" / "rejected.csv");
        csv << "id,uncertainty\n";
        for (const auto& rec : r.dataset.rejected) csv << rec.id << ',' << num(rec.uncertainty) << "\n";
    }
    return r;
}

std::pair<double, double> rare_split(const downstream::EvalReport& report, int rare_class) {
    double rare = 0.0, sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < report.columns.size(); ++i) {
        const auto& c = report.columns[i];
        if (c.rfind("iou_class_", 0) != 0) continue;
        const int cls = std::stoi(c.substr(10));
        const double v = report.aggregate.values[i];
        if (cls == rare_class) {
            rare = std::isnan(v) ? 0.0 : v;
        } else if (!std::isnan(v)) {
            sum += v;
            ++count;
        }
    }
    return {rare, count ? sum / count : 0.0};
}

std::vector<LongtailRow> run_longtail(const ExperimentConfig& config, const std::filesystem::path& out,
                                      pipeline::Workspace& workspace) {
    config.validate();
    if (config.task != TaskKind::segmentation) throw ConfigError("long-tail sweeps need the segmentation task");
    const int rare = config.scene.effective_rare_class();
    std::vector<LongtailRow> rows;
    auto run_spec = [&](std::uint64_t seed, const synthesis::PoolSpec& spec, LongtailRow row) {
        ExperimentConfig cfg = config;
        cfg.seed = seed;
        const auto pool = synthesis::build_pool(seed, cfg.scene, spec);
        const auto r = pipeline::run(cfg, workspace, &pool);
        std::tie(row.rare_iou, row.nonrare_miou) = rare_split(r.report, rare);
        row.miou = r.report.value("miou");
        row.seed = seed;
        rows.push_back(row);
    };
    for (std::size_t s = 0; s < config.longtail.seeds; ++s) {
        const std::uint64_t seed = config.seed + s;
        if (config.longtail.mode == "substitute") {
            for (double p : config.longtail.proportions) {
                synthesis::PoolSpec spec;
                spec.mode = synthesis::PoolMode::substitute;
                spec.base_size = config.longtail.base_size;
                spec.proportion = p;
                LongtailRow row;
                row.mode = "substitute";
                row.proportion = p;
                run_spec(seed, spec, row);
            }
        } else {
            for (std::size_t count : config.longtail.added_counts) {
                for (const bool with_rare : {true, false}) {
                    synthesis::PoolSpec spec;
                    spec.mode = synthesis::PoolMode::add;
                    spec.base_size = config.longtail.base_size;
                    (with_rare ? spec.add_with_rare : spec.add_without_rare) = count;
                    LongtailRow row;
                    row.mode = "add";
                    row.added = count;
                    row.arm = with_rare ? "+rare" : "-rare";
                    run_spec(seed, spec, row);
                }
            }
        }
    }
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        auto csv = open_csv(out / "longtail.csv");
        csv << "mode,seed,proportion,added,arm,rare_iou,nonrare_miou,miou\n";
        for (const auto& r : rows) {
            csv << r.mode << ',' << r.seed << ',' << num(r.proportion) << ',' << r.added << ',' << r.arm << ','
                << num(r.rare_iou) << ',' << num(r.nonrare_miou) << ',' << num(r.miou) << "\n";
        }
    }
    return rows;
}

std::vector<std::string> axis_keys(const std::string& axis) {
    if (axis == "channel_caps") return {"labelgen.channel_caps"};
    if (axis == "ensemble_size") return {"labelgen.members"};
    if (axis == "mlp_widths") return {"labelgen.hidden1", "labelgen.hidden2"};
    if (axis == "pool_size") return {"experiment.pool_size"};
    if (axis == "refine_iters") return {"inversion.iterations"};
    if (axis == "dataset_size") return {"experiment.dataset_size"};
    if (axis == "filter_fraction") return {"experiment.filter_fraction"};
    throw ConfigError("unknown ablation axis '" + axis + "'");
}

void apply_axis(ExperimentConfig& config, const std::string& axis, const std::string& value) {
    const auto keys = axis_keys(axis);
    if (axis == "mlp_widths") {
        const auto x = value.find('x');
        if (x == std::string::npos) throw ConfigError("mlp_widths values look like 32x16, got '" + value + "'");
        set_config_value(config, keys[0], value.substr(0, x));
        set_config_value(config, keys[1], value.substr(x + 1));
    } else {
        set_config_value(config, keys[0], value);
    }
    config.validate();
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, const std::filesystem::path& out,
                                      pipeline::Workspace& workspace) {
    config.validate();
    if (config.sweep.axis.empty()) throw ConfigError("ablation needs sweep.axis and sweep.values");
    auto exclude = axis_keys(config.sweep.axis);
    exclude.push_back("sweep.axis");
    exclude.push_back("sweep.values");
    std::vector<ExperimentConfig> configs;
    for (const auto& v : config.sweep.values) {
        configs.push_back(config);
        apply_axis(configs.back(), config.sweep.axis, v);
    }
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto& cfg = configs[i];
        AblationRow row;
        row.axis = config.sweep.axis;
        row.value = config.sweep.values[i];
        row.base_hash = config_hash(cfg, exclude);
        if (!rows.empty() && row.base_hash != rows.front().base_hash) {
            throw ConfigError("sweep point " + row.value + " differs from the first point outside the swept axis");
        }
        const auto r = pipeline::run(cfg, workspace);
        row.retained = r.dataset.retained.size();
        row.hypercolumn_dim = r.pool.front().field.channels();
        row.final_inversion_loss = r.mean_final_inversion_loss;
        row.report = r.report;
        rows.push_back(std::move(row));
    }
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        auto csv = open_csv(out / "ablation.csv");
        csv << "axis,value,config_hash,retained,hypercolumn_dim,final_inversion_loss";
        if (!rows.empty()) {
            for (const auto& c : rows.front().report.columns) csv << ',' << c;
        }
        csv << "\n";
        for (const auto& r : rows) {
            std::string value = r.value;
            std::replace(value.begin(), value.end(), ',', ' ');
            csv << r.axis << ',' << value << ',' << r.base_hash << ',' << r.retained << ',' << r.hypercolumn_dim << ','
                << num(r.final_inversion_loss);
            for (double v : r.report.aggregate.values) csv << ',' << num(v);
            csv << "\n";
        }
    }
    return rows;
}

std::array<std::uint8_t, 3> heat_color(double t) {
    t = std::isnan(t) ? 0.0 : std::clamp(t, 0.0, 1.0);
    const double r = std::min(1.0, 3.0 * t);
    const double g = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
    const double b = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
    auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
    return {q(r), q(g), q(b)};
}

std::array<std::uint8_t, 3> class_view_color(int cls) {
    if (cls <= 0) return {40, 40, 40};
    const auto c = scene::class_color(cls);
    return {static_cast<std::uint8_t>(std::lround(255.0 * c[0])), static_cast<std::uint8_t>(std::lround(255.0 * c[1])),
            static_cast<std::uint8_t>(std::lround(255.0 * c[2]))};
}

void export_uncertainty_view(const labelgen::EnsembleModel& model, std::span<const scene::Latent> latents,
                             const ExperimentConfig& config, const std::filesystem::path& out) {
    std::filesystem::create_directories(out);
    const int R = config.scene.resolution;
    const auto pixels = static_cast<std::size_t>(R) * R;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const auto rendered = scene::render(latents[i], config.scene);
        const auto field = hypercolumn::build(rendered.features, R, config.channel_caps);
        const auto pred = labelgen::predict(model, field);
        Rgb8Image label(R, R), heat(R, R);
        double scale = 1.0;
        if (pred.uncertainty.kind == labelgen::UncertaintyKind::js_divergence) {
            scale = std::log(static_cast<double>(model.members.size()));
        } else {
            scale = *std::max_element(pred.uncertainty.values.begin(), pred.uncertainty.values.end());
        }
        double label_max = 0.0;
        std::vector<double> label_value(pixels, 0.0);
        if (!model.spec.discrete()) {
            for (std::size_t p = 0; p < pixels; ++p) {
                for (int c = 0; c < pred.label.channels; ++c) {
                    label_value[p] = std::max(label_value[p], static_cast<double>(pred.label.values[c * pixels + p]));
                }
                label_max = std::max(label_max, label_value[p]);
            }
        }
        for (std::size_t p = 0; p < pixels; ++p) {
            const int y = static_cast<int>(p / static_cast<std::size_t>(R));
            const int x = static_cast<int>(p % static_cast<std::size_t>(R));
            const auto lc = model.spec.discrete() ? class_view_color(pred.label.classes[p])
                                                  : heat_color(label_max > 0.0 ? label_value[p] / label_max : 0.0);
            const auto hc = heat_color(scale > 0.0 ? pred.uncertainty.values[p] / scale : 0.0);
            for (int c = 0; c < 3; ++c) {
                label.at(y, x, c) = lc[static_cast<std::size_t>(c)];
                heat.at(y, x, c) = hc[static_cast<std::size_t>(c)];
            }
        }
        write_png(out / ("view_" + std::to_string(i) + "_label.png"), label);
        write_png(out / ("view_" + std::to_string(i) + "_uncertainty.png"), heat);
    }
}

}  // namespace handsoff::harness
