// Command-line front end for the synthesis pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "handsoff/config.hpp"
#include "handsoff/errors.hpp"
#include "handsoff/harness.hpp"
#include "handsoff/hoff.hpp"
#include "handsoff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace handsoff;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "results";
    std::string channel_caps;
    std::optional<int> iterations;
    std::optional<double> c_reg;
    std::optional<double> lambda_l2;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "Experiment config file");
    cmd->add_option("--seed", c.seed, "Override experiment.seed");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--channel-caps", c.channel_caps, "Per-block hypercolumn channel caps, e.g. 0,0,-1,-1,-1");
    cmd->add_option("--iterations", c.iterations, "Override inversion.iterations");
    cmd->add_option("--c-reg", c.c_reg, "Override inversion.c_reg");
    cmd->add_option("--lambda-l2", c.lambda_l2, "Override inversion.lambda_l2");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.channel_caps.empty()) set_config_value(cfg, "labelgen.channel_caps", c.channel_caps);
    if (c.iterations) cfg.inversion.iterations = *c.iterations;
    if (c.c_reg) cfg.inversion.c_reg = *c.c_reg;
    if (c.lambda_l2) cfg.inversion.lambda_l2 = *c.lambda_l2;
    cfg.validate();
    return cfg;
}

void print_metrics(const downstream::EvalReport& report) {
    for (std::size_t i = 0; i < report.columns.size(); ++i) {
        std::printf("%s=%.6f\n", report.columns[i].c_str(), report.aggregate.values[i]);
    }
}

labelgen::EnsembleModel train_labelgen(const ExperimentConfig& cfg, pipeline::Workspace& ws,
                                       std::vector<pipeline::PoolEntry>& pool) {
    pool = ws.prepare_pool(cfg, pipeline::natural_pool(cfg));
    std::vector<labelgen::TrainingExample> examples;
    for (const auto& e : pool) examples.push_back({&e.field, &e.label});
    return labelgen::train_ensemble(stream_seed(cfg.seed, "labelgen"), examples, pipeline::task_spec(cfg), cfg.labelgen);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"handsoff: labeled dataset synthesis from a few inverted examples"};
    app.require_subcommand(1);
    Common common;
    std::string model_dir, manifest;

    auto* run = app.add_subcommand("run", "Full experiment: pool, inversion, label generator, synthesis, downstream, evaluation");
    bool no_dataset = false;
    run->add_flag("--no-dataset", no_dataset, "Skip writing the synthesized images and labels");
    auto* invert = app.add_subcommand("invert", "Invert the labeled pool; write latents, trajectories and final losses");
    auto* train = app.add_subcommand("train-labelgen", "Train the label-generator ensemble on the inverted pool");
    auto* synth = app.add_subcommand("synthesize", "Synthesize and filter a labeled dataset");
    synth->add_option("--model", model_dir, "Ensemble checkpoint directory (trained from the config when omitted)");
    auto* down = app.add_subcommand("train-downstream", "Train the downstream patch model on a dataset manifest");
    down->add_option("--manifest", manifest, "Dataset manifest.csv")->required();
    auto* eval = app.add_subcommand("evaluate", "Evaluate a downstream model on held-out oracle images");
    eval->add_option("--model", model_dir, "Downstream model directory")->required();
    auto* longtail = app.add_subcommand("longtail", "Long-tail substitution or addition sweep");
    auto* ablate = app.add_subcommand("ablate", "Ablation sweep over sweep.axis / sweep.values");
    auto* views = app.add_subcommand("export-views", "Write label and uncertainty PNGs for held-out latents");
    views->add_option("--model", model_dir, "Ensemble checkpoint directory (trained from the config when omitted)");
    std::size_t view_count = 8;
    views->add_option("--count", view_count, "Number of views");
    for (auto* cmd : {run, invert, train, synth, down, eval, longtail, ablate, views}) add_common(cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const ExperimentConfig cfg = resolve(common);
        const fs::path out = common.out;
        fs::create_directories(out);
        pipeline::Workspace ws;

        if (*run) {
            harness::RunOptions opt;
            opt.write_dataset = !no_dataset;
            const auto r = harness::run_experiment(cfg, out, ws, opt);
            print_metrics(r.report);
        } else if (*invert) {
            const auto pool = ws.prepare_pool(cfg, pipeline::natural_pool(cfg));
            std::ofstream csv(out / "inversion.csv");
            csv << "key,initial_loss,final_loss,final_reconstruction_error\n";
            std::vector<float> latents, traj;
            for (const auto& e : pool) {
                csv << e.key << ',' << e.inversion.trajectory.front() << ',' << e.inversion.trajectory.back() << ','
                    << e.inversion.reconstruction_error << "\n";
                for (double v : e.inversion.latent.values) latents.push_back(static_cast<float>(v));
                for (double v : e.inversion.trajectory) traj.push_back(static_cast<float>(v));
            }
            const auto n = static_cast<std::uint32_t>(pool.size());
            hoff::write(out / "latents.hoff",
                        hoff::Tensor::of_floats({n, static_cast<std::uint32_t>(cfg.scene.latent_dim())}, latents));
            hoff::write(out / "trajectories.hoff",
                        hoff::Tensor::of_floats({n, static_cast<std::uint32_t>(cfg.inversion.iterations + 1)}, traj));
            std::printf("inverted %u images\n", n);
        } else if (*train) {
            std::vector<pipeline::PoolEntry> pool;
            const auto model = train_labelgen(cfg, ws, pool);
            labelgen::save_ensemble(out / "labelgen", model);
            std::printf("trained %zu members\n", model.members.size());
        } else if (*synth) {
            labelgen::EnsembleModel model;
            if (model_dir.empty()) {
                std::vector<pipeline::PoolEntry> pool;
                model = train_labelgen(cfg, ws, pool);
            } else {
                model = labelgen::load_ensemble(model_dir);
            }
            synthesis::SynthesisOptions opt;
            opt.caps = cfg.channel_caps;
            auto result = synthesis::synthesize(cfg.seed, cfg.scene, model, cfg.dataset_size, cfg.filter_fraction, opt);
            synthesis::write_dataset(out / "dataset", result.retained, cfg.seed, config_hash(cfg));
            std::printf("retained %zu of %zu\n", result.retained.size(), cfg.dataset_size);
        } else if (*down) {
            const auto records = synthesis::load_dataset(manifest);
            std::vector<downstream::Sample> data;
            for (const auto& r : records) data.push_back({&r.image, &r.label});
            const auto model = downstream::train_downstream(stream_seed(cfg.seed, "downstream"), data,
                                                            pipeline::task_spec(cfg), cfg.downstream);
            downstream::save_model(out / "downstream", model);
            std::printf("final loss %.6f\n", model.loss_history.empty() ? 0.0 : model.loss_history.back());
        } else if (*eval) {
            const auto model = downstream::load_model(model_dir);
            const auto tests = pipeline::test_latents(cfg);
            const auto report = downstream::evaluate_downstream(downstream::as_predictor(model), tests, cfg.scene,
                                                                model.spec.task, pipeline::eval_options(cfg));
            downstream::write_report_csv(out / "metrics.csv", report);
            print_metrics(report);
        } else if (*longtail) {
            for (const auto& r : harness::run_longtail(cfg, out, ws)) {
                std::printf("%s seed=%llu proportion=%.4f added=%zu %s rare_iou=%.4f nonrare_miou=%.4f\n", r.mode.c_str(),
                            static_cast<unsigned long long>(r.seed), r.proportion, r.added, r.arm.c_str(), r.rare_iou,
                            r.nonrare_miou);
            }
        } else if (*ablate) {
            for (const auto& r : harness::run_ablation(cfg, out, ws)) {
                std::printf("%s=%s retained=%zu final_inversion_loss=%.6f\n", r.axis.c_str(), r.value.c_str(), r.retained,
                            r.final_inversion_loss);
            }
        } else if (*views) {
            labelgen::EnsembleModel model;
            if (model_dir.empty()) {
                std::vector<pipeline::PoolEntry> pool;
                model = train_labelgen(cfg, ws, pool);
            } else {
                model = labelgen::load_ensemble(model_dir);
            }
            auto tests = pipeline::test_latents(cfg);
            tests.resize(std::min(view_count, tests.size()));
            harness::export_uncertainty_view(model, tests, cfg, out / "views");
            std::printf("wrote %zu views\n", tests.size());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
