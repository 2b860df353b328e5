#include "handsoff/pipeline.hpp"

#include <cstdio>
#include <numeric>
#include <string_view>

#include "handsoff/errors.hpp"
#include "handsoff/label_codec.hpp"
#include "handsoff/parallel.hpp"
#include "handsoff/rng.hpp"

namespace handsoff::pipeline {
namespace {

/// Runs f, prefixing any library error with the stage name.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    const std::string prefix = std::string(name) + ": ";
    try {
        return f();
    } catch (const ShapeError& e) {
        throw ShapeError(prefix + e.what());
    } catch (const InputError& e) {
        throw InputError(prefix + e.what());
    } catch (const NumericError& e) {
        throw NumericError(prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const IoError& e) {
        throw IoError(prefix + e.what());
    }
}

std::string joined_values(const ExperimentConfig& config, std::initializer_list<const char*> keys) {
    std::string out;
    for (const char* k : keys) out += std::string(k) + "=" + get_config_value(config, k) + ";";
    return out;
}

// Keyed on the scene the encoder actually trains on, so configs that differ
// only in a rare frequency the encoder overrides share one encoder.
std::string encoder_key(const ExperimentConfig& config) {
    ExperimentConfig effective = config;
    effective.scene = inversion::encoder_scene(config.scene, config.encoder);
    return joined_values(effective, {"inversion.encoder_seed", "inversion.encoder_uniform_classes", "scene.resolution",
                                     "scene.slots", "scene.classes", "scene.tau", "scene.rare_class",
                                     "scene.rare_frequency", "scene.presence_prob", "scene.slot_bound_classes",
                                     "scene.base_radius", "inversion.encoder_pairs", "inversion.encoder_epochs",
                                     "inversion.encoder_hidden1", "inversion.encoder_hidden2"});
}

// Item keys name a stream position, which repeats across seeds; the latent
// bytes make the cache key follow the observed image.
std::string latent_key(const scene::Latent& w) {
    const std::string_view bytes(reinterpret_cast<const char*>(w.values.data()), w.values.size() * sizeof(double));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

}  // namespace

labelgen::TaskSpec task_spec(const ExperimentConfig& config) {
    labelgen::TaskSpec spec;
    spec.task = config.task;
    switch (config.task) {
        case TaskKind::segmentation:
            spec.outputs = config.scene.classes;
            break;
        case TaskKind::keypoints:
            spec.outputs = config.scene.slots;
            spec.output_scale = codec::kHeatmapPeak;
            break;
        case TaskKind::depth:
            spec.outputs = 1;
            spec.output_scale = static_cast<float>(config.scene.far_depth);
            break;
    }
    return spec;
}

LabelPlane task_label(const scene::OracleLabels& oracle, const ExperimentConfig& config, const std::string& key) {
    LabelPlane label;
    label.task = config.task;
    label.resolution = oracle.resolution;
    switch (config.task) {
        case TaskKind::segmentation:
            label.classes = oracle.segmentation;
            break;
        case TaskKind::keypoints: {
            const auto set = codec::encode_keypoints(oracle.keypoints, oracle.resolution, config.heatmap_sigma);
            label.channels = set.count();
            label.values = set.values;
            for (const auto& kp : oracle.keypoints) label.channel_weight.push_back(kp.visible ? 1.0f : 0.0f);
            break;
        }
        case TaskKind::depth: {
            Rng rng = make_stream(config.seed, "corrupt-pool/" + key);
            label.values = codec::corrupt_depth(oracle.depth, config.corrupt_fraction, 0.0f, rng);
            label.valid = codec::validity_mask(label.values, 0.0f);
            break;
        }
    }
    return label;
}

std::vector<synthesis::PoolItem> natural_pool(const ExperimentConfig& config) {
    synthesis::PoolSpec spec;
    spec.mode = synthesis::PoolMode::add;
    spec.base_size = config.pool_size;
    return synthesis::build_pool(config.seed, config.scene, spec);
}

std::vector<scene::Latent> test_latents(const ExperimentConfig& config) {
    std::vector<scene::Latent> out(config.test_size);
    for (std::size_t i = 0; i < out.size(); ++i) {
        Rng rng = make_stream(config.seed, "test", i);
        out[i] = scene::sample_latent(rng, config.scene);
    }
    return out;
}

downstream::EvalOptions eval_options(const ExperimentConfig& config) {
    downstream::EvalOptions opt;
    opt.classes = config.scene.classes;
    opt.corrupt_fraction = config.corrupt_fraction;
    opt.corrupt_seed = stream_seed(config.seed, "evaluation");
    return opt;
}

const inversion::Encoder& Workspace::encoder(const ExperimentConfig& config) {
    const std::string key = encoder_key(config);
    auto& slot = encoders_[key];
    if (!slot) {
        slot = std::make_shared<inversion::Encoder>(
            inversion::train_encoder(config.scene, config.encoder));
    }
    return *slot;
}

std::vector<PoolEntry> Workspace::prepare_pool(const ExperimentConfig& config,
                                               const std::vector<synthesis::PoolItem>& items) {
    const auto& enc = encoder(config);
    const std::string prefix =
        encoder_key(config) + joined_values(config, {"inversion.c_reg", "inversion.lambda_l2", "inversion.iterations",
                                                     "inversion.step_size", "inversion.max_halvings",
                                                     "inversion.perceptual", "labelgen.channel_caps"});
    std::vector<PoolEntry> pool(items.size());
    std::vector<std::shared_ptr<Inverted>> found(items.size());
    std::vector<std::string> keys(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        keys[i] = prefix + items[i].key + "@" + latent_key(items[i].latent);
        if (auto it = inverted_.find(keys[i]); it != inverted_.end()) found[i] = it->second;
    }
    parallel_for(items.size(), [&](std::size_t i) {
        auto& e = pool[i];
        e.key = items[i].key;
        e.latent = items[i].latent;
        e.oracle = items[i].labels;
        e.image = quantize(scene::render_image(e.latent, config.scene));
        e.label = task_label(e.oracle, config, e.key);
        if (found[i]) return;
        const RgbImage observed = dequantize(e.image);
        const auto w_e = inversion::encode(enc.net, observed, config.scene);
        auto inv = std::make_shared<Inverted>();
        inv->result = inversion::refine(observed, w_e, config.inversion, config.scene);
        inv->field = hypercolumn::build(scene::render(inv->result.latent, config.scene).features, config.scene.resolution,
                                        config.channel_caps);
        found[i] = std::move(inv);
    });
    for (std::size_t i = 0; i < items.size(); ++i) {
        inverted_.emplace(keys[i], found[i]);
        pool[i].inversion = found[i]->result;
        pool[i].field = found[i]->field;
    }
    return pool;
}

RunResult run(const ExperimentConfig& config, Workspace& workspace, const std::vector<synthesis::PoolItem>* pool) {
    config.validate();
    RunResult r;
    const auto spec = task_spec(config);
    const auto items = pool ? *pool : stage("pool", [&] { return natural_pool(config); });
    if (items.empty()) throw InputError("pool: labeled pool is empty");
    r.pool = stage("inversion", [&] { return workspace.prepare_pool(config, items); });
    for (const auto& e : r.pool) {
        r.mean_initial_inversion_loss += e.inversion.trajectory.front();
        r.mean_final_inversion_loss += e.inversion.trajectory.back();
        r.mean_reconstruction_error += e.inversion.reconstruction_error;
    }
    const auto n_pool = static_cast<double>(r.pool.size());
    r.mean_initial_inversion_loss /= n_pool;
    r.mean_final_inversion_loss /= n_pool;
    r.mean_reconstruction_error /= n_pool;

    r.model = stage("label generator", [&] {
        std::vector<labelgen::TrainingExample> examples;
        for (const auto& e : r.pool) examples.push_back({&e.field, &e.label});
        return labelgen::train_ensemble(stream_seed(config.seed, "labelgen"), examples, spec, config.labelgen);
    });
    r.dataset = stage("synthesis", [&] {
        synthesis::SynthesisOptions opt;
        opt.caps = config.channel_caps;
        return synthesis::synthesize(config.seed, config.scene, r.model, config.dataset_size, config.filter_fraction, opt);
    });
    r.downstream = stage("downstream", [&] {
        std::vector<downstream::Sample> data;
        for (const auto& rec : r.dataset.retained) data.push_back({&rec.image, &rec.label});
        return downstream::train_downstream(stream_seed(config.seed, "downstream"), data, spec, config.downstream);
    });
    if (config.finetune.epochs > 0) {
        r.finetune_trajectory = stage("finetune", [&] {
            std::vector<downstream::Sample> originals;
            for (const auto& e : r.pool) originals.push_back({&e.image, &e.label});
            return downstream::finetune(r.downstream, stream_seed(config.seed, "finetune"), originals, config.finetune);
        });
    }
    r.report = stage("evaluation", [&] {
        const auto tests = test_latents(config);
        return downstream::evaluate_downstream(downstream::as_predictor(r.downstream), tests, config.scene, config.task,
                                               eval_options(config));
    });
    return r;
}

}  // namespace handsoff::pipeline
