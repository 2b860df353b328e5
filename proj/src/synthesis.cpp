#include "handsoff/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "handsoff/errors.hpp"
#include "handsoff/parallel.hpp"
#include "handsoff/rng.hpp"

namespace handsoff::synthesis {
namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string padded_id(std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(id));
    return buf;
}

}  // namespace

std::size_t rejected_count(std::size_t n, double fraction) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("filter fraction must lie in [0, 1)");
    const double k = std::ceil(fraction * static_cast<double>(n) - 1e-9);
    return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

FilterSplit filter_by_uncertainty(std::span<const double> uncertainties, double fraction) {
    const std::size_t n = uncertainties.size();
    const std::size_t k = rejected_count(n, fraction);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return uncertainties[a] > uncertainties[b]; });
    FilterSplit split;
    split.rejected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    split.retained.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(split.retained.begin(), split.retained.end());
    return split;
}

SynthesisResult synthesize(std::uint64_t seed, const scene::SceneConfig& config, const labelgen::EnsembleModel& model,
                           std::size_t n, double filter_fraction, const SynthesisOptions& options) {
    if (n == 0) throw InputError("synthesis needs n >= 1");
    rejected_count(n, filter_fraction);
    config.validate();
    std::vector<DatasetRecord> records(n);
    parallel_for(n, [&](std::size_t i) {
        auto& rec = records[i];
        rec.id = options.first_id + i;
        Rng rng = make_stream(seed, "synth", rec.id);
        rec.latent = scene::sample_latent(rng, config);
        auto rendered = scene::render(rec.latent, config);
        rec.image = quantize(rendered.image);
        const auto field = hypercolumn::build(rendered.features, config.resolution, options.caps);
        auto pred = labelgen::predict(model, field);
        rec.label = std::move(pred.label);
        rec.uncertainty = labelgen::image_uncertainty(pred.uncertainty);
        rec.presence = scene::oracle_labels(rec.latent, config).presence;
    });
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = records[i].uncertainty;
    const auto split = filter_by_uncertainty(u, filter_fraction);
    SynthesisResult result;
    for (std::size_t i : split.retained) result.retained.push_back(std::move(records[i]));
    for (std::size_t i : split.rejected) result.rejected.push_back(std::move(records[i]));
    return result;
}

void PoolSpec::validate() const {
    if (mode == PoolMode::substitute && !(proportion >= 0.0 && proportion <= 1.0)) {
        throw ConfigError("pool proportion must lie in [0, 1]");
    }
}

std::vector<PoolItem> build_pool(std::uint64_t seed, const scene::SceneConfig& config, const PoolSpec& spec) {
    spec.validate();
    scene::SceneConfig cfg = config;
    if (spec.rare_class >= 0) cfg.rare_class = spec.rare_class;
    cfg.validate();

    std::vector<std::pair<std::string, std::optional<double>>> plan;  // stream tag, rare bias
    std::vector<std::size_t> index;
    auto add = [&](const char* tag, std::optional<double> bias, std::size_t count) {
        for (std::size_t j = 0; j < count; ++j) {
            plan.emplace_back(tag, bias);
            index.push_back(j);
        }
    };
    if (spec.mode == PoolMode::substitute) {
        const auto rare = static_cast<std::size_t>(std::llround(spec.proportion * static_cast<double>(spec.base_size)));
        add("pool+rare", 1.0, rare);
        add("pool-rare", 0.0, spec.base_size - rare);
    } else {
        add("pool-base", std::nullopt, spec.base_size);
        add("pool+rare", 1.0, spec.add_with_rare);
        add("pool-rare", 0.0, spec.add_without_rare);
    }
    std::vector<PoolItem> pool(plan.size());
    parallel_for(plan.size(), [&](std::size_t i) {
        Rng rng = make_stream(seed, plan[i].first, index[i]);
        pool[i].key = plan[i].first + "/" + std::to_string(index[i]);
        pool[i].latent = scene::sample_latent(rng, cfg, plan[i].second);
        pool[i].labels = scene::oracle_labels(pool[i].latent, cfg);
    });
    return pool;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << "# seed=" << manifest.seed << "\n";
    out << "# config_hash=" << manifest.config_hash << "\n";
    out << "# task=" << manifest.task << "\n";
    out << "id,image_path,label_path,uncertainty\n";
    for (const auto& e : manifest.entries) {
        out << e.id << ',' << e.image_path << ',' << e.label_path << ',' << format_double(e.uncertainty) << "\n";
    }
    if (!out) throw IoError("failed writing manifest " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(1, eq - 1);
            key.erase(0, key.find_first_not_of(' '));
            const std::string value = line.substr(eq + 1);
            if (key == "seed") m.seed = std::stoull(value);
            if (key == "config_hash") m.config_hash = value;
            if (key == "task") m.task = value;
            continue;
        }
        if (!header) {
            if (line != "id,image_path,label_path,uncertainty") throw IoError("manifest " + path.string() + " has an unexpected header");
            header = true;
            continue;
        }
        std::istringstream fields(line);
        std::string id, img, lbl, unc;
        if (!std::getline(fields, id, ',') || !std::getline(fields, img, ',') || !std::getline(fields, lbl, ',') ||
            !std::getline(fields, unc)) {
            throw IoError("manifest " + path.string() + " line " + std::to_string(line_no) + " is malformed");
        }
        try {
            m.entries.push_back({std::stoull(id), img, lbl, std::stod(unc)});
        } catch (const std::logic_error&) {
            throw IoError("manifest " + path.string() + " line " + std::to_string(line_no) + " has a bad number");
        }
    }
    if (!header) throw IoError("manifest " + path.string() + " has no header row");
    return m;
}

void write_dataset(const std::filesystem::path& dir, std::span<DatasetRecord> records, std::uint64_t seed,
                   const std::string& config_hash) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "labels");
    Manifest m;
    m.seed = seed;
    m.config_hash = config_hash;
    if (!records.empty()) m.task = to_string(records.front().label.task);
    for (auto& rec : records) {
        rec.image_path = "images/" + padded_id(rec.id) + ".png";
        rec.label_path = "labels/" + padded_id(rec.id) + ".hoff";
        write_png(dir / rec.image_path, rec.image);
        save_label(dir / rec.label_path, rec.label);
        m.entries.push_back({rec.id, rec.image_path, rec.label_path, rec.uncertainty});
    }
    write_manifest(dir / "manifest.csv", m);
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& manifest_path) {
    const auto m = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    const TaskKind task = parse_task(m.task);
    std::vector<DatasetRecord> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        DatasetRecord rec;
        rec.id = e.id;
        rec.image_path = e.image_path;
        rec.label_path = e.label_path;
        rec.uncertainty = e.uncertainty;
        rec.image = read_png(base / e.image_path);
        rec.label = load_label(base / e.label_path, task);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace handsoff::synthesis
