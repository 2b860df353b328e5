#include "handsoff/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "handsoff/errors.hpp"
#include "handsoff/rng.hpp"

namespace handsoff {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        std::string item = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (!item.empty()) out.push_back(std::move(item));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
    throw ConfigError("config key " + std::string(key) + ": '" + std::string(value) + "' is not " + std::string(expected));
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
    return out;
}

std::size_t to_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(to_u64(key, v)); }

int to_int(std::string_view key, std::string_view v) {
    int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

double to_double(std::string_view key, std::string_view v) {
    const std::string s(v);
    char* end = nullptr;
    const double out = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) bad_value(key, v, "a number");
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "a boolean");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
std::string join(const std::vector<T>& items, const char* sep) {
    std::ostringstream out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out << sep;
        if constexpr (std::is_floating_point_v<T>) {
            out << fmt(items[i]);
        } else {
            out << items[i];
        }
    }
    return out.str();
}

nn::OptimizerKind to_optimizer(std::string_view key, std::string_view v) {
    if (v == "sgd") return nn::OptimizerKind::sgd;
    if (v == "adam") return nn::OptimizerKind::adam;
    bad_value(key, v, "sgd or adam");
}

const char* optimizer_name(nn::OptimizerKind k) { return k == nn::OptimizerKind::adam ? "adam" : "sgd"; }

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, std::string_view, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define HOFF_SIZE(name, member)                                                                  \
    Field {                                                                                      \
        name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = to_size(k, v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.member); }                   \
    }
#define HOFF_INT(name, member)                                                                   \
    Field {                                                                                      \
        name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = to_int(k, v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.member); }                   \
    }
#define HOFF_DOUBLE(name, member)                                                                \
    Field {                                                                                      \
        name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = to_double(k, v); }, \
            [](const ExperimentConfig& c) { return fmt(c.member); }                              \
    }
#define HOFF_BOOL(name, member)                                                                  \
    Field {                                                                                      \
        name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = to_bool(k, v); }, \
            [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }   \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"experiment.seed", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        {"experiment.task", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.task = parse_task(v); },
         [](const ExperimentConfig& c) { return to_string(c.task); }},
        HOFF_SIZE("experiment.pool_size", pool_size),
        HOFF_SIZE("experiment.dataset_size", dataset_size),
        HOFF_DOUBLE("experiment.filter_fraction", filter_fraction),
        HOFF_SIZE("experiment.test_size", test_size),

        HOFF_INT("scene.resolution", scene.resolution),
        HOFF_INT("scene.slots", scene.slots),
        HOFF_INT("scene.classes", scene.classes),
        HOFF_DOUBLE("scene.tau", scene.tau),
        HOFF_INT("scene.rare_class", scene.rare_class),
        HOFF_DOUBLE("scene.rare_frequency", scene.rare_frequency),
        HOFF_DOUBLE("scene.presence_prob", scene.presence_prob),
        HOFF_BOOL("scene.slot_bound_classes", scene.slot_bound_classes),
        HOFF_DOUBLE("scene.base_radius", scene.base_radius),

        HOFF_DOUBLE("inversion.c_reg", inversion.c_reg),
        HOFF_DOUBLE("inversion.lambda_l2", inversion.lambda_l2),
        HOFF_INT("inversion.iterations", inversion.iterations),
        HOFF_DOUBLE("inversion.step_size", inversion.step_size),
        HOFF_INT("inversion.max_halvings", inversion.max_halvings),
        {"inversion.perceptual",
         [](ExperimentConfig& c, std::string_view k, std::string_view v) {
             if (v == "multiscale_l2") {
                 c.inversion.perceptual = inversion::PerceptualKind::multiscale_l2;
             } else if (v == "none") {
                 c.inversion.perceptual = inversion::PerceptualKind::none;
             } else {
                 bad_value(k, v, "multiscale_l2 or none");
             }
         },
         [](const ExperimentConfig& c) {
             return std::string(c.inversion.perceptual == inversion::PerceptualKind::none ? "none" : "multiscale_l2");
         }},
        {"inversion.encoder_seed", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.encoder.seed = to_u64(k, v); },
         [](const ExperimentConfig& c) { return std::to_string(c.encoder.seed); }},
        HOFF_BOOL("inversion.encoder_uniform_classes", encoder.uniform_classes),
        HOFF_SIZE("inversion.encoder_pairs", encoder.pairs),
        HOFF_SIZE("inversion.encoder_epochs", encoder.fit.epochs),
        HOFF_SIZE("inversion.encoder_hidden1", encoder.hidden1),
        HOFF_SIZE("inversion.encoder_hidden2", encoder.hidden2),

        HOFF_SIZE("labelgen.members", labelgen.members),
        HOFF_SIZE("labelgen.hidden1", labelgen.hidden1),
        HOFF_SIZE("labelgen.hidden2", labelgen.hidden2),
        HOFF_SIZE("labelgen.pixels_per_image", labelgen.pixels_per_image),
        HOFF_BOOL("labelgen.class_balanced", labelgen.class_balanced),
        HOFF_SIZE("labelgen.epochs", labelgen.fit.epochs),
        HOFF_SIZE("labelgen.batch_size", labelgen.fit.batch_size),
        {"labelgen.optimizer",
         [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.labelgen.fit.optimizer.kind = to_optimizer(k, v); },
         [](const ExperimentConfig& c) { return std::string(optimizer_name(c.labelgen.fit.optimizer.kind)); }},
        HOFF_DOUBLE("labelgen.learning_rate", labelgen.fit.optimizer.learning_rate),
        {"labelgen.channel_caps",
         [](ExperimentConfig& c, std::string_view, std::string_view v) {
             if (v.empty() || v == "none") {
                 c.channel_caps.reset();
             } else {
                 c.channel_caps = hypercolumn::parse_caps(v);
             }
         },
         [](const ExperimentConfig& c) { return c.channel_caps ? join(*c.channel_caps, ",") : std::string("none"); }},

        HOFF_INT("downstream.radius", downstream.radius),
        HOFF_SIZE("downstream.hidden1", downstream.hidden1),
        HOFF_SIZE("downstream.hidden2", downstream.hidden2),
        HOFF_SIZE("downstream.epochs", downstream.epochs),
        HOFF_SIZE("downstream.pixels_per_image", downstream.pixels_per_image),
        HOFF_SIZE("downstream.batch_size", downstream.batch_size),
        {"downstream.optimizer",
         [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.downstream.optimizer.kind = to_optimizer(k, v); },
         [](const ExperimentConfig& c) { return std::string(optimizer_name(c.downstream.optimizer.kind)); }},
        HOFF_DOUBLE("downstream.learning_rate", downstream.optimizer.learning_rate),
        HOFF_SIZE("downstream.finetune_epochs", finetune.epochs),
        HOFF_DOUBLE("downstream.finetune_learning_rate", finetune.learning_rate),

        HOFF_DOUBLE("keypoints.sigma", heatmap_sigma),
        HOFF_DOUBLE("depth.corrupt_fraction", corrupt_fraction),

        {"sweep.axis", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.sweep.axis = std::string(v); },
         [](const ExperimentConfig& c) { return c.sweep.axis; }},
        {"sweep.values", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.sweep.values = split(v, ';'); },
         [](const ExperimentConfig& c) { return join(c.sweep.values, "; "); }},

        {"longtail.mode", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.longtail.mode = std::string(v); },
         [](const ExperimentConfig& c) { return c.longtail.mode; }},
        {"longtail.proportions",
         [](ExperimentConfig& c, std::string_view k, std::string_view v) {
             c.longtail.proportions.clear();
             for (const auto& item : split(v, ',')) {
                 const auto slash = item.find('/');
                 if (slash == std::string::npos) {
                     c.longtail.proportions.push_back(to_double(k, item));
                 } else {
                     const double den = to_double(k, trim(item.substr(slash + 1)));
                     if (den == 0.0) bad_value(k, item, "a valid fraction");
                     c.longtail.proportions.push_back(to_double(k, trim(item.substr(0, slash))) / den);
                 }
             }
         },
         [](const ExperimentConfig& c) { return join(c.longtail.proportions, ","); }},
        {"longtail.base_size", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.longtail.base_size = to_size(k, v); },
         [](const ExperimentConfig& c) { return std::to_string(c.longtail.base_size); }},
        {"longtail.added_counts",
         [](ExperimentConfig& c, std::string_view k, std::string_view v) {
             c.longtail.added_counts.clear();
             for (const auto& item : split(v, ',')) c.longtail.added_counts.push_back(to_size(k, item));
         },
         [](const ExperimentConfig& c) { return join(c.longtail.added_counts, ","); }},
        {"longtail.seeds", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.longtail.seeds = to_size(k, v); },
         [](const ExperimentConfig& c) { return std::to_string(c.longtail.seeds); }},
    };
    return table;
}

#undef HOFF_SIZE
#undef HOFF_INT
#undef HOFF_DOUBLE
#undef HOFF_BOOL

const Field& find_field(std::string_view key) {
    for (const auto& f : fields()) {
        if (key == f.key) return f;
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
    scene.validate();
    inversion.validate();
    if (pool_size == 0) throw ConfigError("experiment.pool_size must be positive");
    if (dataset_size == 0) throw ConfigError("experiment.dataset_size must be positive");
    if (test_size == 0) throw ConfigError("experiment.test_size must be positive");
    if (!(filter_fraction >= 0.0 && filter_fraction < 1.0)) throw ConfigError("experiment.filter_fraction must lie in [0, 1)");
    if (labelgen.members == 0) throw ConfigError("labelgen.members must be positive");
    if (labelgen.hidden1 == 0 || labelgen.hidden2 == 0) throw ConfigError("labelgen hidden widths must be positive");
    if (labelgen.pixels_per_image == 0) throw ConfigError("labelgen.pixels_per_image must be positive");
    if (labelgen.fit.batch_size == 0) throw ConfigError("labelgen.batch_size must be positive");
    if (!(labelgen.fit.optimizer.learning_rate > 0.0)) throw ConfigError("labelgen.learning_rate must be positive");
    if (downstream.radius < 0) throw ConfigError("downstream.radius must be non-negative");
    if (downstream.hidden1 == 0 || downstream.hidden2 == 0) throw ConfigError("downstream hidden widths must be positive");
    if (downstream.batch_size == 0 || downstream.pixels_per_image == 0) {
        throw ConfigError("downstream batch_size and pixels_per_image must be positive");
    }
    if (!(downstream.optimizer.learning_rate > 0.0)) throw ConfigError("downstream.learning_rate must be positive");
    if (!(heatmap_sigma > 0.0)) throw ConfigError("keypoints.sigma must be positive");
    if (!(corrupt_fraction >= 0.0 && corrupt_fraction < 1.0)) throw ConfigError("depth.corrupt_fraction must lie in [0, 1)");
    if (encoder.pairs == 0) throw ConfigError("inversion.encoder_pairs must be positive");
    if (channel_caps && static_cast<int>(channel_caps->size()) != scene.block_count()) {
        throw ConfigError("labelgen.channel_caps needs one entry per block (" + std::to_string(scene.block_count()) + ")");
    }
    if (!sweep.axis.empty() && sweep.values.empty()) throw ConfigError("sweep.values must be non-empty when sweep.axis is set");
    if (longtail.mode != "substitute" && longtail.mode != "add") throw ConfigError("longtail.mode must be substitute or add");
    for (double p : longtail.proportions) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("longtail.proportions must lie in [0, 1]");
    }
    if (longtail.seeds == 0) throw ConfigError("longtail.seeds must be positive");
}

void set_config_value(ExperimentConfig& config, std::string_view dotted_key, std::string_view value) {
    find_field(dotted_key).set(config, dotted_key, trim(value));
}

std::string get_config_value(const ExperimentConfig& config, std::string_view dotted_key) {
    return find_field(dotted_key).get(config);
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig config;
    std::istringstream in{std::string(text)};
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
        const std::string key = section + "." + trim(std::string_view(t).substr(0, eq));
        try {
            set_config_value(config, key, std::string_view(t).substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    config.validate();
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string canonical_text(const ExperimentConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

std::string config_hash(const ExperimentConfig& config, const std::vector<std::string>& exclude) {
    std::uint64_t h = fnv1a("");
    for (const auto& f : fields()) {
        if (std::find(exclude.begin(), exclude.end(), f.key) != exclude.end()) continue;
        h = fnv1a(std::string(f.key) + "=" + f.get(config) + "\n", h);
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace handsoff
