#pragma once

// Dataset synthesis: sample latents, render, label with the ensemble, rank by
// summed uncertainty and drop the most uncertain fraction. Also assembles
// labeled pools with a controlled share of the rare class.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handsoff/hypercolumn.hpp"
#include "handsoff/image.hpp"
#include "handsoff/label_generator.hpp"
#include "handsoff/labels.hpp"
#include "handsoff/scene.hpp"

namespace handsoff::synthesis {

struct DatasetRecord {
    std::uint64_t id = 0;
    scene::Latent latent;
    Rgb8Image image;
    LabelPlane label;
    double uncertainty = 0.0;
    std::vector<bool> presence;  // oracle class presence
    std::string image_path;      // relative to the manifest, set once written
    std::string label_path;
};

/// ceil(fraction * n), computed so that exact products are not pushed up by rounding.
std::size_t rejected_count(std::size_t n, double fraction);

struct FilterSplit {
    std::vector<std::size_t> retained;  // ascending index
    std::vector<std::size_t> rejected;  // most uncertain first
};

/// Ranks by uncertainty descending (ties: lower index first) and rejects the
/// first rejected_count(n, fraction).
FilterSplit filter_by_uncertainty(std::span<const double> uncertainties, double fraction);

struct SynthesisOptions {
    std::optional<hypercolumn::ChannelCaps> caps;
    std::uint64_t first_id = 0;
};

struct SynthesisResult {
    std::vector<DatasetRecord> retained;  // id order
    std::vector<DatasetRecord> rejected;  // most uncertain first
};

SynthesisResult synthesize(std::uint64_t seed, const scene::SceneConfig& config, const labelgen::EnsembleModel& model,
                           std::size_t n, double filter_fraction, const SynthesisOptions& options = {});

enum class PoolMode { substitute, add };

struct PoolSpec {
    PoolMode mode = PoolMode::substitute;
    std::size_t base_size = 16;
    int rare_class = -1;           // -1 keeps the scene config's rare class
    double proportion = 0.0;       // substitute: share of items containing the rare class
    std::size_t add_with_rare = 0; // add: extra items forced to contain the rare class
    std::size_t add_without_rare = 0;

    void validate() const;
};

struct PoolItem {
    std::string key;  // stream tag and index that produced the latent
    scene::Latent latent;
    scene::OracleLabels labels;
};

/// Substitute: round(proportion * base) rare-present items then rare-absent
/// ones. Add: a natural base followed by the requested additions. Each kind of
/// item comes from its own stream so pools share items across specs.
std::vector<PoolItem> build_pool(std::uint64_t seed, const scene::SceneConfig& config, const PoolSpec& spec);

struct ManifestEntry {
    std::uint64_t id = 0;
    std::string image_path;
    std::string label_path;
    double uncertainty = 0.0;
};

struct Manifest {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string task = "segmentation";
    std::vector<ManifestEntry> entries;
};

/// Writes images (PNG) and labels (HOFF) under dir and a manifest.csv listing them.
void write_dataset(const std::filesystem::path& dir, std::span<DatasetRecord> records, std::uint64_t seed,
                   const std::string& config_hash);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Loads every record of a manifest (paths resolved against its directory).
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace handsoff::synthesis
