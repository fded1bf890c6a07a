#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lino/lightsim.hpp"

namespace lino::data {

inline constexpr const char* kManifestVersion = "lino-ps-data/1";

struct GenerateOptions {
    int num_scenes = 8;
    int frames = 6;
    std::vector<int> levels{1};
    uint64_t seed = 0;
    int size = 32;
};

struct ManifestEntry {
    std::string dir;
    int level = 1;
    uint64_t seed = 0;
    std::vector<int> config_ids;
};

struct Manifest {
    GenerateOptions options;
    std::vector<ManifestEntry> scenes;
};

/// Everything stored for one scene directory.
struct SceneRecord {
    ManifestEntry entry;
    sim::SceneSpec scene;  // heightfield undefined
    sim::MultiLightStack stack;
};

/// Generates scenes and writes the dataset tree rooted at `out`. Scene i uses
/// level levels[i % levels.size()]. Throws std::runtime_error on I/O failure.
Manifest generate_dataset(const GenerateOptions& options, const std::filesystem::path& out);

/// In-memory generation of scene `index` exactly as generate_dataset writes it.
SceneRecord generate_scene(const GenerateOptions& options, int index);

void write_scene(const SceneRecord& record, const std::filesystem::path& dir);

Manifest load_manifest(const std::filesystem::path& root);
SceneRecord load_scene(const std::filesystem::path& root, const ManifestEntry& entry);

nlohmann::json lighting_to_json(const sim::LightingAnnotation& lighting);
sim::LightingAnnotation lighting_from_json(const nlohmann::json& j);

nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

}  // namespace lino::data
