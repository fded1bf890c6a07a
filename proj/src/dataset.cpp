#include "lino/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "lino/image_io.hpp"

namespace lino::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string scene_dir_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05d", index);
    return buf;
}

std::string image_name(int frame) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%02d.exr", frame);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

}  // namespace

json lighting_to_json(const sim::LightingAnnotation& lighting) {
    json j;
    j["config_id"] = lighting.config_id;
    auto env = lighting.env.to(torch::kFloat32).contiguous();
    json rows = json::array();
    for (int64_t r = 0; r < env.size(0); ++r) {
        json row = json::array();
        for (int64_t c = 0; c < env.size(1); ++c) {
            row.push_back({env[r][c][0].item<float>(), env[r][c][1].item<float>(), env[r][c][2].item<float>()});
        }
        rows.push_back(std::move(row));
    }
    j["env"] = std::move(rows);
    j["points"] = lighting.points;
    j["directions"] = lighting.directions;
    return j;
}

sim::LightingAnnotation lighting_from_json(const json& j) {
    sim::LightingAnnotation a;
    a.config_id = j.at("config_id").get<int>();
    const auto& rows = j.at("env");
    const auto n = static_cast<int64_t>(rows.size());
    if (n != sim::kEnvSize) throw std::runtime_error("lighting: env map must be 16x16x3");
    a.env = torch::zeros({n, n, 3}, torch::kFloat32);
    auto acc = a.env.accessor<float, 3>();
    for (int64_t r = 0; r < n; ++r) {
        if (static_cast<int64_t>(rows[r].size()) != n) throw std::runtime_error("lighting: ragged env map");
        for (int64_t c = 0; c < n; ++c) {
            for (int k = 0; k < 3; ++k) acc[r][c][k] = rows[r][c].at(k).get<float>();
        }
    }
    a.points = j.at("points").get<std::vector<sim::PointLight>>();
    a.directions = j.at("directions").get<std::vector<sim::DirectionalLight>>();
    return a;
}

json manifest_to_json(const Manifest& m) {
    json j;
    j["version"] = kManifestVersion;
    j["num_scenes"] = m.options.num_scenes;
    j["frames"] = m.options.frames;
    j["levels"] = m.options.levels;
    j["seed"] = m.options.seed;
    j["size"] = m.options.size;
    json scenes = json::array();
    for (const auto& e : m.scenes) {
        scenes.push_back({{"dir", e.dir}, {"complexity_level", e.level}, {"seed", e.seed}, {"config_ids", e.config_ids}});
    }
    j["scenes"] = std::move(scenes);
    return j;
}

Manifest manifest_from_json(const json& j) {
    if (j.value("version", "") != kManifestVersion) {
        throw std::runtime_error("manifest: unsupported version");
    }
    Manifest m;
    m.options.num_scenes = j.at("num_scenes").get<int>();
    m.options.frames = j.at("frames").get<int>();
    m.options.levels = j.at("levels").get<std::vector<int>>();
    m.options.seed = j.at("seed").get<uint64_t>();
    m.options.size = j.at("size").get<int>();
    for (const auto& s : j.at("scenes")) {
        ManifestEntry e;
        e.dir = s.at("dir").get<std::string>();
        e.level = s.at("complexity_level").get<int>();
        e.seed = s.at("seed").get<uint64_t>();
        e.config_ids = s.at("config_ids").get<std::vector<int>>();
        m.scenes.push_back(std::move(e));
    }
    return m;
}

SceneRecord generate_scene(const GenerateOptions& options, int index) {
    if (options.frames < 1) throw std::invalid_argument("generate: frames must be >= 1");
    if (options.levels.empty()) throw std::invalid_argument("generate: at least one level required");
    SceneRecord rec;
    rec.entry.dir = scene_dir_name(index);
    rec.entry.level = options.levels[static_cast<size_t>(index) % options.levels.size()];
    rec.entry.seed = sim::mix_seed(options.seed, static_cast<uint64_t>(index));

    rec.scene = sim::make_scene(rec.entry.level, rec.entry.seed, {.size = options.size});
    std::mt19937_64 rng(sim::mix_seed(rec.entry.seed, 77));
    std::uniform_int_distribution<int> pick(1, sim::kNumConfigs);
    std::vector<sim::LightingAnnotation> lightings;
    for (int f = 0; f < options.frames; ++f) {
        const int config = pick(rng);
        rec.entry.config_ids.push_back(config);
        lightings.push_back(sim::sample_lighting(config, sim::mix_seed(rec.entry.seed, 100u + static_cast<uint64_t>(f))));
    }
    rec.stack = sim::render_stack(rec.scene, lightings);
    rec.scene.heightfield = torch::Tensor();
    return rec;
}

void write_scene(const SceneRecord& rec, const fs::path& dir) {
    fs::create_directories(dir);
    for (int64_t f = 0; f < rec.stack.frames(); ++f) {
        io::write_exr(dir / image_name(static_cast<int>(f)), rec.stack.images[f]);
    }
    io::write_exr(dir / "normal_gt.exr", rec.scene.normals);
    io::write_exr(dir / "albedo_gt.exr", rec.scene.albedo);
    io::write_exr(dir / "rough_gt.exr", rec.scene.roughness);
    io::write_exr(dir / "metal_gt.exr", rec.scene.metallic);
    io::write_mask_png(dir / "mask.png", rec.scene.mask);

    json lj;
    lj["complexity_level"] = rec.entry.level;
    lj["frames"] = json::array();
    for (const auto& l : rec.stack.lightings) lj["frames"].push_back(lighting_to_json(l));
    write_text(dir / "lighting.json", lj.dump(1) + "\n");
}

Manifest generate_dataset(const GenerateOptions& options, const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
        throw std::runtime_error("cannot create dataset directory " + out.string());
    }
    Manifest m;
    m.options = options;
    for (int i = 0; i < options.num_scenes; ++i) {
        auto rec = generate_scene(options, i);
        write_scene(rec, out / rec.entry.dir);
        m.scenes.push_back(rec.entry);
    }
    write_text(out / "manifest.json", manifest_to_json(m).dump(1) + "\n");
    return m;
}

Manifest load_manifest(const fs::path& root) { return manifest_from_json(read_json(root / "manifest.json")); }

SceneRecord load_scene(const fs::path& root, const ManifestEntry& entry) {
    const auto dir = root / entry.dir;
    SceneRecord rec;
    rec.entry = entry;
    rec.scene.level = entry.level;
    rec.scene.seed = entry.seed;
    rec.scene.normals = io::read_exr(dir / "normal_gt.exr");
    rec.scene.albedo = io::read_exr(dir / "albedo_gt.exr");
    rec.scene.roughness = io::read_exr(dir / "rough_gt.exr");
    rec.scene.metallic = io::read_exr(dir / "metal_gt.exr");
    rec.scene.mask = io::read_mask_png(dir / "mask.png");

    const auto lj = read_json(dir / "lighting.json");
    std::vector<torch::Tensor> imgs;
    for (size_t f = 0; f < lj.at("frames").size(); ++f) {
        rec.stack.lightings.push_back(lighting_from_json(lj["frames"][f]));
        imgs.push_back(io::read_exr(dir / image_name(static_cast<int>(f))));
    }
    if (imgs.empty()) throw std::runtime_error("scene has no images: " + dir.string());
    rec.stack.images = torch::stack(imgs, 0);
    rec.stack.mask = rec.scene.mask;
    return rec;
}

}  // namespace lino::data
