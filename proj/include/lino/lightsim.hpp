#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <vector>

#include <torch/torch.h>

namespace lino::sim {

inline constexpr int kEnvSize = 16;
inline constexpr int kNumConfigs = 10;
inline constexpr int kNumLevels = 5;

/// Heightfield scene with analytic ground truth. Scene coordinates span
/// [-1, 1] horizontally; x grows with the column index, y with decreasing row
/// index, z points toward the orthographic camera.
struct SceneSpec {
    int level = 1;
    uint64_t seed = 0;
    torch::Tensor heightfield;  // [H, W] float64, may be undefined for loaded scenes
    torch::Tensor normals;      // [H, W, 3]
    torch::Tensor albedo;       // [H, W, 3] in [0, 1]
    torch::Tensor roughness;    // [H, W] in [0, 1]
    torch::Tensor metallic;     // [H, W] in [0, 1]
    torch::Tensor mask;         // [H, W] bool

    int64_t height() const { return normals.size(0); }
    int64_t width() const { return normals.size(1); }
};

using PointLight = std::array<float, 5>;        // x, y, z, distance, intensity
using DirectionalLight = std::array<float, 6>;  // x, y, z, distance, size, intensity

struct LightingAnnotation {
    int config_id = 1;
    torch::Tensor env;  // [16, 16, 3] float32 radiance, rows = polar angle from +z
    std::vector<PointLight> points;
    std::vector<DirectionalLight> directions;

    bool has_env() const;
    bool operator==(const LightingAnnotation& other) const;
};

struct MultiLightStack {
    torch::Tensor images;  // [F, H, W, 3] float32
    std::vector<LightingAnnotation> lightings;
    torch::Tensor mask;  // [H, W] bool

    int64_t frames() const { return images.size(0); }
    /// Reorders frames (and their lighting annotations) by `order`.
    MultiLightStack permuted(const std::vector<int64_t>& order) const;
};

struct SceneOptions {
    int size = 64;
    /// Multiplies all procedural relief; 0 yields a flat plane.
    double relief = 1.0;
};

/// Which lighting components a configuration enables: (a) env, (b) directional,
/// (c) point, (d) uniform background.
struct ConfigComponents {
    bool env, directional, point, background;
};
ConfigComponents config_components(int config_id);

SceneSpec make_scene(int level, uint64_t seed, const SceneOptions& options = {});

/// Builds a scene from an explicit heightfield with uniform materials.
SceneSpec scene_from_heightfield(const torch::Tensor& heightfield, const torch::Tensor& mask, double albedo = 0.7,
                                 double roughness = 0.5, double metallic = 0.0);

/// Unit normals of a heightfield via central differences with replicate borders.
torch::Tensor heightfield_normals(const torch::Tensor& heightfield);

/// Mean per-pixel normal-gradient magnitude inside the mask.
double mean_normal_gradient(const SceneSpec& scene);

LightingAnnotation sample_lighting(int config_id, uint64_t seed);

/// Direct shading (Lambert + Blinn-Phong) plus a cosine-weighted env term.
/// Returns [H, W, 3] float32, zero outside the mask.
torch::Tensor render(const SceneSpec& scene, const LightingAnnotation& lighting);

/// Renders one image per annotation.
MultiLightStack render_stack(const SceneSpec& scene, const std::vector<LightingAnnotation>& lightings);

/// Unit direction of each env texel and its solid angle: ([256, 3], [256]).
std::pair<torch::Tensor, torch::Tensor> env_directions();

struct CurriculumSchedule {
    int start_level = 1;
    int epochs_per_level = 10;
    int max_level = 4;
    int finetune_level = 5;
    int main_epochs = 150;
};

/// Levels eligible for sampling at `epoch` (zero-based).
std::set<int> curriculum_levels(int epoch, const CurriculumSchedule& schedule = {});

/// Deterministic 64-bit mixing for derived seeds.
uint64_t mix_seed(uint64_t seed, uint64_t salt);

}  // namespace lino::sim
