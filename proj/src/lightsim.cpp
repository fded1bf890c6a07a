#include "lino/lightsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "lino/wavelet.hpp"

namespace lino::sim {

namespace {

constexpr double kPi = std::numbers::pi;

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Direction within `max_polar` of +z, uniform in solid angle.
std::array<double, 3> sample_cap(Rng& rng, double max_polar) {
    const double cos_t = rng.uniform(std::cos(max_polar), 1.0);
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    return {sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t};
}

struct Grid {
    torch::Tensor x;  // [S, S]
    torch::Tensor y;
};

Grid make_grid(int size) {
    const double pitch = 2.0 / size;
    auto c = torch::arange(size, torch::kFloat64);
    auto xs = -1.0 + (c + 0.5) * pitch;
    auto ys = 1.0 - (c + 0.5) * pitch;
    auto mesh = torch::meshgrid({ys, xs}, "ij");
    return {mesh[1], mesh[0]};
}

/// Cycles across the image for the noise band of levels 2..4.
double band_cycles(int level) {
    switch (level) {
        case 2: return 2.0;
        case 3: return 3.5;
        case 4: return 6.0;
        default: return 0.0;
    }
}

torch::Tensor procedural_heightfield(int level, Rng& rng, const Grid& g, double relief) {
    auto h = torch::zeros_like(g.x);
    const int bumps = rng.integer(1, 3);
    for (int i = 0; i < bumps; ++i) {
        const double amp = rng.uniform(0.15, 0.35) * (rng.uniform(0.0, 1.0) < 0.25 ? -1.0 : 1.0);
        const double width = rng.uniform(0.3, 0.6);
        const double cx = rng.uniform(-0.4, 0.4);
        const double cy = rng.uniform(-0.4, 0.4);
        h += amp * torch::exp(-((g.x - cx).pow(2) + (g.y - cy).pow(2)) / (2.0 * width * width));
    }
    const double cycles = band_cycles(level);
    if (cycles > 0.0) {
        constexpr int kWaves = 8;
        for (int i = 0; i < kWaves; ++i) {
            const double f = rng.uniform(0.6 * cycles, cycles);
            const double omega = kPi * f;  // image spans 2 units
            const double theta = rng.uniform(0.0, kPi);
            const double phase = rng.uniform(0.0, 2.0 * kPi);
            const double slope = rng.uniform(0.25, 0.4) / std::sqrt(static_cast<double>(kWaves));
            h += (slope / omega) * torch::sin(omega * (std::cos(theta) * g.x + std::sin(theta) * g.y) + phase);
        }
    }
    return h * relief;
}

/// Tangent-space rotation of `normals` by a per-pixel perturbation field.
torch::Tensor perturb_normals(const torch::Tensor& normals, Rng& rng, double strength) {
    const auto s = normals.size(0);
    std::vector<double> noise(static_cast<size_t>(2 * s * s));
    for (auto& v : noise) v = rng.normal() * strength;
    auto field = torch::tensor(noise, torch::kFloat64).view({2, s, s});
    field = wavelet::gaussian_blur(field, 0.6);
    auto ex = torch::tensor({1.0, 0.0, 0.0}, torch::kFloat64);
    auto tangent = ex - (normals * ex).sum(-1, true) * normals;
    tangent = tangent / tangent.norm(2, -1, true);
    auto bitangent = torch::cross(normals, tangent, -1);
    auto out = normals + field[0].unsqueeze(-1) * tangent + field[1].unsqueeze(-1) * bitangent;
    return out / out.norm(2, -1, true);
}

SceneSpec finish_scene(int level, uint64_t seed, torch::Tensor h, torch::Tensor normals, torch::Tensor mask, Rng& rng,
                       const Grid& g) {
    SceneSpec s;
    s.level = level;
    s.seed = seed;
    s.heightfield = std::move(h);
    s.normals = std::move(normals);
    s.mask = std::move(mask);

    std::array<double, 3> base{};
    for (auto& c : base) c = rng.uniform(0.35, 0.9);
    const double mod = rng.uniform(0.0, 0.12);
    const double f = rng.uniform(0.5, 2.0) * kPi;
    const double theta = rng.uniform(0.0, kPi);
    auto pattern = torch::sin(f * (std::cos(theta) * g.x + std::sin(theta) * g.y));
    auto base_t = torch::tensor({base[0], base[1], base[2]}, torch::kFloat64);
    s.albedo = (base_t + mod * pattern.unsqueeze(-1)).clamp(0.0, 1.0);

    const double rough = rng.uniform(0.3, 0.9);
    s.roughness = torch::full_like(g.x, rough);
    const double metal = rng.uniform(0.0, 1.0) < 0.3 ? rng.uniform(0.0, 0.5) : 0.0;
    s.metallic = torch::full_like(g.x, metal);
    return s;
}

}  // namespace

uint64_t mix_seed(uint64_t seed, uint64_t salt) { return splitmix64(seed ^ splitmix64(salt + 0x632BE59BD9B4E019ull)); }

bool LightingAnnotation::has_env() const { return env.defined() && env.abs().max().item<float>() > 0.0f; }

bool LightingAnnotation::operator==(const LightingAnnotation& other) const {
    return config_id == other.config_id && points == other.points && directions == other.directions &&
           env.defined() == other.env.defined() && (!env.defined() || torch::equal(env, other.env));
}

MultiLightStack MultiLightStack::permuted(const std::vector<int64_t>& order) const {
    MultiLightStack out;
    out.images = images.index_select(0, torch::tensor(order, torch::kInt64));
    out.mask = mask;
    if (!lightings.empty()) {
        for (auto i : order) out.lightings.push_back(lightings.at(static_cast<size_t>(i)));
    }
    return out;
}

ConfigComponents config_components(int config_id) {
    switch (config_id) {
        case 1: return {true, false, false, false};
        case 2: return {false, true, false, false};
        case 3: return {false, false, true, false};
        case 4: return {true, true, false, false};
        case 5: return {true, false, true, false};
        case 6: return {false, true, true, false};
        case 7: return {true, true, true, false};
        case 8: return {true, false, false, true};
        case 9: return {false, true, false, true};
        case 10: return {true, true, false, true};
        default: throw std::invalid_argument("lighting config_id must be in 1..10, got " + std::to_string(config_id));
    }
}

torch::Tensor heightfield_normals(const torch::Tensor& heightfield) {
    namespace F = torch::nn::functional;
    auto h = heightfield.to(torch::kFloat64);
    const double pitch = 2.0 / static_cast<double>(h.size(1));
    auto padded = F::pad(h.view({1, 1, h.size(0), h.size(1)}), F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate))
                      .view({h.size(0) + 2, h.size(1) + 2});
    using torch::indexing::None;
    using torch::indexing::Slice;
    auto dx = (padded.index({Slice(1, -1), Slice(2, None)}) - padded.index({Slice(1, -1), Slice(0, -2)})) /
              (2.0 * pitch);
    // Rows grow downward while y grows upward.
    auto dy = (padded.index({Slice(0, -2), Slice(1, -1)}) - padded.index({Slice(2, None), Slice(1, -1)})) /
              (2.0 * pitch);
    auto n = torch::stack({-dx, -dy, torch::ones_like(dx)}, -1);
    return n / n.norm(2, -1, true);
}

SceneSpec scene_from_heightfield(const torch::Tensor& heightfield, const torch::Tensor& mask, double albedo,
                                 double roughness, double metallic) {
    SceneSpec s;
    s.heightfield = heightfield.to(torch::kFloat64);
    s.normals = heightfield_normals(s.heightfield);
    s.mask = mask.to(torch::kBool);
    s.albedo = torch::full({heightfield.size(0), heightfield.size(1), 3}, albedo, torch::kFloat64);
    s.roughness = torch::full({heightfield.size(0), heightfield.size(1)}, roughness, torch::kFloat64);
    s.metallic = torch::full({heightfield.size(0), heightfield.size(1)}, metallic, torch::kFloat64);
    return s;
}

SceneSpec make_scene(int level, uint64_t seed, const SceneOptions& options) {
    if (level < 1 || level > kNumLevels) {
        throw std::invalid_argument("complexity level must be in 1..5, got " + std::to_string(level));
    }
    if (options.size < 4 || options.size % 2 != 0) {
        throw std::invalid_argument("scene size must be even and >= 4");
    }
    Rng rng(mix_seed(seed, static_cast<uint64_t>(level)));
    const auto g = make_grid(options.size);

    const double radius = rng.uniform(0.78, 0.95);
    const double cx = rng.uniform(-0.04, 0.04);
    const double cy = rng.uniform(-0.04, 0.04);
    auto mask = ((g.x - cx).pow(2) + (g.y - cy).pow(2)) < radius * radius;

    const int base_level = level == 5 ? 3 : level;
    auto h = procedural_heightfield(base_level, rng, g, options.relief);
    auto normals = heightfield_normals(h);
    if (level == 5) {
        normals = perturb_normals(normals, rng, 0.45 * options.relief);
    }
    return finish_scene(level, seed, std::move(h), std::move(normals), std::move(mask), rng, g);
}

double mean_normal_gradient(const SceneSpec& scene) {
    namespace F = torch::nn::functional;
    using torch::indexing::None;
    using torch::indexing::Slice;
    auto n = scene.normals.to(torch::kFloat64).permute({2, 0, 1}).unsqueeze(0);
    auto p = F::pad(n, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate)).squeeze(0);
    auto gx = (p.index({Slice(), Slice(1, -1), Slice(2, None)}) - p.index({Slice(), Slice(1, -1), Slice(0, -2)})) / 2.0;
    auto gy = (p.index({Slice(), Slice(2, None), Slice(1, -1)}) - p.index({Slice(), Slice(0, -2), Slice(1, -1)})) / 2.0;
    auto g = (gx.pow(2) + gy.pow(2)).sqrt().mean(0);
    return g.masked_select(scene.mask).mean().item<double>();
}

std::pair<torch::Tensor, torch::Tensor> env_directions() {
    auto idx = torch::arange(kEnvSize, torch::kFloat64);
    auto theta = (idx + 0.5) / kEnvSize * kPi;
    auto phi = (idx + 0.5) / kEnvSize * 2.0 * kPi;
    auto mesh = torch::meshgrid({theta, phi}, "ij");
    auto t = mesh[0].reshape({-1});
    auto p = mesh[1].reshape({-1});
    auto dirs = torch::stack({t.sin() * p.cos(), t.sin() * p.sin(), t.cos()}, -1);
    auto solid = t.sin() * (kPi / kEnvSize) * (2.0 * kPi / kEnvSize);
    return {dirs, solid};
}

LightingAnnotation sample_lighting(int config_id, uint64_t seed) {
    const auto comp = config_components(config_id);
    Rng rng(mix_seed(seed, 1000u + static_cast<uint64_t>(config_id)));
    LightingAnnotation a;
    a.config_id = config_id;

    auto env = torch::zeros({kEnvSize * kEnvSize, 3}, torch::kFloat64);
    if (comp.env) {
        auto [dirs, solid] = env_directions();
        env += rng.uniform(0.05, 0.2);
        const int lobes = rng.integer(1, 3);
        for (int i = 0; i < lobes; ++i) {
            const auto mu = sample_cap(rng, kPi * 0.5);
            const double kappa = rng.uniform(4.0, 20.0);
            const double amp = rng.uniform(0.5, 2.0);
            auto color = torch::tensor({rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0)},
                                       torch::kFloat64);
            auto mu_t = torch::tensor({mu[0], mu[1], mu[2]}, torch::kFloat64);
            auto lobe = torch::exp(kappa * (dirs.matmul(mu_t) - 1.0));
            env += amp * lobe.unsqueeze(-1) * color;
        }
    }
    if (comp.background) {
        env += rng.uniform(0.1, 0.4);
    }
    a.env = env.view({kEnvSize, kEnvSize, 3}).to(torch::kFloat32);

    constexpr double kMaxPolar = 50.0 * kPi / 180.0;
    if (comp.directional) {
        const int count = rng.integer(1, 2);
        for (int i = 0; i < count; ++i) {
            const auto d = sample_cap(rng, kMaxPolar);
            const double dist = rng.uniform(5.0, 10.0);
            const double size = rng.uniform(0.0, 0.15);
            const double intensity = rng.uniform(2.0, 4.0);
            a.directions.push_back({static_cast<float>(d[0] * dist), static_cast<float>(d[1] * dist),
                                    static_cast<float>(d[2] * dist), static_cast<float>(dist),
                                    static_cast<float>(size), static_cast<float>(intensity)});
        }
    }
    if (comp.point) {
        const int count = rng.integer(1, 2);
        for (int i = 0; i < count; ++i) {
            const auto d = sample_cap(rng, kMaxPolar);
            const double dist = rng.uniform(2.5, 4.0);
            const double intensity = rng.uniform(2.0, 4.0) * dist * dist;
            a.points.push_back({static_cast<float>(d[0] * dist), static_cast<float>(d[1] * dist),
                                static_cast<float>(d[2] * dist), static_cast<float>(dist),
                                static_cast<float>(intensity)});
        }
    }
    return a;
}

namespace {

struct SurfaceTerms {
    torch::Tensor normals;   // [P, 3]
    torch::Tensor position;  // [P, 3]
    torch::Tensor diffuse;   // [P, 3], (1 - metallic) * albedo
    torch::Tensor specular;  // [P, 3]
    torch::Tensor exponent;  // [P]
};

torch::Tensor shade_light(const SurfaceTerms& s, const torch::Tensor& light_dir, double radiance, double size) {
    auto cos_t = (s.normals * light_dir).sum(-1);
    torch::Tensor lit;
    if (size > 0.0) {
        // Smooth horizon for an area light of angular radius `size`.
        const double w = std::sin(size);
        auto soft = (cos_t + w).pow(2) / (4.0 * w);
        lit = torch::where(cos_t.abs() < w, soft, cos_t.clamp_min(0.0));
    } else {
        lit = cos_t.clamp_min(0.0);
    }
    auto view = torch::tensor({0.0, 0.0, 1.0}, torch::kFloat64);
    auto half = light_dir + view;
    half = half / half.norm(2, -1, true).clamp_min(1e-12);
    auto n_h = (s.normals * half).sum(-1).clamp_min(0.0);
    auto spec = torch::where(cos_t > 0.0, n_h.pow(s.exponent), torch::zeros_like(n_h));
    return radiance * (s.diffuse / kPi * lit.unsqueeze(-1) + s.specular * spec.unsqueeze(-1));
}

}  // namespace

torch::Tensor render(const SceneSpec& scene, const LightingAnnotation& lighting) {
    const auto h = scene.height();
    const auto w = scene.width();
    const auto count = h * w;
    const auto g = make_grid(static_cast<int>(w));

    SurfaceTerms s;
    s.normals = scene.normals.to(torch::kFloat64).reshape({count, 3});
    auto z = scene.heightfield.defined() ? scene.heightfield.to(torch::kFloat64) : torch::zeros({h, w}, torch::kFloat64);
    s.position = torch::stack({g.x, g.y, z}, -1).reshape({count, 3});
    auto albedo = scene.albedo.to(torch::kFloat64).reshape({count, 3});
    auto rough = scene.roughness.to(torch::kFloat64).reshape({count, 1});
    auto metal = scene.metallic.to(torch::kFloat64).reshape({count, 1});
    s.diffuse = (1.0 - metal) * albedo;
    s.specular = (1.0 - rough) * (0.04 * (1.0 - metal) + metal * albedo);
    s.exponent = (2.0 / rough.squeeze(-1).pow(2).clamp_min(1e-4) - 2.0).clamp_min(1.0);

    auto radiance = torch::zeros({count, 3}, torch::kFloat64);
    for (const auto& d : lighting.directions) {
        auto dir = torch::tensor({double(d[0]), double(d[1]), double(d[2])}, torch::kFloat64);
        dir = dir / dir.norm();
        radiance += shade_light(s, dir, d[5], d[4]);
    }
    for (const auto& p : lighting.points) {
        auto pos = torch::tensor({double(p[0]), double(p[1]), double(p[2])}, torch::kFloat64);
        auto dir = pos - s.position;
        dir = dir / dir.norm(2, -1, true);
        const double dist = p[3];
        radiance += shade_light(s, dir, double(p[4]) / (dist * dist), 0.0);
    }
    if (lighting.env.defined()) {
        auto env = lighting.env.to(torch::kFloat64).reshape({-1, 3});
        if (env.abs().max().item<double>() > 0.0) {
            auto [dirs, solid] = env_directions();
            auto weights = s.normals.matmul(dirs.t()).clamp_min(0.0) * solid;
            auto irradiance = weights.matmul(env) / weights.sum(-1, true).clamp_min(1e-12);
            radiance += s.diffuse * irradiance;
        }
    }
    auto img = radiance.reshape({h, w, 3}) * scene.mask.unsqueeze(-1).to(torch::kFloat64);
    return img.to(torch::kFloat32);
}

MultiLightStack render_stack(const SceneSpec& scene, const std::vector<LightingAnnotation>& lightings) {
    if (lightings.empty()) throw std::invalid_argument("render_stack: need at least one lighting");
    MultiLightStack stack;
    std::vector<torch::Tensor> imgs;
    imgs.reserve(lightings.size());
    for (const auto& l : lightings) imgs.push_back(render(scene, l));
    stack.images = torch::stack(imgs, 0);
    stack.lightings = lightings;
    stack.mask = scene.mask;
    return stack;
}

std::set<int> curriculum_levels(int epoch, const CurriculumSchedule& schedule) {
    if (epoch < 0) throw std::invalid_argument("curriculum_levels: epoch must be >= 0");
    if (schedule.epochs_per_level <= 0) throw std::invalid_argument("curriculum_levels: epochs_per_level must be > 0");
    if (epoch >= schedule.main_epochs) return {schedule.finetune_level};
    const int top = std::min(schedule.start_level + epoch / schedule.epochs_per_level, schedule.max_level);
    std::set<int> levels;
    for (int l = 1; l <= top; ++l) levels.insert(l);
    return levels;
}

}  // namespace lino::sim
