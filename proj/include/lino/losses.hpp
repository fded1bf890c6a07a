#pragma once

#include <array>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "lino/attention.hpp"
#include "lino/encoder.hpp"
#include "lino/lightsim.hpp"

namespace lino::loss {

/// Encoded ground-truth lighting, unit length per present light type.
struct LightTargets {
    torch::Tensor env, point, direction;  // [D]
    bool has_env = false, has_point = false, has_direction = false;
};

/// Three two-layer MLPs mapping the env map (768 values), point rows (5) and
/// directional rows (6) into the register space.
struct LightTargetEncoderImpl : torch::nn::Module {
    explicit LightTargetEncoderImpl(int64_t dim);

    /// Rows are encoded independently and mean-pooled; empty tables clear the flag.
    LightTargets forward(const sim::LightingAnnotation& annotation);
    /// Stack-level targets: per-frame encodings of each light type averaged
    /// over the frames where that type is present, then normalized.
    LightTargets encode_stack(const std::vector<sim::LightingAnnotation>& annotations);

    nn::Mlp env{nullptr}, point{nullptr}, direction{nullptr};
};
TORCH_MODULE(LightTargetEncoder);

/// Per-register two-layer projections applied before alignment.
struct RegisterProjectorImpl : torch::nn::Module {
    explicit RegisterProjectorImpl(int64_t dim);
    enc::RegisterState forward(const enc::RegisterState& registers);

    nn::Mlp env{nullptr}, point{nullptr}, direction{nullptr};
};
TORCH_MODULE(RegisterProjector);

struct AlignmentLosses {
    torch::Tensor env, point, direction;  // scalars; zero when the light type is absent
};

/// 1 - <normalize(x), l> per light type. `projected` holds registers already
/// passed through their projections. Throws std::invalid_argument on a
/// zero-norm register.
AlignmentLosses light_alignment_loss(const enc::RegisterState& projected, const LightTargets& targets);

/// Mean over channels of |grad n_c| with central differences and replicate
/// borders: [..., H, W, 3] -> [..., H, W].
torch::Tensor normal_gradient(const torch::Tensor& normals);

/// Same operator evaluated at stencil centers: [m, 5, 3] in the order
/// (center, left, right, up, down) -> [m].
torch::Tensor stencil_gradient(const torch::Tensor& stencil);

struct GradientPerception {
    torch::Tensor conf;        // mean of (N - N_hat)^2 * C
    torch::Tensor grad;        // mean of (G_hat - G)^2
    torch::Tensor confidence;  // C = exp(G_hat), detached
};

/// Confidence-weighted normal loss and gradient supervision. `pred_grad` and
/// `gt_grad` are per-pixel gradient magnitudes aligned with the normal rows.
/// A defined `frozen_confidence` replaces exp(G_hat).
GradientPerception gradient_perception_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                                            const torch::Tensor& pred_grad, const torch::Tensor& gt_grad,
                                            const torch::Tensor& frozen_confidence = {});

/// Map form: gradients come from normal_gradient on both [H, W, 3] maps.
GradientPerception gradient_perception_loss(const torch::Tensor& pred, const torch::Tensor& gt);

/// Term order used by weights and breakdowns.
enum Term : size_t { kEnv = 0, kPoint, kDirection, kConf, kGrad, kAlbedo, kMetallic, kRoughness, kNumTerms };

inline constexpr std::array<std::string_view, kNumTerms> kTermNames{
    "env", "point", "direction", "conf", "grad", "albedo", "metallic", "roughness"};

struct LossTerms {
    std::array<torch::Tensor, kNumTerms> terms;  // undefined entries count as zero

    std::array<double, kNumTerms> values() const;
};

/// lambda_1..lambda_8 (zero-based here).
using Weights = std::array<double, kNumTerms>;

/// Ratio weights from detached values: 0.1 * L_conf / L_k for the light and
/// gradient terms, 1 for L_conf, L_conf / L_k for the material terms when
/// `pbr`. Terms at or below `eps` get weight 0.
Weights adaptive_weights(const std::array<double, kNumTerms>& values, bool pbr, double eps = 1e-8);

struct LossBreakdown {
    std::array<double, kNumTerms> values{};
    Weights weights{};
    double total_value = 0.0;
    torch::Tensor total;  // differentiable
    bool pbr = false;

    double light() const;
};

/// Weighted sum with constant weights. Material terms are dropped unless `pbr`.
LossBreakdown total_loss(const LossTerms& parts, const Weights& weights, bool pbr);

}  // namespace lino::loss
