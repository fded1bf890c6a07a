#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "lino/attention.hpp"
#include "lino/config.hpp"

namespace lino::dec {

/// Uniform sample of flat pixel indices from `mask` ([H, W] bool), without
/// replacement; every mask pixel when the mask holds no more than m.
/// Deterministic per seed. Throws std::invalid_argument for an empty mask.
torch::Tensor sample_pixels(const torch::Tensor& mask, int64_t m, uint64_t seed);

/// Mask pixels whose four direct neighbours are also inside the mask and the image.
torch::Tensor interior_mask(const torch::Tensor& mask);

/// Flat indices of [center, left, right, up, down] for each center, clamped
/// at the image border: [m, 5].
torch::Tensor stencil_indices(const torch::Tensor& centers, int64_t height, int64_t width);

struct PointPrediction {
    torch::Tensor normals;  // [m, 3], unit length
    torch::Tensor albedo;   // [m, 3] in [0, 1]
    torch::Tensor metallic;   // [m]
    torch::Tensor roughness;  // [m]
};

/// Pixel-sampling decoder: per-frame features plus projected observations are
/// pooled over frames by attention with a learned seed, refined by attention
/// among the sampled pixels and decoded by point-wise heads.
struct DecoderImpl : torch::nn::Module {
    explicit DecoderImpl(const ModelConfig& config);

    /// features [F, H, W, C], images [F, H, W, 3], indices [m] -> [m, C].
    torch::Tensor aggregate(const torch::Tensor& features, const torch::Tensor& images, const torch::Tensor& indices);

    /// `context` enables attention among the m samples; otherwise each sample
    /// only sees itself.
    PointPrediction predict(const torch::Tensor& descriptors, bool context);

    ModelConfig config;
    nn::Mlp observation{nullptr};
    torch::Tensor pool_seed;  // [1, 1, C]
    torch::nn::LayerNorm pool_norm{nullptr}, pool_out_norm{nullptr};
    nn::MultiHeadAttention pool_attn{nullptr};
    nn::Mlp pool_mlp{nullptr};
    torch::nn::ModuleList context_layers;
    torch::nn::LayerNorm final_norm{nullptr};
    nn::Mlp normal_head{nullptr}, albedo_head{nullptr}, metallic_head{nullptr}, roughness_head{nullptr};
};
TORCH_MODULE(Decoder);

struct NormalMap {
    torch::Tensor normals;  // [H, W, 3]; (0, 0, 0) where nothing was predicted
    torch::Tensor mask;     // [H, W] bool
};

/// Scatters per-sample normals into an otherwise zero map. Throws
/// std::invalid_argument if an index lies outside the mask.
NormalMap reconstruct_sparse(const torch::Tensor& normals, const torch::Tensor& indices, const torch::Tensor& mask);

struct FullReconstruction {
    NormalMap map;
    PointPrediction per_pixel;  // in the order of `order`
    torch::Tensor order;        // flat indices, every mask pixel once
};

/// Predicts every mask pixel directly by running the decoder over chunks of
/// `chunk` pixels. Chunks follow a seeded shuffle of the mask pixels.
FullReconstruction reconstruct_full(Decoder& decoder, const torch::Tensor& features, const torch::Tensor& images,
                                    const torch::Tensor& mask, bool context, int64_t chunk, uint64_t seed);

}  // namespace lino::dec
