#include "lino/decoder.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "lino/lightsim.hpp"

namespace lino::dec {

using torch::indexing::None;
using torch::indexing::Slice;

torch::Tensor sample_pixels(const torch::Tensor& mask, int64_t m, uint64_t seed) {
    if (m < 1) throw std::invalid_argument("sample_pixels: m must be >= 1");
    auto candidates = mask.to(torch::kBool).reshape({-1}).nonzero().squeeze(1).contiguous();
    const auto count = candidates.size(0);
    if (count == 0) throw std::invalid_argument("sample_pixels: mask is empty");
    if (count <= m) return candidates;

    std::vector<int64_t> pool(candidates.data_ptr<int64_t>(), candidates.data_ptr<int64_t>() + count);
    std::mt19937_64 rng(sim::mix_seed(seed, 0x5a3b1e));
    for (int64_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<int64_t> pick(i, count - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(rng))]);
    }
    pool.resize(static_cast<size_t>(m));
    return torch::tensor(pool, torch::kInt64);
}

torch::Tensor interior_mask(const torch::Tensor& mask) {
    auto m = mask.to(torch::kBool);
    auto out = m.clone();
    out.index_put_({0}, false);
    out.index_put_({-1}, false);
    out.index_put_({Slice(), 0}, false);
    out.index_put_({Slice(), -1}, false);
    auto inner = out.index({Slice(1, -1), Slice(1, -1)});
    inner &= m.index({Slice(0, -2), Slice(1, -1)});
    inner &= m.index({Slice(2, None), Slice(1, -1)});
    inner &= m.index({Slice(1, -1), Slice(0, -2)});
    inner &= m.index({Slice(1, -1), Slice(2, None)});
    return out;
}

torch::Tensor stencil_indices(const torch::Tensor& centers, int64_t height, int64_t width) {
    auto row = torch::div(centers, width, "floor");
    auto col = centers - row * width;
    auto flat = [&](const torch::Tensor& r, const torch::Tensor& c) { return r * width + c; };
    auto left = flat(row, (col - 1).clamp_min(0));
    auto right = flat(row, (col + 1).clamp_max(width - 1));
    auto up = flat((row - 1).clamp_min(0), col);
    auto down = flat((row + 1).clamp_max(height - 1), col);
    return torch::stack({centers, left, right, up, down}, 1);
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg) : config(cfg) {
    const auto c = cfg.fusion_channels;
    observation = register_module("observation", nn::Mlp(3, c, c));
    pool_seed = register_parameter("pool_seed", torch::randn({1, 1, c}) * 0.02);
    pool_norm = register_module("pool_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
    pool_attn = register_module("pool_attn", nn::MultiHeadAttention(c, cfg.decoder_heads));
    pool_out_norm = register_module("pool_out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
    pool_mlp = register_module("pool_mlp", nn::Mlp(c, c * cfg.mlp_ratio, c));
    context_layers = register_module("context_layers", torch::nn::ModuleList());
    for (int64_t i = 0; i < cfg.decoder_layers; ++i) {
        context_layers->push_back(nn::TransformerLayer(c, cfg.decoder_heads, cfg.mlp_ratio));
    }
    final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));
    normal_head = register_module("normal_head", nn::Mlp(c, c, 3));
    albedo_head = register_module("albedo_head", nn::Mlp(c, c, 3));
    metallic_head = register_module("metallic_head", nn::Mlp(c, c, 1));
    roughness_head = register_module("roughness_head", nn::Mlp(c, c, 1));
}

torch::Tensor DecoderImpl::aggregate(const torch::Tensor& features, const torch::Tensor& images,
                                     const torch::Tensor& indices) {
    const auto frames = features.size(0);
    const auto c = features.size(3);
    const auto pixels = features.size(1) * features.size(2);
    if (images.size(0) != frames || images.size(1) * images.size(2) != pixels) {
        throw std::invalid_argument("aggregate: features and images disagree in shape");
    }
    auto feat = features.reshape({frames, pixels, c}).index_select(1, indices).transpose(0, 1);  // [m, F, C]
    auto obs = images.reshape({frames, pixels, 3}).index_select(1, indices).transpose(0, 1);     // [m, F, 3]
    auto z = feat + observation(obs);
    const auto m = indices.size(0);
    auto query = pool_seed.expand({m, 1, c});
    auto h = query + pool_attn(query, pool_norm(z));
    h = h + pool_mlp(pool_out_norm(h));
    return h.squeeze(1);
}

PointPrediction DecoderImpl::predict(const torch::Tensor& descriptors, bool context) {
    auto x = descriptors.unsqueeze(0);
    for (const auto& layer : *context_layers) {
        x = layer->as<nn::TransformerLayer>()->forward(x, !context);
    }
    x = final_norm(x.squeeze(0));
    PointPrediction out;
    auto n = normal_head(x);
    out.normals = n / n.norm(2, -1, true).clamp_min(1e-12);
    out.albedo = torch::sigmoid(albedo_head(x));
    out.metallic = torch::sigmoid(metallic_head(x)).squeeze(-1);
    out.roughness = torch::sigmoid(roughness_head(x)).squeeze(-1);
    return out;
}

NormalMap reconstruct_sparse(const torch::Tensor& normals, const torch::Tensor& indices, const torch::Tensor& mask) {
    if (normals.size(0) != indices.size(0)) {
        throw std::invalid_argument("reconstruct: predictions and indices disagree in length");
    }
    auto flat_mask = mask.to(torch::kBool).reshape({-1});
    if (indices.numel() > 0) {
        if (indices.min().item<int64_t>() < 0 || indices.max().item<int64_t>() >= flat_mask.size(0) ||
            !flat_mask.index_select(0, indices).all().item<bool>()) {
            throw std::invalid_argument("reconstruct: index outside the mask");
        }
    }
    auto out = torch::zeros({flat_mask.size(0), 3}, normals.options());
    out.index_copy_(0, indices, normals);
    return {out.view({mask.size(0), mask.size(1), 3}), mask.to(torch::kBool)};
}

FullReconstruction reconstruct_full(Decoder& decoder, const torch::Tensor& features, const torch::Tensor& images,
                                    const torch::Tensor& mask, bool context, int64_t chunk, uint64_t seed) {
    if (chunk < 1) throw std::invalid_argument("reconstruct_full: chunk must be >= 1");
    auto pixels = mask.to(torch::kBool).reshape({-1}).nonzero().squeeze(1);
    const auto count = pixels.size(0);
    if (count == 0) throw std::invalid_argument("reconstruct_full: mask is empty");
    std::vector<int64_t> shuffled(pixels.data_ptr<int64_t>(), pixels.data_ptr<int64_t>() + count);
    std::mt19937_64 rng(sim::mix_seed(seed, 0xc4a7));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto order = torch::tensor(shuffled, torch::kInt64);

    std::vector<torch::Tensor> normals, albedo, metallic, roughness;
    for (int64_t start = 0; start < count; start += chunk) {
        auto idx = order.index({Slice(start, std::min(start + chunk, count))});
        auto pred = decoder->predict(decoder->aggregate(features, images, idx), context);
        normals.push_back(pred.normals);
        albedo.push_back(pred.albedo);
        metallic.push_back(pred.metallic);
        roughness.push_back(pred.roughness);
    }
    FullReconstruction out;
    out.order = order;
    out.per_pixel = {torch::cat(normals), torch::cat(albedo), torch::cat(metallic), torch::cat(roughness)};
    out.map = reconstruct_sparse(out.per_pixel.normals, order, mask);
    return out;
}

}  // namespace lino::dec
