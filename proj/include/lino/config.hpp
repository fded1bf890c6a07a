#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

namespace lino {

/// Network hyperparameters. Defaults are the desk-scale configuration; the
/// production network uses embed_dim 384, fusion_channels 256, m_samples 2048.
struct ModelConfig {
    int64_t patch_size = 8;
    int64_t embed_dim = 64;
    int64_t num_blocks = 4;
    int64_t num_heads = 4;
    int64_t fusion_channels = 64;
    int64_t mlp_ratio = 4;
    int64_t m_samples = 256;
    int64_t decoder_layers = 2;
    int64_t decoder_heads = 4;
    /// Self-attention among sampled pixels in the decoder. Off makes every
    /// pixel's prediction independent of which other pixels share its chunk.
    bool sample_attention = false;
    /// Side length of the learned positional-embedding grid; resampled
    /// bilinearly when the token grid differs.
    int64_t pos_grid = 4;
    double blur_sigma = 1.0;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;
    /// Throws std::invalid_argument if an image of this size cannot be tokenized.
    void validate_image(int64_t height, int64_t width) const;

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Rejects unknown keys.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace lino
