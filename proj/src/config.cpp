#include "lino/config.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>

namespace lino {

namespace {

bool is_pow2(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void ModelConfig::validate() const {
    if (!is_pow2(patch_size)) throw std::invalid_argument("patch_size must be a power of two");
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
        throw std::invalid_argument("embed_dim must be divisible by num_heads");
    }
    if (fusion_channels <= 0 || decoder_heads <= 0 || fusion_channels % decoder_heads != 0) {
        throw std::invalid_argument("fusion_channels must be divisible by decoder_heads");
    }
    if (num_blocks < 1) throw std::invalid_argument("num_blocks must be >= 1");
    if (mlp_ratio < 1) throw std::invalid_argument("mlp_ratio must be >= 1");
    if (m_samples < 1) throw std::invalid_argument("m_samples must be >= 1");
    if (decoder_layers < 0) throw std::invalid_argument("decoder_layers must be >= 0");
    if (pos_grid < 1) throw std::invalid_argument("pos_grid must be >= 1");
    if (!(blur_sigma > 0.0)) throw std::invalid_argument("blur_sigma must be positive");
}

void ModelConfig::validate_image(int64_t height, int64_t width) const {
    // Patches tile the half-resolution branch inputs and the fusion pyramid
    // goes down to 1/16 of the input.
    const int64_t unit = std::max<int64_t>(2 * patch_size, 16);
    if (height <= 0 || width <= 0 || height % unit != 0 || width % unit != 0) {
        throw std::invalid_argument("image size " + std::to_string(height) + "x" + std::to_string(width) +
                                    " must be a positive multiple of " + std::to_string(unit));
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"patch_size", c.patch_size},
                       {"embed_dim", c.embed_dim},
                       {"num_blocks", c.num_blocks},
                       {"num_heads", c.num_heads},
                       {"fusion_channels", c.fusion_channels},
                       {"mlp_ratio", c.mlp_ratio},
                       {"m_samples", c.m_samples},
                       {"decoder_layers", c.decoder_layers},
                       {"decoder_heads", c.decoder_heads},
                       {"sample_attention", c.sample_attention},
                       {"pos_grid", c.pos_grid},
                       {"blur_sigma", c.blur_sigma}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    static const std::set<std::string> known{"patch_size",     "embed_dim", "num_blocks",     "num_heads",
                                             "fusion_channels", "mlp_ratio", "m_samples",      "decoder_layers",
                                             "decoder_heads",  "sample_attention", "pos_grid", "blur_sigma"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument("unknown model config key: " + key);
    }
    ModelConfig d;
    c.patch_size = j.value("patch_size", d.patch_size);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.num_blocks = j.value("num_blocks", d.num_blocks);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.fusion_channels = j.value("fusion_channels", d.fusion_channels);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    c.m_samples = j.value("m_samples", d.m_samples);
    c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
    c.decoder_heads = j.value("decoder_heads", d.decoder_heads);
    c.sample_attention = j.value("sample_attention", d.sample_attention);
    c.pos_grid = j.value("pos_grid", d.pos_grid);
    c.blur_sigma = j.value("blur_sigma", d.blur_sigma);
}

}  // namespace lino
