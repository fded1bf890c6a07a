#include "lino/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "lino/lightsim.hpp"

namespace lino::enc {

namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

torch::Tensor preprocess(const torch::Tensor& images, Mode mode, uint64_t seed) {
    if (images.dim() != 4 || images.size(3) != 3) {
        throw std::invalid_argument("preprocess: expected [F, H, W, 3] images");
    }
    if (images.lt(0).any().item<bool>()) throw std::invalid_argument("preprocess: negative radiance");
    const auto frames = images.size(0);
    auto flat = images.reshape({frames, -1}).to(torch::kFloat64);
    auto maxes = std::get<0>(flat.max(1));
    auto means = flat.mean(1);
    std::vector<double> divisors(static_cast<size_t>(frames));
    std::mt19937_64 rng(sim::mix_seed(seed, 0x5eed));
    for (int64_t f = 0; f < frames; ++f) {
        const double mx = maxes[f].item<double>();
        const double mean = means[f].item<double>();
        if (!(mx > 0.0)) throw std::invalid_argument("preprocess: image " + std::to_string(f) + " is all zero");
        double d = mx;
        if (mode == Mode::Train && mx - mean > 1e-12 * mx) {
            d = std::uniform_real_distribution<double>(mean, mx)(rng);
        }
        divisors[static_cast<size_t>(f)] = d;
    }
    auto div = torch::tensor(divisors, torch::kFloat64).view({frames, 1, 1, 1});
    return (images.to(torch::kFloat64) / div).to(images.scalar_type());
}

BranchInputs branch_inputs(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(3) != 3) {
        throw std::invalid_argument("branch_inputs: expected [F, H, W, 3] images");
    }
    if (images.size(1) % 2 != 0 || images.size(2) % 2 != 0) {
        throw std::invalid_argument("branch_inputs: spatial dimensions must be even");
    }
    auto chw = images.permute({0, 3, 1, 2});
    auto bands = wavelet::dwt2(chw);
    auto to_hwc = [](const torch::Tensor& t) { return t.permute({0, 2, 3, 1}); };
    return {to_hwc(F::avg_pool2d(chw, F::AvgPool2dFuncOptions(2))),
            {to_hwc(bands.ll), to_hwc(bands.lh), to_hwc(bands.hl), to_hwc(bands.hh)}};
}

PatchEmbedImpl::PatchEmbedImpl(const ModelConfig& config) : patch(config.patch_size) {
    proj = register_module("proj", torch::nn::Linear(3 * patch * patch, config.embed_dim));
    pos = register_parameter("pos", torch::randn({1, config.embed_dim, config.pos_grid, config.pos_grid}) * 0.02);
}

torch::Tensor PatchEmbedImpl::positional(int64_t gh, int64_t gw) {
    torch::Tensor p = pos;
    if (pos.size(2) != gh || pos.size(3) != gw) {
        p = F::interpolate(pos, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{gh, gw})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
    }
    return p.flatten(2).squeeze(0).t();  // [L, D]
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& x) {
    const auto n = x.size(0);
    const auto h = x.size(2);
    const auto w = x.size(3);
    if (h % patch != 0 || w % patch != 0) {
        throw std::invalid_argument("embed: component size must be divisible by the patch size");
    }
    const auto gh = h / patch;
    const auto gw = w / patch;
    auto patches = x.reshape({n, 3, gh, patch, gw, patch}).permute({0, 2, 4, 1, 3, 5}).reshape({n, gh * gw, -1});
    return proj(patches) + positional(gh, gw);
}

InterleavedBlockImpl::InterleavedBlockImpl(const ModelConfig& c) {
    frame = register_module("frame", nn::TransformerLayer(c.embed_dim, c.num_heads, c.mlp_ratio));
    light1 = register_module("light1", nn::TransformerLayer(c.embed_dim, c.num_heads, c.mlp_ratio));
    global = register_module("global", nn::TransformerLayer(c.embed_dim, c.num_heads, c.mlp_ratio));
    light2 = register_module("light2", nn::TransformerLayer(c.embed_dim, c.num_heads, c.mlp_ratio));
}

BlockOutput InterleavedBlockImpl::forward(const torch::Tensor& tokens) {
    const auto c = tokens.size(0);
    const auto f = tokens.size(1);
    const auto lp = tokens.size(2);
    const auto d = tokens.size(3);
    auto strip = [](const torch::Tensor& t) { return t.index({Slice(), Slice(), Slice(kNumRegisters, None)}); };
    auto light = [&](nn::TransformerLayer& layer, const torch::Tensor& x) {
        auto seq = x.permute({0, 2, 1, 3}).reshape({c * lp, f, d});
        return layer(seq).view({c, lp, f, d}).permute({0, 2, 1, 3});
    };

    BlockOutput out;
    auto x = frame(tokens.reshape({c * f, lp, d})).view({c, f, lp, d});
    out.taps[0] = strip(x);
    x = light(light1, x);
    out.taps[1] = strip(x);
    x = global(x.reshape({c, f * lp, d})).view({c, f, lp, d});
    out.taps[2] = strip(x);
    x = light(light2, x);
    out.taps[3] = strip(x);
    out.tokens = x;
    return out;
}

std::vector<int64_t> select_stages(int64_t n) {
    if (n < 1) throw std::invalid_argument("select_stages: need at least one block");
    if (n == 4) return {0, 1, 2, 3};
    if (n == 6) return {0, 1, 3, 5};
    if (n == 8) return {0, 2, 4, 6};
    std::vector<int64_t> out;
    for (int i = 0; i < 4; ++i) out.push_back(std::llround(i * static_cast<double>(n - 1) / 3.0));
    return out;
}

ResidualUnitImpl::ResidualUnitImpl(int64_t ch) {
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3).padding(1)));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3).padding(1)));
}

torch::Tensor ResidualUnitImpl::forward(const torch::Tensor& x) {
    return x + conv2(torch::gelu(conv1(torch::gelu(x))));
}

FusionPyramidImpl::FusionPyramidImpl(const ModelConfig& cfg) {
    const auto c = cfg.fusion_channels;
    const auto in = 4 * cfg.embed_dim;
    channels = {c, 2 * c, 4 * c, 4 * c};
    project = register_module("project", torch::nn::ModuleList());
    resample = register_module("resample", torch::nn::ModuleList());
    lateral = register_module("lateral", torch::nn::ModuleList());
    merge = register_module("merge", torch::nn::ModuleList());
    for (int i = 0; i < 4; ++i) {
        const auto ch = channels[static_cast<size_t>(i)];
        project->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, ch, 1)));
        // Token grid is H/2P; level i sits at H/2^(i+1).
        const int64_t up = cfg.patch_size >> i;
        if (up > 1) {
            resample->push_back(torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(ch, ch, up).stride(up)));
        } else if (up == 1) {
            resample->push_back(torch::nn::Identity());
        } else {
            const int64_t down = int64_t{1} << i;
            const int64_t k = down / cfg.patch_size;
            resample->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, k).stride(k)));
        }
        lateral->push_back(ResidualUnit(ch));
        merge->push_back(ResidualUnit(ch));
    }
    up43 = register_module("up43", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(4 * c, 4 * c, 2).stride(2)));
    up32 = register_module("up32", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(4 * c, 2 * c, 2).stride(2)));
    up21 = register_module("up21", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(2 * c, c, 2).stride(2)));
    head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding(1)));
}

torch::Tensor FusionPyramidImpl::forward(const std::array<torch::Tensor, 4>& stages) {
    std::array<torch::Tensor, 4> levels;
    for (size_t i = 0; i < 4; ++i) {
        auto x = project[i]->as<torch::nn::Conv2d>()->forward(stages[i]);
        if (auto* t = resample[i]->as<torch::nn::ConvTranspose2d>()) {
            x = t->forward(x);
        } else if (auto* cv = resample[i]->as<torch::nn::Conv2d>()) {
            x = cv->forward(x);
        }
        levels[i] = x;
    }
    auto lat = [&](size_t i, const torch::Tensor& x) { return lateral[i]->as<ResidualUnit>()->forward(x); };
    auto mrg = [&](size_t i, const torch::Tensor& x) { return merge[i]->as<ResidualUnit>()->forward(x); };

    auto f = mrg(3, lat(3, levels[3]));
    f = mrg(2, up43(f) + lat(2, levels[2]));
    f = mrg(1, up32(f) + lat(1, levels[1]));
    f = mrg(0, up21(f) + lat(0, levels[0]));
    return head(f);
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    embed = register_module("embed", PatchEmbed(cfg));
    registers = register_parameter("registers", torch::randn({kNumRegisters, cfg.embed_dim}) * 0.02);
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int64_t i = 0; i < cfg.num_blocks; ++i) blocks->push_back(InterleavedBlock(cfg));
    pyramid_down = register_module("pyramid_down", FusionPyramid(cfg));
    pyramid_wave = register_module("pyramid_wave", FusionPyramid(cfg));
    upsample = register_module(
        "upsample",
        torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(cfg.fusion_channels, cfg.fusion_channels, 2).stride(2)));
}

EncoderOutput EncoderImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(3) != 3) throw std::invalid_argument("encode: expected [F, H, W, 3]");
    const auto frames = images.size(0);
    const auto h = images.size(1);
    const auto w = images.size(2);
    config.validate_image(h, w);
    const auto d = config.embed_dim;
    const auto p = config.patch_size;
    const auto gh = h / (2 * p);
    const auto gw = w / (2 * p);
    const auto num_tokens = gh * gw;

    auto chw = images.permute({0, 3, 1, 2});
    auto bands = wavelet::dwt2(chw);
    auto down = F::avg_pool2d(chw, F::AvgPool2dFuncOptions(2));
    auto comps = torch::stack({down, bands.ll, bands.lh, bands.hl, bands.hh}, 0).reshape({kNumComponents * frames, 3, h / 2, w / 2});
    auto patches = embed(comps).view({kNumComponents, frames, num_tokens, d});
    auto regs = registers.view({1, 1, kNumRegisters, d}).expand({kNumComponents, frames, kNumRegisters, d});
    auto tokens = torch::cat({regs, patches}, 2);

    const auto stage_ids = select_stages(config.num_blocks);
    std::vector<torch::Tensor> block_maps(static_cast<size_t>(config.num_blocks));
    for (int64_t b = 0; b < config.num_blocks; ++b) {
        auto out = blocks[static_cast<size_t>(b)]->as<InterleavedBlock>()->forward(tokens);
        tokens = out.tokens;
        if (std::find(stage_ids.begin(), stage_ids.end(), b) != stage_ids.end()) {
            last_tap_width = out.concat().size(-1);
            block_maps[static_cast<size_t>(b)] =
                out.concat().reshape({kNumComponents * frames, gh, gw, 4 * d}).permute({0, 3, 1, 2});
        }
    }
    std::array<torch::Tensor, 4> down_stages, wave_stages;
    for (size_t i = 0; i < 4; ++i) {
        const auto& m = block_maps[static_cast<size_t>(stage_ids[i])];
        down_stages[i] = m.index({Slice(0, frames)});
        wave_stages[i] = m.index({Slice(frames, None)});
    }
    const auto c = config.fusion_channels;
    auto fused_down = pyramid_down(down_stages);
    auto fused_wave = pyramid_wave(wave_stages).view({4, frames, c, h / 2, w / 2});
    auto up = upsample(fused_down);
    auto inv = wavelet::idwt2({fused_wave[0], fused_wave[1], fused_wave[2], fused_wave[3]});
    auto features = wavelet::gaussian_blur(up + inv, config.blur_sigma).permute({0, 2, 3, 1});

    last_frames = frames;
    last_tokens = num_tokens;
    last_sequence = tokens.size(2);

    auto pooled = tokens.index({Slice(), Slice(), Slice(0, kNumRegisters)}).mean({0, 1});
    EncoderOutput result;
    result.features = features;
    result.registers = {pooled[0], pooled[1], pooled[2]};
    return result;
}

void EncoderImpl::record_attention(bool on) {
    auto last = blocks[blocks->size() - 1]->as<InterleavedBlock>();
    last->global->attn->record_weights = on;
    if (!on) last->global->attn->last_weights = torch::Tensor();
}

torch::Tensor EncoderImpl::register_attention() const {
    auto last = blocks->ptr<InterleavedBlockImpl>(blocks->size() - 1);
    const auto& wts = last->global->attn->last_weights;
    if (!wts.defined()) throw std::logic_error("register_attention: recording was not enabled before forward");
    const auto lp = last_tokens + kNumRegisters;
    std::vector<torch::Tensor> per_frame;
    for (int64_t f = 0; f < last_frames; ++f) {
        auto rows = wts[0].index({Slice(f * lp, f * lp + kNumRegisters), Slice(f * lp + kNumRegisters, (f + 1) * lp)});
        per_frame.push_back(rows);
    }
    return torch::stack(per_frame, 0);
}

}  // namespace lino::enc
