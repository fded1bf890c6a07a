#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "lino/attention.hpp"
#include "lino/config.hpp"
#include "lino/wavelet.hpp"

namespace lino::enc {

inline constexpr int64_t kNumRegisters = 3;   // env, point, direction
inline constexpr int64_t kNumComponents = 5;  // downsampled, ll, lh, hl, hh

enum class Mode { Train, Infer };

/// Per-image intensity normalization of a [F, H, W, 3] stack. Train divides
/// image f by u ~ U[mean_f, max_f] (seeded); Infer divides by max_f.
/// Throws std::invalid_argument on negative or all-zero images.
torch::Tensor preprocess(const torch::Tensor& images, Mode mode, uint64_t seed = 0);

/// Both branch inputs, channel-last: downsampled [F, H/2, W/2, 3] (2x2 mean)
/// and the Haar subbands of each image, same shape.
struct BranchInputs {
    torch::Tensor downsampled;
    wavelet::Subbands wavelet;
};
BranchInputs branch_inputs(const torch::Tensor& images);

/// Post-attention register embeddings pooled over frames and components.
struct RegisterState {
    torch::Tensor env, point, direction;  // [D] each

    torch::Tensor stacked() const { return torch::stack({env, point, direction}); }
};

/// Splits [N, 3, h, w] into P x P patches and projects them to [N, L, D]
/// with a learned positional embedding shared by all frames and components.
struct PatchEmbedImpl : torch::nn::Module {
    PatchEmbedImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& x);
    torch::Tensor positional(int64_t grid_h, int64_t grid_w);

    int64_t patch;
    torch::nn::Linear proj{nullptr};
    torch::Tensor pos;  // [1, D, G, G]
};
TORCH_MODULE(PatchEmbed);

struct BlockOutput {
    torch::Tensor tokens;               // [C, F, L', D]
    std::array<torch::Tensor, 4> taps;  // per attention layer, registers removed: [C, F, L, D]

    /// Layer outputs concatenated on the feature axis: [C, F, L, 4D].
    torch::Tensor concat() const { return torch::cat({taps[0], taps[1], taps[2], taps[3]}, -1); }
};

/// Frame -> Light -> Global -> Light attention over [C, F, L', D] tokens.
/// Frame attends within one frame, Light across frames at a fixed token
/// index, Global over all F * L' tokens of a component.
struct InterleavedBlockImpl : torch::nn::Module {
    InterleavedBlockImpl(const ModelConfig& config);
    BlockOutput forward(const torch::Tensor& tokens);

    nn::TransformerLayer frame{nullptr}, light1{nullptr}, global{nullptr}, light2{nullptr};
};
TORCH_MODULE(InterleavedBlock);

/// Blocks (zero-based) whose outputs feed the fusion pyramid.
std::vector<int64_t> select_stages(int64_t num_blocks);

struct ResidualUnitImpl : torch::nn::Module {
    explicit ResidualUnitImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResidualUnit);

/// Top-down multi-scale fusion of four [N, 4D, g, g] token maps (g = H/2P)
/// into a [N, C, H/2, W/2] map via a (C, 2C, 4C, 4C) pyramid at
/// H/2, H/4, H/8, H/16.
struct FusionPyramidImpl : torch::nn::Module {
    FusionPyramidImpl(const ModelConfig& config);
    torch::Tensor forward(const std::array<torch::Tensor, 4>& stages);

    std::array<int64_t, 4> channels;
    torch::nn::ModuleList project, resample;
    torch::nn::ModuleList lateral, merge;
    torch::nn::ConvTranspose2d up43{nullptr}, up32{nullptr}, up21{nullptr};
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(FusionPyramid);

struct EncoderOutput {
    torch::Tensor features;  // [F, H, W, C]
    RegisterState registers;
};

struct EncoderImpl : torch::nn::Module {
    explicit EncoderImpl(const ModelConfig& config);

    /// `images` is a preprocessed [F, H, W, 3] stack.
    EncoderOutput forward(const torch::Tensor& images);

    /// Enables recording of the last block's Global attention weights.
    void record_attention(bool on);
    /// Attention of each register query to its own frame's patch tokens in the
    /// last Global layer, downsample branch, averaged over heads: [F, 3, L].
    torch::Tensor register_attention() const;

    ModelConfig config;
    PatchEmbed embed{nullptr};
    torch::Tensor registers;  // [3, D]
    torch::nn::ModuleList blocks;
    FusionPyramid pyramid_down{nullptr}, pyramid_wave{nullptr};
    torch::nn::ConvTranspose2d upsample{nullptr};

    /// Shapes seen by the last forward: frames, patch tokens L, sequence
    /// length L' (with registers) and the width of a fusion stage input.
    int64_t last_frames = 0, last_tokens = 0, last_sequence = 0, last_tap_width = 0;
};
TORCH_MODULE(Encoder);

}  // namespace lino::enc
