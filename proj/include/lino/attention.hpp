#pragma once

#include <torch/torch.h>

namespace lino::nn {

/// Two-layer GELU MLP.
struct MlpImpl : torch::nn::Module {
    MlpImpl(int64_t in, int64_t hidden, int64_t out);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

/// Multi-head scaled dot-product attention over [B, N, D] sequences.
struct MultiHeadAttentionImpl : torch::nn::Module {
    MultiHeadAttentionImpl(int64_t dim, int64_t heads);

    torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context);
    /// Each query attends only to its own position: softmax over a single key,
    /// which reduces to out(v(x)).
    torch::Tensor forward_self_only(const torch::Tensor& x);

    int64_t dim, heads;
    torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};

    /// When set, forward() keeps the head-averaged weights [B, Nq, Nk].
    bool record_weights = false;
    torch::Tensor last_weights;
};
TORCH_MODULE(MultiHeadAttention);

/// Pre-norm residual attention layer followed by a pre-norm residual MLP.
struct TransformerLayerImpl : torch::nn::Module {
    TransformerLayerImpl(int64_t dim, int64_t heads, int64_t mlp_ratio);
    torch::Tensor forward(const torch::Tensor& x, bool self_only = false);

    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    MultiHeadAttention attn{nullptr};
    Mlp mlp{nullptr};
};
TORCH_MODULE(TransformerLayer);

}  // namespace lino::nn
