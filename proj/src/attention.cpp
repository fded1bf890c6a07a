#include "lino/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace lino::nn {

MlpImpl::MlpImpl(int64_t in, int64_t hidden, int64_t out) {
    fc1 = register_module("fc1", torch::nn::Linear(in, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, out));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim_, int64_t heads_) : dim(dim_), heads(heads_) {
    if (dim % heads != 0) throw std::invalid_argument("attention: dim must be divisible by heads");
    q = register_module("q", torch::nn::Linear(dim, dim));
    k = register_module("k", torch::nn::Linear(dim, dim));
    v = register_module("v", torch::nn::Linear(dim, dim));
    out = register_module("out", torch::nn::Linear(dim, dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& context) {
    const auto b = query.size(0);
    const auto nq = query.size(1);
    const auto nk = context.size(1);
    const auto hd = dim / heads;
    auto qh = q(query).view({b, nq, heads, hd}).transpose(1, 2);
    auto kh = k(context).view({b, nk, heads, hd}).transpose(1, 2);
    auto vh = v(context).view({b, nk, heads, hd}).transpose(1, 2);
    auto logits = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
    auto weights = torch::softmax(logits, -1);
    if (record_weights) last_weights = weights.mean(1).detach();
    auto ctx = torch::matmul(weights, vh).transpose(1, 2).reshape({b, nq, dim});
    return out(ctx);
}

torch::Tensor MultiHeadAttentionImpl::forward_self_only(const torch::Tensor& x) { return out(v(x)); }

TransformerLayerImpl::TransformerLayerImpl(int64_t dim, int64_t heads, int64_t mlp_ratio) {
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    attn = register_module("attn", MultiHeadAttention(dim, heads));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    mlp = register_module("mlp", Mlp(dim, dim * mlp_ratio, dim));
}

torch::Tensor TransformerLayerImpl::forward(const torch::Tensor& x, bool self_only) {
    auto h = norm1(x);
    auto y = x + (self_only ? attn->forward_self_only(h) : attn(h, h));
    return y + mlp(norm2(y));
}

}  // namespace lino::nn
