#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace lino::metrics {

/// Mean angular error in degrees over `mask` ([H, W]) between [H, W, 3] maps.
/// Throws std::invalid_argument on an empty mask.
double mae(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);

struct PairwiseResult {
    double value = 0.0;
    int64_t pairs = 0;
    int64_t excluded = 0;  // zero-norm pixel pairs skipped (csim only)
};

/// Mean over all n(n-1)/2 pairs of the mean per-pixel cosine between
/// features [n, H, W, C], restricted to `mask` (undefined means all pixels).
PairwiseResult pairwise_csim(const torch::Tensor& features, const torch::Tensor& mask = {});

/// Joint PCA of all masked feature vectors, projected to three components,
/// each min-max normalized over the pooled set: [n, H, W, 3] in [0, 1].
/// Unmasked pixels are 0. Missing components (rank or width < 3) are 0.
torch::Tensor pca_project(const torch::Tensor& features, const torch::Tensor& mask = {});

/// 2-D Gaussian SSIM window (11 x 11, sigma 1.5), sums to one.
torch::Tensor ssim_window();

/// Mean SSIM between [H, W] images with data range 1, valid filtering.
double ssim(const torch::Tensor& a, const torch::Tensor& b);

/// SSIM of PCA projections averaged over channels and all pairs.
PairwiseResult pairwise_ssim_pca(const torch::Tensor& features, const torch::Tensor& mask = {});

}  // namespace lino::metrics
