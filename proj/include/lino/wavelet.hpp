#pragma once

#include <torch/torch.h>

namespace lino::wavelet {

/// Single-level orthonormal Haar subbands. Each band has the input's leading
/// dimensions and half its spatial size.
///
/// With a, b, c, d the top-left, top-right, bottom-left and bottom-right
/// pixels of a 2x2 block:
///   ll = (a + b + c + d) / 2   lh = (a + b - c - d) / 2
///   hl = (a - b + c - d) / 2   hh = (a - b - c + d) / 2
/// so lh carries vertical (row-to-row) detail and hl horizontal detail.
struct Subbands {
    torch::Tensor ll;
    torch::Tensor lh;
    torch::Tensor hl;
    torch::Tensor hh;

    double energy() const;
};

/// Forward transform over the last two dimensions of `x` ([..., H, W]).
/// Throws std::invalid_argument for odd H or W.
Subbands dwt2(const torch::Tensor& x);

/// Exact inverse of dwt2. Throws std::invalid_argument on mismatched bands.
torch::Tensor idwt2(const Subbands& bands);

/// Normalized 1D Gaussian taps with radius ceil(3 * sigma).
torch::Tensor gaussian_kernel1d(double sigma, torch::Dtype dtype = torch::kFloat64);

/// Separable Gaussian blur over the last two dimensions with replicate padding.
/// Throws std::invalid_argument when sigma <= 0.
torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma = 1.0);

}  // namespace lino::wavelet
