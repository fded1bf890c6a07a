#include "lino/wavelet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lino::wavelet {

using torch::indexing::Ellipsis;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

std::string shape_str(const torch::Tensor& t) {
    std::string s = "[";
    for (int64_t i = 0; i < t.dim(); ++i) {
        s += std::to_string(t.size(i));
        if (i + 1 < t.dim()) s += ", ";
    }
    return s + "]";
}

}  // namespace

double Subbands::energy() const {
    auto e = [](const torch::Tensor& t) { return t.to(torch::kFloat64).pow(2).sum().item<double>(); };
    return e(ll) + e(lh) + e(hl) + e(hh);
}

Subbands dwt2(const torch::Tensor& x) {
    if (x.dim() < 2) {
        throw std::invalid_argument("dwt2: expected at least 2 dimensions, got " + shape_str(x));
    }
    const int64_t h = x.size(-2);
    const int64_t w = x.size(-1);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("dwt2: spatial dimensions must be even, got " + shape_str(x));
    }
    auto a = x.index({Ellipsis, Slice(0, None, 2), Slice(0, None, 2)});
    auto b = x.index({Ellipsis, Slice(0, None, 2), Slice(1, None, 2)});
    auto c = x.index({Ellipsis, Slice(1, None, 2), Slice(0, None, 2)});
    auto d = x.index({Ellipsis, Slice(1, None, 2), Slice(1, None, 2)});
    Subbands out;
    out.ll = (a + b + c + d) * 0.5;
    out.lh = (a + b - c - d) * 0.5;
    out.hl = (a - b + c - d) * 0.5;
    out.hh = (a - b - c + d) * 0.5;
    return out;
}

torch::Tensor idwt2(const Subbands& bands) {
    const auto& ref = bands.ll;
    for (const auto* t : {&bands.lh, &bands.hl, &bands.hh}) {
        if (!t->defined() || t->sizes() != ref.sizes()) {
            throw std::invalid_argument("idwt2: subband shape mismatch, ll is " + shape_str(ref));
        }
    }
    if (ref.dim() < 2) {
        throw std::invalid_argument("idwt2: expected at least 2 dimensions, got " + shape_str(ref));
    }
    auto a = (bands.ll + bands.lh + bands.hl + bands.hh) * 0.5;
    auto b = (bands.ll + bands.lh - bands.hl - bands.hh) * 0.5;
    auto c = (bands.ll - bands.lh + bands.hl - bands.hh) * 0.5;
    auto d = (bands.ll - bands.lh - bands.hl + bands.hh) * 0.5;

    const int64_t h = ref.size(-2);
    const int64_t w = ref.size(-1);
    std::vector<int64_t> row_shape(ref.sizes().begin(), ref.sizes().end() - 1);
    row_shape.push_back(2 * w);
    auto top = torch::stack({a, b}, -1).reshape(row_shape);
    auto bottom = torch::stack({c, d}, -1).reshape(row_shape);

    std::vector<int64_t> out_shape(ref.sizes().begin(), ref.sizes().end() - 2);
    out_shape.push_back(2 * h);
    out_shape.push_back(2 * w);
    return torch::stack({top, bottom}, -2).reshape(out_shape);
}

torch::Tensor gaussian_kernel1d(double sigma, torch::Dtype dtype) {
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("gaussian kernel: sigma must be positive");
    }
    const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    auto taps = torch::arange(-radius, radius + 1, torch::kFloat64);
    auto k = torch::exp(-taps.pow(2) / (2.0 * sigma * sigma));
    return (k / k.sum()).to(dtype);
}

torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("gaussian_blur: sigma must be positive");
    }
    if (x.dim() < 2) {
        throw std::invalid_argument("gaussian_blur: expected at least 2 dimensions, got " + shape_str(x));
    }
    namespace F = torch::nn::functional;
    auto k = gaussian_kernel1d(sigma, x.scalar_type()).to(x.device());
    const int64_t radius = (k.size(0) - 1) / 2;
    const int64_t h = x.size(-2);
    const int64_t w = x.size(-1);

    auto flat = x.reshape({-1, 1, h, w});
    flat = F::pad(flat, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
    flat = F::conv2d(flat, k.view({1, 1, 1, -1}));
    flat = F::conv2d(flat, k.view({1, 1, -1, 1}));
    return flat.reshape(x.sizes());
}

}  // namespace lino::wavelet
