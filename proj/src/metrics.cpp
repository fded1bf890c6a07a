#include "lino/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace lino::metrics {

namespace F = torch::nn::functional;

namespace {

torch::Tensor full_mask(const torch::Tensor& features, const torch::Tensor& mask) {
    if (!mask.defined()) return torch::ones({features.size(1), features.size(2)}, torch::kBool);
    if (mask.size(0) != features.size(1) || mask.size(1) != features.size(2)) {
        throw std::invalid_argument("metrics: mask does not match the features");
    }
    return mask.to(torch::kBool);
}

void check_features(const torch::Tensor& features) {
    if (features.dim() != 4) throw std::invalid_argument("metrics: expected [n, H, W, C] features");
    if (features.size(0) < 2) throw std::invalid_argument("metrics: need at least two feature maps");
}

}  // namespace

double mae(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
    if (pred.sizes() != gt.sizes()) throw std::invalid_argument("mae: shape mismatch");
    auto m = mask.to(torch::kBool);
    if (!m.any().item<bool>()) throw std::invalid_argument("mae: empty mask");
    auto a = pred.to(torch::kFloat64).index({m});
    auto b = gt.to(torch::kFloat64).index({m});
    // atan2 form: exact zero for identical inputs, stable near 0 and 180 degrees.
    auto angle = torch::atan2(torch::linalg_cross(a, b, -1).norm(2, -1), (a * b).sum(-1));
    return angle.mean().item<double>() * 180.0 / M_PI;
}

PairwiseResult pairwise_csim(const torch::Tensor& features, const torch::Tensor& mask) {
    check_features(features);
    auto m = full_mask(features, mask);
    auto x = features.to(torch::kFloat64).index({torch::indexing::Slice(), m});  // [n, P, C]
    auto norms = x.norm(2, -1);
    PairwiseResult r;
    double sum = 0.0;
    const auto n = x.size(0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = i + 1; j < n; ++j) {
            auto valid = norms[i].gt(0) & norms[j].gt(0);
            const auto count = valid.sum().item<int64_t>();
            r.excluded += valid.numel() - count;
            ++r.pairs;
            if (count == 0) continue;
            auto cos = (x[i] * x[j]).sum(-1) / (norms[i] * norms[j]).clamp_min(1e-300);
            sum += cos.index({valid}).mean().item<double>();
        }
    }
    r.value = sum / static_cast<double>(r.pairs);
    return r;
}

torch::Tensor pca_project(const torch::Tensor& features, const torch::Tensor& mask) {
    if (features.dim() != 4) throw std::invalid_argument("pca_project: expected [n, H, W, C] features");
    auto m = full_mask(features, mask);
    const auto n = features.size(0), h = features.size(1), w = features.size(2), c = features.size(3);
    auto x = features.to(torch::kFloat64);
    auto pooled = x.index({torch::indexing::Slice(), m}).reshape({-1, c});
    if (pooled.size(0) == 0) throw std::invalid_argument("pca_project: empty mask");
    auto mean = pooled.mean(0);
    auto centered = pooled - mean;
    auto cov = centered.t().mm(centered) / std::max<int64_t>(pooled.size(0) - 1, 1);
    auto [evals, evecs] = torch::linalg_eigh(cov);  // ascending
    const double top = std::max(evals.max().item<double>(), 0.0);
    auto basis = torch::zeros({c, 3}, torch::kFloat64);
    for (int64_t k = 0; k < std::min<int64_t>(3, c); ++k) {
        const auto idx = c - 1 - k;
        if (!(evals[idx].item<double>() > 1e-12 * top) || top == 0.0) continue;
        auto v = evecs.select(1, idx).clone();
        if (v[v.abs().argmax()].item<double>() < 0) v = -v;
        basis.select(1, k).copy_(v);
    }
    auto proj = (x.reshape({-1, c}) - mean).mm(basis).reshape({n, h, w, 3});
    auto inside = proj.index({torch::indexing::Slice(), m});  // [n, P, 3]
    auto lo = inside.reshape({-1, 3}).amin(0);
    auto hi = inside.reshape({-1, 3}).amax(0);
    auto range = hi - lo;
    auto scaled = torch::where(range.gt(1e-300), (proj - lo) / range.clamp_min(1e-300), torch::zeros_like(proj));
    scaled = scaled.clamp(0.0, 1.0) * m.unsqueeze(0).unsqueeze(-1).to(torch::kFloat64);
    return scaled;
}

torch::Tensor ssim_window() {
    const int64_t size = 11;
    const double sigma = 1.5;
    auto r = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
    auto g = torch::exp(-r.pow(2) / (2 * sigma * sigma));
    g = g / g.sum();
    return g.unsqueeze(1).mm(g.unsqueeze(0));
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes() || a.dim() != 2) throw std::invalid_argument("ssim: expected equal [H, W] images");
    if (a.size(0) < 11 || a.size(1) < 11) throw std::invalid_argument("ssim: images smaller than the 11x11 window");
    const double c1 = std::pow(0.01, 2), c2 = std::pow(0.03, 2);
    auto win = ssim_window().view({1, 1, 11, 11});
    auto filt = [&](const torch::Tensor& t) { return F::conv2d(t.view({1, 1, t.size(0), t.size(1)}), win); };
    auto x = a.to(torch::kFloat64), y = b.to(torch::kFloat64);
    auto mx = filt(x), my = filt(y);
    auto sxx = filt(x * x) - mx * mx;
    auto syy = filt(y * y) - my * my;
    auto sxy = filt(x * y) - mx * my;
    auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.mean().item<double>();
}

PairwiseResult pairwise_ssim_pca(const torch::Tensor& features, const torch::Tensor& mask) {
    check_features(features);
    auto proj = pca_project(features, mask);
    PairwiseResult r;
    double sum = 0.0;
    const auto n = proj.size(0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int64_t ch = 0; ch < 3; ++ch) s += ssim(proj[i].select(-1, ch), proj[j].select(-1, ch));
            sum += s / 3.0;
            ++r.pairs;
        }
    }
    r.value = sum / static_cast<double>(r.pairs);
    return r;
}

}  // namespace lino::metrics
