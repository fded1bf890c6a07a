#include "lino/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace lino::loss {

namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

constexpr int64_t kEnvInputs = sim::kEnvSize * sim::kEnvSize * 3;
// sqrt(x + eps) - sqrt(eps) keeps a finite derivative at zero gradient while
// mapping a constant field exactly to zero.
constexpr double kMagEps = 1e-12;

torch::Tensor unit(const torch::Tensor& v) { return v / v.norm().clamp_min(1e-12); }

template <size_t N>
torch::Tensor rows_tensor(const std::vector<std::array<float, N>>& rows, const torch::TensorOptions& opts) {
    std::vector<float> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return torch::tensor(flat, torch::kFloat32).view({static_cast<int64_t>(rows.size()), static_cast<int64_t>(N)}).to(opts);
}

torch::Tensor magnitude(const torch::Tensor& gx, const torch::Tensor& gy) {
    return (gx.pow(2) + gy.pow(2) + kMagEps).sqrt() - std::sqrt(kMagEps);
}

}  // namespace

LightTargetEncoderImpl::LightTargetEncoderImpl(int64_t dim) {
    env = register_module("env", nn::Mlp(kEnvInputs, dim, dim));
    point = register_module("point", nn::Mlp(5, dim, dim));
    direction = register_module("direction", nn::Mlp(6, dim, dim));
}

LightTargets LightTargetEncoderImpl::forward(const sim::LightingAnnotation& a) {
    const auto opts = env->fc1->weight.options();
    LightTargets t;
    t.has_env = a.has_env();
    t.has_point = !a.points.empty();
    t.has_direction = !a.directions.empty();
    const auto dim = env->fc2->weight.size(0);
    t.env = t.has_env ? unit(env(a.env.to(opts).reshape({-1}))) : torch::zeros({dim}, opts);
    t.point = t.has_point ? unit(point(rows_tensor(a.points, opts)).mean(0)) : torch::zeros({dim}, opts);
    t.direction = t.has_direction ? unit(direction(rows_tensor(a.directions, opts)).mean(0)) : torch::zeros({dim}, opts);
    return t;
}

LightTargets LightTargetEncoderImpl::encode_stack(const std::vector<sim::LightingAnnotation>& annotations) {
    const auto opts = env->fc1->weight.options();
    const auto dim = env->fc2->weight.size(0);
    std::array<std::vector<torch::Tensor>, 3> acc;
    for (const auto& a : annotations) {
        auto t = forward(a);
        if (t.has_env) acc[0].push_back(t.env);
        if (t.has_point) acc[1].push_back(t.point);
        if (t.has_direction) acc[2].push_back(t.direction);
    }
    auto pool = [&](const std::vector<torch::Tensor>& v) {
        return v.empty() ? torch::zeros({dim}, opts) : unit(torch::stack(v).mean(0));
    };
    LightTargets out;
    out.has_env = !acc[0].empty();
    out.has_point = !acc[1].empty();
    out.has_direction = !acc[2].empty();
    out.env = pool(acc[0]);
    out.point = pool(acc[1]);
    out.direction = pool(acc[2]);
    return out;
}

RegisterProjectorImpl::RegisterProjectorImpl(int64_t dim) {
    env = register_module("env", nn::Mlp(dim, dim, dim));
    point = register_module("point", nn::Mlp(dim, dim, dim));
    direction = register_module("direction", nn::Mlp(dim, dim, dim));
}

enc::RegisterState RegisterProjectorImpl::forward(const enc::RegisterState& r) {
    return {env(r.env), point(r.point), direction(r.direction)};
}

AlignmentLosses light_alignment_loss(const enc::RegisterState& projected, const LightTargets& targets) {
    auto term = [](const torch::Tensor& x, const torch::Tensor& l, bool present, const char* name) {
        if (!present) return torch::zeros({}, x.options());
        const auto norm = x.norm();
        if (!(norm.item<double>() > 0.0) || !std::isfinite(norm.item<double>())) {
            throw std::invalid_argument(std::string("light_alignment_loss: ") + name + " register has zero norm");
        }
        return 1.0 - (x / norm * l).sum();
    };
    return {term(projected.env, targets.env, targets.has_env, "env"),
            term(projected.point, targets.point, targets.has_point, "point"),
            term(projected.direction, targets.direction, targets.has_direction, "direction")};
}

torch::Tensor normal_gradient(const torch::Tensor& normals) {
    if (normals.dim() < 3 || normals.size(-1) != 3) {
        throw std::invalid_argument("normal_gradient: expected [..., H, W, 3]");
    }
    const auto h = normals.size(-3);
    const auto w = normals.size(-2);
    auto x = normals.reshape({-1, h, w, 3}).permute({0, 3, 1, 2});
    auto p = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    auto gx = (p.index({Slice(), Slice(), Slice(1, -1), Slice(2, None)}) -
               p.index({Slice(), Slice(), Slice(1, -1), Slice(0, -2)})) * 0.5;
    auto gy = (p.index({Slice(), Slice(), Slice(2, None), Slice(1, -1)}) -
               p.index({Slice(), Slice(), Slice(0, -2), Slice(1, -1)})) * 0.5;
    auto g = magnitude(gx, gy).mean(1);
    std::vector<int64_t> shape(normals.sizes().begin(), normals.sizes().end() - 1);
    return g.reshape(shape);
}

torch::Tensor stencil_gradient(const torch::Tensor& s) {
    if (s.dim() != 3 || s.size(1) != 5 || s.size(2) != 3) {
        throw std::invalid_argument("stencil_gradient: expected [m, 5, 3]");
    }
    auto gx = (s.select(1, 2) - s.select(1, 1)) * 0.5;
    auto gy = (s.select(1, 4) - s.select(1, 3)) * 0.5;
    return magnitude(gx, gy).mean(-1);
}

GradientPerception gradient_perception_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                                            const torch::Tensor& pred_grad, const torch::Tensor& gt_grad,
                                            const torch::Tensor& frozen_confidence) {
    if (pred.sizes() != gt.sizes() || pred_grad.sizes() != gt_grad.sizes()) {
        throw std::invalid_argument("gradient_perception_loss: shape mismatch");
    }
    std::vector<int64_t> pix(pred.sizes().begin(), pred.sizes().end() - 1);
    if (pred_grad.sizes() != c10::IntArrayRef(pix)) {
        throw std::invalid_argument("gradient_perception_loss: gradient map does not match normal map");
    }
    GradientPerception out;
    out.confidence = frozen_confidence.defined() ? frozen_confidence.detach() : torch::exp(pred_grad.detach());
    out.conf = ((gt - pred).pow(2) * out.confidence.unsqueeze(-1)).mean();
    out.grad = (pred_grad - gt_grad).pow(2).mean();
    return out;
}

GradientPerception gradient_perception_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
    if (pred.sizes() != gt.sizes()) throw std::invalid_argument("gradient_perception_loss: shape mismatch");
    return gradient_perception_loss(pred, gt, normal_gradient(pred), normal_gradient(gt));
}

std::array<double, kNumTerms> LossTerms::values() const {
    std::array<double, kNumTerms> v{};
    for (size_t i = 0; i < kNumTerms; ++i) {
        v[i] = terms[i].defined() ? terms[i].detach().to(torch::kFloat64).item<double>() : 0.0;
    }
    return v;
}

Weights adaptive_weights(const std::array<double, kNumTerms>& v, bool pbr, double eps) {
    Weights w{};
    const double conf = v[kConf];
    auto ratio = [&](double target, double value) { return value > eps ? target * conf / value : 0.0; };
    w[kEnv] = ratio(0.1, v[kEnv]);
    w[kPoint] = ratio(0.1, v[kPoint]);
    w[kDirection] = ratio(0.1, v[kDirection]);
    w[kConf] = 1.0;
    w[kGrad] = ratio(0.1, v[kGrad]);
    if (pbr) {
        w[kAlbedo] = ratio(1.0, v[kAlbedo]);
        w[kMetallic] = ratio(1.0, v[kMetallic]);
        w[kRoughness] = ratio(1.0, v[kRoughness]);
    }
    return w;
}

double LossBreakdown::light() const {
    return weights[kEnv] * values[kEnv] + weights[kPoint] * values[kPoint] + weights[kDirection] * values[kDirection];
}

LossBreakdown total_loss(const LossTerms& parts, const Weights& weights, bool pbr) {
    LossBreakdown b;
    b.pbr = pbr;
    b.values = parts.values();
    b.weights = weights;
    const size_t last = pbr ? kNumTerms : kAlbedo;
    for (size_t i = last; i < kNumTerms; ++i) {
        b.values[i] = 0.0;
        b.weights[i] = 0.0;
    }
    torch::Tensor total;
    for (size_t i = 0; i < last; ++i) {
        b.total_value += weights[i] * b.values[i];
        if (!parts.terms[i].defined()) continue;
        auto t = parts.terms[i] * weights[i];
        total = total.defined() ? total + t : t;
    }
    b.total = total.defined() ? total : torch::zeros({});
    return b;
}

}  // namespace lino::loss
