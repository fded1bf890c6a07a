#include "lino/pipeline.hpp"

#include <cmath>
#include <stdexcept>

namespace lino {

InferenceResult infer(LinoModel& model, const torch::Tensor& images, const torch::Tensor& mask,
                      const InferenceOptions& options) {
    if (images.dim() != 4 || images.size(3) != 3) throw std::invalid_argument("infer: expected [F, H, W, 3] images");
    const auto h = images.size(1);
    const auto w = images.size(2);
    model->config.validate_image(h, w);
    auto m = mask.defined() ? mask.to(torch::kBool) : torch::ones({h, w}, torch::kBool);
    if (m.size(0) != h || m.size(1) != w) throw std::invalid_argument("infer: mask does not match the images");

    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    auto x = enc::preprocess(images.to(torch::kFloat32), enc::Mode::Infer);
    InferenceResult out;
    out.encoded = model->encoder(x);
    const auto chunk = options.chunk > 0 ? options.chunk : model->config.m_samples;
    auto full = dec::reconstruct_full(model->decoder, out.encoded.features, x, m, model->config.sample_attention,
                                      chunk, options.seed);
    out.normals = full.map;
    const auto pixels = h * w;
    auto scatter = [&](const torch::Tensor& v) {
        std::vector<int64_t> shape{pixels};
        for (int64_t i = 1; i < v.dim(); ++i) shape.push_back(v.size(i));
        return torch::zeros(shape, v.options()).index_copy_(0, full.order, v);
    };
    out.per_pixel = {scatter(full.per_pixel.normals), scatter(full.per_pixel.albedo),
                     scatter(full.per_pixel.metallic), scatter(full.per_pixel.roughness)};
    if (was_training) model->train();
    return out;
}

double max_angular_deviation(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask) {
    auto m = mask.to(torch::kBool);
    auto na = a.to(torch::kFloat64).index({m});
    auto nb = b.to(torch::kFloat64).index({m});
    if (na.size(0) == 0) throw std::invalid_argument("max_angular_deviation: empty mask");
    // atan2 of the cross and dot products stays accurate for tiny angles.
    auto cross = torch::linalg_cross(na, nb, -1).norm(2, -1);
    auto dot = (na * nb).sum(-1);
    return (torch::atan2(cross, dot).max().item<double>()) * 180.0 / M_PI;
}

}  // namespace lino
