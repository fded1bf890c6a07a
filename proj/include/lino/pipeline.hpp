#pragma once

#include <torch/torch.h>

#include "lino/decoder.hpp"
#include "lino/encoder.hpp"
#include "lino/model.hpp"

namespace lino {

struct InferenceOptions {
    int64_t chunk = 0;      // pixels per decoder call; 0 uses config.m_samples
    uint64_t seed = 0;      // chunk assignment
};

struct InferenceResult {
    dec::NormalMap normals;
    dec::PointPrediction per_pixel;  // flat [H*W] layout, zeros outside the mask
    enc::EncoderOutput encoded;
};

/// Full pipeline on a raw [F, H, W, 3] stack: infer-mode normalization,
/// encoding and a prediction for every pixel of `mask` ([H, W]; undefined
/// means all pixels). Runs without gradient tracking.
InferenceResult infer(LinoModel& model, const torch::Tensor& images, const torch::Tensor& mask = {},
                      const InferenceOptions& options = {});

/// Angle in degrees between two normal maps, max over `mask`.
double max_angular_deviation(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask);

}  // namespace lino
