#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace lino::io {

/// Writes an uncompressed scanline OpenEXR file with 32-bit float channels.
/// `image` is [H, W] (single channel "Y") or [H, W, 3] (channels R, G, B).
void write_exr(const std::filesystem::path& path, const torch::Tensor& image);

/// Reads files produced by write_exr (uncompressed, FLOAT channels). Returns
/// [H, W] for a lone channel, otherwise [H, W, C] with channels ordered R, G, B
/// when present and alphabetically for anything else.
torch::Tensor read_exr(const std::filesystem::path& path);

/// 8-bit PNG. `image` is uint8 [H, W] (gray) or [H, W, 3] (RGB).
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor read_png(const std::filesystem::path& path);

/// Mask stored as gray PNG, 255 inside.
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask);
torch::Tensor read_mask_png(const std::filesystem::path& path);

/// RGB = round(255 * (n + 1) / 2).
torch::Tensor normals_to_rgb8(const torch::Tensor& normals);
torch::Tensor rgb8_to_normals(const torch::Tensor& rgb);

/// Values in [0, 1] to uint8 gray or RGB.
torch::Tensor unit_to_u8(const torch::Tensor& values);

}  // namespace lino::io
