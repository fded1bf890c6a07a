#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lino/config.hpp"
#include "lino/decoder.hpp"
#include "lino/encoder.hpp"
#include "lino/losses.hpp"

namespace lino {

/// Encoder, decoder and the training-only light-alignment heads.
struct LinoModelImpl : torch::nn::Module {
    explicit LinoModelImpl(const ModelConfig& config);

    ModelConfig config;
    enc::Encoder encoder{nullptr};
    dec::Decoder decoder{nullptr};
    loss::LightTargetEncoder light_encoder{nullptr};
    loss::RegisterProjector projector{nullptr};
};
TORCH_MODULE(LinoModel);

/// Builds a model with parameters drawn from a generator seeded by `seed`.
LinoModel make_model(const ModelConfig& config, uint64_t seed);

struct Checkpoint {
    ModelConfig config;
    nlohmann::json meta = nlohmann::json::object();  // epoch, step, run config, ...
    std::string optimizer_state;                      // serialized optimizer, may be empty
};

/// Binary layout: magic line, little-endian u64 header size, JSON header with
/// a tensor table, then raw tensor bytes in table order.
void save_checkpoint(const std::filesystem::path& path, LinoModel& model, const Checkpoint& extra);

struct LoadedCheckpoint {
    LinoModel model{nullptr};
    Checkpoint info;
};

/// Throws std::runtime_error on a malformed file or a tensor table that does
/// not match the model built from the stored config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lino
