#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lino/config.hpp"
#include "lino/dataset.hpp"
#include "lino/losses.hpp"
#include "lino/model.hpp"

namespace lino::train {

struct DataConfig {
    std::string path;
    /// Restricts training to these complexity levels; empty keeps all.
    std::vector<int> levels;

    bool operator==(const DataConfig&) const = default;
};

struct TrainConfig {
    int main_epochs = 15;
    int finetune_epochs = 5;
    int start_level = 1;
    int max_level = 4;
    int finetune_level = 5;
    int epochs_per_level = 3;
    /// Optimizer steps per epoch; 0 makes one pass over the eligible scenes.
    int steps_per_epoch = 0;
    /// Scenes accumulated per optimizer step.
    int batch_size = 1;
    double lr = 1e-4;
    double weight_decay = 0.05;
    double decay_factor = 0.8;
    int decay_every = 10;
    int frames_min = 3;
    int frames_max = 6;
    uint64_t seed = 0;
    /// Off zeroes the three light-alignment weights.
    bool light_alignment = true;

    int total_epochs() const { return main_epochs + finetune_epochs; }
    sim::CurriculumSchedule schedule() const;
    bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
    ModelConfig model;
    DataConfig data;
    TrainConfig train;
    bool pbr = false;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown keys throw std::invalid_argument.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

/// One training example: a frame subset of a scene with its ground truth.
struct TrainSample {
    torch::Tensor images;  // [F, H, W, 3] raw radiance
    std::vector<sim::LightingAnnotation> lightings;
    torch::Tensor normals, albedo, roughness, metallic, mask;
};

/// Draws `frames` distinct frames of `record` in a seeded random order.
TrainSample make_sample(const data::SceneRecord& record, int64_t frames, uint64_t seed);

struct StepOptions {
    bool light_alignment = true;
    bool pbr = false;
    uint64_t seed = 0;  // normalization divisors and pixel sampling
};

struct StepTerms {
    loss::LossTerms terms;
    torch::Tensor confidence;  // [m], detached
    torch::Tensor centers;     // [m] flat pixel indices
};

/// Differentiable loss terms for one sample. Pixels are m centers drawn from
/// the mask interior; each is decoded together with its four neighbours so
/// the normal gradient of the prediction is available at the center.
/// A defined `frozen_confidence` replaces exp(G_hat).
StepTerms compute_terms(LinoModel& model, const TrainSample& sample, const StepOptions& options,
                        const torch::Tensor& frozen_confidence = {});

struct StepLog {
    int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    int64_t frames = 0;
    std::vector<std::string> scenes;
    loss::LossBreakdown breakdown;

    nlohmann::json to_json() const;
};

struct TrainOptions {
    std::filesystem::path out_dir;
    /// Resume from out_dir/checkpoint.bin when present.
    bool resume = true;
    /// Stop after this many epochs in this invocation (-1: run to the end).
    int max_epochs_this_run = -1;
    std::function<void(const StepLog&)> on_step;
};

struct TrainSummary {
    int epochs_completed = 0;
    int64_t steps = 0;
    std::filesystem::path checkpoint;
};

inline constexpr const char* kCheckpointName = "checkpoint.bin";
inline constexpr const char* kLossLogName = "loss_log.jsonl";

/// Curriculum training loop. Writes out_dir/checkpoint.bin after every epoch
/// and appends one JSON line per optimizer step to out_dir/loss_log.jsonl.
/// Throws std::runtime_error naming the epoch when the curriculum needs a
/// level the dataset lacks.
TrainSummary run_training(const RunConfig& config, const TrainOptions& options);

}  // namespace lino::train
