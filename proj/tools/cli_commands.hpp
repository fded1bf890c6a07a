#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lino/dataset.hpp"
#include "lino/train.hpp"

namespace lino::cli {

/// Invalid invocation; mapped to exit code 2.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// LINO_SEED when set and numeric.
std::optional<uint64_t> env_seed();

int cmd_gen_data(data::GenerateOptions options, const std::filesystem::path& out);

struct TrainArgs {
    std::filesystem::path config;
    std::filesystem::path out;
    std::optional<std::string> data;
    std::optional<uint64_t> seed;
    std::optional<int> main_epochs, finetune_epochs, steps_per_epoch, max_epochs;
    std::optional<double> lr;
    bool no_alignment = false;
    bool pbr = false;
    bool fresh = false;
};
int cmd_train(const TrainArgs& args);

/// Loads every .exr/.png file of `dir` except mask.png, sorted by name, as [F, H, W, 3].
torch::Tensor load_image_dir(const std::filesystem::path& dir);

int cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& images,
              const std::optional<std::filesystem::path>& mask, const std::filesystem::path& out);

int cmd_eval(const std::optional<std::filesystem::path>& checkpoint, bool oracle, const std::filesystem::path& data,
             const std::filesystem::path& out, bool pca);

int cmd_export_attention(const std::filesystem::path& checkpoint, const std::filesystem::path& scene,
                         const std::filesystem::path& out);

}  // namespace lino::cli
