#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lino/dataset.hpp"
#include "lino/model.hpp"

namespace lino::eval {

struct SceneScore {
    std::string scene;
    int level = 0;
    double mae_deg = 0.0;
    double csim = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<SceneScore> scenes;
    SceneScore summary;  // means over scenes, scene = "mean"
    std::vector<std::string> skipped;

    nlohmann::json to_json() const;
    /// Tab-separated: header, one row per scene, then the summary row.
    std::string to_table() const;
};

/// Normals and per-frame features for one scene.
struct Prediction {
    torch::Tensor normals;   // [H, W, 3]
    torch::Tensor features;  // [F, H, W, C]
};
using Predictor = std::function<Prediction(const data::SceneRecord&)>;

/// Model inference: infer-mode encoder features and full reconstruction.
Predictor model_predictor(LinoModel& model);
/// Ground truth used as the prediction; every frame's feature is the GT normal map.
Predictor oracle_predictor();

SceneScore score_scene(const data::SceneRecord& record, const Prediction& prediction);

struct EvalOptions {
    /// Writes per-frame PCA images of the features under <dir>/<scene>/ when set.
    std::optional<std::filesystem::path> pca_dir;
    /// Scene subset (manifest dirs); empty evaluates all.
    std::vector<std::string> only;
};

/// Scenes with missing ground-truth files are skipped and listed in `skipped`.
EvalReport evaluate_dataset(const std::filesystem::path& root, const Predictor& predictor,
                            const EvalOptions& options = {});

}  // namespace lino::eval
