#include "cli_commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "lino/encoder.hpp"
#include "lino/eval.hpp"
#include "lino/image_io.hpp"
#include "lino/pipeline.hpp"

namespace lino::cli {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

std::optional<uint64_t> env_seed() {
    const char* v = std::getenv("LINO_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    try {
        size_t pos = 0;
        const auto s = std::stoull(v, &pos);
        if (pos != std::string(v).size()) throw std::invalid_argument(v);
        return s;
    } catch (const std::exception&) {
        throw UsageError(std::string("LINO_SEED is not an unsigned integer: ") + v);
    }
}

int cmd_gen_data(data::GenerateOptions options, const fs::path& out) {
    if (auto s = env_seed()) options.seed = *s;
    if (options.num_scenes < 1) throw UsageError("--scenes must be >= 1");
    if (options.frames < 1) throw UsageError("--frames must be >= 1");
    if (options.levels.empty()) throw UsageError("--levels must not be empty");
    for (int l : options.levels) {
        if (l < 1 || l > sim::kNumLevels) throw UsageError("invalid complexity level " + std::to_string(l) + " (1..5)");
    }
    if (options.size < 16 || options.size % 16 != 0) throw UsageError("--size must be a positive multiple of 16");
    const auto manifest = data::generate_dataset(options, out);
    std::array<int, sim::kNumLevels + 1> per_level{};
    for (const auto& e : manifest.scenes) ++per_level[static_cast<size_t>(e.level)];
    std::cout << "wrote " << manifest.scenes.size() << " scenes (" << options.frames << " frames, " << options.size
              << "x" << options.size << ", seed " << options.seed << ") to " << out.string() << '\n';
    for (int l = 1; l <= sim::kNumLevels; ++l) {
        if (per_level[static_cast<size_t>(l)] > 0) std::cout << "  level " << l << ": " << per_level[static_cast<size_t>(l)] << '\n';
    }
    return 0;
}

int cmd_train(const TrainArgs& a) {
    train::RunConfig cfg;
    try {
        cfg = train::load_run_config(a.config);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (auto s = env_seed()) cfg.train.seed = *s;
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.data) cfg.data.path = *a.data;
    if (a.main_epochs) cfg.train.main_epochs = *a.main_epochs;
    if (a.finetune_epochs) cfg.train.finetune_epochs = *a.finetune_epochs;
    if (a.steps_per_epoch) cfg.train.steps_per_epoch = *a.steps_per_epoch;
    if (a.lr) cfg.train.lr = *a.lr;
    if (a.no_alignment) cfg.train.light_alignment = false;
    if (a.pbr) cfg.pbr = true;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (cfg.data.path.empty()) throw UsageError("no dataset path (config data.path or --data)");

    fs::create_directories(a.out);
    std::ofstream(a.out / "run_config.json") << nlohmann::json(cfg).dump(2) << '\n';
    train::TrainOptions opts;
    opts.out_dir = a.out;
    opts.resume = !a.fresh;
    opts.max_epochs_this_run = a.max_epochs.value_or(-1);
    int last_epoch = -1;
    opts.on_step = [&](const train::StepLog& log) {
        if (log.epoch != last_epoch) {
            last_epoch = log.epoch;
            std::cout << "epoch " << log.epoch << " lr " << log.lr << '\n';
        }
        if (log.step % 50 == 0) {
            std::printf("  step %lld total %.5f conf %.5f grad %.5f light %.5f\n", static_cast<long long>(log.step),
                        log.breakdown.total_value, log.breakdown.values[loss::kConf], log.breakdown.values[loss::kGrad],
                        log.breakdown.values[loss::kEnv] + log.breakdown.values[loss::kPoint] +
                            log.breakdown.values[loss::kDirection]);
            std::fflush(stdout);
        }
    };
    const auto summary = train::run_training(cfg, opts);
    std::cout << "epochs completed " << summary.epochs_completed << ", steps " << summary.steps << ", checkpoint "
              << summary.checkpoint.string() << '\n';
    return 0;
}

torch::Tensor load_image_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        const auto stem = e.path().stem().string();
        if (stem == "mask" || stem.ends_with("_gt")) continue;
        if (ext == ".exr" || ext == ".png") files.push_back(e.path());
    }
    if (files.empty()) throw std::runtime_error("no .exr or .png images in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<torch::Tensor> imgs;
    for (const auto& f : files) {
        torch::Tensor img;
        if (f.extension() == ".exr") {
            img = io::read_exr(f).to(torch::kFloat32);
        } else {
            img = io::read_png(f).to(torch::kFloat32) / 255.0;
        }
        if (img.dim() == 2) img = img.unsqueeze(-1);
        if (img.size(-1) == 1) img = img.expand({-1, -1, 3});
        if (img.size(-1) != 3) throw std::runtime_error("unsupported channel count in " + f.string());
        if (!imgs.empty() && img.sizes() != imgs.front().sizes()) {
            throw std::runtime_error("image " + f.filename().string() + " differs in shape from " +
                                     files.front().filename().string());
        }
        imgs.push_back(img.contiguous());
    }
    return torch::stack(imgs, 0);
}

int cmd_infer(const fs::path& checkpoint, const fs::path& images, const std::optional<fs::path>& mask_path,
              const fs::path& out) {
    auto loaded = load_checkpoint(checkpoint);
    auto stack = load_image_dir(images);
    torch::Tensor mask;
    if (mask_path) {
        mask = io::read_mask_png(*mask_path);
    } else if (fs::exists(images / "mask.png")) {
        mask = io::read_mask_png(images / "mask.png");
    }
    auto result = infer(loaded.model, stack, mask);
    fs::create_directories(out);
    io::write_exr(out / "normal.exr", result.normals.normals);
    io::write_png(out / "normal.png", io::normals_to_rgb8(result.normals.normals));
    std::cout << "wrote " << (out / "normal.exr").string() << " and normal.png from " << stack.size(0) << " images\n";
    return 0;
}

int cmd_eval(const std::optional<fs::path>& checkpoint, bool oracle, const fs::path& data, const fs::path& out,
             bool pca) {
    if (oracle == checkpoint.has_value()) throw UsageError("give exactly one of --checkpoint or --oracle");
    LinoModel model{nullptr};
    eval::Predictor predictor;
    if (oracle) {
        predictor = eval::oracle_predictor();
    } else {
        model = load_checkpoint(*checkpoint).model;
        predictor = eval::model_predictor(model);
    }
    eval::EvalOptions opts;
    if (pca) opts.pca_dir = out / "pca";
    const auto report = eval::evaluate_dataset(data, predictor, opts);
    fs::create_directories(out);
    std::ofstream(out / "report.tsv") << report.to_table();
    std::ofstream(out / "report.json") << report.to_json().dump(2) << '\n';
    std::cout << report.to_table();
    return 0;
}

int cmd_export_attention(const fs::path& checkpoint, const fs::path& scene, const fs::path& out) {
    auto loaded = load_checkpoint(checkpoint);
    auto& model = loaded.model;
    auto stack = load_image_dir(scene);
    const auto h = stack.size(1), w = stack.size(2);
    model->config.validate_image(h, w);
    torch::NoGradGuard guard;
    model->eval();
    model->encoder->record_attention(true);
    model->encoder(enc::preprocess(stack, enc::Mode::Infer));
    auto attn = model->encoder->register_attention();  // [F, 3, L]
    model->encoder->record_attention(false);

    const auto p = model->config.patch_size;
    const auto gh = h / 2 / p, gw = w / 2 / p;
    auto maps = attn.reshape({attn.size(0), 3, gh, gw});
    maps = F::interpolate(maps, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{h, w})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
    fs::create_directories(out);
    static const char* names[] = {"env", "point", "direction"};
    for (int64_t f = 0; f < maps.size(0); ++f) {
        for (int64_t r = 0; r < 3; ++r) {
            auto m = maps[f][r].clamp_min(0);
            auto peak = m.max().item<double>();
            auto unit = peak > 0 ? m / peak : torch::zeros_like(m);
            char name[64];
            std::snprintf(name, sizeof(name), "attn_f%02lld_%s.png", static_cast<long long>(f), names[r]);
            io::write_png(out / name, io::unit_to_u8(unit));
        }
    }
    std::cout << "wrote " << maps.size(0) * 3 << " attention maps to " << out.string() << '\n';
    return 0;
}

}  // namespace lino::cli
