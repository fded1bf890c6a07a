#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "cli_commands.hpp"

namespace {

std::vector<int> parse_levels(const std::string& text) {
    std::vector<int> levels;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t pos = 0;
            levels.push_back(std::stoi(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw lino::cli::UsageError("--levels expects comma-separated integers, got '" + text + "'");
        }
    }
    return levels;
}

}  // namespace

int main(int argc, char** argv) {
    namespace fs = std::filesystem;
    using namespace lino::cli;

    CLI::App app{"Universal photometric stereo: data generation, training, inference and evaluation"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "intra-op threads (1 keeps training reproducible)")->check(CLI::PositiveNumber);

    lino::data::GenerateOptions gen;
    std::string gen_levels = "1";
    fs::path gen_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "render a synthetic multi-light dataset");
    gen_cmd->add_option("--scenes", gen.num_scenes, "number of scenes");
    gen_cmd->add_option("--levels", gen_levels, "comma-separated complexity levels (1..5), cycled over scenes");
    gen_cmd->add_option("--frames", gen.frames, "images per scene");
    gen_cmd->add_option("--seed", gen.seed, "base seed (LINO_SEED overrides)");
    gen_cmd->add_option("--size", gen.size, "image side length");
    gen_cmd->add_option("--out", gen_out, "output directory")->required();

    TrainArgs targs;
    auto* train_cmd = app.add_subcommand("train", "curriculum training");
    train_cmd->add_option("--config", targs.config, "run config JSON")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", targs.out, "run directory (checkpoint, loss log)")->required();
    train_cmd->add_option("--data", targs.data, "dataset root (overrides config)");
    train_cmd->add_option("--seed", targs.seed, "seed (overrides config and LINO_SEED)");
    train_cmd->add_option("--epochs", targs.main_epochs, "main curriculum epochs");
    train_cmd->add_option("--finetune-epochs", targs.finetune_epochs, "finetune epochs");
    train_cmd->add_option("--steps-per-epoch", targs.steps_per_epoch, "optimizer steps per epoch (0: one pass)");
    train_cmd->add_option("--max-epochs", targs.max_epochs, "stop after this many epochs in this invocation");
    train_cmd->add_option("--lr", targs.lr, "initial learning rate");
    train_cmd->add_flag("--no-alignment", targs.no_alignment, "disable the light-alignment losses");
    train_cmd->add_flag("--pbr", targs.pbr, "add albedo/metallic/roughness supervision");
    train_cmd->add_flag("--fresh", targs.fresh, "ignore an existing checkpoint in --out");

    fs::path ckpt, images, out;
    std::optional<fs::path> mask;
    auto* infer_cmd = app.add_subcommand("infer", "predict a normal map from a directory of images");
    infer_cmd->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--images", images, "directory of .exr/.png images")->required()->check(CLI::ExistingDirectory);
    infer_cmd->add_option("--mask", mask, "mask PNG (default: images/mask.png, else all pixels)");
    infer_cmd->add_option("--out", out, "output directory")->required();

    std::optional<fs::path> eval_ckpt;
    bool oracle = false, pca = false;
    fs::path eval_data, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "MAE, CSIM and SSIM over a dataset");
    eval_cmd->add_option("--checkpoint", eval_ckpt)->check(CLI::ExistingFile);
    eval_cmd->add_flag("--oracle", oracle, "score ground truth against itself");
    eval_cmd->add_option("--data", eval_data, "dataset root")->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", eval_out, "report directory")->required();
    eval_cmd->add_flag("--pca", pca, "export per-frame feature PCA images");

    fs::path att_ckpt, att_scene, att_out;
    auto* att_cmd = app.add_subcommand("export-attention", "register-token attention maps per frame");
    att_cmd->add_option("--checkpoint", att_ckpt)->required()->check(CLI::ExistingFile);
    att_cmd->add_option("--scene", att_scene, "scene directory")->required()->check(CLI::ExistingDirectory);
    att_cmd->add_option("--out", att_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        torch::set_num_threads(threads);
        if (*gen_cmd) {
            gen.levels = parse_levels(gen_levels);
            return cmd_gen_data(gen, gen_out);
        }
        if (*train_cmd) return cmd_train(targs);
        if (*infer_cmd) return cmd_infer(ckpt, images, mask, out);
        if (*eval_cmd) return cmd_eval(eval_ckpt, oracle, eval_data, eval_out, pca);
        if (*att_cmd) return cmd_export_attention(att_ckpt, att_scene, att_out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
