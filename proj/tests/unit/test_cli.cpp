#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lino/dataset.hpp"
#include "lino/image_io.hpp"
#include "lino/model.hpp"
#include "lino/pipeline.hpp"
#include "lino/train.hpp"

namespace fs = std::filesystem;

#ifndef LINO_CLI_PATH
#error "LINO_CLI_PATH must point at the CLI binary"
#endif

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("lino_cli_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + std::string(LINO_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

lino::ModelConfig tiny_model() {
    lino::ModelConfig c;
    c.embed_dim = 16;
    c.num_heads = 2;
    c.fusion_channels = 8;
    c.decoder_heads = 2;
    c.mlp_ratio = 2;
    c.m_samples = 32;
    c.decoder_layers = 1;
    c.num_blocks = 1;
    return c;
}

fs::path write_config(const fs::path& dir, const fs::path& data, int epochs) {
    lino::train::RunConfig cfg;
    cfg.model = tiny_model();
    cfg.data.path = data.string();
    cfg.train.main_epochs = epochs;
    cfg.train.finetune_epochs = 0;
    cfg.train.max_level = 1;
    cfg.train.steps_per_epoch = 3;
    cfg.train.seed = 5;
    const auto path = dir / "config.json";
    std::ofstream(path) << nlohmann::json(cfg).dump(2);
    return path;
}

std::vector<nlohmann::json> read_log(const fs::path& p) {
    std::ifstream is(p);
    std::vector<nlohmann::json> out;
    for (std::string line; std::getline(is, line);) out.push_back(nlohmann::json::parse(line));
    return out;
}

struct TinyData {
    fs::path root;
    TinyData() : root(scratch("data")) {
        lino::data::GenerateOptions opt;
        opt.num_scenes = 3;
        opt.frames = 4;
        opt.levels = {1};
        opt.size = 16;
        opt.seed = 2;
        lino::data::generate_dataset(opt, root);
    }
    ~TinyData() { fs::remove_all(root); }
};

const TinyData& tiny_data() {
    static TinyData d;
    return d;
}

}  // namespace

TEST(RunConfig, RoundTripAndUnknownKeys) {
    lino::train::RunConfig c;
    c.model = tiny_model();
    c.data.path = "x";
    c.data.levels = {1, 3};
    c.train.lr = 3e-4;
    c.train.light_alignment = false;
    c.pbr = true;
    nlohmann::json j = c;
    EXPECT_TRUE(nlohmann::json::parse(j.dump()).get<lino::train::RunConfig>() == c);
    auto bad = j;
    bad["train"]["learning_rate"] = 1;
    EXPECT_THROW(bad.get<lino::train::RunConfig>(), std::invalid_argument);
    bad = j;
    bad["extra"] = true;
    EXPECT_THROW(bad.get<lino::train::RunConfig>(), std::invalid_argument);
}

TEST(Cli, UsageErrorsExitTwo) {
    const auto dir = scratch("usage");
    EXPECT_EQ(run("gen-data --scenes 2 --levels 6 --out " + (dir / "d").string()), 2);
    EXPECT_EQ(run("gen-data --scenes 2"), 2);
    EXPECT_EQ(run("no-such-command"), 2);
    std::ofstream(dir / "bad.json") << R"({"train": {"epochz": 1}})";
    EXPECT_EQ(run("train --config " + (dir / "bad.json").string() + " --out " + (dir / "r").string()), 2);
    fs::remove_all(dir);
}

TEST(Cli, GenDataHonoursSeedEnv) {
    const auto dir = scratch("seed");
    ASSERT_EQ(run("gen-data --scenes 1 --size 16 --frames 1 --out " + (dir / "d").string(), "LINO_SEED=99"), 0);
    std::ifstream is(dir / "d" / "manifest.json");
    auto j = nlohmann::json::parse(is);
    EXPECT_EQ(j.at("seed").get<uint64_t>(), 99u);
    fs::remove_all(dir);
}

TEST(Cli, TrainWritesCheckpointAndLog) {
    const auto dir = scratch("train");
    const auto cfg = write_config(dir, tiny_data().root, 1);
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "run").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / lino::train::kCheckpointName));
    auto log = read_log(dir / "run" / lino::train::kLossLogName);
    ASSERT_EQ(log.size(), 3u);
    for (const auto& name : lino::loss::kTermNames) {
        EXPECT_TRUE(log[0].contains(std::string(name)));
        EXPECT_TRUE(log[0].contains("w_" + std::string(name)));
    }
    EXPECT_TRUE(log[0].contains("total"));
    fs::remove_all(dir);
}

TEST(Cli, TrainFailsFastOnMissingLevel) {
    const auto dir = scratch("missing");
    lino::train::RunConfig cfg;
    cfg.model = tiny_model();
    cfg.data.path = tiny_data().root.string();
    cfg.train.main_epochs = 2;
    cfg.train.epochs_per_level = 1;
    cfg.train.finetune_epochs = 0;
    lino::train::TrainOptions opt;
    opt.out_dir = dir / "run";
    try {
        lino::train::run_training(cfg, opt);
        FAIL() << "expected failure";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
    }
    fs::remove_all(dir);
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
    const auto dir = scratch("resume");
    const auto cfg = write_config(dir, tiny_data().root, 2);
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "full").string()), 0);
    ASSERT_EQ(run("train --config " + cfg.string() + " --max-epochs 1 --out " + (dir / "part").string()), 0);
    auto partial = lino::load_checkpoint(dir / "part" / lino::train::kCheckpointName);
    EXPECT_EQ(partial.info.meta.at("epochs_completed").get<int>(), 1);
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "part").string()), 0);

    auto a = read_log(dir / "full" / lino::train::kLossLogName);
    auto b = read_log(dir / "part" / lino::train::kLossLogName);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i]["total"].get<double>(), b[i]["total"].get<double>(), 1e-6) << "step " << i;
    }
    auto ma = lino::load_checkpoint(dir / "full" / lino::train::kCheckpointName).model;
    auto mb = lino::load_checkpoint(dir / "part" / lino::train::kCheckpointName).model;
    auto pa = ma->named_parameters();
    auto pb = mb->named_parameters();
    for (const auto& p : pa) EXPECT_LT((p.value() - pb[p.key()]).abs().max().item<double>(), 1e-6) << p.key();
    fs::remove_all(dir);
}

TEST(Cli, TrainingIsReproducible) {
    const auto dir = scratch("repro");
    const auto cfg = write_config(dir, tiny_data().root, 1);
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
    auto ma = lino::load_checkpoint(dir / "a" / lino::train::kCheckpointName).model;
    auto mb = lino::load_checkpoint(dir / "b" / lino::train::kCheckpointName).model;
    auto pb = mb->named_parameters();
    for (const auto& p : ma->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), pb[p.key()])) << p.key();
    fs::remove_all(dir);
}

class CliWithModel : public ::testing::Test {
protected:
    void SetUp() override {
        dir = scratch("model");
        auto model = lino::make_model(tiny_model(), 17);
        lino::Checkpoint info;
        info.config = tiny_model();
        ckpt = dir / "model.bin";
        lino::save_checkpoint(ckpt, model, info);
        scene = tiny_data().root / "scene_00000";
    }
    void TearDown() override { fs::remove_all(dir); }

    torch::Tensor infer_dir(const fs::path& images, const std::string& tag) {
        const auto out = dir / tag;
        EXPECT_EQ(run("infer --checkpoint " + ckpt.string() + " --images " + images.string() + " --out " + out.string()), 0);
        return lino::io::read_exr(out / "normal.exr");
    }

    fs::path dir, ckpt, scene;
};

TEST_F(CliWithModel, InferWritesMapsAndPngRoundTrips) {
    auto n = infer_dir(scene, "plain");
    auto png = lino::io::read_png(dir / "plain" / "normal.png");
    auto decoded = lino::io::rgb8_to_normals(png);
    auto mask = lino::io::read_mask_png(scene / "mask.png");
    EXPECT_LE((decoded - n).abs().index({mask}).max().item<double>(), 1.0 / 255.0 + 1e-6);
}

TEST_F(CliWithModel, InferInvariantToFileOrderAndScale) {
    auto base = infer_dir(scene, "base");
    const auto shuffled = dir / "shuffled";
    const auto scaled = dir / "scaled";
    fs::create_directories(shuffled);
    fs::create_directories(scaled);
    fs::copy_file(scene / "mask.png", shuffled / "mask.png");
    fs::copy_file(scene / "mask.png", scaled / "mask.png");
    const char* names[] = {"c.exr", "a.exr", "d.exr", "b.exr"};
    for (int f = 0; f < 4; ++f) {
        char src[32];
        std::snprintf(src, sizeof(src), "img_%02d.exr", f);
        fs::copy_file(scene / src, shuffled / names[f]);
        lino::io::write_exr(scaled / src, lino::io::read_exr(scene / src) * 3.0);
    }
    auto mask = lino::io::read_mask_png(scene / "mask.png");
    EXPECT_LT(lino::max_angular_deviation(base, infer_dir(shuffled, "o1"), mask), 0.01);
    EXPECT_LT(lino::max_angular_deviation(base, infer_dir(scaled, "o2"), mask), 0.01);
}

TEST_F(CliWithModel, InferRejectsMixedShapes) {
    const auto mixed = dir / "mixed";
    fs::create_directories(mixed);
    lino::io::write_exr(mixed / "a.exr", torch::rand({16, 16, 3}));
    lino::io::write_exr(mixed / "b.exr", torch::rand({32, 32, 3}));
    EXPECT_EQ(run("infer --checkpoint " + ckpt.string() + " --images " + mixed.string() + " --out " +
                  (dir / "o").string()),
              1);
}

TEST_F(CliWithModel, EvalOracleReport) {
    const auto out = dir / "eval";
    ASSERT_EQ(run("eval --oracle --pca --data " + tiny_data().root.string() + " --out " + out.string()), 0);
    std::ifstream js(out / "report.json");
    auto j = nlohmann::json::parse(js);
    EXPECT_EQ(j["summary"]["mae_deg"].get<double>(), 0.0);
    EXPECT_NEAR(j["summary"]["csim"].get<double>(), 1.0, 1e-12);
    EXPECT_NEAR(j["summary"]["ssim"].get<double>(), 1.0, 1e-12);

    std::ifstream ts(out / "report.tsv");
    std::vector<std::string> rows;
    for (std::string line; std::getline(ts, line);) rows.push_back(line);
    ASSERT_EQ(rows.size(), 1u + 3u + 1u);  // header, scenes, summary
    for (size_t r = 1; r < rows.size(); ++r) {
        std::istringstream is(rows[r]);
        std::string scene;
        int level;
        double mae, csim, ssim;
        is >> scene >> level >> mae >> csim >> ssim;
        const auto& ref = r + 1 == rows.size() ? j["summary"] : j["scenes"][r - 1];
        EXPECT_NEAR(mae, ref["mae_deg"].get<double>(), 1e-9);
        EXPECT_NEAR(csim, ref["csim"].get<double>(), 1e-9);
        EXPECT_NEAR(ssim, ref["ssim"].get<double>(), 1e-9);
    }
    EXPECT_TRUE(fs::exists(out / "pca" / "scene_00000" / "pca_00.png"));
}

TEST_F(CliWithModel, EvalCheckpoint) {
    const auto out = dir / "eval_model";
    ASSERT_EQ(run("eval --checkpoint " + ckpt.string() + " --data " + tiny_data().root.string() + " --out " +
                  out.string()),
              0);
    std::ifstream js(out / "report.json");
    auto j = nlohmann::json::parse(js);
    EXPECT_EQ(j["scenes"].size(), 3u);
    EXPECT_EQ(run("eval --data " + tiny_data().root.string() + " --out " + out.string()), 2);
}

TEST_F(CliWithModel, ExportAttentionMaps) {
    const auto out = dir / "attn";
    ASSERT_EQ(run("export-attention --checkpoint " + ckpt.string() + " --scene " + scene.string() + " --out " +
                  out.string()),
              0);
    int count = 0;
    for (const auto& e : fs::directory_iterator(out)) {
        auto img = lino::io::read_png(e.path());
        EXPECT_EQ(img.dim(), 2);
        ++count;
    }
    EXPECT_EQ(count, 4 * 3);
    EXPECT_TRUE(fs::exists(out / "attn_f00_env.png"));
    EXPECT_TRUE(fs::exists(out / "attn_f03_direction.png"));
}

TEST_F(CliWithModel, UniformAttentionGivesConstantMaps) {
    lino::ModelConfig c = tiny_model();
    c.embed_dim = 16;
    auto model = lino::make_model(c, 3);
    {
        torch::NoGradGuard g;
        auto last = model->encoder->blocks->ptr<lino::enc::InterleavedBlockImpl>(0);
        last->global->attn->q->weight.zero_();
        last->global->attn->q->bias.zero_();
        last->global->attn->k->weight.zero_();
        last->global->attn->k->bias.zero_();
    }
    lino::Checkpoint info;
    info.config = c;
    const auto path = dir / "uniform.bin";
    lino::save_checkpoint(path, model, info);
    // 32x32 input gives a 2x2 token grid, so a constant map is a real check.
    const auto big = dir / "big";
    fs::create_directories(big);
    for (int f = 0; f < 2; ++f) lino::io::write_exr(big / ("i" + std::to_string(f) + ".exr"), torch::rand({32, 32, 3}) + 0.1);
    const auto out = dir / "attn_uniform";
    ASSERT_EQ(run("export-attention --checkpoint " + path.string() + " --scene " + big.string() + " --out " + out.string()), 0);
    for (const auto& e : fs::directory_iterator(out)) {
        auto img = lino::io::read_png(e.path()).to(torch::kInt32);
        EXPECT_LE((img.max() - img.min()).item<int>(), 1) << e.path();
    }
}
