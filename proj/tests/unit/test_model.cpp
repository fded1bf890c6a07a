#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "lino/decoder.hpp"
#include "lino/encoder.hpp"
#include "lino/model.hpp"
#include "lino/pipeline.hpp"

namespace enc = lino::enc;
namespace dec = lino::dec;
using lino::ModelConfig;
using torch::indexing::Slice;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.embed_dim = 16;
    c.num_heads = 2;
    c.fusion_channels = 8;
    c.decoder_heads = 2;
    c.mlp_ratio = 2;
    c.m_samples = 32;
    c.decoder_layers = 1;
    return c;
}

torch::Tensor random_stack(int64_t f, int64_t h, uint64_t seed) {
    torch::manual_seed(seed);
    return torch::rand({f, h, h, 3}) + 0.05;
}

torch::Tensor permute_frames(const torch::Tensor& x, const std::vector<int64_t>& order) {
    return x.index_select(0, torch::tensor(order, torch::kInt64));
}

}  // namespace

TEST(Preprocess, InferDividesByMax) {
    auto x = torch::rand({2, 4, 4, 3});
    x[0][1][2][0] = 4.0;
    auto y = enc::preprocess(x, enc::Mode::Infer);
    EXPECT_FLOAT_EQ(y[0].max().item<float>(), 1.0f);
    EXPECT_TRUE(torch::allclose(y[0], x[0] / 4.0));
}

TEST(Preprocess, InferScaleInvariant) {
    auto x = torch::rand({3, 8, 8, 3});
    auto a = enc::preprocess(x, enc::Mode::Infer);
    auto b = enc::preprocess(x * 7.5, enc::Mode::Infer);
    EXPECT_LT((a - b).abs().max().item<double>(), 1e-6);
}

TEST(Preprocess, TrainConstantImageGivesOnes) {
    auto x = torch::full({2, 4, 4, 3}, 0.37);
    auto y = enc::preprocess(x, enc::Mode::Train, 9);
    EXPECT_LT((y - 1.0).abs().max().item<double>(), 1e-6);
}

TEST(Preprocess, TrainDivisorWithinMeanAndMax) {
    auto x = torch::rand({4, 8, 8, 3});
    auto y = enc::preprocess(x, enc::Mode::Train, 3);
    for (int f = 0; f < 4; ++f) {
        const double d = (x[f].max() / y[f].max()).item<double>();
        EXPECT_GE(d, x[f].mean().item<double>() - 1e-6);
        EXPECT_LE(d, x[f].max().item<double>() + 1e-6);
    }
}

TEST(Preprocess, RejectsZeroImage) {
    auto x = torch::rand({2, 4, 4, 3});
    x[1].zero_();
    EXPECT_THROW(enc::preprocess(x, enc::Mode::Infer), std::invalid_argument);
}

TEST(BranchInputs, ConstantAndCheckerboard) {
    auto c = enc::branch_inputs(torch::full({1, 4, 4, 3}, 0.5));
    EXPECT_LT((c.downsampled - 0.5).abs().max().item<double>(), 1e-7);
    EXPECT_LT((c.wavelet.ll - 1.0).abs().max().item<double>(), 1e-6);
    EXPECT_EQ(c.wavelet.hh.abs().max().item<double>(), 0.0);

    auto i = torch::arange(4).view({4, 1}), j = torch::arange(4).view({1, 4});
    auto board = ((i + j) % 2 == 0).to(torch::kFloat32) * 2 - 1;
    auto b = enc::branch_inputs(board.unsqueeze(-1).expand({4, 4, 3}).unsqueeze(0));
    EXPECT_EQ(b.downsampled.abs().max().item<double>(), 0.0);
    EXPECT_LT((b.wavelet.hh - 2.0).abs().max().item<double>(), 1e-6);
    EXPECT_EQ(b.wavelet.lh.abs().max().item<double>(), 0.0);
    EXPECT_THROW(enc::branch_inputs(torch::zeros({1, 5, 4, 3})), std::invalid_argument);
}

TEST(PatchEmbed, ShapesAndZeroInput) {
    ModelConfig c;
    enc::PatchEmbed embed(c);
    auto tokens = embed(torch::zeros({2, 3, 32, 32}));
    ASSERT_EQ(tokens.sizes(), (std::vector<int64_t>{2, 16, c.embed_dim}));
    auto expected = embed->positional(4, 4) + embed->proj->bias;
    EXPECT_LT((tokens[0] - expected).abs().max().item<double>(), 1e-6);
    EXPECT_THROW(embed(torch::zeros({1, 3, 12, 16})), std::invalid_argument);
}

TEST(Stages, Selection) {
    EXPECT_EQ(enc::select_stages(4), (std::vector<int64_t>{0, 1, 2, 3}));
    EXPECT_EQ(enc::select_stages(6), (std::vector<int64_t>{0, 1, 3, 5}));
    EXPECT_EQ(enc::select_stages(8), (std::vector<int64_t>{0, 2, 4, 6}));
    EXPECT_EQ(enc::select_stages(1), (std::vector<int64_t>{0, 0, 0, 0}));
}

TEST(InterleavedBlock, ShapesAndFrameEquivariance) {
    auto c = small_config();
    torch::manual_seed(0);
    enc::InterleavedBlock block(c);
    auto tokens = torch::randn({5, 4, 7, c.embed_dim});
    auto out = block(tokens);
    EXPECT_EQ(out.tokens.sizes(), tokens.sizes());
    for (const auto& t : out.taps) EXPECT_EQ(t.sizes(), (std::vector<int64_t>{5, 4, 4, c.embed_dim}));
    EXPECT_EQ(out.concat().size(-1), 4 * c.embed_dim);

    auto idx = torch::tensor({2, 0, 3, 1}, torch::kInt64);
    auto permuted = block(tokens.index_select(1, idx));
    EXPECT_LT((permuted.tokens - out.tokens.index_select(1, idx)).abs().max().item<double>(), 1e-5);
}

TEST(InterleavedBlock, SingleFrameFinite) {
    auto c = small_config();
    enc::InterleavedBlock block(c);
    auto out = block(torch::randn({5, 1, 7, c.embed_dim}));
    EXPECT_TRUE(torch::isfinite(out.tokens).all().item<bool>());
}

TEST(FusionPyramid, ShapeAndZeroInput) {
    ModelConfig c;
    enc::FusionPyramid pyr(c);
    std::array<torch::Tensor, 4> stages;
    for (auto& s : stages) s = torch::zeros({2, 4 * c.embed_dim, 4, 4});
    auto out = pyr(stages);
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, c.fusion_channels, 32, 32}));
    EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
}

TEST(Encoder, ShapeContract) {
    ModelConfig c;
    torch::manual_seed(1);
    enc::Encoder e(c);
    auto out = e(enc::preprocess(random_stack(4, 64, 2), enc::Mode::Infer));
    EXPECT_EQ(out.features.sizes(), (std::vector<int64_t>{4, 64, 64, c.fusion_channels}));
    EXPECT_EQ(out.registers.stacked().sizes(), (std::vector<int64_t>{3, c.embed_dim}));
    EXPECT_EQ(e->last_tokens, 16);
}

TEST(Encoder, LightOrderEquivariance) {
    auto c = small_config();
    torch::manual_seed(3);
    enc::Encoder e(c);
    torch::NoGradGuard g;
    auto x = enc::preprocess(random_stack(4, 32, 4), enc::Mode::Infer);
    auto a = e(x);
    std::vector<int64_t> order{3, 1, 0, 2};
    auto b = e(permute_frames(x, order));
    EXPECT_LT((b.features - permute_frames(a.features, order)).abs().max().item<double>(), 1e-5);
    EXPECT_LT((b.registers.stacked() - a.registers.stacked()).abs().max().item<double>(), 1e-5);
}

TEST(Encoder, FiniteOverRandomTrials) {
    auto c = small_config();
    torch::manual_seed(5);
    enc::Encoder e(c);
    torch::NoGradGuard g;
    for (int t = 0; t < 100; ++t) {
        auto out = e(torch::rand({2, 32, 32, 3}));
        ASSERT_TRUE(torch::isfinite(out.features).all().item<bool>()) << t;
        ASSERT_TRUE(torch::isfinite(out.registers.stacked()).all().item<bool>()) << t;
    }
}

TEST(Sampling, Rules) {
    auto mask = torch::zeros({8, 8}, torch::kBool);
    mask.index_put_({Slice(0, 2), Slice(0, 5)}, true);
    auto all = dec::sample_pixels(mask, 2048, 1);
    EXPECT_EQ(all.size(0), 10);
    EXPECT_EQ(dec::sample_pixels(mask, 10, 1).size(0), 10);
    auto a = dec::sample_pixels(torch::ones({16, 16}, torch::kBool), 30, 7);
    auto b = dec::sample_pixels(torch::ones({16, 16}, torch::kBool), 30, 7);
    EXPECT_TRUE(torch::equal(a, b));
    EXPECT_EQ(std::get<0>(torch::_unique(a)).size(0), 30);
    EXPECT_THROW(dec::sample_pixels(torch::zeros({4, 4}, torch::kBool), 3, 0), std::invalid_argument);
}

TEST(Sampling, InteriorAndStencil) {
    auto mask = torch::ones({5, 5}, torch::kBool);
    auto inner = dec::interior_mask(mask);
    EXPECT_EQ(inner.sum().item<int64_t>(), 9);
    auto st = dec::stencil_indices(torch::tensor({12}, torch::kInt64), 5, 5);
    EXPECT_TRUE(torch::equal(st[0], torch::tensor({12, 11, 13, 7, 17}, torch::kInt64)));
}

TEST(Decoder, AggregateFramePermutationInvariant) {
    auto c = small_config();
    torch::manual_seed(6);
    dec::Decoder d(c);
    auto feats = torch::randn({5, 8, 8, c.fusion_channels});
    auto imgs = torch::rand({5, 8, 8, 3});
    auto idx = torch::arange(0, 64, 3, torch::kInt64);
    auto a = d->aggregate(feats, imgs, idx);
    std::vector<int64_t> order{4, 2, 0, 1, 3};
    auto b = d->aggregate(permute_frames(feats, order), permute_frames(imgs, order), idx);
    EXPECT_EQ(a.sizes(), (std::vector<int64_t>{idx.size(0), c.fusion_channels}));
    EXPECT_LT((a - b).abs().max().item<double>(), 1e-6);
    auto single = d->aggregate(feats.index({Slice(0, 1)}), imgs.index({Slice(0, 1)}), idx);
    EXPECT_TRUE(torch::isfinite(single).all().item<bool>());
}

TEST(Decoder, PredictionsUnitAndBounded) {
    auto c = small_config();
    torch::manual_seed(7);
    dec::Decoder d(c);
    for (bool ctx : {false, true}) {
        auto p = d->predict(torch::randn({40, c.fusion_channels}), ctx);
        EXPECT_LT((p.normals.norm(2, -1) - 1).abs().max().item<double>(), 1e-5);
        EXPECT_GE(p.albedo.min().item<double>(), 0.0);
        EXPECT_LE(p.albedo.max().item<double>(), 1.0);
        EXPECT_EQ(p.metallic.sizes(), (std::vector<int64_t>{40}));
        auto one = d->predict(torch::randn({1, c.fusion_channels}), ctx);
        EXPECT_TRUE(torch::isfinite(one.normals).all().item<bool>());
    }
}

TEST(Decoder, DuplicateRowsGiveIdenticalPredictions) {
    auto c = small_config();
    torch::manual_seed(8);
    dec::Decoder d(c);
    auto x = torch::randn({6, c.fusion_channels});
    x[4] = x[1];
    auto p = d->predict(x, true);
    EXPECT_LT((p.normals[4] - p.normals[1]).abs().max().item<double>(), 1e-6);
}

TEST(Reconstruct, SparseSentinelAndValidation) {
    auto mask = torch::zeros({4, 4}, torch::kBool);
    mask.index_put_({Slice(1, 3), Slice(1, 3)}, true);
    auto idx = torch::tensor({5, 10}, torch::kInt64);
    auto n = torch::tensor({0.0f, 0.0f, 1.0f, 1.0f, 0.0f, 0.0f}).view({2, 3});
    auto map = dec::reconstruct_sparse(n, idx, mask);
    EXPECT_EQ(map.normals.view({16, 3})[6].abs().sum().item<float>(), 0.0f);
    EXPECT_EQ(map.normals.view({16, 3})[10][0].item<float>(), 1.0f);
    EXPECT_THROW(dec::reconstruct_sparse(n, torch::tensor({5, 0}, torch::kInt64), mask), std::invalid_argument);
}

TEST(Reconstruct, FullCoversMaskAndIgnoresPartition) {
    auto c = small_config();
    torch::manual_seed(9);
    dec::Decoder d(c);
    torch::NoGradGuard g;
    auto feats = torch::randn({3, 8, 8, c.fusion_channels});
    auto imgs = torch::rand({3, 8, 8, 3});
    auto mask = torch::rand({8, 8}) > 0.3;
    auto a = dec::reconstruct_full(d, feats, imgs, mask, false, 7, 1);
    auto b = dec::reconstruct_full(d, feats, imgs, mask, false, 13, 2);
    auto sorted = std::get<0>(a.order.sort());
    EXPECT_TRUE(torch::equal(sorted, mask.reshape({-1}).nonzero().squeeze(1)));
    EXPECT_LT((a.map.normals - b.map.normals).abs().max().item<double>(), 1e-6);
    auto norms = a.map.normals.norm(2, -1).index({mask});
    EXPECT_LT((norms - 1).abs().max().item<double>(), 1e-5);
}

TEST(Pipeline, PermutationAndScaleInvariance) {
    auto c = small_config();
    auto model = lino::make_model(c, 11);
    auto x = random_stack(4, 32, 12);
    auto mask = torch::ones({32, 32}, torch::kBool);
    auto base = lino::infer(model, x, mask).normals.normals;
    auto perm = lino::infer(model, permute_frames(x, {2, 3, 0, 1}), mask).normals.normals;
    auto scaled = lino::infer(model, x * 100.0, mask).normals.normals;
    EXPECT_LT(lino::max_angular_deviation(base, perm, mask), 0.01);
    EXPECT_LT(lino::max_angular_deviation(base, scaled, mask), 0.01);
}

TEST(Checkpoint, RoundTrip) {
    auto c = small_config();
    auto model = lino::make_model(c, 21);
    const auto path = std::filesystem::temp_directory_path() / "lino_ckpt_roundtrip.bin";
    lino::Checkpoint info;
    info.config = c;
    info.meta = {{"epochs_completed", 3}};
    info.optimizer_state = "opaque-bytes";
    lino::save_checkpoint(path, model, info);
    auto loaded = lino::load_checkpoint(path);
    EXPECT_TRUE(loaded.info.config == c);
    EXPECT_EQ(loaded.info.meta.at("epochs_completed").get<int>(), 3);
    EXPECT_EQ(loaded.info.optimizer_state, "opaque-bytes");
    auto pa = model->named_parameters(), pb = loaded.model->named_parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (const auto& p : pa) EXPECT_TRUE(torch::equal(p.value(), pb[p.key()])) << p.key();
    std::filesystem::remove(path);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
    auto c = small_config();
    c.sample_attention = true;
    nlohmann::json j = c;
    EXPECT_TRUE(j.get<ModelConfig>() == c);
    j["bogus"] = 1;
    EXPECT_THROW(j.get<ModelConfig>(), std::invalid_argument);
    ModelConfig bad;
    bad.num_heads = 5;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    EXPECT_THROW(ModelConfig{}.validate_image(40, 40), std::invalid_argument);
}
