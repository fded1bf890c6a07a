#include <cmath>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "lino/metrics.hpp"
#include "ssim_oracle.hpp"

namespace metrics = lino::metrics;

using lino::testing::brute_ssim;

TEST(Mae, ExactCases) {
    auto mask = torch::ones({3, 3}, torch::kBool);
    auto x = torch::tensor({1.0, 0.0, 0.0}).expand({3, 3, 3});
    auto y = torch::tensor({0.0, 1.0, 0.0}).expand({3, 3, 3});
    EXPECT_EQ(metrics::mae(x, x, mask), 0.0);
    EXPECT_NEAR(metrics::mae(x, y, mask), 90.0, 1e-12);
    EXPECT_NEAR(metrics::mae(x, -x, mask), 180.0, 1e-12);
    EXPECT_THROW(metrics::mae(x, y, torch::zeros({3, 3}, torch::kBool)), std::invalid_argument);
}

TEST(Mae, SymmetricAndPermutationInvariant) {
    torch::manual_seed(1);
    auto a = torch::randn({6, 6, 3});
    a = a / a.norm(2, -1, true);
    auto b = torch::randn({6, 6, 3});
    b = b / b.norm(2, -1, true);
    auto mask = torch::rand({6, 6}) > 0.3;
    EXPECT_NEAR(metrics::mae(a, b, mask), metrics::mae(b, a, mask), 1e-12);
    auto perm = torch::randperm(36);
    auto pa = a.reshape({36, 3}).index_select(0, perm).view({6, 6, 3});
    auto pb = b.reshape({36, 3}).index_select(0, perm).view({6, 6, 3});
    auto pm = mask.reshape({36}).index_select(0, perm).view({6, 6});
    EXPECT_NEAR(metrics::mae(pa, pb, pm), metrics::mae(a, b, mask), 1e-9);
}

TEST(Csim, IdenticalOrthogonalAndPairCount) {
    torch::manual_seed(2);
    auto f = torch::randn({1, 5, 5, 4}).expand({6, 5, 5, 4}).contiguous();
    auto r = metrics::pairwise_csim(f);
    EXPECT_NEAR(r.value, 1.0, 1e-12);
    EXPECT_EQ(r.pairs, 15);
    auto a = torch::zeros({5, 5, 4});
    auto b = torch::zeros({5, 5, 4});
    a.select(-1, 0).fill_(1.0);
    b.select(-1, 1).fill_(2.0);
    EXPECT_NEAR(metrics::pairwise_csim(torch::stack({a, b})).value, 0.0, 1e-12);
}

TEST(Csim, RotationAndScaleInvariant) {
    torch::manual_seed(3);
    auto f = torch::randn({3, 4, 4, 5}, torch::kFloat64);
    auto q = std::get<0>(torch::linalg_qr(torch::randn({5, 5}, torch::kFloat64)));
    auto scale = torch::rand({1, 4, 4, 1}, torch::kFloat64) + 0.1;
    const double base = metrics::pairwise_csim(f).value;
    EXPECT_NEAR(metrics::pairwise_csim(f.matmul(q)).value, base, 1e-12);
    EXPECT_NEAR(metrics::pairwise_csim(f * scale).value, base, 1e-12);
}

TEST(Csim, ZeroVectorsExcluded) {
    auto f = torch::ones({2, 2, 2, 3});
    f[1][0][0].zero_();
    auto r = metrics::pairwise_csim(f);
    EXPECT_EQ(r.excluded, 1);
    EXPECT_NEAR(r.value, 1.0, 1e-12);
}

TEST(Ssim, MatchesBruteForceOracle) {
    torch::manual_seed(4);
    auto a = torch::rand({16, 16}, torch::kFloat64);
    auto b = (a * 0.6 + 0.4 * torch::rand({16, 16}, torch::kFloat64));
    EXPECT_NEAR(metrics::ssim(a, b), brute_ssim(a, b), 1e-6);
    auto constant = torch::full({16, 16}, 0.5, torch::kFloat64);
    EXPECT_NEAR(metrics::ssim(a, constant), brute_ssim(a, constant), 1e-6);
}

TEST(Ssim, IdentityAndSymmetry) {
    torch::manual_seed(5);
    auto a = torch::rand({14, 13}, torch::kFloat64), b = torch::rand({14, 13}, torch::kFloat64);
    EXPECT_EQ(metrics::ssim(a, a), 1.0);
    EXPECT_NEAR(metrics::ssim(a, b), metrics::ssim(b, a), 1e-15);
    EXPECT_THROW(metrics::ssim(torch::zeros({8, 8}), torch::zeros({8, 8})), std::invalid_argument);
}

TEST(Ssim, PcaIdenticalFeaturesAndPairs) {
    torch::manual_seed(6);
    auto f = torch::randn({1, 16, 16, 8}).expand({6, 16, 16, 8}).contiguous();
    auto r = metrics::pairwise_ssim_pca(f);
    EXPECT_NEAR(r.value, 1.0, 1e-12);
    EXPECT_EQ(r.pairs, 15);
}

TEST(Pca, RangeSignAndPadding) {
    torch::manual_seed(7);
    auto f = torch::randn({2, 12, 12, 6});
    auto p = metrics::pca_project(f);
    EXPECT_EQ(p.sizes(), (std::vector<int64_t>{2, 12, 12, 3}));
    EXPECT_GE(p.min().item<double>(), 0.0);
    EXPECT_LE(p.max().item<double>(), 1.0);
    EXPECT_NEAR(p.select(-1, 0).max().item<double>(), 1.0, 1e-12);
    // Uniform scaling and offsets of the features leave the projection unchanged.
    EXPECT_LT((metrics::pca_project(f * 3.0 + 1.0) - p).abs().max().item<double>(), 1e-5);
    // Two-channel features leave the third component empty.
    auto thin = metrics::pca_project(torch::randn({2, 12, 12, 2}));
    EXPECT_EQ(thin.select(-1, 2).abs().max().item<double>(), 0.0);
}
