#include <gtest/gtest.h>

#include <algorithm>

#include "hnas/dsm.hpp"
#include "hnas/errors.hpp"
#include "test_util.hpp"

using namespace hnas;
using hnas::testing::max_abs_diff;
using hnas::testing::random_param;
using hnas::testing::random_tensor;
using hnas::testing::weighted_sum;

namespace {

// d(sum of output pixel (oy, ox) over channels) / d input, summed over channels.
std::vector<double> input_support(const DsmModule& m, std::size_t h, std::size_t w, std::size_t oy, std::size_t ox) {
  Rng rng(77);
  auto x = random_param(rng, {1, m.in_channels(), h, w});
  auto y = m.forward(x);
  const std::size_t ho = y.dim(2), wo = y.dim(3);
  std::vector<std::int64_t> index;
  for (std::size_t c = 0; c < y.dim(1); ++c) index.push_back(static_cast<std::int64_t>((c * ho + oy) * wo + ox));
  const std::size_t picked = index.size();
  auto grads = backward(weighted_sum(gather(y, std::move(index), {picked})));
  const auto g = grads.at(x).data();
  std::vector<double> support(h * w, 0.0);
  for (std::size_t c = 0; c < m.in_channels(); ++c)
    for (std::size_t i = 0; i < h * w; ++i) support[i] += std::abs(g[c * h * w + i]);
  return support;
}

}  // namespace

TEST(Dsm, KindNamesRoundTrip) {
  for (auto kind : kDsmKinds) EXPECT_EQ(parse_dsm_kind(to_string(kind)), kind);
  EXPECT_THROW(parse_dsm_kind("P-DSM"), ContractError);
}

TEST(Dsm, BuildShapesFollowChannelTransition) {
  Rng rng(1);
  auto l = DsmModule::build(DsmKind::L_DSM, 48, 80, {}, rng);
  EXPECT_EQ(l.conv().kernel.shape(), (Shape{80, 48, 3, 3}));
  EXPECT_FALSE(l.attention().has_value());
  auto lg = DsmModule::build(DsmKind::LG_DSM, 128, 128, {}, rng);
  EXPECT_EQ(lg.conv().kernel.shape(), (Shape{128, 128, 3, 3}));
  EXPECT_EQ(lg.attention()->num_heads, 4u);
  EXPECT_FALSE(lg.attention()->query.has_value());
  auto g = DsmModule::build(DsmKind::G_DSM, 8, 16, {}, rng);
  ASSERT_EQ(g.query_convs().size(), 2u);
  EXPECT_EQ(g.query_convs()[0].kernel.shape(), (Shape{16, 8, 1, 3}));
  EXPECT_EQ(g.query_convs()[1].kernel.shape(), (Shape{16, 16, 1, 3}));
  EXPECT_EQ(g.attention()->key.weight.shape(), (Shape{8, 16}));
  DsmConfig single{GlobalQueryMode::single_stride4};
  auto g4 = DsmModule::build(DsmKind::G_DSM, 8, 16, single, rng);
  ASSERT_EQ(g4.query_convs().size(), 1u);
  EXPECT_EQ(g4.query_convs()[0].geometry.stride_w, 4u);
  EXPECT_THROW(DsmModule::build(DsmKind::L_DSM, 0, 8, {}, rng), ContractError);
}

TEST(Dsm, OutputGridIsHalvedRoundingUp) {
  Rng rng(2);
  std::vector<DsmModule> modules;
  for (auto kind : kDsmKinds) modules.push_back(DsmModule::build(kind, 4, 8, {}, rng));
  modules.push_back(DsmModule::build(DsmKind::G_DSM, 4, 8, {GlobalQueryMode::single_stride4}, rng));
  NoGradGuard ng;
  for (std::size_t h = 2; h <= 16; ++h) {
    for (std::size_t w = 2; w <= 16; ++w) {
      auto x = random_tensor(rng, {1, 4, h, w});
      for (const auto& m : modules) {
        auto y = m.forward(x);
        EXPECT_EQ(y.shape(), (Shape{1, 8, (h + 1) / 2, (w + 1) / 2})) << to_string(m.kind()) << " " << h << "x" << w;
      }
    }
  }
}

TEST(Dsm, RejectsDegenerateGrids) {
  Rng rng(3);
  for (auto kind : kDsmKinds) {
    auto m = DsmModule::build(kind, 4, 8, {}, rng);
    EXPECT_THROW(m.forward(random_tensor(rng, {1, 4, 1, 5})), ContractError);
    EXPECT_THROW(m.forward(random_tensor(rng, {1, 4, 5, 1})), ContractError);
    EXPECT_THROW(m.forward(random_tensor(rng, {1, 5, 4, 4})), ShapeError);
  }
}

TEST(Dsm, LocalIsStridedConvolution) {
  Rng rng(4);
  auto m = DsmModule::build(DsmKind::L_DSM, 6, 10, {}, rng);
  auto x = random_tensor(rng, {2, 6, 8, 8});
  auto y = m.forward(x);
  auto oracle = conv2d(x, m.conv().kernel, m.conv().bias, {2, 2, 1, 1, 1});
  EXPECT_EQ(y.shape(), (Shape{2, 10, 4, 4}));
  EXPECT_EQ(max_abs_diff(y.data(), oracle.data()), 0.0);
}

TEST(Dsm, LocalGlobalQueriesAttendOverAllTokens) {
  Rng rng(5);
  auto m = DsmModule::build(DsmKind::LG_DSM, 8, 8, {}, rng);
  auto x = random_tensor(rng, {1, 8, 8, 8});
  auto queries = to_tokens(conv2d(x, m.conv()));
  auto kv = normalize(to_tokens(x), *m.kv_norm());
  auto weights = attention_weights(queries, kv, *m.attention());
  EXPECT_EQ(weights.shape(), (Shape{1, 16, 64}));
  for (std::size_t q = 0; q < 16; ++q) {
    double total = 0.0;
    for (std::size_t k = 0; k < 64; ++k) total += weights.at({0, q, k});
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Dsm, GlobalQueriesAreQuarterOfPaddedSequence) {
  Rng rng(6);
  for (auto mode : {GlobalQueryMode::two_stride2, GlobalQueryMode::single_stride4}) {
    auto m = DsmModule::build(DsmKind::G_DSM, 4, 8, {mode}, rng);
    for (auto [h, w] : {std::pair{8, 8}, std::pair{5, 7}, std::pair{2, 3}}) {
      auto q = m.global_queries(random_tensor(rng, {2, 4, std::size_t(h), std::size_t(w)}));
      EXPECT_EQ(q.shape(), (Shape{2, std::size_t((h + 1) / 2 * ((w + 1) / 2)), 8}));
    }
  }
}

TEST(Dsm, ConstantInputGivesSpatiallyConstantOutput) {
  Rng rng(7);
  auto m = DsmModule::build(DsmKind::LG_DSM, 8, 16, {}, rng);
  std::vector<double> v(8 * 64);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 64; ++i) v[c * 64 + i] = 0.1 * static_cast<double>(c) - 0.3;
  auto x = Tensor::from({1, 8, 8, 8}, v);
  auto queries = to_tokens(conv2d(x, m.conv()));
  auto weights = attention_weights(queries, normalize(to_tokens(x), *m.kv_norm()), *m.attention());
  for (double wgt : weights.data()) EXPECT_NEAR(wgt, 1.0 / 64.0, 1e-12);
  auto y = m.forward(x);
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y.data()[c * 16 + i], y.data()[c * 16], 1e-6);
}

TEST(Dsm, LocalReceptiveFieldIsAtMostThreeByThree) {
  Rng rng(8);
  auto m = DsmModule::build(DsmKind::L_DSM, 4, 8, {}, rng);
  for (std::size_t oy = 0; oy < 4; ++oy) {
    for (std::size_t ox = 0; ox < 4; ++ox) {
      auto support = input_support(m, 8, 8, oy, ox);
      std::size_t nonzero = 0;
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          if (support[y * 8 + x] == 0.0) continue;
          ++nonzero;
          EXPECT_LE(std::abs(static_cast<long>(y) - static_cast<long>(2 * oy)), 1);
          EXPECT_LE(std::abs(static_cast<long>(x) - static_cast<long>(2 * ox)), 1);
        }
      EXPECT_LE(nonzero, 9u);
    }
  }
}

TEST(Dsm, AttentionModulesHaveGlobalReceptiveField) {
  Rng rng(9);
  for (auto kind : {DsmKind::LG_DSM, DsmKind::G_DSM}) {
    auto m = DsmModule::build(kind, 4, 8, {}, rng);
    for (auto [h, w] : {std::pair{8, 8}, std::pair{5, 6}}) {
      const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          auto support = input_support(m, h, w, oy, ox);
          for (double s : support) EXPECT_GT(s, 0.0) << to_string(kind);
        }
    }
  }
}

class DsmGradients : public ::testing::TestWithParam<DsmKind> {};

TEST_P(DsmGradients, MatchCentralDifferences) {
  Rng rng(10);
  auto m = DsmModule::build(GetParam(), 4, 8, {}, rng);
  auto x = random_param(rng, {2, 4, 8, 8});
  auto params = m.parameters();
  params.push_back(x);
  EXPECT_LT(check_gradients([&] { return weighted_sum(m.forward(x)); }, params), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, DsmGradients, ::testing::ValuesIn(kDsmKinds), [](const auto& info) {
  std::string name(to_string(info.param));
  name.erase(std::remove(name.begin(), name.end(), '-'), name.end());
  return name;
});

TEST(DsmGradients, SingleStrideFourPath) {
  Rng rng(11);
  auto m = DsmModule::build(DsmKind::G_DSM, 4, 8, {GlobalQueryMode::single_stride4}, rng);
  auto x = random_param(rng, {1, 4, 5, 6});
  auto params = m.parameters();
  params.push_back(x);
  EXPECT_LT(check_gradients([&] { return weighted_sum(m.forward(x)); }, params), 1e-4);
}
