#include <gtest/gtest.h>

#include <cmath>

#include "hnas/errors.hpp"
#include "hnas/gop.hpp"
#include "test_util.hpp"

using namespace hnas;
using hnas::testing::max_abs_diff;
using hnas::testing::random_param;
using hnas::testing::random_tensor;
using hnas::testing::weighted_sum;

namespace {

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Row-wise layer norm over the last axis of a [rows x width] buffer.
std::vector<double> layer_norm_ref(const std::vector<double>& v, std::size_t width, const LayerNorm& ln) {
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < v.size() / width; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += v[r * width + j];
    mean /= static_cast<double>(width);
    for (std::size_t j = 0; j < width; ++j) var += (v[r * width + j] - mean) * (v[r * width + j] - mean);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < width; ++j) {
      out[r * width + j] = (v[r * width + j] - mean) * inv * ln.gamma.data()[j] + ln.beta.data()[j];
    }
  }
  return out;
}

// rows x din times Linear -> rows x dout, straight loops.
std::vector<double> linear_ref(const std::vector<double>& v, const Linear& l) {
  const std::size_t din = l.in_features(), dout = l.out_features(), rows = v.size() / din;
  std::vector<double> out(rows * dout);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < dout; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < din; ++p) acc += v[r * din + p] * l.weight.data()[p * dout + j];
      out[r * dout + j] = acc + l.bias.data()[j];
    }
  return out;
}

// Mixer-style block: transpose -> token FFN -> transpose -> channel FFN, both residual.
std::vector<double> mixer_reference(const Tensor& x, const GopBlock::TokenPath& p) {
  const std::size_t b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  std::vector<double> out(x.numel());
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::vector<double> t(n * c);
    for (std::size_t tok = 0; tok < n; ++tok)
      for (std::size_t ch = 0; ch < c; ++ch) {
        t[tok * c + ch] = x.data()[(bi * c + ch) * n + tok] + (p.position ? p.position->data()[tok * c + ch] : 0.0);
      }
    auto normed = layer_norm_ref(t, c, p.mix_norm);
    std::vector<double> columns(c * n);
    for (std::size_t tok = 0; tok < n; ++tok)
      for (std::size_t ch = 0; ch < c; ++ch) columns[ch * n + tok] = normed[tok * c + ch];
    auto hidden = linear_ref(columns, *p.token_up);
    for (auto& v : hidden) v = gelu_ref(v);
    auto mixed = linear_ref(hidden, *p.token_down);
    for (std::size_t tok = 0; tok < n; ++tok)
      for (std::size_t ch = 0; ch < c; ++ch) t[tok * c + ch] += mixed[ch * n + tok];
    auto up = linear_ref(layer_norm_ref(t, c, p.ffn_norm), p.ffn_up);
    for (auto& v : up) v = gelu_ref(v);
    auto ffn = linear_ref(up, p.ffn_down);
    for (std::size_t tok = 0; tok < n; ++tok)
      for (std::size_t ch = 0; ch < c; ++ch) out[(bi * c + ch) * n + tok] = t[tok * c + ch] + ffn[tok * c + ch];
  }
  return out;
}

void randomize(const Tensor& t, Rng& rng) {
  Tensor handle = t;
  for (auto& v : handle.mutable_data()) v = 0.3 * rng.normal();
}

}  // namespace

TEST(GopBlock, KindNamesRoundTrip) {
  for (auto kind : kGopKinds) EXPECT_EQ(parse_gop_kind(to_string(kind)), kind);
  EXPECT_THROW(parse_gop_kind("Pool"), ContractError);
}

TEST(GopBlock, ShapePreservedForAllKindsAndSmallGrids) {
  Rng rng(1);
  for (auto kind : kGopKinds) {
    for (std::size_t h = 1; h <= 8; ++h) {
      for (std::size_t w = 1; w <= 8; ++w) {
        auto block = GopBlock::build(kind, 8, 2, {h, w}, {}, rng, true);
        auto x = random_tensor(rng, {1, 8, h, w});
        NoGradGuard ng;
        EXPECT_EQ(block.forward(x, false).shape(), x.shape()) << to_string(kind) << " " << h << "x" << w;
      }
    }
  }
}

TEST(GopBlock, BottleneckWidthIsExpansionTimesChannels) {
  Rng rng(2);
  for (std::size_t e = 2; e <= 6; ++e) {
    auto conv = GopBlock::build(GopKind::Conv, 8, e, {4, 4}, {}, rng);
    EXPECT_EQ(conv.conv_path()->expand.out_channels(), 8 * e);
    EXPECT_EQ(conv.conv_path()->project.in_channels(), 8 * e);
    auto sa = GopBlock::build(GopKind::SA, 8, e, {4, 4}, {}, rng);
    EXPECT_EQ(sa.token_path()->ffn_up.out_features(), 8 * e);
    EXPECT_EQ(sa.bottleneck_width(), 8 * e);
  }
  auto dw = GopBlock::build(GopKind::DWConv, 8, 3, {4, 4}, {}, rng);
  EXPECT_EQ(dw.conv_path()->spatial.geometry.groups, 24u);
}

TEST(GopBlock, RejectsBadConstruction) {
  Rng rng(3);
  EXPECT_THROW(GopBlock::build(GopKind::Conv, 8, 1, {4, 4}, {}, rng), ContractError);
  EXPECT_THROW(GopBlock::build(GopKind::Conv, 8, 7, {4, 4}, {}, rng), ContractError);
  EXPECT_THROW(GopBlock::build(GopKind::SA, 0, 2, {4, 4}, {}, rng), ContractError);
  EXPECT_THROW(GopBlock::build(GopKind::SA, 8, 2, {0, 4}, {}, rng), ContractError);
  EXPECT_THROW(GopBlock::build(GopKind::MLP, 8, 2, {65, 64}, {}, rng), CapacityError);
  BlockConfig small;
  small.mlp_token_cap = 15;
  EXPECT_THROW(GopBlock::build(GopKind::MLP, 8, 2, {4, 4}, small, rng), CapacityError);
  EXPECT_NO_THROW(GopBlock::build(GopKind::SA, 8, 2, {65, 64}, {}, rng));
}

TEST(GopBlock, GridBoundKindsRejectOtherGrids) {
  Rng rng(4);
  auto x = random_tensor(rng, {1, 8, 4, 2});
  for (auto kind : {GopKind::MLP, GopKind::LSA}) {
    auto block = GopBlock::build(kind, 8, 2, {4, 4}, {}, rng);
    EXPECT_THROW(block.forward(x, false), ShapeError) << to_string(kind);
  }
  auto sa = GopBlock::build(GopKind::SA, 8, 2, {4, 4}, {}, rng);
  EXPECT_EQ(sa.forward(x, false).shape(), x.shape());
  EXPECT_THROW(sa.forward(random_tensor(rng, {1, 4, 4, 4}), false), ShapeError);
}

TEST(GopBlock, MlpTokenMixingWeightShapes) {
  Rng rng(5);
  auto block = GopBlock::build(GopKind::MLP, 8, 2, {2, 2}, {}, rng);
  const auto* p = block.token_path();
  ASSERT_NE(p, nullptr);
  EXPECT_EQ(p->token_up->weight.shape(), (Shape{4, 2}));
  EXPECT_EQ(p->token_down->weight.shape(), (Shape{2, 4}));
  EXPECT_EQ(mlp_token_hidden(7, {}), 4u);
}

TEST(GopBlock, PositionalEmbeddingOnlyForGlobalTokenMixers) {
  Rng rng(6);
  for (auto kind : kGopKinds) {
    auto block = GopBlock::build(kind, 8, 2, {3, 5}, {}, rng, true);
    const bool expected = kind == GopKind::SA || kind == GopKind::MLP;
    const auto* p = block.token_path();
    EXPECT_EQ(p != nullptr && p->position.has_value(), expected) << to_string(kind);
    if (expected) EXPECT_EQ(p->position->shape(), (Shape{15, 8}));
  }
}

TEST(GopBlock, ZeroedFinalProjectionsGiveExactIdentity) {
  Rng rng(7);
  for (auto kind : kGopKinds) {
    for (Grid grid : {Grid{1, 1}, Grid{3, 5}, Grid{8, 8}}) {
      auto block = GopBlock::build(kind, 8, 3, grid, {}, rng, true);
      block.zero_final_projections();
      auto x = random_tensor(rng, {2, 8, grid.h, grid.w});
      for (bool training : {false, true}) {
        auto y = block.forward(x, training);
        EXPECT_EQ(max_abs_diff(y.data(), x.data()), 0.0) << to_string(kind);
      }
    }
  }
}

TEST(GopBlock, SingleTokenAttentionReducesToValuePath) {
  Rng rng(8);
  auto block = GopBlock::build(GopKind::SA, 8, 2, {1, 1}, {}, rng);
  const auto* p = block.token_path();
  for (const auto& t : block.parameters()) randomize(t, rng);
  auto x = random_tensor(rng, {3, 8, 1, 1});
  std::vector<double> t(x.data().begin(), x.data().end());
  auto value = linear_ref(linear_ref(layer_norm_ref(t, 8, p->mix_norm), p->attention->value), p->attention->out);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += value[i];
  auto up = linear_ref(layer_norm_ref(t, 8, p->ffn_norm), p->ffn_up);
  for (auto& v : up) v = gelu_ref(v);
  auto ffn = linear_ref(up, p->ffn_down);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += ffn[i];
  auto y = block.forward(x, false);
  EXPECT_LT(max_abs_diff(y.data(), t), 1e-12);
}

TEST(GopBlock, MlpMatchesMixerReference) {
  Rng rng(9);
  for (Grid grid : {Grid{2, 2}, Grid{3, 5}, Grid{4, 4}}) {
    auto block = GopBlock::build(GopKind::MLP, 8, 3, grid, {}, rng, true);
    for (const auto& t : block.parameters()) randomize(t, rng);
    auto x = random_tensor(rng, {2, 8, grid.h, grid.w});
    auto y = block.forward(x, false);
    EXPECT_LT(max_abs_diff(y.data(), mixer_reference(x, *block.token_path())), 1e-10);
  }
}

TEST(GopBlock, ConvBlockUsesBatchStatisticsOnlyWhenTraining) {
  Rng rng(10);
  auto block = GopBlock::build(GopKind::Conv, 8, 2, {4, 4}, {}, rng);
  auto x = random_tensor(rng, {2, 8, 4, 4});
  auto eval_a = block.forward(x, false);
  auto eval_b = block.forward(x, false);
  EXPECT_EQ(max_abs_diff(eval_a.data(), eval_b.data()), 0.0);
  block.forward(x, true);  // moves the running statistics
  auto eval_c = block.forward(x, false);
  EXPECT_GT(max_abs_diff(eval_a.data(), eval_c.data()), 0.0);
}

class GopGradients : public ::testing::TestWithParam<GopKind> {};

TEST_P(GopGradients, MatchCentralDifferences) {
  Rng rng(11);
  auto block = GopBlock::build(GetParam(), 8, 2, {4, 4}, {}, rng, true);
  for (const auto& t : block.parameters()) randomize(t, rng);
  auto x = random_param(rng, {2, 8, 4, 4});
  auto params = block.parameters();
  params.push_back(x);
  EXPECT_LT(check_gradients([&] { return weighted_sum(block.forward(x, true)); }, params), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GopGradients, ::testing::ValuesIn(kGopKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });
