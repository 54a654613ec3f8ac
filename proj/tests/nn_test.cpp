#include <gtest/gtest.h>

#include <cmath>

#include "hnas/errors.hpp"
#include "hnas/nn.hpp"
#include "test_util.hpp"

using namespace hnas;
using hnas::testing::max_abs_diff;
using hnas::testing::random_param;
using hnas::testing::random_tensor;
using hnas::testing::random_values;
using hnas::testing::weighted_sum;

namespace {

// Direct six-loop cross-correlation; bias added after the taps like the kernel.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dGeometry& g) {
  const std::size_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), cin_g = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t cout_g = cout / g.groups;
  const std::size_t ho = (h + 2 * g.pad_h - kh) / g.stride_h + 1;
  const std::size_t wo = (wd + 2 * g.pad_w - kw) / g.stride_w + 1;
  std::vector<double> out(n * cout * ho * wo);
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          const std::size_t group = co / cout_g;
          for (std::size_t ci = 0; ci < cin_g; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                long iy = static_cast<long>(oy * g.stride_h + ky) - static_cast<long>(g.pad_h);
                long ix = static_cast<long>(ox * g.stride_w + kx) - static_cast<long>(g.pad_w);
                double v = 0.0;
                if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(wd)) {
                  v = x.at({bi, group * cin_g + ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)});
                }
                acc += w.at({co, ci, ky, kx}) * v;
              }
          out[((bi * cout + co) * ho + oy) * wo + ox] = acc + b.data()[co];
        }
  return out;
}

// Per-head dense loops: softmax(q k^T / sqrt(hd)) v, concatenated, out-projected.
std::vector<double> naive_attention(const Tensor& qt, const Tensor& kvt, const AttentionLayer& l) {
  auto project = [](const Tensor& t, const Linear& lin) {
    const std::size_t rows = t.numel() / lin.in_features(), din = lin.in_features(), dout = lin.out_features();
    std::vector<double> out(rows * dout);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < dout; ++j) {
        double acc = lin.bias.data()[j];
        for (std::size_t p = 0; p < din; ++p) acc += t.data()[r * din + p] * lin.weight.data()[p * dout + j];
        out[r * dout + j] = acc;
      }
    return out;
  };
  const std::size_t b = qt.dim(0), nq = qt.dim(1), nk = kvt.dim(1), d = l.width(), heads = l.num_heads,
                    hd = d / heads;
  auto q = project(qt, *l.query);
  auto k = project(kvt, l.key);
  auto v = project(kvt, l.value);
  std::vector<double> mixed(b * nq * d, 0.0);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t hh = 0; hh < heads; ++hh)
      for (std::size_t i = 0; i < nq; ++i) {
        std::vector<double> s(nk);
        double peak = -1e300;
        for (std::size_t j = 0; j < nk; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < hd; ++p)
            acc += q[(bi * nq + i) * d + hh * hd + p] * k[(bi * nk + j) * d + hh * hd + p];
          s[j] = acc / std::sqrt(static_cast<double>(hd));
          peak = std::max(peak, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - peak));
        for (std::size_t j = 0; j < nk; ++j)
          for (std::size_t p = 0; p < hd; ++p)
            mixed[(bi * nq + i) * d + hh * hd + p] += s[j] / z * v[(bi * nk + j) * d + hh * hd + p];
      }
  return project(Tensor::from({b, nq, d}, mixed), l.out);
}

}  // namespace

TEST(Conv2d, UnitKernelScales) {
  Rng rng(1);
  auto x = random_tensor(rng, {1, 1, 4, 4});
  auto y = conv2d(x, Tensor::from({1, 1, 1, 1}, {2.0}), Tensor::zeros({1}), {});
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y.data()[i], 2.0 * x.data()[i]);
}

TEST(Conv2d, CountsOverlaps) {
  Conv2dGeometry g;
  g.pad_h = g.pad_w = 1;
  auto y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), g);
  EXPECT_EQ(y.at({0, 0, 1, 1}), 9.0);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 4.0);
  EXPECT_EQ(y.at({0, 0, 2, 2}), 4.0);
  EXPECT_EQ(y.at({0, 0, 0, 1}), 6.0);
}

TEST(Conv2d, StrideTwoMatchesLoops) {
  Rng rng(2);
  auto x = random_tensor(rng, {1, 3, 5, 5});
  auto w = random_tensor(rng, {4, 3, 3, 3});
  auto b = random_tensor(rng, {4});
  Conv2dGeometry g;
  g.stride_h = g.stride_w = 2;
  g.pad_h = g.pad_w = 1;
  auto y = conv2d(x, w, b, g);
  auto ref = naive_conv(x, w, b, g);
  ASSERT_EQ(y.numel(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(y.data()[i], ref[i]);
}

TEST(Conv2d, BitExactOverRandomShapes) {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t groups = 1 + rng.below(3);
    const std::size_t cin = groups * (1 + rng.below(3)), cout = groups * (1 + rng.below(3));
    const std::size_t kh = 1 + rng.below(3), kw = 1 + rng.below(3);
    Conv2dGeometry g{1 + rng.below(2), 1 + rng.below(2), rng.below(2), rng.below(2), groups};
    const std::size_t h = std::max<std::size_t>(kh, 1 + rng.below(9)), w = std::max<std::size_t>(kw, 1 + rng.below(9));
    auto x = random_tensor(rng, {1 + rng.below(2), cin, h, w});
    auto wt = random_tensor(rng, {cout, cin / groups, kh, kw});
    auto b = random_tensor(rng, {cout});
    auto y = conv2d(x, wt, b, g);
    auto ref = naive_conv(x, wt, b, g);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y.data()[i], ref[i]) << "trial " << trial;
  }
}

TEST(Conv2d, GroupMismatchIsShapeError) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({4, 2, 3, 3}), Tensor::zeros({4}), {}), ShapeError);
  Conv2dGeometry g;
  g.groups = 2;
  EXPECT_THROW(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({4, 1, 3, 3}), Tensor{}, g), ShapeError);
  Rng rng(0);
  EXPECT_THROW(ConvLayer::init(rng, 3, 4, 3, 3, g), ShapeError);
}

TEST(Conv2d, Gradients) {
  Rng rng(4);
  for (std::size_t groups : {1, 2}) {
    auto x = random_param(rng, {2, 4, 5, 6});
    auto w = random_param(rng, {6, 4 / groups, 3, 3});
    auto b = random_param(rng, {6});
    Conv2dGeometry g{2, 1, 1, 1, groups};
    EXPECT_LT(check_gradients([&] { return weighted_sum(conv2d(x, w, b, g)); }, {x, w, b}), 1e-4);
  }
}

TEST(Attention, SingleKeyHasUnitWeight) {
  Rng rng(5);
  auto layer = AttentionLayer::init(rng, 8, 8);
  auto tok = random_tensor(rng, {1, 1, 8});
  auto w = attention_weights(tok, tok, layer);
  EXPECT_EQ(w.item(), 1.0);
  auto y = multi_head_attention(tok, tok, layer);
  auto expected = layer.out(layer.value(tok));
  EXPECT_LT(max_abs_diff(y.data(), expected.data()), 1e-15);
}

TEST(Attention, IdenticalKeysGiveUniformWeights) {
  Rng rng(6);
  auto layer = AttentionLayer::init(rng, 8, 8);
  auto one = random_values(rng, 8);
  std::vector<double> kv;
  for (int i = 0; i < 5; ++i) kv.insert(kv.end(), one.begin(), one.end());
  auto w = attention_weights(random_tensor(rng, {1, 3, 8}), Tensor::from({1, 5, 8}, kv), layer);
  for (double v : w.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Attention, TwoHeadsMatchDenseLoops) {
  Rng rng(7);
  auto layer = AttentionLayer::init(rng, 8, 8);
  layer.num_heads = 2;
  auto x = random_tensor(rng, {1, 3, 8});
  auto y = multi_head_attention(x, x, layer);
  auto ref = naive_attention(x, x, layer);
  EXPECT_LT(max_abs_diff(y.data(), ref), 1e-10);

  auto kv = random_tensor(rng, {1, 5, 8});
  auto cross = multi_head_attention(x, kv, layer);
  EXPECT_EQ(cross.shape(), (Shape{1, 3, 8}));
  EXPECT_LT(max_abs_diff(cross.data(), naive_attention(x, kv, layer)), 1e-10);
}

TEST(Attention, WeightRowsSumToOne) {
  Rng rng(8);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t nq = 1 + rng.below(64), nk = 1 + rng.below(64);
    auto layer = AttentionLayer::init(rng, 16, 64);
    auto w = attention_weights(random_tensor(rng, {1, nq, 64}, 3.0), random_tensor(rng, {1, nk, 16}, 3.0), layer);
    EXPECT_EQ(w.dim(0), 2u);
    for (std::size_t r = 0; r < w.dim(0) * nq; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < nk; ++j) total += w.data()[r * nk + j];
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Attention, WidthMismatch) {
  Rng rng(9);
  auto layer = AttentionLayer::init(rng, 8, 8);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({1, 2, 6}), Tensor::zeros({1, 2, 8}), layer), ShapeError);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({1, 2, 8}), Tensor::zeros({1, 2, 4}), layer), ShapeError);
}

TEST(Attention, HeadRule) {
  EXPECT_EQ(heads_for_width(64), 2u);
  EXPECT_EQ(heads_for_width(256), 8u);
  EXPECT_EQ(heads_for_width(48), 1u);
  EXPECT_EQ(heads_for_width(8), 1u);
}

TEST(LocalAttention, LargeWindowIsGlobal) {
  Rng rng(10);
  auto layer = AttentionLayer::init(rng, 8, 8);
  auto x = random_tensor(rng, {2, 8, 3, 5});
  auto local = local_window_attention(x, layer, 8);
  auto global = from_tokens(multi_head_attention(to_tokens(x), to_tokens(x), layer), 3, 5);
  EXPECT_LT(max_abs_diff(local.data(), global.data()), 1e-10);
}

TEST(LocalAttention, UnitWindowIsPerToken) {
  Rng rng(11);
  auto layer = AttentionLayer::init(rng, 8, 8);
  auto x = random_tensor(rng, {1, 8, 3, 3});
  auto y = local_window_attention(x, layer, 1);
  auto ref = from_tokens(layer.out(layer.value(to_tokens(x))), 3, 3);
  EXPECT_LT(max_abs_diff(y.data(), ref.data()), 1e-14);
}

TEST(LocalAttention, BlockwiseOracle) {
  Rng rng(12);
  auto layer = AttentionLayer::init(rng, 8, 8);
  auto x = random_tensor(rng, {1, 8, 4, 4});
  auto y = local_window_attention(x, layer, 2);
  for (std::size_t by = 0; by < 2; ++by) {
    for (std::size_t bx = 0; bx < 2; ++bx) {
      std::vector<double> block;
      for (std::size_t ty = 0; ty < 2; ++ty)
        for (std::size_t tx = 0; tx < 2; ++tx)
          for (std::size_t c = 0; c < 8; ++c) block.push_back(x.at({0, c, by * 2 + ty, bx * 2 + tx}));
      auto t = Tensor::from({1, 4, 8}, block);
      auto ref = multi_head_attention(t, t, layer);
      for (std::size_t ty = 0; ty < 2; ++ty)
        for (std::size_t tx = 0; tx < 2; ++tx)
          for (std::size_t c = 0; c < 8; ++c)
            EXPECT_NEAR(y.at({0, c, by * 2 + ty, bx * 2 + tx}), ref.at({0, ty * 2 + tx, c}), 1e-12);
    }
  }
}

TEST(LocalAttention, OddGridIsPaddedAndCropped) {
  Rng rng(13);
  auto layer = AttentionLayer::init(rng, 8, 8);
  auto x = random_tensor(rng, {1, 8, 5, 3});
  auto y = local_window_attention(x, layer, 2);
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(NnGradients, AttentionAndNorms) {
  Rng rng(14);
  auto layer = AttentionLayer::init(rng, 6, 8);
  layer.num_heads = 2;
  auto q = random_param(rng, {2, 3, 8});
  auto kv = random_param(rng, {2, 4, 6});
  std::vector<Tensor> params{q, kv};
  layer.collect(params);
  EXPECT_LT(check_gradients([&] { return weighted_sum(multi_head_attention(q, kv, layer)); }, params), 1e-4);

  auto self_layer = AttentionLayer::init(rng, 8, 8);
  auto x = random_param(rng, {1, 8, 4, 4});
  std::vector<Tensor> lp{x};
  self_layer.collect(lp);
  EXPECT_LT(check_gradients([&] { return weighted_sum(local_window_attention(x, self_layer, 3)); }, lp), 1e-4);

  auto ln = LayerNorm::init(8);
  EXPECT_LT(check_gradients([&] { return weighted_sum(normalize(q, ln)); }, {q, ln.gamma, ln.beta}), 1e-4);
  auto bn = BatchNorm::init(8);
  EXPECT_LT(check_gradients([&] { return weighted_sum(normalize(x, bn, true)); }, {x, bn.gamma, bn.beta}), 1e-4);
}
