#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "hnas/cost.hpp"
#include "hnas/errors.hpp"
#include "hnas/op_counter.hpp"
#include "test_util.hpp"

using namespace hnas;
using hnas::testing::random_tensor;

namespace {

std::uint64_t counted_macs(const std::function<void()>& run) {
  OpLedger ledger;
  NoGradGuard ng;
  run();
  std::uint64_t total = 0;
  for (const auto& [label, tally] : ledger.tallies()) total += tally.macs;
  return total;
}

// One-stage plan whose blocks see `grid`: a stride-1 stem at twice the grid.
NetworkPlan single_stage(GopKind gop, DsmKind dsm, std::size_t e, std::size_t grid, std::size_t repeats = 2) {
  NetworkPlan p;
  p.resolution = 2 * grid;
  p.in_channels = 1;
  p.stem_stride = 1;
  p.num_classes = 4;
  p.stages = {{gop, dsm, e, 8, repeats}};
  return p;
}

void expect_reports_equal(const CostReport& a, const CostReport& b, const std::string& what) {
  ASSERT_EQ(a.items.size(), b.items.size()) << what;
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    EXPECT_EQ(a.items[i].label, b.items[i].label) << what;
    EXPECT_EQ(a.items[i].cost, b.items[i].cost) << what << " " << a.items[i].label;
  }
  EXPECT_EQ(a.total, b.total) << what;
}

}  // namespace

TEST(LayerCost, SingleMultiplyConv) {
  const Cost c = layer_cost(ConvSpec{1, 1, 1, 1, {}}, {1, 1, 1});
  EXPECT_EQ(c.macs, 1u);
  EXPECT_EQ(c.params, 2u);
  Rng rng(1);
  ConvLayer layer = ConvLayer::init(rng, 1, 1, 1, 1, {});
  EXPECT_EQ(counted_macs([&] { conv2d(random_tensor(rng, {1, 1, 1, 1}), layer); }), 1u);
}

TEST(LayerCost, DepthwiseConv) {
  const ConvSpec spec{16, 16, 3, 3, {1, 1, 1, 1, 16}};
  EXPECT_EQ(layer_cost(spec, {16, 8, 8}).macs, 8u * 8 * 16 * 9);
  Rng rng(2);
  ConvLayer layer = ConvLayer::init(rng, 16, 16, 3, 3, spec.geometry);
  EXPECT_EQ(counted_macs([&] { conv2d(random_tensor(rng, {1, 16, 8, 8}), layer); }), 9216u);
}

TEST(LayerCost, SingleHeadAttention) {
  EXPECT_EQ(layer_cost(AttentionSpec{4, 8, 8}, {4, 8}).macs, 3u * 4 * 64 + 16 * 8 + 16 * 8 + 4 * 64);
  Rng rng(3);
  auto layer = AttentionLayer::init(rng, 8, 8);
  ASSERT_EQ(layer.num_heads, 1u);
  auto t = random_tensor(rng, {1, 4, 8});
  EXPECT_EQ(counted_macs([&] { multi_head_attention(t, t, layer); }), 1280u);
}

TEST(LayerCost, ConvAndDepthwiseDifferByGroupCount) {
  for (std::size_t c : {8, 16, 48}) {
    for (std::size_t e = 2; e <= 6; ++e) {
      const std::size_t h = c * e;
      const Cost full = layer_cost(ConvSpec{h, h, 3, 3, {1, 1, 1, 1, 1}}, {h, 5, 7});
      const Cost dw = layer_cost(ConvSpec{h, h, 3, 3, {1, 1, 1, 1, h}}, {h, 5, 7});
      EXPECT_EQ(full.macs, dw.macs * h);
    }
  }
}

TEST(LayerCost, ReferenceBlockParametersMatchBuiltBlock) {
  Rng rng(4);
  auto block = GopBlock::build(GopKind::DWConv, 48, 4, {40, 40}, {}, rng);
  EXPECT_EQ(gop_block_cost(GopKind::DWConv, 48, 4, {40, 40}, {}, false).params, block.parameter_count());
  // 1x1 expand, depthwise 3x3, 1x1 project, two batch norms
  EXPECT_EQ(block.parameter_count(), (48u * 192 + 192) + (192u * 9 + 192) + (192u * 48 + 48) + 4u * 192);
}

TEST(NetworkCost, AnalyticEqualsInstrumentedOverOperatorGrid) {
  for (auto gop : kGopKinds) {
    for (auto dsm : kDsmKinds) {
      for (std::size_t e : {2, 6}) {
        for (std::size_t grid : {4, 8}) {
          const auto plan = single_stage(gop, dsm, e, grid);
          const std::string what = std::string(to_string(gop)) + "/" + std::string(to_string(dsm)) + " e" +
                                   std::to_string(e) + " grid" + std::to_string(grid);
          expect_reports_equal(network_cost(plan), instrumented_count(plan), what);
          CostOptions with_norms;
          with_norms.count_norms = true;
          expect_reports_equal(network_cost(plan, with_norms), instrumented_count(plan, with_norms), what + " norms");
        }
      }
    }
  }
}

TEST(NetworkCost, AnalyticEqualsInstrumentedForAlternativeSettings) {
  CostOptions options;
  options.network.dsm.global_query = GlobalQueryMode::single_stride4;
  options.network.block.lsa_window = 3;
  options.network.block.mlp_token_ratio = 0.75;
  for (auto gop : {GopKind::LSA, GopKind::MLP}) {
    for (std::size_t grid : {5, 7}) {
      const auto plan = single_stage(gop, DsmKind::G_DSM, 3, grid);
      expect_reports_equal(network_cost(plan, options), instrumented_count(plan, options), std::string(to_string(gop)));
    }
  }
}

TEST(NetworkCost, AnalyticEqualsInstrumentedForRandomProxyPlans) {
  for (std::uint64_t i = 0; i < 6; ++i) {
    const auto plan = resolve(random_genome(split_seed(31, i)), BaseSkeleton::proxy());
    expect_reports_equal(network_cost(plan), instrumented_count(plan), to_text(plan));
  }
}

TEST(NetworkCost, ReportTotalsAreItemSums) {
  const auto report = network_cost(resolve(random_genome(3), BaseSkeleton::reference()));
  Cost sum, stages;
  for (const auto& item : report.items) sum += item.cost;
  for (const auto& s : report.stage_subtotals) stages += s;
  EXPECT_EQ(sum, report.total);
  EXPECT_EQ(stages.macs + report.items.front().cost.macs + report.items.back().cost.macs, report.total.macs);
  EXPECT_EQ(report.table(), network_cost(resolve(random_genome(3), BaseSkeleton::reference())).table());
  auto j = nlohmann::json::parse(report.json());
  EXPECT_EQ(j["macs"].get<std::uint64_t>(), report.total.macs);
  EXPECT_EQ(j["items"].size(), report.items.size());
}

TEST(NetworkCost, DoubledRepeatsDoubleBlockCosts) {
  for (std::uint64_t i = 0; i < 20; ++i) {
    auto plan = resolve(random_genome(split_seed(12, i)), BaseSkeleton::reference());
    auto doubled = plan;
    for (auto& s : doubled.stages) s.repeats *= 2;
    const auto a = network_cost(plan), b = network_cost(doubled);
    for (std::size_t s = 0; s < plan.stages.size(); ++s) {
      const auto dsm_label = "stage" + std::to_string(s) + ".dsm";
      std::uint64_t blocks_a = 0, blocks_b = 0;
      for (const auto& item : a.items) {
        if (item.label.rfind("stage" + std::to_string(s) + ".block", 0) == 0) blocks_a += item.cost.macs;
      }
      for (const auto& item : b.items) {
        if (item.label.rfind("stage" + std::to_string(s) + ".block", 0) == 0) blocks_b += item.cost.macs;
      }
      EXPECT_EQ(blocks_b, 2 * blocks_a);
    }
  }
}

TEST(NetworkCost, MonotoneInWidthDepthExpansionAndResolution) {
  const SearchDomains d;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const Genome g = random_genome(split_seed(13, i));
    const auto base = network_cost(resolve(g, BaseSkeleton::reference())).total.macs;
    for (std::size_t s = 0; s < g.stages.size(); ++s) {
      Genome h = g;
      auto& st = h.stages[s];
      if (st.expansion < 6) {
        ++st.expansion;
        EXPECT_GE(network_cost(resolve(h, BaseSkeleton::reference())).total.macs, base);
        h = g;
      }
      if (st.repeat_delta < 2) {
        ++st.repeat_delta;
        EXPECT_GE(network_cost(resolve(h, BaseSkeleton::reference())).total.macs, base);
        h = g;
      }
      auto it = std::find(d.channel_mults.begin(), d.channel_mults.end(), st.channel_mult);
      if (it + 1 != d.channel_mults.end()) {
        st.channel_mult = *(it + 1);
        EXPECT_GE(network_cost(resolve(h, BaseSkeleton::reference())).total.macs, base);
      }
    }
    const auto plan = resolve(g, BaseSkeleton::reference());
    std::uint64_t previous = 0;
    for (std::size_t r = 64; r <= 256; r += 32) {
      const auto macs = network_cost(plan, r).total.macs;
      EXPECT_GE(macs, previous);
      previous = macs;
    }
  }
}

TEST(NetworkCost, SelfAttentionAndTokenMlpStayWithinFactorTwo) {
  for (std::size_t c : {8, 16, 32, 64, 128}) {
    for (std::size_t e = 2; e <= 6; ++e) {
      for (std::size_t h = 1; h <= 8; ++h) {
        for (std::size_t w = 1; w <= 8; ++w) {
          const double sa = static_cast<double>(gop_block_cost(GopKind::SA, c, e, {h, w}, {}, true).macs);
          const double mlp = static_cast<double>(gop_block_cost(GopKind::MLP, c, e, {h, w}, {}, true).macs);
          EXPECT_LE(std::max(sa, mlp) / std::min(sa, mlp), 2.0) << "c" << c << " e" << e << " " << h << "x" << w;
        }
      }
    }
  }
}

TEST(NetworkCost, RejectsUnreachableResolutions) {
  const auto plan = resolve(reference_genome(), BaseSkeleton::reference());
  EXPECT_THROW(network_cost(plan, 0), ContractError);
  EXPECT_THROW(network_cost(plan, 32), ContractError);
  EXPECT_THROW(instrumented_count(plan, 96), ContractError);
  EXPECT_NO_THROW(network_cost(plan, 64));
}

TEST(NetworkCost, ReferenceModelDiagnostic) {
  const auto plan = resolve(reference_genome(), BaseSkeleton::reference());
  const auto report = network_cost(plan);
  const double gmacs = static_cast<double>(report.total.macs) / 1e9;
  const double mparams = static_cast<double>(report.total.params) / 1e6;
  std::printf("reference model at 160: %.3f GMACs, %.2fM params\n", gmacs, mparams);
  EXPECT_NEAR(gmacs, 0.56, 0.35 * 0.56);
  EXPECT_NEAR(mparams, 11.9, 0.35 * 11.9);
  expect_reports_equal(network_cost(plan, 64), instrumented_count(plan, 64), "reference at 64");
}

TEST(Scaling, UnitPhiCostGrowthTracksCoefficients) {
  const auto plan = resolve(reference_genome(), BaseSkeleton::reference());
  const ScalingCoefficients k;
  const double expected = k.depth * k.width * k.width * k.resolution * k.resolution;
  const double ratio = static_cast<double>(network_cost(compound_scale(plan, 1.0, k)).total.macs) /
                       static_cast<double>(network_cost(plan).total.macs);
  std::printf("phi=1 MAC ratio %.3f (coefficient product %.3f)\n", ratio, expected);
  EXPECT_NEAR(ratio, expected, 0.25 * expected);
  std::uint64_t previous = 0;
  for (double phi = 0.0; phi <= 3.0; phi += 0.5) {
    const auto macs = network_cost(compound_scale(plan, phi, k)).total.macs;
    EXPECT_GE(macs, previous);
    previous = macs;
  }
}
