// Acceptance run: one PASS/FAIL line per criterion. Tolerances and budgets
// are fixed below; the exit status is nonzero when any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "hnas/cli.hpp"
#include "hnas/cost.hpp"
#include "hnas/dsm.hpp"
#include "hnas/errors.hpp"
#include "hnas/gop.hpp"

using namespace hnas;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradEps = 1e-4;
constexpr double kGradBudgetSeconds = 120;
constexpr double kOracleBudgetSeconds = 300;
constexpr double kReferenceBand = 0.35;
constexpr double kReferenceMacs = 0.56e9;
constexpr double kReferenceParams = 11.9e6;
constexpr double kRewardTolerance = 1e-12;
constexpr double kSearchBudgetSeconds = 30 * 60;
constexpr std::size_t kBanditMaxUpdates = 200;
constexpr double kBanditTarget = 0.99;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

Tensor random_param(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor random_tensor(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar loss with fixed random weights so every output entry matters.
Tensor weighted_sum(const Tensor& t) {
  Rng rng(99);
  return sum(mul(t, random_tensor(rng, t.shape())));
}

// ---- 1 ------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& params) {
    const double err = check_gradients(f, params, kGradEps);
    ++checks;
    if (!(err <= worst)) {
      worst = err;
      worst_name = name;
    }
  };

  Rng rng(1);
  const std::size_t b = 2, c = 3, h = 4, w = 5;
  auto x = random_param(rng, {b, c, h, w});
  auto y = random_param(rng, {b, c, h, w});
  auto row = random_param(rng, {w});
  std::vector<double> positive(b * c * h * w);
  for (auto& v : positive) v = 0.5 + rng.uniform();
  auto pos = Tensor::parameter({b, c, h, w}, positive);

  check("add", [&] { return weighted_sum(add(x, y)); }, {x, y});
  check("add broadcast", [&] { return weighted_sum(add(x, row)); }, {x, row});
  check("sub", [&] { return weighted_sum(sub(x, y)); }, {x, y});
  check("mul", [&] { return weighted_sum(mul(x, y)); }, {x, y});
  check("minimum", [&] { return weighted_sum(minimum(x, y)); }, {x, y});
  check("scale", [&] { return weighted_sum(scale(x, -1.7)); }, {x});
  check("add_scalar", [&] { return weighted_sum(add_scalar(x, 0.3)); }, {x});
  check("clamp", [&] { return weighted_sum(clamp(x, -0.5, 0.5)); }, {x});
  check("exp", [&] { return weighted_sum(exp(scale(x, 0.5))); }, {x});
  check("log", [&] { return weighted_sum(log(pos)); }, {pos});
  check("tanh", [&] { return weighted_sum(tanh(x)); }, {x});
  check("sigmoid", [&] { return weighted_sum(sigmoid(x)); }, {x});
  check("relu", [&] { return weighted_sum(relu(x)); }, {x});
  check("silu", [&] { return weighted_sum(silu(x)); }, {x});
  check("gelu", [&] { return weighted_sum(gelu(x)); }, {x});
  check("sum", [&] { return scale(sum(mul(x, x)), 0.5); }, {x});
  check("mean", [&] { return mean(mul(x, y)); }, {x, y});
  check("sum_last", [&] { return weighted_sum(sum_last(x)); }, {x});
  check("spatial_mean", [&] { return weighted_sum(spatial_mean(x)); }, {x});
  for (std::size_t axis = 0; axis < 4; ++axis) {
    check("softmax", [&] { return weighted_sum(softmax(x, axis)); }, {x});
  }
  check("log_softmax_last", [&] { return weighted_sum(log_softmax_last(x)); }, {x});
  check("reshape", [&] { return weighted_sum(reshape(x, {b * c, h * w})); }, {x});
  check("permute", [&] { return weighted_sum(permute(x, {2, 0, 3, 1})); }, {x});
  check("slice", [&] { return weighted_sum(slice(x, 2, 1, 2)); }, {x});
  check("gather", [&] { return weighted_sum(gather(x, {0, 5, 5, -1, 17}, {5})); }, {x});
  auto gamma = random_param(rng, {w});
  auto beta = random_param(rng, {w});
  check("layer_norm", [&] { return weighted_sum(layer_norm(x, gamma, beta)); }, {x, gamma, beta});
  auto cg = random_param(rng, {c});
  auto cb = random_param(rng, {c});
  BatchNormState bn{std::vector<double>(c, 0.1), std::vector<double>(c, 1.3), 0.1, 1e-5};
  check("batch_norm train", [&] { return weighted_sum(batch_norm(x, cg, cb, bn, true)); }, {x, cg, cb});
  check("batch_norm eval", [&] { return weighted_sum(batch_norm(x, cg, cb, bn, false)); }, {x, cg, cb});
  auto m = random_param(rng, {h, c});
  auto n = random_param(rng, {c, w});
  check("matmul", [&] { return weighted_sum(matmul(m, n)); }, {m, n});
  auto p = random_param(rng, {b, h, c});
  auto q = random_param(rng, {b, c, w});
  auto qt = random_param(rng, {b, w, c});
  check("bmm", [&] { return weighted_sum(bmm(p, q)); }, {p, q});
  check("bmm transposed", [&] { return weighted_sum(bmm(p, qt, true)); }, {p, qt});
  auto wl = random_param(rng, {w, 3});
  auto bl = random_param(rng, {3});
  check("linear", [&] { return weighted_sum(linear(x, wl, bl)); }, {x, wl, bl});
  auto logits = random_param(rng, {4, 5});
  const std::vector<std::size_t> labels{0, 3, 4, 3};
  check("cross_entropy", [&] { return cross_entropy(logits, labels); }, {logits});
  check("pick", [&] { return weighted_sum(pick(logits, labels)); }, {logits});
  check("concat_last", [&] { return weighted_sum(concat_last({logits, reshape(p, {b * 2, h * c / 2})})); }, {logits, p});
  auto table = random_param(rng, {6, 3});
  check("embedding", [&] { return weighted_sum(embedding(table, {5, 0, 5, 2})); }, {table});
  auto kernel = random_param(rng, {6, 3, 3, 3}, 0.5);
  auto kbias = random_param(rng, {6});
  check("conv2d", [&] { return weighted_sum(conv2d(x, kernel, kbias, {1, 1, 1, 1, 1})); }, {x, kernel, kbias});
  check("conv2d stride 2", [&] { return weighted_sum(conv2d(x, kernel, kbias, {2, 2, 1, 1, 1})); }, {x, kernel, kbias});
  auto dw = random_param(rng, {3, 1, 3, 3}, 0.5);
  check("conv2d depthwise", [&] { return weighted_sum(conv2d(x, dw, Tensor{}, {1, 1, 1, 1, 3})); }, {x, dw});

  Rng block_rng(2);
  for (GopKind kind : kGopKinds) {
    auto block = GopBlock::build(kind, 8, 2, {4, 4}, {}, block_rng, is_token_mixer(kind) && kind != GopKind::LSA);
    auto in = random_param(block_rng, {2, 8, 4, 4});
    auto params = block.parameters();
    params.push_back(in);
    check(std::string("GOP ") + std::string(to_string(kind)), [&] { return weighted_sum(block.forward(in, true)); },
          params);
  }
  for (DsmKind kind : kDsmKinds) {
    auto dsm = DsmModule::build(kind, 8, 16, {}, block_rng);
    auto in = random_param(block_rng, {2, 8, 8, 8});
    auto params = dsm.parameters();
    params.push_back(in);
    check(std::string("DSM ") + std::string(to_string(kind)), [&] { return weighted_sum(dsm.forward(in)); }, params);
  }
  const double secs = seconds_since(t0);
  const bool pass = worst <= kGradTolerance && secs < kGradBudgetSeconds;
  return {pass, std::to_string(checks) + " checks, max relative error " + num(worst, 3) + " (" + worst_name +
                    "), limit " + num(kGradTolerance) + ", " + num(secs, 3) + " s of " + num(kGradBudgetSeconds) +
                    " s"};
}

// ---- 2 ------------------------------------------------------------------------

Outcome cost_oracle() {
  const auto t0 = Clock::now();
  std::size_t configs = 0, mismatches = 0;
  std::string first_mismatch;
  for (GopKind gop : kGopKinds)
    for (DsmKind dsm : kDsmKinds)
      for (std::size_t e : {2, 6})
        for (std::size_t grid : {4, 8}) {
          NetworkPlan plan;
          plan.resolution = 2 * grid;
          plan.in_channels = 1;
          plan.stem_stride = 1;
          plan.num_classes = 4;
          plan.stages = {{gop, dsm, e, 8, 2}};
          const auto a = network_cost(plan);
          const auto b = instrumented_count(plan);
          bool same = a.items.size() == b.items.size() && a.total.macs == b.total.macs &&
                      a.total.params == b.total.params;
          for (std::size_t i = 0; same && i < a.items.size(); ++i) {
            same = a.items[i].label == b.items[i].label && a.items[i].cost.macs == b.items[i].cost.macs &&
                   a.items[i].cost.params == b.items[i].cost.params;
          }
          ++configs;
          if (!same) {
            ++mismatches;
            if (first_mismatch.empty()) {
              first_mismatch = std::string(to_string(gop)) + "/" + std::string(to_string(dsm)) + " e" +
                               std::to_string(e) + " " + std::to_string(grid) + "x" + std::to_string(grid);
            }
          }
        }
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(configs) + " configurations, " + std::to_string(mismatches) + " mismatches";
  if (!first_mismatch.empty()) detail += " (first: " + first_mismatch + ")";
  detail += ", " + num(secs, 3) + " s of " + num(kOracleBudgetSeconds) + " s";
  return {configs == 60 && mismatches == 0 && secs < kOracleBudgetSeconds, detail};
}

// ---- 3 ------------------------------------------------------------------------

Outcome reference_fixture() {
  const Genome g = reference_genome();
  const auto tokens = encode(g);
  const bool tokens_round_trip = decode_genome(tokens) == g && encode(decode_genome(tokens)) == tokens;
  const bool text_round_trip = genome_from_text(to_text(g)) == g;
  const NetworkPlan plan = resolve(g, BaseSkeleton::reference());
  const std::vector<std::tuple<GopKind, DsmKind, std::size_t, std::size_t, std::size_t>> published = {
      {GopKind::DWConv, DsmKind::L_DSM, 4, 48, 2},  {GopKind::DWConv, DsmKind::L_DSM, 6, 80, 4},
      {GopKind::DWConv, DsmKind::L_DSM, 3, 128, 4}, {GopKind::SA, DsmKind::LG_DSM, 2, 128, 4},
      {GopKind::SA, DsmKind::LG_DSM, 5, 256, 8}};
  bool table_matches = plan.stages.size() == published.size() && plan.resolution == 160;
  for (std::size_t i = 0; table_matches && i < published.size(); ++i) {
    const auto& [gop, dsm, e, ch, r] = published[i];
    const auto& s = plan.stages[i];
    table_matches = s.gop == gop && s.dsm == dsm && s.expansion == e && s.channels == ch && s.repeats == r;
  }
  const auto report = network_cost(plan);
  const double macs = static_cast<double>(report.total.macs), params = static_cast<double>(report.total.params);
  const bool macs_ok = std::abs(macs - kReferenceMacs) <= kReferenceBand * kReferenceMacs;
  const bool params_ok = std::abs(params - kReferenceParams) <= kReferenceBand * kReferenceParams;
  std::string detail = std::string("round-trip ") + (tokens_round_trip && text_round_trip ? "exact" : "BROKEN") +
                       ", stage table " + (table_matches ? "matches" : "DIFFERS") + "; at 160x160 " +
                       num(macs / 1e9, 4) + " GMACs (" + num(100 * (macs / kReferenceMacs - 1), 3) + "% vs 0.56) and " +
                       num(params / 1e6, 4) + " M params (" + num(100 * (params / kReferenceParams - 1), 3) +
                       "% vs 11.9), band +-35%. Assumptions: stem 3x3/2 conv+BN+SiLU, head global pool + 1000-way "
                       "linear, norm ops excluded, softmax/activations uncounted";
  return {tokens_round_trip && text_round_trip && table_matches && macs_ok && params_ok, detail};
}

// ---- 4 ------------------------------------------------------------------------

Outcome reward_units() {
  const double t = 550e6;
  bool identity = true;
  for (double a : {0.0, 0.123, 0.5, 0.8, 1.0})
    for (double alpha : {-1.0, -0.07, 0.0, 0.3})
      for (RewardForm form : {RewardForm::penalize_excess, RewardForm::literal}) {
        identity = identity && reward(a, t, t, alpha, form) == a;
      }
  const double adopted = reward(0.8, 2 * t, t, -0.07);
  const double adopted_expected = 0.8 * std::pow(2.0, -0.07);
  const double literal = reward(0.8, 2 * t, t, -0.07, RewardForm::literal);
  const double literal_expected = 0.8 * std::pow(2.0, 0.07);
  const double err_adopted = std::abs(adopted - adopted_expected);
  const double err_literal = std::abs(literal - literal_expected);
  const bool inverted = literal > 0.8 && adopted < 0.8;
  const bool pass = identity && err_adopted <= kRewardTolerance && err_literal <= kRewardTolerance && inverted;
  return {pass, std::string("r(a,t,t)=a ") + (identity ? "exact" : "VIOLATED") + "; r(0.8,2t,t,-0.07)=" +
                    num(adopted, 12) + " (err " + num(err_adopted, 2) + "); literal form " + num(literal, 12) +
                    " (err " + num(err_literal, 2) + "), orientation " + (inverted ? "inverted" : "NOT inverted")};
}

// ---- 5 ------------------------------------------------------------------------

Outcome cardinality() {
  const SearchDomains domains;
  std::uint64_t per_stage = 1;
  for (auto a : domains.arities()) per_stage *= a;
  std::uint64_t expected = 1;
  for (int i = 0; i < 5; ++i) expected *= 1875;
  const std::uint64_t got = space_cardinality(kNumStages, domains);
  const double exponent = std::log10(static_cast<double>(got));
  const bool pass = per_stage == 1875 && got == expected && exponent >= 16 && exponent < 17;
  return {pass, "per stage " + std::to_string(per_stage) + ", total " + std::to_string(got) + " = 1875^5 = " +
                    num(static_cast<double>(got), 3) + " (order 10^" + std::to_string(static_cast<int>(exponent)) +
                    ")"};
}

// ---- 6 ------------------------------------------------------------------------

Outcome controller_smoke() {
  const auto t0 = Clock::now();
  SearchConfig cfg;
  cfg.num_samples = 64;
  cfg.workers = 4;
  cfg.seed = 1;
  cfg.batch = 8;
  cfg.ppo.lr = 0.05;
  const ProxyEvaluator evaluator{synth_task(1, 800, 32, 4), {}, BaseSkeleton::proxy(4), BaseSkeleton::reference(), {}};
  const auto result = run_search(std::cref(evaluator), cfg);
  const double secs = seconds_since(t0);
  auto quartile_mean = [&](std::size_t q) {
    double s = 0.0;
    for (std::size_t i = q * 16; i < (q + 1) * 16; ++i) s += result.history[i].reward;
    return s / 16.0;
  };
  const double first = quartile_mean(0), last = quartile_mean(3);
  std::size_t failed = 0;
  for (const auto& c : result.history) failed += c.failed ? 1 : 0;

  auto bandit = Policy::init({2}, {}, 13);
  Rng rng(14);
  PpoTrainer trainer(bandit, {});
  std::size_t updates = 0;
  while (updates < kBanditMaxUpdates && bandit.probabilities({})[0] <= kBanditTarget) {
    const auto samples = bandit.sample(16, rng);
    std::vector<Candidate> batch(samples.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i].tokens = samples[i].tokens;
      batch[i].log_probs = samples[i].log_probs;
      batch[i].reward = samples[i].tokens[0] == 0 ? 1.0 : 0.0;
    }
    trainer.update(batch);
    ++updates;
  }
  const double p_best = bandit.probabilities({})[0];
  const bool pass = result.history.size() == 64 && last > first && secs <= kSearchBudgetSeconds && p_best > kBanditTarget;
  return {pass, "quartile mean reward first " + num(first, 4) + ", last " + num(last, 4) + " (" +
                    std::to_string(failed) + " failed candidates), search " + num(secs, 4) + " s of " +
                    num(kSearchBudgetSeconds) + " s; bandit P(best) " + num(p_best, 5) + " after " +
                    std::to_string(updates) + " updates (limit " + std::to_string(kBanditMaxUpdates) + ")"};
}

// ---- 7 ------------------------------------------------------------------------

Outcome residual_identity() {
  Rng rng(7);
  double worst = 0.0;
  std::size_t cases = 0;
  for (GopKind kind : kGopKinds)
    for (Grid grid : {Grid{1, 1}, Grid{4, 4}, Grid{3, 5}, Grid{8, 8}})
      for (std::size_t e : {2, 6}) {
        auto block = GopBlock::build(kind, 8, e, grid, {}, rng, kind != GopKind::LSA);
        block.zero_final_projections();
        const auto x = random_tensor(rng, {2, 8, grid.h, grid.w});
        for (bool training : {false, true}) {
          const auto y = block.forward(x, training);
          for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(y.data()[i] - x.data()[i]));
          ++cases;
        }
      }
  return {worst == 0.0, std::to_string(cases) + " block/grid/mode cases, max abs deviation " + num(worst, 3)};
}

// ---- 8 ------------------------------------------------------------------------

std::vector<double> input_support(const DsmModule& m, std::size_t h, std::size_t w, std::size_t oy, std::size_t ox) {
  Rng rng(77);
  auto x = random_param(rng, {1, m.in_channels(), h, w});
  auto y = m.forward(x);
  const std::size_t ho = y.dim(2), wo = y.dim(3);
  std::vector<std::int64_t> index;
  for (std::size_t c = 0; c < y.dim(1); ++c) index.push_back(static_cast<std::int64_t>((c * ho + oy) * wo + ox));
  const std::size_t picked = index.size();
  const auto grads = backward(weighted_sum(gather(y, std::move(index), {picked})));
  const auto g = grads.at(x).data();
  std::vector<double> support(h * w, 0.0);
  for (std::size_t c = 0; c < m.in_channels(); ++c)
    for (std::size_t i = 0; i < h * w; ++i) support[i] += std::abs(g[c * h * w + i]);
  return support;
}

Outcome dsm_contracts() {
  Rng rng(8);
  std::size_t grids = 0, wrong = 0, degenerate_rejected = 0, degenerate = 0;
  for (DsmKind kind : kDsmKinds) {
    const auto m = DsmModule::build(kind, 4, 8, {}, rng);
    for (std::size_t h = 1; h <= 16; ++h)
      for (std::size_t w = 1; w <= 16; ++w) {
        const auto x = random_tensor(rng, {1, 4, h, w});
        if (h < 2 || w < 2) {
          ++degenerate;
          try {
            m.forward(x);
          } catch (const ContractError&) {
            ++degenerate_rejected;
          }
          continue;
        }
        const auto y = m.forward(x);
        ++grids;
        if (y.dim(2) != (h + 1) / 2 || y.dim(3) != (w + 1) / 2 || y.dim(1) != 8) ++wrong;
      }
  }
  // L-DSM: every output position depends on at most the 3x3 input window at
  // its stride-2 anchor. LG/G-DSM: every output depends on every input.
  bool local_ok = true;
  std::size_t local_max = 0;
  {
    const auto m = DsmModule::build(DsmKind::L_DSM, 4, 8, {}, rng);
    for (std::size_t oy = 0; oy < 4; ++oy)
      for (std::size_t ox = 0; ox < 4; ++ox) {
        const auto s = input_support(m, 8, 8, oy, ox);
        std::size_t nonzero = 0;
        for (std::size_t yy = 0; yy < 8; ++yy)
          for (std::size_t xx = 0; xx < 8; ++xx) {
            if (s[yy * 8 + xx] == 0.0) continue;
            ++nonzero;
            const long dy = static_cast<long>(yy) - static_cast<long>(2 * oy);
            const long dx = static_cast<long>(xx) - static_cast<long>(2 * ox);
            local_ok = local_ok && std::abs(dy) <= 1 && std::abs(dx) <= 1;
          }
        local_max = std::max(local_max, nonzero);
      }
  }
  bool global_ok = true;
  for (DsmKind kind : {DsmKind::LG_DSM, DsmKind::G_DSM}) {
    const auto m = DsmModule::build(kind, 4, 8, {}, rng);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {5, 6}})
      for (std::size_t oy = 0; oy < (h + 1) / 2; ++oy)
        for (std::size_t ox = 0; ox < (w + 1) / 2; ++ox)
          for (double v : input_support(m, h, w, oy, ox)) global_ok = global_ok && v > 0.0;
  }
  const bool pass = wrong == 0 && degenerate_rejected == degenerate && local_ok && local_max <= 9 && global_ok;
  return {pass, std::to_string(grids) + " grids up to 16x16 with ceil-halved output (" + std::to_string(wrong) +
                    " wrong), " + std::to_string(degenerate_rejected) + "/" + std::to_string(degenerate) +
                    " sub-2x2 inputs rejected; L-DSM support <= " + std::to_string(local_max) + " inputs within 3x3 " +
                    (local_ok ? "yes" : "NO") + "; LG/G-DSM global " + (global_ok ? "yes" : "NO")};
}

// ---- 9 ------------------------------------------------------------------------

Outcome search_determinism() {
  const fs::path root = fs::temp_directory_path() / "hnas_acceptance_determinism";
  fs::remove_all(root);
  auto run = [&](const std::string& name) {
    std::ostringstream out, err;
    const int status = run_cli({"search", "--seed", "9", "--workers", "2", "--num-samples", "12", "--topk", "3",
                                "--out", (root / name).string(), "--set", "batch=4", "--set", "synth_samples=64",
                                "--set", "proxy_epochs=1"},
                               out, err, [](const char*) { return std::optional<std::string>{}; });
    if (status != 0) throw std::runtime_error("search exited with " + std::to_string(status) + ": " + err.str());
    return read_text_file((root / name / "history.jsonl").string());
  };
  const auto a = run("first");
  const auto b = run("second");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  return {a == b && lines == 12, std::to_string(lines) + "-record histories " +
                                     (a == b ? "byte-identical" : "DIFFER") + " (" + std::to_string(a.size()) +
                                     " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::vector<int> only;
  app.add_option("--only", only, "run just these criteria")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},         {"cost oracle", cost_oracle},
      {"reference genome fixture", reference_fixture},        {"reward units", reward_units},
      {"search-space cardinality", cardinality},  {"controller smoke test", controller_smoke},
      {"residual identity", residual_identity},   {"down-sampling contracts", dsm_contracts},
      {"search determinism", search_determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
