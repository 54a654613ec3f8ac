#include "hnas/cost.hpp"

#include <cstdio>
#include <json.hpp>

#include "hnas/errors.hpp"
#include "hnas/op_counter.hpp"

namespace hnas {

namespace {

std::uint64_t u(std::size_t v) { return static_cast<std::uint64_t>(v); }

void require_rank(const Shape& input, std::size_t rank, const char* layer) {
  if (input.size() != rank) {
    throw ShapeError(std::string(layer) + " cost needs a rank-" + std::to_string(rank) + " input, got " +
                     shape_str(input));
  }
}

struct LayerCoster {
  const Shape& input;

  Cost operator()(const ConvSpec& s) const {
    require_rank(input, 3, "conv");
    if (input[0] != s.c_in) throw ShapeError("conv cost: input " + shape_str(input) + " vs c_in " + std::to_string(s.c_in));
    const auto& g = s.geometry;
    const std::size_t ho = conv_out_extent(input[1], s.kh, g.stride_h, g.pad_h);
    const std::size_t wo = conv_out_extent(input[2], s.kw, g.stride_w, g.pad_w);
    const std::uint64_t per_out = u(s.c_in / g.groups) * s.kh * s.kw;
    return {u(ho) * wo * s.c_out * per_out, u(s.c_out) * per_out + s.c_out, 0};
  }
  Cost operator()(const LinearSpec& s) const {
    if (input.empty() || input.back() != s.d_in) throw ShapeError("linear cost: input " + shape_str(input));
    const std::uint64_t rows = u(shape_numel(input) / s.d_in);
    return {rows * s.d_in * s.d_out, u(s.d_in) * s.d_out + s.d_out, 0};
  }
  Cost operator()(const AttentionSpec& s) const {
    require_rank(input, 2, "attention");
    const std::uint64_t nq = input[0], nkv = s.kv_tokens, d = s.width;
    Cost c;
    if (s.project_queries) c += LayerCoster{input}(LinearSpec{input[1], s.width});
    else if (input[1] != s.width) throw ShapeError("attention cost: unprojected queries must be width-wide");
    const Shape kv{s.kv_tokens, s.kv_width};
    c += LayerCoster{kv}(LinearSpec{s.kv_width, s.width});
    c += LayerCoster{kv}(LinearSpec{s.kv_width, s.width});
    c.macs += 2 * nq * nkv * d;
    c += LayerCoster{Shape{input[0], s.width}}(LinearSpec{s.width, s.width});
    return c;
  }
  Cost operator()(const TokenMlpSpec& s) const {
    require_rank(input, 2, "token MLP");
    const std::size_t tokens = input[0], width = input[1];
    return LayerCoster{Shape{width, tokens}}(LinearSpec{tokens, s.hidden}) +
           LayerCoster{Shape{width, s.hidden}}(LinearSpec{s.hidden, tokens});
  }
  Cost operator()(const LayerNormSpec&) const {
    if (input.empty()) throw ShapeError("layer norm cost needs a non-scalar input");
    return {0, 2 * u(input.back()), 2 * u(shape_numel(input))};
  }
  Cost operator()(const BatchNormSpec&) const {
    require_rank(input, 3, "batch norm");
    return {0, 2 * u(input[0]), 2 * u(shape_numel(input))};
  }
};

// Attention over windows of the clamped size, padded to whole windows.
Cost windowed_attention_cost(Grid grid, std::size_t width, std::size_t window) {
  const std::size_t wh = std::min(window, grid.h), ww = std::min(window, grid.w);
  const std::size_t windows = ((grid.h + wh - 1) / wh) * ((grid.w + ww - 1) / ww);
  const std::size_t per = wh * ww;
  Cost one = layer_cost(AttentionSpec{per, width, width}, {per, width});
  return {one.macs * windows, one.params, 0};
}

}  // namespace

Cost layer_cost(const LayerSpec& layer, const Shape& input) { return std::visit(LayerCoster{input}, layer); }

Cost gop_block_cost(GopKind kind, std::size_t c, std::size_t e, Grid grid, const BlockConfig& config,
                    bool with_position) {
  const std::size_t hidden = c * e, n = grid.tokens();
  Cost total;
  if (!is_token_mixer(kind)) {
    const Shape in{c, grid.h, grid.w}, mid{hidden, grid.h, grid.w};
    total += layer_cost(ConvSpec{c, hidden, 1, 1, {}}, in);
    total += layer_cost(BatchNormSpec{}, mid);
    const std::size_t groups = kind == GopKind::DWConv ? hidden : 1;
    total += layer_cost(ConvSpec{hidden, hidden, 3, 3, {1, 1, 1, 1, groups}}, mid);
    total += layer_cost(BatchNormSpec{}, mid);
    total += layer_cost(ConvSpec{hidden, c, 1, 1, {}}, mid);
    return total;
  }
  const Shape tokens{n, c};
  if (with_position && kind != GopKind::LSA) total.params += u(n) * c;
  total += layer_cost(LayerNormSpec{}, tokens);
  switch (kind) {
    case GopKind::SA: total += layer_cost(AttentionSpec{n, c, c}, tokens); break;
    case GopKind::LSA: total += windowed_attention_cost(grid, c, config.lsa_window); break;
    default: total += layer_cost(TokenMlpSpec{mlp_token_hidden(n, config)}, tokens); break;
  }
  total += layer_cost(LayerNormSpec{}, tokens);
  total += layer_cost(LinearSpec{c, hidden}, tokens);
  total += layer_cost(LinearSpec{hidden, c}, Shape{n, hidden});
  return total;
}

Cost dsm_cost(DsmKind kind, std::size_t c_in, std::size_t c_out, Grid in, const DsmConfig& config) {
  if (in.h < 2 || in.w < 2) throw ContractError("down-sampling cost needs a grid of at least 2x2");
  const Grid out = downsampled_grid(in);
  const Shape image{c_in, in.h, in.w};
  Cost total;
  if (kind == DsmKind::G_DSM) {
    const std::size_t padded = 4 * out.tokens();
    if (config.global_query == GlobalQueryMode::two_stride2) {
      const Cost first = layer_cost(ConvSpec{c_in, c_out, 1, 3, {1, 2, 0, 1, 1}}, {c_in, 1, padded});
      total += first;
      total += layer_cost(ConvSpec{c_out, c_out, 1, 3, {1, 2, 0, 1, 1}}, {c_out, 1, padded / 2});
    } else {
      total += layer_cost(ConvSpec{c_in, c_out, 1, 3, {1, 4, 0, 1, 1}}, {c_in, 1, padded});
    }
  } else {
    total += layer_cost(ConvSpec{c_in, c_out, 3, 3, {2, 2, 1, 1, 1}}, image);
    if (kind == DsmKind::L_DSM) return total;
  }
  total += layer_cost(LayerNormSpec{}, {in.tokens(), c_in});
  total += layer_cost(AttentionSpec{in.tokens(), c_in, c_out, false}, {out.tokens(), c_out});
  return total;
}

namespace {

void finalize(CostReport& report, std::size_t stages) {
  report.stage_subtotals.assign(stages, Cost{});
  for (auto& item : report.items) {
    if (report.count_norms) item.cost.macs += item.cost.norm_ops;
    report.total += item.cost;
    if (item.label.rfind("stage", 0) == 0) {
      const std::size_t idx = std::stoul(item.label.substr(5));
      report.stage_subtotals.at(idx) += item.cost;
    }
  }
}

std::string stage_label(std::size_t i, const std::string& part) { return "stage" + std::to_string(i) + "." + part; }

NetworkPlan at_resolution(const NetworkPlan& plan, std::size_t resolution) {
  NetworkPlan p = plan;
  p.resolution = resolution;
  return p;
}

}  // namespace

CostReport network_cost(const NetworkPlan& plan, const CostOptions& options) {
  const auto grids = stage_grids(plan);
  const Grid stem = stem_grid(plan);
  CostReport report;
  report.resolution = plan.resolution;
  report.count_norms = options.count_norms;
  const std::size_t c0 = plan.stem_channels(), s = plan.stem_stride;
  report.items.push_back({"stem", layer_cost(ConvSpec{plan.in_channels, c0, 3, 3, {s, s, 1, 1, 1}},
                                             {plan.in_channels, plan.resolution, plan.resolution}) +
                                      layer_cost(BatchNormSpec{}, {c0, stem.h, stem.w})});
  Grid grid = stem;
  std::size_t width = c0;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& st = plan.stages[i];
    report.items.push_back({stage_label(i, "dsm"), dsm_cost(st.dsm, width, st.channels, grid, options.network.dsm)});
    grid = grids[i];
    for (std::size_t j = 0; j < st.repeats; ++j) {
      report.items.push_back({stage_label(i, "block" + std::to_string(j)),
                              gop_block_cost(st.gop, st.channels, st.expansion, grid, options.network.block, j == 0)});
    }
    width = st.channels;
  }
  report.items.push_back({"head", layer_cost(LinearSpec{width, plan.num_classes}, {width})});
  finalize(report, plan.stages.size());
  return report;
}

CostReport network_cost(const NetworkPlan& plan, std::size_t resolution, const CostOptions& options) {
  return network_cost(at_resolution(plan, resolution), options);
}

CostReport instrumented_count(const NetworkPlan& plan, const CostOptions& options) {
  if (plan.resolution > kMaxInstrumentedResolution) {
    throw ContractError("instrumented counting runs at resolution <= " + std::to_string(kMaxInstrumentedResolution) +
                        ", got " + std::to_string(plan.resolution));
  }
  auto net = Network::build(plan, options.network, 0);
  const auto r = plan.resolution;
  Tensor images = Tensor::full({1, plan.in_channels, r, r}, 0.5);
  OpLedger ledger;
  {
    NoGradGuard no_grad;
    net.forward(images, false);
  }
  CostReport report;
  report.resolution = r;
  report.count_norms = options.count_norms;
  for (const auto& [label, params] : net.labeled_parameter_counts()) {
    Cost c;
    c.params = params;
    if (auto it = ledger.tallies().find(label); it != ledger.tallies().end()) {
      c.macs = it->second.macs;
      c.norm_ops = it->second.norm_ops;
    }
    report.items.push_back({label, c});
  }
  finalize(report, plan.stages.size());
  return report;
}

CostReport instrumented_count(const NetworkPlan& plan, std::size_t resolution, const CostOptions& options) {
  return instrumented_count(at_resolution(plan, resolution), options);
}

std::string CostReport::table() const {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %16s %14s\n", "item", "macs", "params");
  out += line;
  auto row = [&](const std::string& label, const Cost& c) {
    std::snprintf(line, sizeof line, "%-16s %16llu %14llu\n", label.c_str(), static_cast<unsigned long long>(c.macs),
                  static_cast<unsigned long long>(c.params));
    out += line;
  };
  for (const auto& item : items) row(item.label, item.cost);
  for (std::size_t i = 0; i < stage_subtotals.size(); ++i) row("stage" + std::to_string(i) + " total", stage_subtotals[i]);
  row("total", total);
  std::snprintf(line, sizeof line, "resolution %zu, norms %s\n", resolution, count_norms ? "counted" : "excluded");
  out += line;
  return out;
}

std::string CostReport::json() const {
  nlohmann::ordered_json j;
  j["resolution"] = resolution;
  j["macs"] = total.macs;
  j["params"] = total.params;
  j["items"] = nlohmann::ordered_json::array();
  for (const auto& item : items) {
    j["items"].push_back({{"label", item.label}, {"macs", item.cost.macs}, {"params", item.cost.params}});
  }
  return j.dump();
}

}  // namespace hnas
