#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hnas/network.hpp"

namespace hnas {

struct Cost {
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
  std::uint64_t norm_ops = 0;  // 2 per normalized element; folded into macs only on request

  Cost& operator+=(const Cost& o) {
    macs += o.macs;
    params += o.params;
    norm_ops += o.norm_ops;
    return *this;
  }
  friend Cost operator+(Cost a, const Cost& b) { return a += b; }
  bool operator==(const Cost&) const = default;
};

// Layer descriptions for layer_cost(). Input shapes are per image.
struct ConvSpec {
  std::size_t c_in, c_out, kh, kw;
  Conv2dGeometry geometry;
};
struct LinearSpec {
  std::size_t d_in, d_out;
};
// Query/key/value/out projections plus scores and weighted sum; no query
// projection when `project_queries` is false (down-sampling modules).
struct AttentionSpec {
  std::size_t kv_tokens, kv_width, width;
  bool project_queries = true;
};
// Mixing along the token axis: Linear(tokens -> hidden) and back, per channel.
struct TokenMlpSpec {
  std::size_t hidden;
};
struct LayerNormSpec {};
struct BatchNormSpec {};

using LayerSpec = std::variant<ConvSpec, LinearSpec, AttentionSpec, TokenMlpSpec, LayerNormSpec, BatchNormSpec>;

// `input`: conv and batch norm take [c x h x w]; the token layers take
// [tokens x width] (queries for attention); linear/layer norm take [... x d].
Cost layer_cost(const LayerSpec& layer, const Shape& input);

Cost gop_block_cost(GopKind kind, std::size_t channels, std::size_t expansion, Grid grid, const BlockConfig& config,
                    bool with_position);
Cost dsm_cost(DsmKind kind, std::size_t c_in, std::size_t c_out, Grid in, const DsmConfig& config);

struct CostOptions {
  NetworkOptions network;
  bool count_norms = false;
};

struct CostItem {
  std::string label;
  Cost cost;
};

struct CostReport {
  std::size_t resolution = 0;
  bool count_norms = false;
  std::vector<CostItem> items;
  std::vector<Cost> stage_subtotals;  // down-sampling module plus blocks of each stage
  Cost total;

  std::string table() const;
  // One structured record: {"resolution", "macs", "params", "items": [...]}.
  std::string json() const;
};

CostReport network_cost(const NetworkPlan& plan, const CostOptions& options = {});
CostReport network_cost(const NetworkPlan& plan, std::size_t resolution, const CostOptions& options = {});

// Runs a batch-1 forward pass of the real network and reports the counted
// multiply-accumulates and the actual parameter tensors per item.
inline constexpr std::size_t kMaxInstrumentedResolution = 64;
CostReport instrumented_count(const NetworkPlan& plan, const CostOptions& options = {});
CostReport instrumented_count(const NetworkPlan& plan, std::size_t resolution, const CostOptions& options = {});

}  // namespace hnas
