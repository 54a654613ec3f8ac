#include "hnas/gop.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hnas/errors.hpp"

namespace hnas {

std::string_view to_string(GopKind kind) {
  switch (kind) {
    case GopKind::SA: return "SA";
    case GopKind::LSA: return "LSA";
    case GopKind::Conv: return "Conv";
    case GopKind::DWConv: return "DWConv";
    case GopKind::MLP: return "MLP";
  }
  return "?";
}

GopKind parse_gop_kind(std::string_view name) {
  for (auto kind : kGopKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw ContractError("unknown operator kind '" + std::string(name) + "'");
}

bool is_token_mixer(GopKind kind) { return kind == GopKind::SA || kind == GopKind::LSA || kind == GopKind::MLP; }

std::size_t mlp_token_hidden(std::size_t tokens, const BlockConfig& config) {
  const auto hidden = static_cast<std::size_t>(std::ceil(static_cast<double>(tokens) * config.mlp_token_ratio));
  return std::max<std::size_t>(1, hidden);
}

GopBlock GopBlock::build(GopKind kind, std::size_t channels, std::size_t expansion, Grid grid,
                         const BlockConfig& config, Rng& rng, bool with_position) {
  if (channels == 0) throw ContractError("operator block needs at least one channel");
  if (expansion < 2 || expansion > 6) {
    throw ContractError("expansion ratio must lie in [2, 6], got " + std::to_string(expansion));
  }
  if (grid.h == 0 || grid.w == 0) throw ContractError("operator block grid must be at least 1x1");

  GopBlock block;
  block.kind_ = kind;
  block.channels_ = channels;
  block.expansion_ = expansion;
  block.grid_ = grid;
  block.window_ = config.lsa_window;
  const std::size_t hidden = channels * expansion;

  if (!is_token_mixer(kind)) {
    ConvPath p;
    p.expand = ConvLayer::init(rng, channels, hidden, 1, 1, {});
    p.expand_norm = BatchNorm::init(hidden);
    Conv2dGeometry spatial{1, 1, 1, 1, kind == GopKind::DWConv ? hidden : 1};
    p.spatial = ConvLayer::init(rng, hidden, hidden, 3, 3, spatial);
    p.spatial_norm = BatchNorm::init(hidden);
    p.project = ConvLayer::init(rng, hidden, channels, 1, 1, {});
    block.path_ = std::move(p);
    return block;
  }

  TokenPath p;
  const std::size_t tokens = grid.tokens();
  if (kind == GopKind::MLP && tokens > config.mlp_token_cap) {
    throw CapacityError("MLP block over " + std::to_string(tokens) + " tokens exceeds the cap of " +
                        std::to_string(config.mlp_token_cap));
  }
  if (kind == GopKind::LSA && config.lsa_window == 0) throw ContractError("LSA window must be positive");
  if (with_position && kind != GopKind::LSA) {
    p.position = Tensor::parameter({tokens, channels}, std::vector<double>(tokens * channels, 0.0));
  }
  p.mix_norm = LayerNorm::init(channels);
  if (kind == GopKind::MLP) {
    const std::size_t token_hidden = mlp_token_hidden(tokens, config);
    p.token_up = Linear::init(rng, tokens, token_hidden);
    p.token_down = Linear::init(rng, token_hidden, tokens);
  } else {
    p.attention = AttentionLayer::init(rng, channels, channels);
  }
  p.ffn_norm = LayerNorm::init(channels);
  p.ffn_up = Linear::init(rng, channels, hidden);
  p.ffn_down = Linear::init(rng, hidden, channels);
  block.path_ = std::move(p);
  return block;
}

Tensor GopBlock::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw ShapeError(std::string(to_string(kind_)) + " block with " + std::to_string(channels_) +
                     " channels got input " + shape_str(x.shape()));
  }
  const Grid in_grid{x.dim(2), x.dim(3)};

  if (auto* p = std::get_if<ConvPath>(&path_)) {
    Tensor h = silu(normalize(conv2d(x, p->expand), p->expand_norm, training));
    h = silu(normalize(conv2d(h, p->spatial), p->spatial_norm, training));
    return add(x, conv2d(h, p->project));
  }

  auto& p = std::get<TokenPath>(path_);
  const bool grid_bound = kind_ == GopKind::MLP || kind_ == GopKind::LSA || p.position.has_value();
  if (grid_bound && in_grid != grid_) {
    throw ShapeError(std::string(to_string(kind_)) + " block built for a " + std::to_string(grid_.h) + "x" +
                     std::to_string(grid_.w) + " grid got " + shape_str(x.shape()));
  }
  Tensor t = to_tokens(x);
  if (p.position) t = add(t, *p.position);

  Tensor normed = normalize(t, p.mix_norm);
  Tensor mixed;
  switch (kind_) {
    case GopKind::SA:
      mixed = multi_head_attention(normed, normed, *p.attention);
      break;
    case GopKind::LSA:
      mixed = local_window_attention_tokens(normed, in_grid.h, in_grid.w, *p.attention, window_);
      break;
    default: {
      Tensor across = permute(normed, {0, 2, 1});  // [b x c x tokens]
      across = (*p.token_down)(gelu((*p.token_up)(across)));
      mixed = permute(across, {0, 2, 1});
      break;
    }
  }
  Tensor y = add(t, mixed);
  Tensor ffn = p.ffn_down(gelu(p.ffn_up(normalize(y, p.ffn_norm))));
  y = add(y, ffn);
  return from_tokens(y, in_grid.h, in_grid.w);
}

std::vector<Tensor> GopBlock::parameters() const {
  std::vector<Tensor> out;
  if (auto* p = std::get_if<ConvPath>(&path_)) {
    p->expand.collect(out);
    p->expand_norm.collect(out);
    p->spatial.collect(out);
    p->spatial_norm.collect(out);
    p->project.collect(out);
    return out;
  }
  const auto& p = std::get<TokenPath>(path_);
  if (p.position) out.push_back(*p.position);
  p.mix_norm.collect(out);
  if (p.attention) p.attention->collect(out);
  if (p.token_up) p.token_up->collect(out);
  if (p.token_down) p.token_down->collect(out);
  p.ffn_norm.collect(out);
  p.ffn_up.collect(out);
  p.ffn_down.collect(out);
  return out;
}

std::size_t GopBlock::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void GopBlock::zero_final_projections() {
  if (auto* p = std::get_if<ConvPath>(&path_)) {
    p->project.zero();
    return;
  }
  auto& p = std::get<TokenPath>(path_);
  if (p.attention) p.attention->out.zero();
  if (p.token_down) p.token_down->zero();
  p.ffn_down.zero();
}

}  // namespace hnas
