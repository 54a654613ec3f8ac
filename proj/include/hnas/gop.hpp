#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "hnas/nn.hpp"

namespace hnas {

// The searchable general operators, in token order.
enum class GopKind { SA, LSA, Conv, DWConv, MLP };
inline constexpr std::array<GopKind, 5> kGopKinds{GopKind::SA, GopKind::LSA, GopKind::Conv, GopKind::DWConv,
                                                  GopKind::MLP};

std::string_view to_string(GopKind kind);
GopKind parse_gop_kind(std::string_view name);
bool is_token_mixer(GopKind kind);

struct Grid {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t tokens() const { return h * w; }
  bool operator==(const Grid&) const = default;
};

struct BlockConfig {
  std::size_t lsa_window = 4;
  // Token-mixing hidden width of MLP blocks: ceil(tokens * ratio).
  double mlp_token_ratio = 0.5;
  std::size_t mlp_token_cap = 4096;
};

std::size_t mlp_token_hidden(std::size_t tokens, const BlockConfig& config);

// Inverted-residual block mapping [b x c x h x w] to the same shape.
//
// Conv / DWConv: x + Proj(ec->c)(SiLU(BN(Conv3x3(SiLU(BN(Proj(c->ec)(x))))))),
//   where DWConv uses a depthwise 3x3 inside the bottleneck.
// SA / LSA / MLP on row-major tokens t:
//   y' = t + Mix(LN(t))        Mix = attention, windowed attention or token MLP
//   y  = y' + Proj(ec->c)(GELU(Proj(c->ec)(LN(y'))))
// A block may own the stage's learned positional embedding (zero-initialized),
// added to the tokens before mixing.
class GopBlock {
 public:
  struct ConvPath {
    ConvLayer expand;
    BatchNorm expand_norm;
    ConvLayer spatial;
    BatchNorm spatial_norm;
    ConvLayer project;
  };

  struct TokenPath {
    std::optional<Tensor> position;  // [tokens x c]
    LayerNorm mix_norm;
    std::optional<AttentionLayer> attention;
    std::optional<Linear> token_up;    // [tokens x hidden]
    std::optional<Linear> token_down;  // [hidden x tokens]
    LayerNorm ffn_norm;
    Linear ffn_up;
    Linear ffn_down;
  };

  static GopBlock build(GopKind kind, std::size_t channels, std::size_t expansion, Grid grid,
                        const BlockConfig& config, Rng& rng, bool with_position = false);

  Tensor forward(const Tensor& x, bool training);

  GopKind kind() const { return kind_; }
  std::size_t channels() const { return channels_; }
  std::size_t expansion() const { return expansion_; }
  std::size_t bottleneck_width() const { return channels_ * expansion_; }
  Grid grid() const { return grid_; }
  std::size_t lsa_window() const { return window_; }

  const ConvPath* conv_path() const { return std::get_if<ConvPath>(&path_); }
  const TokenPath* token_path() const { return std::get_if<TokenPath>(&path_); }

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  // Zeroes the last linear map of every residual branch.
  void zero_final_projections();

 private:
  GopKind kind_ = GopKind::Conv;
  std::size_t channels_ = 0;
  std::size_t expansion_ = 0;
  Grid grid_;
  std::size_t window_ = 0;
  std::variant<ConvPath, TokenPath> path_;
};

}  // namespace hnas
