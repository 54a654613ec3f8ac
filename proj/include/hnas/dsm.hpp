#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "hnas/gop.hpp"
#include "hnas/nn.hpp"

namespace hnas {

enum class DsmKind { L_DSM, LG_DSM, G_DSM };
inline constexpr std::array<DsmKind, 3> kDsmKinds{DsmKind::L_DSM, DsmKind::LG_DSM, DsmKind::G_DSM};

std::string_view to_string(DsmKind kind);
DsmKind parse_dsm_kind(std::string_view name);

// How G-DSM shortens the flattened query sequence to a quarter of its length.
enum class GlobalQueryMode { two_stride2, single_stride4 };

struct DsmConfig {
  GlobalQueryMode global_query = GlobalQueryMode::two_stride2;
};

Grid downsampled_grid(Grid in);

// Halves the spatial grid (rounding up) and maps c_in -> c_out channels.
//
// L-DSM:  3x3 conv, stride 2, padding 1.
// LG-DSM: queries = 3x3 stride-2 conv of the input grid, flattened;
//         keys/values projected from all layer-normed input tokens.
// G-DSM:  tokens zero-padded to an even grid and flattened row-major; queries
//         come from 1D convs (kernel 3) along that sequence, keys/values as LG.
class DsmModule {
 public:
  static DsmModule build(DsmKind kind, std::size_t c_in, std::size_t c_out, const DsmConfig& config, Rng& rng);

  Tensor forward(const Tensor& x) const;

  DsmKind kind() const { return kind_; }
  std::size_t in_channels() const { return c_in_; }
  std::size_t out_channels() const { return c_out_; }
  GlobalQueryMode global_query() const { return mode_; }

  // L-DSM conv, or the first query-path conv for LG/G.
  const ConvLayer& conv() const { return convs_.front(); }
  const std::vector<ConvLayer>& query_convs() const { return convs_; }
  const std::optional<LayerNorm>& kv_norm() const { return kv_norm_; }
  const std::optional<AttentionLayer>& attention() const { return attention_; }

  // Queries [b x N' x c_out] for G-DSM; exposed for tests.
  Tensor global_queries(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

 private:
  DsmKind kind_ = DsmKind::L_DSM;
  std::size_t c_in_ = 0;
  std::size_t c_out_ = 0;
  GlobalQueryMode mode_ = GlobalQueryMode::two_stride2;
  std::vector<ConvLayer> convs_;
  std::optional<LayerNorm> kv_norm_;
  std::optional<AttentionLayer> attention_;
};

}  // namespace hnas
