#pragma once

#include <optional>
#include <vector>

#include "hnas/ops.hpp"
#include "hnas/rng.hpp"

namespace hnas {

// Heads used for a model width: 32-wide heads when they divide d, else one.
std::size_t heads_for_width(std::size_t d);

struct Linear {
  Tensor weight;  // [d_in x d_out]
  Tensor bias;    // [d_out]

  static Linear init(Rng& rng, std::size_t d_in, std::size_t d_out);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(std::vector<Tensor>& out) const;
  void zero();
};

struct ConvLayer {
  Tensor kernel;  // [c_out x c_in/groups x kh x kw]
  Tensor bias;    // [c_out]
  Conv2dGeometry geometry;

  static ConvLayer init(Rng& rng, std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
                        const Conv2dGeometry& geometry);
  std::size_t in_channels() const { return kernel.dim(1) * geometry.groups; }
  std::size_t out_channels() const { return kernel.dim(0); }
  void collect(std::vector<Tensor>& out) const;
  void zero();
};

Tensor conv2d(const Tensor& x, const ConvLayer& layer);

// Multi-head attention with separately projected queries and keys/values.
// Without a query projection the query tokens are used as-is (they must
// already be `width` wide); down-sampling modules rely on this.
struct AttentionLayer {
  std::optional<Linear> query;  // [width x width]
  Linear key;                   // [kv_width x width]
  Linear value;                 // [kv_width x width]
  Linear out;                   // [width x width]
  std::size_t num_heads = 1;

  static AttentionLayer init(Rng& rng, std::size_t kv_width, std::size_t width, bool with_query = true);
  std::size_t width() const { return out.out_features(); }
  std::size_t head_dim() const { return width() / num_heads; }
  void collect(std::vector<Tensor>& out) const;
};

// q_tokens [b x Nq x d], kv_tokens [b x Nkv x d_kv] -> [b x Nq x d].
Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionLayer& layer);
// Post-softmax weights [b*heads x Nq x Nkv] of the same computation.
Tensor attention_weights(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionLayer& layer);

// Windowed self-attention over a token grid. The window is clamped to the
// grid per axis; leftover rows/columns are zero-padded at the bottom/right and
// cropped from the result.
Tensor local_window_attention(const Tensor& x, const AttentionLayer& layer, std::size_t window);
// Same on tokens [b x h*w x c] laid out row-major over the grid.
Tensor local_window_attention_tokens(const Tensor& tokens, std::size_t h, std::size_t w,
                                     const AttentionLayer& layer, std::size_t window);

// [b x c x h x w] <-> [b x h*w x c]
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w);

enum class NormKind { layer_norm, batch_norm };

struct LayerNorm {
  Tensor gamma, beta;
  static LayerNorm init(std::size_t width);
  void collect(std::vector<Tensor>& out) const;
};

struct BatchNorm {
  Tensor gamma, beta;
  BatchNormState state;
  static BatchNorm init(std::size_t channels);
  void collect(std::vector<Tensor>& out) const;
};

Tensor normalize(const Tensor& x, const LayerNorm& norm);
Tensor normalize(const Tensor& x, BatchNorm& norm, bool training);

}  // namespace hnas
