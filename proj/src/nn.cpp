#include "hnas/nn.hpp"

#include <cmath>

#include "hnas/errors.hpp"

namespace hnas {

namespace {

Tensor uniform_param(Rng& rng, Shape shape, double bound) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(shape), std::move(v));
}

void zero_param(Tensor& t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

}  // namespace

std::size_t heads_for_width(std::size_t d) { return d % 32 == 0 ? d / 32 : 1; }

Linear Linear::init(Rng& rng, std::size_t d_in, std::size_t d_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  Linear l;
  l.weight = uniform_param(rng, {d_in, d_out}, bound);
  l.bias = uniform_param(rng, {d_out}, bound);
  return l;
}

void Linear::collect(std::vector<Tensor>& out) const {
  out.push_back(weight);
  out.push_back(bias);
}

void Linear::zero() {
  zero_param(weight);
  zero_param(bias);
}

ConvLayer ConvLayer::init(Rng& rng, std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
                          const Conv2dGeometry& geometry) {
  if (geometry.groups == 0 || c_in % geometry.groups != 0 || c_out % geometry.groups != 0) {
    throw ShapeError("conv layer: channels " + std::to_string(c_in) + "->" + std::to_string(c_out) +
                     " not divisible by groups " + std::to_string(geometry.groups));
  }
  const std::size_t cin_g = c_in / geometry.groups;
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin_g * kh * kw));
  ConvLayer c;
  c.kernel = uniform_param(rng, {c_out, cin_g, kh, kw}, bound);
  c.bias = uniform_param(rng, {c_out}, bound);
  c.geometry = geometry;
  return c;
}

void ConvLayer::collect(std::vector<Tensor>& out) const {
  out.push_back(kernel);
  out.push_back(bias);
}

void ConvLayer::zero() {
  zero_param(kernel);
  zero_param(bias);
}

Tensor conv2d(const Tensor& x, const ConvLayer& layer) { return conv2d(x, layer.kernel, layer.bias, layer.geometry); }

AttentionLayer AttentionLayer::init(Rng& rng, std::size_t kv_width, std::size_t width, bool with_query) {
  AttentionLayer a;
  if (with_query) a.query = Linear::init(rng, width, width);
  a.key = Linear::init(rng, kv_width, width);
  a.value = Linear::init(rng, kv_width, width);
  a.out = Linear::init(rng, width, width);
  a.num_heads = heads_for_width(width);
  return a;
}

void AttentionLayer::collect(std::vector<Tensor>& out_params) const {
  if (query) query->collect(out_params);
  key.collect(out_params);
  value.collect(out_params);
  out.collect(out_params);
}

namespace {

// [b x N x d] -> [b*heads x N x d/heads]
Tensor split_heads(const Tensor& t, std::size_t heads) {
  const std::size_t b = t.dim(0), n = t.dim(1), d = t.dim(2);
  if (heads == 1) return t;
  return reshape(permute(reshape(t, {b, n, heads, d / heads}), {0, 2, 1, 3}), {b * heads, n, d / heads});
}

Tensor merge_heads(const Tensor& t, std::size_t batch, std::size_t heads) {
  const std::size_t n = t.dim(1), hd = t.dim(2);
  if (heads == 1) return t;
  return reshape(permute(reshape(t, {batch, heads, n, hd}), {0, 2, 1, 3}), {batch, n, heads * hd});
}

struct AttentionParts {
  Tensor weights;  // [b*heads x Nq x Nkv]
  Tensor values;   // [b*heads x Nkv x hd]
};

AttentionParts attend(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionLayer& layer) {
  if (q_tokens.rank() != 3 || kv_tokens.rank() != 3 || q_tokens.dim(0) != kv_tokens.dim(0)) {
    throw ShapeError("attention expects [b x N x d] queries and keys, got " + shape_str(q_tokens.shape()) +
                     " and " + shape_str(kv_tokens.shape()));
  }
  const std::size_t d = layer.width();
  const std::size_t q_width = layer.query ? layer.query->in_features() : d;
  if (q_tokens.dim(2) != q_width || kv_tokens.dim(2) != layer.key.in_features()) {
    throw ShapeError("attention: token widths " + shape_str(q_tokens.shape()) + " / " +
                     shape_str(kv_tokens.shape()) + " do not match layer width " + std::to_string(d));
  }
  if (d % layer.num_heads != 0) throw ShapeError("attention: width not divisible by head count");
  const std::size_t heads = layer.num_heads;
  Tensor q = layer.query ? (*layer.query)(q_tokens) : q_tokens;
  Tensor k = layer.key(kv_tokens);
  Tensor v = layer.value(kv_tokens);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / heads));
  Tensor scores = bmm(scale(split_heads(q, heads), inv_sqrt), split_heads(k, heads), /*transpose_b=*/true);
  return {softmax(scores, 2), split_heads(v, heads)};
}

}  // namespace

Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionLayer& layer) {
  auto parts = attend(q_tokens, kv_tokens, layer);
  Tensor mixed = bmm(parts.weights, parts.values);
  return layer.out(merge_heads(mixed, q_tokens.dim(0), layer.num_heads));
}

Tensor attention_weights(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionLayer& layer) {
  return attend(q_tokens, kv_tokens, layer).weights;
}

Tensor to_tokens(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("to_tokens expects [b x c x h x w], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  return permute(reshape(x, {b, c, n}), {0, 2, 1});
}

Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w) {
  if (tokens.rank() != 3 || tokens.dim(1) != h * w) {
    throw ShapeError("from_tokens: " + shape_str(tokens.shape()) + " is not a " + std::to_string(h) + "x" +
                     std::to_string(w) + " token grid");
  }
  const std::size_t b = tokens.dim(0), c = tokens.dim(2);
  return reshape(permute(tokens, {0, 2, 1}), {b, c, h, w});
}

Tensor local_window_attention_tokens(const Tensor& tokens, std::size_t h, std::size_t w,
                                     const AttentionLayer& layer, std::size_t window) {
  if (window == 0) throw ContractError("window extent must be positive");
  if (tokens.rank() != 3 || tokens.dim(1) != h * w) {
    throw ShapeError("local attention: " + shape_str(tokens.shape()) + " is not a " + std::to_string(h) + "x" +
                     std::to_string(w) + " token grid");
  }
  const std::size_t b = tokens.dim(0), c = tokens.dim(2);
  const std::size_t wh = std::min(window, h), ww = std::min(window, w);
  const std::size_t nwh = (h + wh - 1) / wh, nww = (w + ww - 1) / ww;
  const std::size_t per_window = wh * ww;
  const std::size_t windows = b * nwh * nww;

  std::vector<std::int64_t> to_windows(windows * per_window * c);
  std::vector<std::int64_t> back(b * h * w * c);
  std::size_t at = 0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t wy = 0; wy < nwh; ++wy) {
      for (std::size_t wx = 0; wx < nww; ++wx) {
        for (std::size_t ty = 0; ty < wh; ++ty) {
          for (std::size_t tx = 0; tx < ww; ++tx) {
            const std::size_t y = wy * wh + ty, xx = wx * ww + tx;
            const bool inside = y < h && xx < w;
            for (std::size_t ch = 0; ch < c; ++ch, ++at) {
              if (inside) {
                const std::size_t src = (n * h * w + y * w + xx) * c + ch;
                to_windows[at] = static_cast<std::int64_t>(src);
                back[src] = static_cast<std::int64_t>(at);
              } else {
                to_windows[at] = -1;
              }
            }
          }
        }
      }
    }
  }
  Tensor grouped = gather(tokens, std::move(to_windows), {windows, per_window, c});
  Tensor mixed = multi_head_attention(grouped, grouped, layer);
  return gather(mixed, std::move(back), {b, h * w, c});
}

Tensor local_window_attention(const Tensor& x, const AttentionLayer& layer, std::size_t window) {
  if (x.rank() != 4) throw ShapeError("local attention expects [b x c x h x w], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  return from_tokens(local_window_attention_tokens(to_tokens(x), h, w, layer, window), h, w);
}

LayerNorm LayerNorm::init(std::size_t width) { return {Tensor::parameter({width}, std::vector<double>(width, 1.0)),
                                                       Tensor::parameter({width}, std::vector<double>(width, 0.0))}; }

void LayerNorm::collect(std::vector<Tensor>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

BatchNorm BatchNorm::init(std::size_t channels) {
  BatchNorm bn;
  bn.gamma = Tensor::parameter({channels}, std::vector<double>(channels, 1.0));
  bn.beta = Tensor::parameter({channels}, std::vector<double>(channels, 0.0));
  bn.state.running_mean.assign(channels, 0.0);
  bn.state.running_var.assign(channels, 1.0);
  return bn;
}

void BatchNorm::collect(std::vector<Tensor>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

Tensor normalize(const Tensor& x, const LayerNorm& norm) { return layer_norm(x, norm.gamma, norm.beta); }

Tensor normalize(const Tensor& x, BatchNorm& norm, bool training) {
  return batch_norm(x, norm.gamma, norm.beta, norm.state, training);
}

}  // namespace hnas
