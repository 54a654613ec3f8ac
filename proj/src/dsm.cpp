#include "hnas/dsm.hpp"

#include <string>

#include "hnas/errors.hpp"

namespace hnas {

std::string_view to_string(DsmKind kind) {
  switch (kind) {
    case DsmKind::L_DSM: return "L-DSM";
    case DsmKind::LG_DSM: return "LG-DSM";
    case DsmKind::G_DSM: return "G-DSM";
  }
  return "?";
}

DsmKind parse_dsm_kind(std::string_view name) {
  for (auto kind : kDsmKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw ContractError("unknown down-sampling kind '" + std::string(name) + "'");
}

Grid downsampled_grid(Grid in) { return {(in.h + 1) / 2, (in.w + 1) / 2}; }

DsmModule DsmModule::build(DsmKind kind, std::size_t c_in, std::size_t c_out, const DsmConfig& config, Rng& rng) {
  if (c_in == 0 || c_out == 0) throw ContractError("down-sampling module needs at least one channel");
  DsmModule m;
  m.kind_ = kind;
  m.c_in_ = c_in;
  m.c_out_ = c_out;
  m.mode_ = config.global_query;
  switch (kind) {
    case DsmKind::L_DSM:
    case DsmKind::LG_DSM:
      m.convs_.push_back(ConvLayer::init(rng, c_in, c_out, 3, 3, {2, 2, 1, 1, 1}));
      break;
    case DsmKind::G_DSM:
      if (m.mode_ == GlobalQueryMode::two_stride2) {
        m.convs_.push_back(ConvLayer::init(rng, c_in, c_out, 1, 3, {1, 2, 0, 1, 1}));
        m.convs_.push_back(ConvLayer::init(rng, c_out, c_out, 1, 3, {1, 2, 0, 1, 1}));
      } else {
        m.convs_.push_back(ConvLayer::init(rng, c_in, c_out, 1, 3, {1, 4, 0, 1, 1}));
      }
      break;
  }
  if (kind != DsmKind::L_DSM) {
    m.kv_norm_ = LayerNorm::init(c_in);
    m.attention_ = AttentionLayer::init(rng, c_in, c_out, /*with_query=*/false);
  }
  return m;
}

Tensor DsmModule::global_queries(const Tensor& x) const {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t hp = 2 * ((h + 1) / 2), wp = 2 * ((w + 1) / 2);
  // [b x c x h x w] -> [b x c x 1 x hp*wp], zero rows/columns at the bottom/right.
  std::vector<std::int64_t> index(b * c * hp * wp);
  std::size_t at = 0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < hp; ++y) {
        for (std::size_t xx = 0; xx < wp; ++xx, ++at) {
          index[at] = (y < h && xx < w) ? static_cast<std::int64_t>(((n * c + ch) * h + y) * w + xx) : -1;
        }
      }
    }
  }
  Tensor seq = gather(x, std::move(index), {b, c, 1, hp * wp});
  for (const auto& conv : convs_) seq = conv2d(seq, conv);
  return permute(reshape(seq, {b, c_out_, seq.dim(3)}), {0, 2, 1});
}

Tensor DsmModule::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != c_in_) {
    throw ShapeError(std::string(to_string(kind_)) + " expects [b x " + std::to_string(c_in_) +
                     " x h x w], got " + shape_str(x.shape()));
  }
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) {
    throw ContractError(std::string(to_string(kind_)) + " needs a grid of at least 2x2, got " + std::to_string(h) +
                        "x" + std::to_string(w));
  }
  if (kind_ == DsmKind::L_DSM) return conv2d(x, convs_.front());

  const Grid out = downsampled_grid({h, w});
  Tensor queries = kind_ == DsmKind::LG_DSM ? to_tokens(conv2d(x, convs_.front())) : global_queries(x);
  Tensor kv = normalize(to_tokens(x), *kv_norm_);
  return from_tokens(multi_head_attention(queries, kv, *attention_), out.h, out.w);
}

std::vector<Tensor> DsmModule::parameters() const {
  std::vector<Tensor> out;
  for (const auto& conv : convs_) conv.collect(out);
  if (kv_norm_) kv_norm_->collect(out);
  if (attention_) attention_->collect(out);
  return out;
}

std::size_t DsmModule::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

}  // namespace hnas
