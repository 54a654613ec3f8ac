#pragma once

#include <cstdint>
#include <vector>

#include "hnas/tensor.hpp"

namespace hnas {

// Elementwise. Shapes must match, except that `add` accepts a `b` whose shape
// equals the trailing dimensions of `a` (bias broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_last(const Tensor& a);
// [b x c x h x w] -> [b x c]
Tensor spatial_mean(const Tensor& x);

// [m x k] x [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [B x m x k] x [B x k x n] -> [B x m x n]; with transpose_b, b is [B x n x k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x: [..., d_in], weight: [d_in x d_out], bias: [d_out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax_last(const Tensor& x);
// Mean negative log-likelihood of `labels` under row-wise softmax of logits [b x k].
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// Copy with a new shape of equal element count.
Tensor reshape(const Tensor& a, Shape shape);
// out[i] = a[index[i]], or 0 where index[i] < 0. The workhorse behind
// permutes, slices, padding, cropping and window partitioning.
Tensor gather(const Tensor& a, std::vector<std::int64_t> index, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
// Rows of table [V x E] selected by ids -> [ids.size() x E].
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);
// out[i] = a[i, ids[i]] for a [n x k].
Tensor pick(const Tensor& a, const std::vector<std::size_t>& ids);
// Concatenates along the last axis; leading dims must match.
Tensor concat_last(const std::vector<Tensor>& parts);

// Normalizes over the last axis, then applies gamma/beta of that width.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
// x: [b x c x h x w]. Training mode normalizes with batch statistics and
// updates `state`; inference uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

struct Conv2dGeometry {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t groups = 1;
};
// x: [b x c_in x h x w], weight: [c_out x c_in/groups x kh x kw], bias: [c_out] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dGeometry& geo);
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

}  // namespace hnas
