#include "hnas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hnas/errors.hpp"
#include "hnas/op_counter.hpp"

namespace hnas {

namespace detail {
bool numeric_checks_enabled();
}

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor finish(const char* op, Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
              BackwardFn fn) {
  if (detail::numeric_checks_enabled()) {
    for (double v : data) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

// Parent node that wants a gradient, or nullptr.
Node* wants(const Tensor& t) { return t.requires_grad() ? t.node().get() : nullptr; }

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined input tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  require_defined(a, op);
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  Node* pa = wants(a);
  return finish(op, a.shape(), std::move(out), {a}, [pa, deriv](Node& self) {
    if (!pa) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(pa->data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool broadcast = sa != sb;
  if (broadcast) {
    bool trailing = sb.size() <= sa.size() && !sb.empty() &&
                    std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()));
    if (!trailing) {
      throw ShapeError("add: shape " + shape_str(sb) + " is neither equal to nor a trailing suffix of " +
                       shape_str(sa));
    }
  }
  auto x = a.data();
  auto y = b.data();
  const std::size_t inner = y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % inner];
  Node* pa = wants(a);
  Node* pb = wants(b);
  return finish("add", sa, std::move(out), {a, b}, [pa, pb, inner](Node& self) {
    if (pa) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape(a, b, "sub");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  Node* pa = wants(a);
  Node* pb = wants(b);
  return finish("sub", a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Node* pa = wants(a);
  Node* pb = wants(b);
  Node* ra = a.node().get();
  Node* rb = b.node().get();
  return finish("mul", a.shape(), std::move(out), {a, b}, [pa, pb, ra, rb](Node& self) {
    if (pa) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * rb->data[i];
    }
    if (pb) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ra->data[i];
    }
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_defined(a, "minimum");
  require_defined(b, "minimum");
  require_same_shape(a, b, "minimum");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(x[i], y[i]);
  Node* pa = wants(a);
  Node* pb = wants(b);
  Node* ra = a.node().get();
  Node* rb = b.node().get();
  return finish("minimum", a.shape(), std::move(out), {a, b}, [pa, pb, ra, rb](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool first = ra->data[i] <= rb->data[i];
      if (first && pa) pa->grad_buffer()[i] += self.grad[i];
      if (!first && pb) pb->grad_buffer()[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
  return unary("silu", a, [](double v) { return v / (1.0 + std::exp(-v)); },
               [](double v, double) {
                 const double s = 1.0 / (1.0 + std::exp(-v));
                 return s * (1.0 + v * (1.0 - s));
               });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary("gelu", a, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
               [](double v, double) {
                 return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
               });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  auto x = a.data();
  double total = 0.0;
  for (double v : x) total += v;
  Node* pa = wants(a);
  return finish("sum", {}, {total}, {a}, [pa](Node& self) {
    if (!pa) return;
    for (auto& g : pa->grad_buffer()) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_last(const Tensor& a) {
  require_defined(a, "sum_last");
  if (a.rank() == 0) throw ShapeError("sum_last on a scalar");
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.numel() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  auto x = a.data();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) out[r] += x[r * k + j];
  }
  Node* pa = wants(a);
  return finish("sum_last", std::move(out_shape), std::move(out), {a}, [pa, k, rows](Node& self) {
    if (!pa) return;
    auto& g = pa->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += self.grad[r];
    }
  });
}

Tensor spatial_mean(const Tensor& x) {
  require_defined(x, "spatial_mean");
  if (x.rank() != 4) throw ShapeError("spatial_mean expects [b x c x h x w], got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t area = x.dim(2) * x.dim(3);
  auto in = x.data();
  std::vector<double> out(planes, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
    out[p] = acc / static_cast<double>(area);
  }
  Node* px = wants(x);
  return finish("spatial_mean", {x.dim(0), x.dim(1)}, std::move(out), {x}, [px, planes, area](Node& self) {
    if (!px) return;
    auto& g = px->grad_buffer();
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < area; ++i) g[p * area + i] += self.grad[p] * inv;
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  record_macs(m * n * k);
  Node* pa = wants(a);
  Node* pb = wants(b);
  Node* ra = a.node().get();
  Node* rb = b.node().get();
  return finish("matmul", {m, n}, std::move(out), {a, b}, [=](Node& self) {
    if (pa) gemm_nt(m, k, n, self.grad.data(), rb->data.data(), pa->grad_buffer().data());
    if (pb) gemm_tn(k, n, m, ra->data.data(), self.grad.data(), pb->grad_buffer().data());
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw ShapeError("bmm: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()) +
                     (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (transpose_b) {
      gemm_nt(m, n, k, ad + i * m * k, bd + i * n * k, out.data() + i * m * n);
    } else {
      gemm_nn(m, n, k, ad + i * m * k, bd + i * k * n, out.data() + i * m * n);
    }
  }
  record_macs(batch * m * n * k);
  Node* pa = wants(a);
  Node* pb = wants(b);
  Node* ra = a.node().get();
  Node* rb = b.node().get();
  return finish("bmm", {batch, m, n}, std::move(out), {a, b}, [=](Node& self) {
    for (std::size_t i = 0; i < batch; ++i) {
      const double* g = self.grad.data() + i * m * n;
      const double* av = ra->data.data() + i * m * k;
      const double* bv = rb->data.data() + i * k * n;
      if (transpose_b) {
        // out = A B^T: dA = G B, dB = G^T A
        if (pa) gemm_nn(m, k, n, g, bv, pa->grad_buffer().data() + i * m * k);
        if (pb) gemm_tn(n, k, m, g, av, pb->grad_buffer().data() + i * n * k);
      } else {
        if (pa) gemm_nt(m, k, n, g, bv, pa->grad_buffer().data() + i * m * k);
        if (pb) gemm_tn(k, n, m, av, g, pb->grad_buffer().data() + i * k * n);
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t din = weight.dim(0), dout = weight.dim(1);
  if (bias.defined() && bias.shape() != Shape{dout}) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match output width " +
                     std::to_string(dout));
  }
  const std::size_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  std::vector<double> out(rows * dout, 0.0);
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * dout);
  }
  gemm_nn(rows, dout, din, x.data().data(), weight.data().data(), out.data());
  record_macs(rows * din * dout);
  Node* px = wants(x);
  Node* pw = wants(weight);
  Node* pb = bias.defined() ? wants(bias) : nullptr;
  Node* rx = x.node().get();
  Node* rw = weight.node().get();
  std::initializer_list<Tensor> inputs = {x, weight};
  auto fn = [=](Node& self) {
    if (px) gemm_nt(rows, din, dout, self.grad.data(), rw->data.data(), px->grad_buffer().data());
    if (pw) gemm_tn(din, dout, rows, rx->data.data(), self.grad.data(), pw->grad_buffer().data());
    if (pb) {
      auto& g = pb->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < dout; ++j) g[j] += self.grad[r * dout + j];
      }
    }
  };
  if (bias.defined()) return finish("linear", std::move(out_shape), std::move(out), {x, weight, bias}, fn);
  return finish("linear", std::move(out_shape), std::move(out), inputs, fn);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  const auto& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto in = x.data();
  for (double v : in) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double peak = in[base];
      for (std::size_t j = 1; j < len; ++j) peak = std::max(peak, in[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        out[base + j * inner] = std::exp(in[base + j * inner] - peak);
        total += out[base + j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  Node* px = wants(x);
  return finish("softmax", s, std::move(out), {x}, [=](Node& self) {
    if (!px) return;
    auto& g = px->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * self.data[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t at = base + j * inner;
          g[at] += self.data[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax_last(const Tensor& x) {
  require_defined(x, "log_softmax");
  if (x.rank() == 0) throw ShapeError("log_softmax on a scalar");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * k;
    const double peak = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = row[j] - lse;
  }
  Node* px = wants(x);
  return finish("log_softmax", x.shape(), std::move(out), {x}, [=](Node& self) {
    if (!px) return;
    auto& g = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < k; ++j) gsum += self.grad[r * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        g[r * k + j] += self.grad[r * k + j] - std::exp(self.data[r * k + j]) * gsum;
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  for (auto l : labels) {
    if (l >= k) throw ShapeError("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  auto in = logits.data();
  std::vector<double> probs(in.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * k;
    const double peak = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[r]];
  }
  loss /= static_cast<double>(rows);
  Node* px = wants(logits);
  return finish("cross_entropy", {}, {loss}, {logits},
                [px, probs = std::move(probs), labels, rows, k](Node& self) {
                  if (!px) return;
                  auto& g = px->grad_buffer();
                  const double s = self.grad[0] / static_cast<double>(rows);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < k; ++j) {
                      g[r * k + j] += s * (probs[r * k + j] - (j == labels[r] ? 1.0 : 0.0));
                    }
                  }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  for (auto e : shape) {
    if (e == 0) throw ShapeError("reshape: zero extent in " + shape_str(shape));
  }
  auto in = a.data();
  Node* pa = wants(a);
  return finish("reshape", std::move(shape), std::vector<double>(in.begin(), in.end()), {a}, [pa](Node& self) {
    if (!pa) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor gather(const Tensor& a, std::vector<std::int64_t> index, Shape shape) {
  require_defined(a, "gather");
  if (shape_numel(shape) != index.size()) {
    throw ShapeError("gather: index map of " + std::to_string(index.size()) + " entries for shape " +
                     shape_str(shape));
  }
  auto in = a.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = index[i];
    if (src >= static_cast<std::int64_t>(in.size())) throw ShapeError("gather: index out of range");
    out[i] = src < 0 ? 0.0 : in[static_cast<std::size_t>(src)];
  }
  Node* pa = wants(a);
  return finish("gather", std::move(shape), std::move(out), {a}, [pa, index = std::move(index)](Node& self) {
    if (!pa) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= 0) g[static_cast<std::size_t>(index[i])] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  require_defined(a, "permute");
  const auto& s = a.shape();
  const std::size_t rank = s.size();
  std::vector<bool> used(rank, false);
  if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch for " + shape_str(s));
  for (auto p : perm) {
    if (p >= rank || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = s[perm[i]];
  const std::size_t n = a.numel();
  std::vector<std::int64_t> index(n);
  std::vector<std::size_t> coord(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += coord[i] * in_strides[perm[i]];
    index[flat] = static_cast<std::int64_t>(src);
    for (std::size_t i = rank; i-- > 0;) {
      if (++coord[i] < out_shape[i]) break;
      coord[i] = 0;
    }
  }
  return gather(a, std::move(index), std::move(out_shape));
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(a, "slice");
  const auto& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<std::int64_t> index;
  index.reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < length; ++j) {
      for (std::size_t i = 0; i < inner; ++i) {
        index.push_back(static_cast<std::int64_t>((o * s[axis] + start + j) * inner + i));
      }
    }
  }
  return gather(a, std::move(index), std::move(out_shape));
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_defined(table, "embedding");
  if (table.rank() != 2 || ids.empty()) throw ShapeError("embedding: table must be [V x E] with ids");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<std::int64_t> index;
  index.reserve(ids.size() * width);
  for (auto id : ids) {
    if (id >= vocab) throw ShapeError("embedding: id " + std::to_string(id) + " out of vocabulary");
    for (std::size_t j = 0; j < width; ++j) index.push_back(static_cast<std::int64_t>(id * width + j));
  }
  return gather(table, std::move(index), {ids.size(), width});
}

Tensor pick(const Tensor& a, const std::vector<std::size_t>& ids) {
  require_defined(a, "pick");
  if (a.rank() != 2 || a.dim(0) != ids.size()) throw ShapeError("pick: expects [n x k] and n ids");
  const std::size_t k = a.dim(1);
  std::vector<std::int64_t> index(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= k) throw ShapeError("pick: id out of range");
    index[i] = static_cast<std::int64_t>(i * k + ids[i]);
  }
  return gather(a, std::move(index), {ids.size()});
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: nothing to concatenate");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_last");
    if (p.rank() == 0 || Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
      throw ShapeError("concat_last: leading dims differ at " + shape_str(p.shape()));
    }
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::vector<Node*> nodes;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape().back();
    auto d = p.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(d.data() + r * w, w, out.data() + r * total + offset);
    offset += w;
    nodes.push_back(wants(p));
    widths.push_back(w);
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  auto node = finish("concat_last", std::move(out_shape), std::move(out), {}, nullptr);
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    if (needs) {
      auto& n = *node.node();
      n.requires_grad = true;
      for (const auto& p : parts) n.parents.push_back(p.node());
      n.backward_fn = [nodes, widths, rows, total](Node& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i]) {
            auto& g = nodes[i]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < widths[i]; ++j) g[r * widths[i] + j] += self.grad[r * total + off + j];
            }
          }
          off += widths[i];
        }
      };
    }
  }
  return node;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  if (x.rank() == 0) throw ShapeError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: affine params must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = x.numel() / d;
  auto in = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(in.size()), xhat(in.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  record_norm_ops(2 * in.size());
  Node* px = wants(x);
  Node* pg = wants(gamma);
  Node* pb = wants(beta);
  Node* rg = gamma.node().get();
  return finish("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                  const auto& gout = self.grad;
                  if (pg || pb) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < d; ++j) {
                        if (pg) pg->grad_buffer()[j] += gout[r * d + j] * xhat[r * d + j];
                        if (pb) pb->grad_buffer()[j] += gout[r * d + j];
                      }
                    }
                  }
                  if (!px) return;
                  auto& g = px->grad_buffer();
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dxh = gout[r * d + j] * rg->data[j];
                      m1 += dxh;
                      m2 += dxh * xhat[r * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dxh = gout[r * d + j] * rg->data[j];
                      g[r * d + j] += rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
                    }
                  }
                });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  require_defined(x, "batch_norm");
  if (x.rank() != 4) throw ShapeError("batch_norm expects [b x c x h x w], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1), area = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm: affine params must be [" + std::to_string(c) + "]");
  }
  if (state.running_mean.size() != c || state.running_var.size() != c) {
    throw ShapeError("batch_norm: running statistics sized for a different channel count");
  }
  const std::size_t count = b * area;
  auto in = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(in.size()), xhat(in.size()), rstd(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      mu = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t i = 0; i < area; ++i) mu += in[(n * c + ch) * area + i];
      }
      mu /= static_cast<double>(count);
      var = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t i = 0; i < area; ++i) {
          const double dv = in[(n * c + ch) * area + i] - mu;
          var += dv * dv;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    rstd[ch] = 1.0 / std::sqrt(var + state.eps);
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t at = (n * c + ch) * area + i;
        xhat[at] = (in[at] - mu) * rstd[ch];
        out[at] = xhat[at] * gv[ch] + bv[ch];
      }
    }
  }
  record_norm_ops(2 * in.size());
  Node* px = wants(x);
  Node* pg = wants(gamma);
  Node* pb = wants(beta);
  Node* rg = gamma.node().get();
  return finish("batch_norm", x.shape(), std::move(out), {x, gamma, beta},
                [=, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                  const auto& gout = self.grad;
                  for (std::size_t ch = 0; ch < c; ++ch) {
                    double sg = 0.0, sgx = 0.0;
                    for (std::size_t n = 0; n < b; ++n) {
                      for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t at = (n * c + ch) * area + i;
                        sg += gout[at];
                        sgx += gout[at] * xhat[at];
                      }
                    }
                    if (pg) pg->grad_buffer()[ch] += sgx;
                    if (pb) pb->grad_buffer()[ch] += sg;
                    if (!px) continue;
                    auto& g = px->grad_buffer();
                    const double scale_c = rg->data[ch] * rstd[ch];
                    const double inv = 1.0 / static_cast<double>(count);
                    for (std::size_t n = 0; n < b; ++n) {
                      for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t at = (n * c + ch) * area + i;
                        g[at] += training ? scale_c * (gout[at] - sg * inv - xhat[at] * sgx * inv)
                                          : scale_c * gout[at];
                      }
                    }
                  }
                });
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("convolution stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError("convolution kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

struct ConvDims {
  std::size_t batch, cin, h, w, cout, cin_g, cout_g, kh, kw, ho, wo, groups;
  Conv2dGeometry geo;
  std::size_t patch() const { return cin_g * kh * kw; }
  std::size_t plane() const { return ho * wo; }
};

// cols[(ci*kh + ky)*kw + kx][oy*wo + ox] for the channels of one group.
void im2col(const ConvDims& d, const double* x, std::size_t n, std::size_t g, double* cols) {
  for (std::size_t ci = 0; ci < d.cin_g; ++ci) {
    const double* plane = x + ((n * d.cin) + g * d.cin_g + ci) * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        double* row = cols + ((ci * d.kh + ky) * d.kw + kx) * d.plane();
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.geo.stride_h + ky) - static_cast<std::ptrdiff_t>(d.geo.pad_h);
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.geo.stride_w + kx) - static_cast<std::ptrdiff_t>(d.geo.pad_w);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(d.h) &&
                                ix < static_cast<std::ptrdiff_t>(d.w);
            row[oy * d.wo + ox] = inside ? plane[static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvDims& d, const double* cols, std::size_t n, std::size_t g, double* dx) {
  for (std::size_t ci = 0; ci < d.cin_g; ++ci) {
    double* plane = dx + ((n * d.cin) + g * d.cin_g + ci) * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const double* row = cols + ((ci * d.kh + ky) * d.kw + kx) * d.plane();
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * d.geo.stride_h + ky) - static_cast<std::ptrdiff_t>(d.geo.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * d.geo.stride_w + kx) - static_cast<std::ptrdiff_t>(d.geo.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            plane[static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix)] += row[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dGeometry& geo) {
  require_defined(x, "conv2d");
  require_defined(weight, "conv2d");
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d expects 4-d input and weight, got " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  ConvDims d{};
  d.geo = geo;
  d.groups = geo.groups;
  d.batch = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = weight.dim(0);
  d.cin_g = weight.dim(1);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  if (d.groups == 0 || d.cin % d.groups != 0 || d.cout % d.groups != 0 || d.cin / d.groups != d.cin_g) {
    throw ShapeError("conv2d: input channels " + std::to_string(d.cin) + " incompatible with weight " +
                     shape_str(weight.shape()) + " and groups " + std::to_string(d.groups));
  }
  if (bias.defined() && bias.shape() != Shape{d.cout}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(d.cout) + " outputs");
  }
  d.cout_g = d.cout / d.groups;
  d.ho = conv_out_extent(d.h, d.kh, geo.stride_h, geo.pad_h);
  d.wo = conv_out_extent(d.w, d.kw, geo.stride_w, geo.pad_w);

  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  std::vector<double> out(d.batch * d.cout * d.plane(), 0.0);
  std::vector<double> cols(d.patch() * d.plane());
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t g = 0; g < d.groups; ++g) {
      im2col(d, xd, n, g, cols.data());
      double* og = out.data() + (n * d.cout + g * d.cout_g) * d.plane();
      gemm_nn(d.cout_g, d.plane(), d.patch(), wd + g * d.cout_g * d.patch(), cols.data(), og);
    }
  }
  record_macs(d.batch * d.plane() * d.cout * d.patch());
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t n = 0; n < d.batch; ++n) {
      for (std::size_t co = 0; co < d.cout; ++co) {
        double* p = out.data() + (n * d.cout + co) * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) p[i] += bv[co];
      }
    }
  }

  Node* px = wants(x);
  Node* pw = wants(weight);
  Node* pb = bias.defined() ? wants(bias) : nullptr;
  Node* rx = x.node().get();
  Node* rw = weight.node().get();
  auto fn = [=](Node& self) {
    std::vector<double> cols_buf(d.patch() * d.plane());
    std::vector<double> dcols(d.patch() * d.plane());
    for (std::size_t n = 0; n < d.batch; ++n) {
      for (std::size_t g = 0; g < d.groups; ++g) {
        const double* gout = self.grad.data() + (n * d.cout + g * d.cout_g) * d.plane();
        if (pw) {
          im2col(d, rx->data.data(), n, g, cols_buf.data());
          gemm_nt(d.cout_g, d.patch(), d.plane(), gout, cols_buf.data(),
                  pw->grad_buffer().data() + g * d.cout_g * d.patch());
        }
        if (px) {
          std::fill(dcols.begin(), dcols.end(), 0.0);
          gemm_tn(d.patch(), d.plane(), d.cout_g, rw->data.data() + g * d.cout_g * d.patch(), gout, dcols.data());
          col2im(d, dcols.data(), n, g, px->grad_buffer().data());
        }
      }
    }
    if (pb) {
      auto& gb = pb->grad_buffer();
      for (std::size_t n = 0; n < d.batch; ++n) {
        for (std::size_t co = 0; co < d.cout; ++co) {
          const double* p = self.grad.data() + (n * d.cout + co) * d.plane();
          for (std::size_t i = 0; i < d.plane(); ++i) gb[co] += p[i];
        }
      }
    }
  };
  Shape out_shape{d.batch, d.cout, d.ho, d.wo};
  if (bias.defined()) return finish("conv2d", std::move(out_shape), std::move(out), {x, weight, bias}, fn);
  return finish("conv2d", std::move(out_shape), std::move(out), {x, weight}, fn);
}

}  // namespace hnas
