#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hnas {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded operation. Leaves carry no parents and no backward function.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches the node
  bool requires_grad = false;
  bool trainable = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node& self)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor of doubles. Values are immutable once built, except
// for trainable leaves whose storage an optimizer updates in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  // A leaf that records gradients and appears in GradientMap.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Only trainable leaves may be written; everything else is immutable.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool trainable() const;
  // Gradient from the last backward pass, empty when none was recorded.
  std::span<const double> grad() const;
  const char* op_name() const;

  // Identity of the underlying storage, stable across copies of the handle.
  const void* id() const { return node_.get(); }

  // Internal: used by the op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Gradients keyed by parameter identity; one entry per trainable leaf
// reachable from the loss.
class GradientMap {
 public:
  void insert(const Tensor& param, Tensor grad);
  bool contains(const Tensor& param) const;
  const Tensor& at(const Tensor& param) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const void*, Tensor> grads_;
};

// Reverse-mode differentiation of a scalar loss. Consumes the recorded tape:
// the graph links are released and a second call on the same loss throws.
GradientMap backward(const Tensor& loss);

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// While alive, every op output on this thread is checked for NaN/inf and a
// NumericError naming the op is thrown on the first offender.
class NumericCheckGuard {
 public:
  NumericCheckGuard();
  ~NumericCheckGuard();
  NumericCheckGuard(const NumericCheckGuard&) = delete;
  NumericCheckGuard& operator=(const NumericCheckGuard&) = delete;

 private:
  bool previous_;
};

// Max over all entries of |AD - central FD| / max(1, |central FD|).
// `f` must rebuild its graph from `params` on every call.
double check_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                       double eps = 1e-4);

}  // namespace hnas
