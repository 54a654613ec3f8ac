#include "hnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "hnas/errors.hpp"
#include "hnas/op_counter.hpp"

namespace hnas {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_numeric_checks = false;
thread_local OpLedger* g_ledger = nullptr;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return Tensor(make_leaf({}, {value})); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  auto node = make_leaf(std::move(shape), std::move(values));
  node->requires_grad = true;
  node->trainable = true;
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  if (!node_->parents.empty() || node_->backward_fn || !node_->trainable) {
    throw ContractError("only trainable leaves can be modified in place");
  }
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::trainable() const { return node_ && node_->trainable; }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

void GradientMap::insert(const Tensor& param, Tensor grad) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("gradient shape " + shape_str(grad.shape()) + " differs from parameter " +
                     shape_str(param.shape()));
  }
  grads_.insert_or_assign(param.id(), std::move(grad));
}

bool GradientMap::contains(const Tensor& param) const { return grads_.count(param.id()) != 0; }

const Tensor& GradientMap::at(const Tensor& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) throw ContractError("no gradient recorded for parameter");
  return it->second;
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (root->consumed) throw ContractError("tape already consumed by a previous backward");
  if (!root->requires_grad) throw ContractError("loss is not connected to any trainable parameter");

  // Iterative post-order DFS; reversed it is a valid reverse-mode schedule.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) node->grad.clear();
  root->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    node->grad_buffer();
    if (node->backward_fn) node->backward_fn(*node);
  }

  GradientMap grads;
  for (auto* node : order) {
    if (node->trainable) {
      std::shared_ptr<detail::Node> alias(std::shared_ptr<detail::Node>{}, node);
      Tensor param(alias);
      grads.insert(param, Tensor::from(node->shape, node->grad));
      node->grad.clear();
    }
  }
  for (auto* node : order) {
    if (node->trainable) continue;
    node->parents.clear();
    node->backward_fn = nullptr;
    node->consumed = true;
  }
  return grads;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

NumericCheckGuard::NumericCheckGuard() : previous_(g_numeric_checks) { g_numeric_checks = true; }
NumericCheckGuard::~NumericCheckGuard() { g_numeric_checks = previous_; }

namespace detail {

bool numeric_checks_enabled() { return g_numeric_checks; }

}  // namespace detail

double check_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double eps) {
  if (!(eps > 0.0)) throw ContractError("check_gradients needs eps > 0");
  NumericCheckGuard checks;
  GradientMap grads = backward(f());

  auto evaluate = [&] {
    NoGradGuard no_grad;
    return f().item();
  };

  double worst = 0.0;
  for (auto param : params) {
    auto values = param.mutable_data();
    const bool has_grad = grads.contains(param);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = has_grad ? grads.at(param).data()[i] : 0.0;
      worst = std::max(worst, std::abs(ad - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

// OpLedger

OpLedger::OpLedger() : previous_(g_ledger) { g_ledger = this; }
OpLedger::~OpLedger() { g_ledger = previous_; }

OpLedger* OpLedger::active() { return g_ledger; }

OpTally& OpLedger::current() {
  auto [it, inserted] = tallies_.try_emplace(label_);
  if (inserted) order_.push_back(label_);
  return it->second;
}

void OpLedger::add_macs(std::uint64_t n) { current().macs += n; }
void OpLedger::add_norm_ops(std::uint64_t n) { current().norm_ops += n; }

OpLedger::Label::Label(std::string name) : active_(g_ledger != nullptr) {
  if (active_) {
    previous_ = std::exchange(g_ledger->label_, std::move(name));
  }
}

OpLedger::Label::~Label() {
  if (active_ && g_ledger) g_ledger->label_ = std::move(previous_);
}

}  // namespace hnas
