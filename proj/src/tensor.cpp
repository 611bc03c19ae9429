#include "rnc/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "rnc/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rnc {

namespace {
thread_local bool g_grad_mode = true;

// Activation buffers are large and short-lived; keep them on the heap instead
// of mapping and unmapping pages for every op.
#if defined(__GLIBC__)
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif
}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

const std::string& Tensor::op() const { return node_->op; }

bool Tensor::has_provenance() const { return static_cast<bool>(node_->backward); }

Tensor Tensor::detach() const { return from(shape(), node_->value); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_size(new_shape) != size()) {
    throw ShapeError("reshape: cannot view " + shape_str(shape()) + " as " + shape_str(new_shape));
  }
  auto out = make_result(std::move(new_shape), node_->value, "reshape", {*this});
  if (out.requires_grad()) {
    auto* self = out.node();
    auto* src = node_.get();
    out.set_backward([self, src] {
      if (!src->requires_grad) return;
      auto& g = src->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
    });
  }
  return out;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op,
                           std::vector<Tensor> parents) {
  Tensor out = from(std::move(shape), std::move(values));
  out.node_->op = std::move(op);
  if (!g_grad_mode) return out;
  bool needs = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
  }
  return out;
}

void Tensor::set_backward(std::function<void()> fn) { node_->backward = std::move(fn); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
  if (loss.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.has_provenance()) {
    throw UsageError("backward() on tensor '" + loss.op() +
                     "' without recorded provenance (no differentiable inputs)");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  seen.insert(loss.node_.get());
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

  auto& seed = loss.node_->grad_buffer();
  seed[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward();
  }
  // Intermediate grads are not needed after the sweep.
  for (auto* node : order) {
    if (node->backward) node->grad.clear();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }
bool grad_mode_enabled() { return g_grad_mode; }

Parameter& ParameterSet::add(std::string name, Tensor tensor, bool trainable) {
  if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(trainable);
  params_.push_back(Parameter{std::move(name), std::move(tensor), trainable, 1.0});
  return params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw UsageError("no parameter named '" + name + "'");
}

const Parameter& ParameterSet::get(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

void ParameterSet::remove(const std::string& name) {
  auto it = std::find_if(params_.begin(), params_.end(),
                         [&](const Parameter& p) { return p.name == name; });
  if (it == params_.end()) throw UsageError("no parameter named '" + name + "'");
  params_.erase(it);
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable) p.tensor.zero_grad();
  }
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& p : params_) {
    auto& q = out.add(p.name, p.tensor.detach(), p.trainable);
    q.lr_scale = p.lr_scale;
  }
  return out;
}

void ParameterSet::assign_values(const ParameterSet& other) {
  if (other.size() != size()) throw UsageError("assign_values: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i];
    const auto& src = other.params_[i];
    if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
      throw UsageError("assign_values: mismatch at '" + dst.name + "'");
    }
    auto d = dst.tensor.mutable_values();
    auto s = src.tensor.values();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

}  // namespace rnc
