#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rnc {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void()> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot and the
/// provenance needed for reverse-mode differentiation. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  const std::string& op() const;
  bool has_provenance() const;

  /// New leaf holding a copy of the values, no provenance.
  Tensor detach() const;
  /// Same values under a new shape of equal size; gradients flow through.
  Tensor reshape(Shape shape) const;

  /// Constructs an op result. Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                            std::vector<Tensor> parents);
  void set_backward(std::function<void()> fn);
  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend void backward(const Tensor& loss);
};

/// Populates grads of every leaf reachable from `loss` that requires grad.
/// Gradients accumulate; callers zero them between steps.
void backward(const Tensor& loss);

/// While alive on a thread, ops skip recording provenance.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  double lr_scale = 1.0;
};

/// Ordered, name-unique collection of parameters.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor tensor, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  void remove(const std::string& name);

  std::deque<Parameter>& items() { return params_; }
  const std::deque<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  /// Deep copy: fresh tensors with the same values.
  ParameterSet clone() const;
  /// Copies values from `other` (names and shapes must match).
  void assign_values(const ParameterSet& other);

 private:
  std::deque<Parameter> params_;
};

}  // namespace rnc
