#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rnc/tensor.hpp"

namespace rnc {

enum class Mode { train, eval };

using Rng = std::mt19937_64;

/// Per-channel batch normalization parameters and running statistics.
/// Running statistics are non-trainable tensors so they checkpoint with the model.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormState make(std::size_t channels, double momentum = 0.9, double epsilon = 1e-5);
};

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
/// a[m,n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor hadamard(const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x[N,C,H,W] * w[O,C,kh,kw] (+ bias[O] if defined), zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad);
/// Non-overlapping or strided average pooling over [N,C,H,W], no padding.
Tensor avg_pool2d(const Tensor& x, std::size_t window, std::size_t stride);
/// Mean over the spatial axes: [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

/// Sum over rows of weight[n] * -log softmax(logits[n])[target[n]].
/// Empty `weights` means all ones.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             std::span<const double> weights = {});

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Inverted dropout: in train mode zeroes entries with probability `rate`
/// and scales survivors by 1/(1-rate). Identity in eval mode.
Tensor dropout(const Tensor& x, double rate, Rng& rng, Mode mode);

/// Normalizes channel axis 1 of a rank-2 [N,C] or rank-4 [N,C,H,W] tensor.
/// Train mode uses batch statistics and updates the running statistics.
Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode);

/// Rows of table[V,D] selected by indices -> [len(indices), D].
Tensor gather_rows(const Tensor& table, std::span<const int> indices);

}  // namespace ops

/// Row-wise softmax of a plain vector (no autograd).
std::vector<double> softmax(std::span<const double> logits);

/// Records the smallest |input| seen by relu on this thread while alive.
/// Finite-difference checks use it to avoid sampling points next to a kink.
class ReluMarginProbe {
 public:
  ReluMarginProbe();
  ~ReluMarginProbe();
  ReluMarginProbe(const ReluMarginProbe&) = delete;
  ReluMarginProbe& operator=(const ReluMarginProbe&) = delete;
  double min_abs_input() const { return min_abs_; }

 private:
  double min_abs_;
  ReluMarginProbe* previous_;
  friend Tensor ops::relu(const Tensor& x);
};

}  // namespace rnc
