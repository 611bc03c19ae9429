#include "rnc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rnc/errors.hpp"

namespace rnc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local ReluMarginProbe* g_relu_probe = nullptr;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": produced non-finite values");
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

// Accumulates into a parent's grad buffer when the parent wants one.
template <typename F>
void accumulate(detail::Node* parent, F&& fn) {
  if (parent->requires_grad) fn(parent->grad_buffer());
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  check_finite(out, name);
  auto result = Tensor::make_result(x.shape(), std::move(out), name, {x});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = x.node();
    result.set_backward([self, src, deriv] {
      accumulate(src, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self->grad[i] * deriv(src->value[i], self->value[i]);
        }
      });
    });
  }
  return result;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

BatchNormState BatchNormState::make(std::size_t channels, double momentum, double epsilon) {
  BatchNormState s;
  s.gamma = Tensor::filled({channels}, 1.0, true);
  s.beta = Tensor::zeros({channels}, true);
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::filled({channels}, 1.0);
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

ReluMarginProbe::ReluMarginProbe()
    : min_abs_(std::numeric_limits<double>::infinity()), previous_(g_relu_probe) {
  g_relu_probe = this;
}

ReluMarginProbe::~ReluMarginProbe() { g_relu_probe = previous_; }

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), k, n);
  check_finite(out, "matmul");
  auto result = Tensor::make_result({m, n}, std::move(out), "matmul", {a, b});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* pa = a.node();
    auto* pb = b.node();
    result.set_backward([self, pa, pb, m, k, n] {
      ConstMapMat g(self->grad.data(), m, n);
      accumulate(pa, [&](std::vector<double>& ga) {
        MapMat(ga.data(), m, k).noalias() += g * ConstMapMat(pb->value.data(), k, n).transpose();
      });
      accumulate(pb, [&](std::vector<double>& gb) {
        MapMat(gb.data(), k, n).noalias() += ConstMapMat(pa->value.data(), m, k).transpose() * g;
      });
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto va = a.values(), vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  check_finite(out, "add");
  auto result = Tensor::make_result(a.shape(), std::move(out), "add", {a, b});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* pa = a.node();
    auto* pb = b.node();
    result.set_backward([self, pa, pb] {
      for (auto* p : {pa, pb}) {
        accumulate(p, [&](std::vector<double>& g) {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
        });
      }
    });
  }
  return result;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_bias", "input");
  require_rank(bias, 1, "add_bias", "bias");
  const auto m = a.dim(0), n = a.dim(1);
  if (bias.dim(0) != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
                     shape_str(a.shape()));
  }
  auto va = a.values(), vb = bias.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = va[i * n + j] + vb[j];
  }
  check_finite(out, "add_bias");
  auto result = Tensor::make_result(a.shape(), std::move(out), "add_bias", {a, bias});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* pa = a.node();
    auto* pb = bias.node();
    result.set_backward([self, pa, pb, m, n] {
      accumulate(pa, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
      });
      accumulate(pb, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) g[j] += self->grad[i * n + j];
        }
      });
    });
  }
  return result;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  auto va = a.values(), vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  check_finite(out, "hadamard");
  auto result = Tensor::make_result(a.shape(), std::move(out), "hadamard", {a, b});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* pa = a.node();
    auto* pb = b.node();
    result.set_backward([self, pa, pb] {
      accumulate(pa, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * pb->value[i];
      });
      accumulate(pb, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * pa->value[i];
      });
    });
  }
  return result;
}

Tensor affine(const Tensor& x, double scale, double shift) {
  return unary(
      x, "affine", [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  if (g_relu_probe != nullptr) {
    for (double v : x.values()) g_relu_probe->min_abs_ = std::min(g_relu_probe->min_abs_, std::abs(v));
  }
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  std::vector<double> out{s};
  check_finite(out, "sum");
  auto result = Tensor::make_result({1}, std::move(out), "sum", {x});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = x.node();
    result.set_backward([self, src] {
      accumulate(src, [&](std::vector<double>& g) {
        for (auto& v : g) v += self->grad[0];
      });
    });
  }
  return result;
}

Tensor mean(const Tensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.size()), 0.0); }

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::size_t hw = g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[oy * g.wo + ox] = inside ? img[(ci * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* img) {
  const std::size_t hw = g.pixels();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ci * g.kh + ki) * g.kw + kj) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(ci * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (w.dim(1) != g.c) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " expects " +
                     std::to_string(w.dim(1)) + " input channels, input " + shape_str(x.shape()) +
                     " has " + std::to_string(g.c));
  }
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(g.o) + " output channels");
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;
  const std::size_t in_stride = g.c * g.h * g.w;
  const std::size_t col_stride = g.patch() * g.pixels();
  const std::size_t out_stride = g.o * g.pixels();

  std::vector<double> cols;
  if (!pointwise) cols.resize(g.n * col_stride);
  std::vector<double> out(g.n * out_stride);
  ConstMapMat wmat(w.values().data(), g.o, g.patch());
  for (std::size_t i = 0; i < g.n; ++i) {
    const double* col = x.values().data() + i * in_stride;
    if (!pointwise) {
      im2col(col, g, cols.data() + i * col_stride);
      col = cols.data() + i * col_stride;
    }
    MapMat o(out.data() + i * out_stride, g.o, g.pixels());
    o.noalias() = wmat * ConstMapMat(col, g.patch(), g.pixels());
    if (has_bias) {
      for (std::size_t oc = 0; oc < g.o; ++oc) o.row(oc).array() += bias.values()[oc];
    }
  }
  check_finite(out, "conv2d");

  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  auto result =
      Tensor::make_result({g.n, g.o, g.ho, g.wo}, std::move(out), "conv2d", std::move(parents));
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* px = x.node();
    auto* pw = w.node();
    auto* pb = has_bias ? bias.node() : nullptr;
    result.set_backward([self, px, pw, pb, g, pointwise, cols = std::move(cols)] {
      const std::size_t in_stride = g.c * g.h * g.w;
      const std::size_t col_stride = g.patch() * g.pixels();
      const std::size_t out_stride = g.o * g.pixels();
      std::vector<double> dcols(pointwise ? 0 : col_stride);
      for (std::size_t i = 0; i < g.n; ++i) {
        ConstMapMat dout(self->grad.data() + i * out_stride, g.o, g.pixels());
        const double* col = pointwise ? px->value.data() + i * in_stride : cols.data() + i * col_stride;
        accumulate(pw, [&](std::vector<double>& gw) {
          MapMat(gw.data(), g.o, g.patch()).noalias() +=
              dout * ConstMapMat(col, g.patch(), g.pixels()).transpose();
        });
        if (pb != nullptr) {
          accumulate(pb, [&](std::vector<double>& gb) {
            for (std::size_t oc = 0; oc < g.o; ++oc) gb[oc] += dout.row(oc).sum();
          });
        }
        accumulate(px, [&](std::vector<double>& gx) {
          ConstMapMat wmat(pw->value.data(), g.o, g.patch());
          if (pointwise) {
            MapMat(gx.data() + i * in_stride, g.c, g.pixels()).noalias() += wmat.transpose() * dout;
          } else {
            MapMat(dcols.data(), g.patch(), g.pixels()).noalias() = wmat.transpose() * dout;
            col2im(dcols.data(), g, gx.data() + i * in_stride);
          }
        });
      }
    });
  }
  return result;
}

Tensor avg_pool2d(const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank(x, 4, "avg_pool2d", "input");
  if (window == 0 || stride == 0) throw ShapeError("avg_pool2d: window and stride must be positive");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < window || w < window) {
    throw ShapeError("avg_pool2d: window " + std::to_string(window) + " larger than input " +
                     shape_str(x.shape()));
  }
  const auto ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  const double inv = 1.0 / static_cast<double>(window * window);
  auto in = x.values();
  std::vector<double> out(n * c * ho * wo, 0.0);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            s += src[(oy * stride + ky) * w + ox * stride + kx];
          }
        }
        dst[oy * wo + ox] = s * inv;
      }
    }
  }
  check_finite(out, "avg_pool2d");
  auto result = Tensor::make_result({n, c, ho, wo}, std::move(out), "avg_pool2d", {x});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = x.node();
    result.set_backward([self, src, n, c, h, w, ho, wo, window, stride, inv] {
      accumulate(src, [&](std::vector<double>& g) {
        for (std::size_t p = 0; p < n * c; ++p) {
          double* dst = g.data() + p * h * w;
          const double* go = self->grad.data() + p * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double v = go[oy * wo + ox] * inv;
              for (std::size_t ky = 0; ky < window; ++ky) {
                for (std::size_t kx = 0; kx < window; ++kx) {
                  dst[(oy * stride + ky) * w + ox * stride + kx] += v;
                }
              }
            }
          }
        }
      });
    });
  }
  return result;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(hw);
  auto in = x.values();
  std::vector<double> out(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += in[p * hw + i];
    out[p] = s * inv;
  }
  check_finite(out, "global_avg_pool");
  auto result = Tensor::make_result({n, c}, std::move(out), "global_avg_pool", {x});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = x.node();
    result.set_backward([self, src, n, c, hw, inv] {
      accumulate(src, [&](std::vector<double>& g) {
        for (std::size_t p = 0; p < n * c; ++p) {
          const double v = self->grad[p] * inv;
          for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += v;
        }
      });
    });
  }
  return result;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             std::span<const double> weights) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + shape_str(logits.shape()));
  }
  if (!weights.empty() && weights.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(weights.size()) +
                     " weights for logits " + shape_str(logits.shape()));
  }
  auto in = logits.values();
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ShapeError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0," +
                       std::to_string(k) + ")");
    }
    const double* row = in.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - log_z);
    const double wi = weights.empty() ? 1.0 : weights[i];
    loss += wi * (log_z - row[t]);
  }
  std::vector<double> out{loss};
  check_finite(out, "softmax_cross_entropy");
  auto result = Tensor::make_result({1}, std::move(out), "softmax_cross_entropy", {logits});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = logits.node();
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<double> wts(weights.begin(), weights.end());
    result.set_backward([self, src, n, k, probs = std::move(probs), tgt = std::move(tgt),
                         wts = std::move(wts)] {
      accumulate(src, [&](std::vector<double>& g) {
        const double go = self->grad[0];
        for (std::size_t i = 0; i < n; ++i) {
          const double wi = wts.empty() ? 1.0 : wts[i];
          if (wi == 0.0) continue;
          for (std::size_t j = 0; j < k; ++j) {
            const double onehot = static_cast<int>(j) == tgt[i] ? 1.0 : 0.0;
            g[i * k + j] += go * wi * (probs[i * k + j] - onehot);
          }
        }
      });
    });
  }
  return result;
}

namespace {

// outer x axis x inner decomposition for axis-wise copies.
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const auto total = split_at(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto s = split_at(p.shape(), axis);
    auto in = p.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(in.data() + o * s.axis * s.inner, s.axis * s.inner,
                  out.data() + (o * total.axis + offset) * total.inner);
    }
    offset += s.axis;
  }
  auto result = Tensor::make_result(out_shape, std::move(out), "concat", parts);
  if (result.requires_grad()) {
    auto* self = result.node();
    std::vector<detail::Node*> srcs;
    for (const auto& p : parts) srcs.push_back(p.node());
    result.set_backward([self, srcs, axis, total] {
      std::size_t offset = 0;
      for (auto* src : srcs) {
        const auto s = split_at(src->shape, axis);
        accumulate(src, [&](std::vector<double>& g) {
          for (std::size_t o = 0; o < s.outer; ++o) {
            const double* from = self->grad.data() + (o * total.axis + offset) * total.inner;
            double* to = g.data() + o * s.axis * s.inner;
            for (std::size_t i = 0; i < s.axis * s.inner; ++i) to[i] += from[i];
          }
        });
        offset += s.axis;
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  if (begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const auto s = split_at(x.shape(), axis);
  const auto len = end - begin;
  auto in = x.values();
  std::vector<double> out(shape_size(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(in.data() + (o * s.axis + begin) * s.inner, len * s.inner,
                out.data() + o * len * s.inner);
  }
  auto result = Tensor::make_result(out_shape, std::move(out), "slice", {x});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = x.node();
    result.set_backward([self, src, s, begin, len] {
      accumulate(src, [&](std::vector<double>& g) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          double* to = g.data() + (o * s.axis + begin) * s.inner;
          const double* from = self->grad.data() + o * len * s.inner;
          for (std::size_t i = 0; i < len * s.inner; ++i) to[i] += from[i];
        }
      });
    });
  }
  return result;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, Mode mode) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0,1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = coin(rng) ? 1.0 / keep : 0.0;
  auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  auto result = Tensor::make_result(x.shape(), std::move(out), "dropout", {x});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = x.node();
    result.set_backward([self, src, mask = std::move(mask)] {
      accumulate(src, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * mask[i];
      });
    });
  }
  return result;
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batch_norm: input must be [N,C] or [N,C,H,W], got " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1);
  const auto hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : std::size_t{1};
  for (const auto* t : {&state.gamma, &state.beta, &state.running_mean, &state.running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw ShapeError("batch_norm: per-channel state " + shape_str(t->shape()) +
                       " does not match " + std::to_string(c) + " channels of " +
                       shape_str(x.shape()));
    }
  }
  const double count = static_cast<double>(n * hw);
  auto in = x.values();
  auto gamma = state.gamma.values();
  auto beta = state.beta.values();
  auto at = [hw, c](std::size_t i, std::size_t ch, std::size_t p) { return (i * c + ch) * hw + p; };

  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (mode == Mode::train) {
    auto rm = state.running_mean.mutable_values();
    auto rv = state.running_var.mutable_values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) s += in[at(i, ch, p)];
      const double mu = s / count;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          const double d = in[at(i, ch, p)] - mu;
          ss += d * d;
        }
      const double var = ss / count;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + state.epsilon);
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
      rm[ch] = state.momentum * rm[ch] + (1.0 - state.momentum) * mu;
      rv[ch] = state.momentum * rv[ch] + (1.0 - state.momentum) * unbiased;
    }
  } else {
    auto rm = state.running_mean.values();
    auto rv = state.running_var.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = 1.0 / std::sqrt(rv[ch] + state.epsilon);
    }
  }

  std::vector<double> xhat(in.size()), out(in.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) {
        const auto k = at(i, ch, p);
        xhat[k] = (in[k] - mean[ch]) * inv_std[ch];
        out[k] = gamma[ch] * xhat[k] + beta[ch];
      }
  check_finite(out, "batch_norm");

  auto result = Tensor::make_result(x.shape(), std::move(out), "batch_norm",
                                    {x, state.gamma, state.beta});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* px = x.node();
    auto* pg = state.gamma.node();
    auto* pb = state.beta.node();
    const bool training = mode == Mode::train;
    result.set_backward([self, px, pg, pb, n, c, hw, count, training, at,
                         xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& go = self->grad;
      std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < hw; ++p) {
            const auto k = at(i, ch, p);
            sum_dy[ch] += go[k];
            sum_dy_xhat[ch] += go[k] * xhat[k];
          }
      accumulate(pg, [&](std::vector<double>& g) {
        for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy_xhat[ch];
      });
      accumulate(pb, [&](std::vector<double>& g) {
        for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
      });
      accumulate(px, [&](std::vector<double>& g) {
        const auto& gamma = pg->value;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double scale = gamma[ch] * inv_std[ch];
            for (std::size_t p = 0; p < hw; ++p) {
              const auto k = at(i, ch, p);
              if (training) {
                g[k] += scale / count *
                        (count * go[k] - sum_dy[ch] - xhat[k] * sum_dy_xhat[ch]);
              } else {
                g[k] += scale * go[k];
              }
            }
          }
      });
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& table, std::span<const int> indices) {
  require_rank(table, 2, "gather_rows", "table");
  const auto v = table.dim(0), d = table.dim(1);
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  auto in = table.values();
  std::vector<double> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int idx = indices[r];
    if (idx < 0 || static_cast<std::size_t>(idx) >= v) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " outside table " +
                       shape_str(table.shape()));
    }
    std::copy_n(in.data() + idx * d, d, out.data() + r * d);
  }
  auto result = Tensor::make_result({indices.size(), d}, std::move(out), "gather_rows", {table});
  if (result.requires_grad()) {
    auto* self = result.node();
    auto* src = table.node();
    std::vector<int> idx(indices.begin(), indices.end());
    result.set_backward([self, src, d, idx = std::move(idx)] {
      accumulate(src, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self->grad[r * d + j];
        }
      });
    });
  }
  return result;
}

}  // namespace ops
}  // namespace rnc
