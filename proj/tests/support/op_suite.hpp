#pragma once

// Finite-difference checks for every differentiable op, shared by the unit
// tests and the acceptance binary.

#include <string>
#include <vector>

#include "rnc/ops.hpp"
#include "support/gradcheck.hpp"

namespace rnc::testing {

struct OpCheck {
  std::string op;
  double worst;
};

inline std::vector<OpCheck> check_all_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OpCheck> out;
  auto record = [&](const std::string& op, const GradCheckResult& r) {
    out.push_back({op + ":" + r.where, r.worst});
  };
  // Random linear readout so every output coordinate matters to the loss.
  auto readout = [&](Shape shape) { return random_tensor(std::move(shape), rng, 1.0, false); };
  auto dot = [](const Tensor& y, const Tensor& r) { return ops::sum(ops::hadamard(y, r)); };

  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    auto r = readout({3, 2});
    record("matmul", check_gradients([&] { return dot(ops::matmul(a, b), r); }, {{"a", a}, {"b", b}}));
  }
  {
    auto a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng);
    auto r = readout({2, 5});
    record("add", check_gradients([&] { return dot(ops::add(a, b), r); }, {{"a", a}, {"b", b}}));
    record("hadamard",
           check_gradients([&] { return dot(ops::hadamard(a, b), r); }, {{"a", a}, {"b", b}}));
  }
  {
    auto a = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
    auto r = readout({3, 4});
    record("add_bias", check_gradients([&] { return dot(ops::add_bias(a, bias), r); },
                                       {{"a", a}, {"bias", bias}}));
  }
  {
    auto x = random_tensor({4, 3}, rng, 2.0);
    auto r = readout({4, 3});
    record("sigmoid", check_gradients([&] { return dot(ops::sigmoid(x), r); }, {{"x", x}}));
    record("tanh", check_gradients([&] { return dot(ops::tanh(x), r); }, {{"x", x}}));
    record("affine", check_gradients([&] { return dot(ops::affine(x, -1.5, 0.25), r); }, {{"x", x}}));
    record("mean", check_gradients([&] { return ops::mean(ops::hadamard(x, r)); }, {{"x", x}}));
  }
  {
    // Keep inputs away from the kink so the stencil never straddles it.
    std::uniform_real_distribution<double> mag(0.05, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(12);
    for (auto& e : v) e = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    auto x = Tensor::from({3, 4}, v, true);
    auto r = readout({3, 4});
    record("relu", check_gradients([&] { return dot(ops::relu(x), r); }, {{"x", x}}));
  }
  {
    auto x = random_tensor({2, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng),
         b = random_tensor({3}, rng);
    auto r = readout({2, 3, 3, 3});
    record("conv2d_s2p1", check_gradients([&] { return dot(ops::conv2d(x, w, b, 2, 1), r); },
                                          {{"x", x}, {"w", w}, {"b", b}}));
    auto w1 = random_tensor({4, 2, 1, 1}, rng);
    auto r1 = readout({2, 4, 5, 5});
    record("conv2d_1x1", check_gradients([&] { return dot(ops::conv2d(x, w1, Tensor{}, 1, 0), r1); },
                                         {{"x", x}, {"w", w1}}));
  }
  {
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto r = readout({2, 3, 2, 2});
    record("avg_pool2d", check_gradients([&] { return dot(ops::avg_pool2d(x, 2, 2), r); }, {{"x", x}}));
    auto r2 = readout({2, 3});
    record("global_avg_pool",
           check_gradients([&] { return dot(ops::global_avg_pool(x), r2); }, {{"x", x}}));
  }
  {
    auto logits = random_tensor({4, 5}, rng, 3.0);
    std::vector<int> targets{0, 3, 4, 1};
    std::vector<double> weights{1.0, 0.5, 0.0, 2.0};
    record("softmax_cross_entropy",
           check_gradients([&] { return ops::softmax_cross_entropy(logits, targets, weights); },
                           {{"logits", logits}}));
  }
  {
    auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 2}, rng);
    auto r = readout({2, 5});
    record("concat", check_gradients([&] { return dot(ops::concat({a, b}, 1), r); }, {{"a", a}, {"b", b}}));
    auto r2 = readout({2, 2});
    record("slice", check_gradients([&] { return dot(ops::slice(ops::concat({a, b}, 1), 1, 2, 4), r2); },
                                    {{"a", a}, {"b", b}}));
  }
  {
    auto x = random_tensor({3, 6}, rng);
    auto r = readout({3, 6});
    const auto mask_seed = rng();
    record("dropout", check_gradients(
                          [&] {
                            Rng mask_rng(mask_seed);
                            return dot(ops::dropout(x, 0.4, mask_rng, Mode::train), r);
                          },
                          {{"x", x}}));
  }
  {
    auto x = random_tensor({3, 2, 3, 3}, rng, 2.0);
    auto bn = BatchNormState::make(2);
    auto g = random_tensor({2}, rng);
    auto b = random_tensor({2}, rng);
    bn.gamma = g;
    bn.beta = b;
    auto r = readout({3, 2, 3, 3});
    record("batch_norm_train",
           check_gradients([&] { return dot(ops::batch_norm(x, bn, Mode::train), r); },
                           {{"x", x}, {"gamma", g}, {"beta", b}}));
    record("batch_norm_eval",
           check_gradients([&] { return dot(ops::batch_norm(x, bn, Mode::eval), r); },
                           {{"x", x}, {"gamma", g}, {"beta", b}}));
  }
  {
    auto table = random_tensor({5, 3}, rng);
    std::vector<int> idx{4, 0, 4, 2};
    auto r = readout({4, 3});
    record("gather_rows",
           check_gradients([&] { return dot(ops::gather_rows(table, idx), r); }, {{"table", table}}));
  }
  {
    auto x = random_tensor({2, 6}, rng);
    auto r = readout({3, 4});
    record("reshape", check_gradients([&] { return dot(x.reshape({3, 4}), r); }, {{"x", x}}));
  }
  return out;
}

}  // namespace rnc::testing
