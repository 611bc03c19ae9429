#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "rnc/checkpoint.hpp"
#include "rnc/errors.hpp"
#include "rnc/ops.hpp"
#include "rnc/optim.hpp"
#include "support/gradcheck.hpp"
#include "support/op_suite.hpp"

using namespace rnc;
using rnc::testing::random_tensor;

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor::from({2, 3}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
  auto t = Tensor::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);
}

TEST_CASE("matmul shape rule and error message") {
  auto a = Tensor::filled({2, 3}, 1.0), b = Tensor::filled({3, 4}, 2.0);
  auto c = ops::matmul(a, b);
  CHECK(c.shape() == Shape{2, 4});
  CHECK(c.at(0) == doctest::Approx(6.0));
  try {
    ops::matmul(a, Tensor::zeros({2, 4}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x4]") != std::string::npos);
  }
}

TEST_CASE("sigmoid of zeros is one half") {
  auto y = ops::sigmoid(Tensor::zeros({3, 3}));
  for (double v : y.values()) CHECK(v == 0.5);
}

TEST_CASE("non-finite output raises a numeric error") {
  auto a = Tensor::from({2}, {INFINITY, 1.0});
  CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2})), NumericError);
}

TEST_CASE("batch norm training normalizes a channel with mean 7 and variance 4") {
  // Values 5 and 9 repeated: mean 7, biased variance 4.
  std::vector<double> v;
  for (int i = 0; i < 8; ++i) v.push_back(i % 2 ? 9.0 : 5.0);
  auto x = Tensor::from({8, 1}, v);
  auto bn = BatchNormState::make(1, 0.9, 0.0);
  auto y = ops::batch_norm(x, bn, Mode::train);
  double m = 0, s = 0;
  for (double e : y.values()) m += e;
  m /= 8;
  for (double e : y.values()) s += (e - m) * (e - m);
  CHECK(std::abs(m) < 1e-12);
  CHECK(s / 8 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("batch norm property: per-channel output mean ~0 and variance ~1") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> scale(0.1, 50.0), shift(-20.0, 20.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 7, c = 1 + trial % 4;
    std::vector<double> v(n * c * 9);
    std::normal_distribution<double> z(0.0, 1.0);
    const double sc = scale(rng), sh = shift(rng);
    for (auto& e : v) e = sc * z(rng) + sh;
    auto x = Tensor::from({n, c, 3, 3}, v);
    auto bn = BatchNormState::make(c, 0.9, 1e-12);
    auto out = ops::batch_norm(x, bn, Mode::train);
    auto y = out.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = 0, s = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < 9; ++p) m += y[(i * c + ch) * 9 + p];
      m /= n * 9.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < 9; ++p) s += std::pow(y[(i * c + ch) * 9 + p] - m, 2);
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(s / (n * 9.0) - 1.0) < 1e-5);
    }
    for (double rv : bn.running_var.values()) CHECK(rv > 0.0);
  }
}

TEST_CASE("batch norm eval mode uses running statistics") {
  auto bn = BatchNormState::make(1);
  bn.running_mean.mutable_values()[0] = 2.0;
  bn.running_var.mutable_values()[0] = 4.0 - bn.epsilon;
  auto y = ops::batch_norm(Tensor::from({2, 1}, {2.0, 6.0}), bn, Mode::eval);
  CHECK(y.at(0) == doctest::Approx(0.0));
  CHECK(y.at(1) == doctest::Approx(2.0));
}

TEST_CASE("backward: sum(W x) gives outer-product gradient") {
  std::mt19937_64 rng(3);
  auto w = random_tensor({3, 4}, rng);
  auto x = random_tensor({4, 2}, rng, 1.0, false);
  auto loss = ops::sum(ops::matmul(w, x));
  backward(loss);
  // d/dW_ij sum_k (W x)_ik = sum_k x_jk
  auto numeric = rnc::testing::numeric_gradient([&] { return ops::sum(ops::matmul(w, x)).item(); }, w);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double expected = x.at(j * 2) + x.at(j * 2 + 1);
      CHECK(w.grad()[i * 4 + j] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(numeric[i * 4 + j] == doctest::Approx(expected).epsilon(1e-8));
    }
  }
}

TEST_CASE("backward: unreachable parameter gets zero gradient") {
  ParameterSet params;
  auto& a = params.add("a", Tensor::filled({2}, 1.0));
  params.add("unused", Tensor::filled({2}, 3.0));
  params.zero_grad();
  backward(ops::sum(ops::hadamard(a.tensor, a.tensor)));
  for (double g : params.get("unused").tensor.grad()) CHECK(g == 0.0);
  CHECK(params.get("a").tensor.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("backward usage errors") {
  auto leaf = Tensor::filled({1}, 2.0, true);
  CHECK_THROWS_AS(backward(leaf), UsageError);
  auto v = ops::sigmoid(Tensor::filled({3}, 1.0, true));
  CHECK_THROWS_AS(backward(v), UsageError);
  auto constant = ops::sum(Tensor::filled({3}, 1.0));
  CHECK_THROWS_AS(backward(constant), UsageError);
}

TEST_CASE("parameter names are unique") {
  ParameterSet params;
  params.add("decoder.layer0.W_z", Tensor::zeros({2, 2}));
  CHECK_THROWS_AS(params.add("decoder.layer0.W_z", Tensor::zeros({2, 2})), UsageError);
}

TEST_CASE("every op matches central finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& c : rnc::testing::check_all_ops(seed)) {
      INFO(c.op << " seed " << seed);
      CHECK(c.worst < 1e-4);
    }
  }
}

TEST_CASE("step-down schedule over 100 epochs") {
  LrSchedule s{1.0, ScheduleKind::step_down, 1.0 / 3.0, 0.5, 1.0};
  for (int e = 0; e <= 32; ++e) CHECK(s.rate(e, 100) == 1.0);
  for (int e = 33; e <= 65; ++e) CHECK(s.rate(e, 100) == 0.5);
  for (int e = 66; e <= 99; ++e) CHECK(s.rate(e, 100) == 0.25);
}

TEST_CASE("exponential schedule closed form") {
  LrSchedule s{1e-4, ScheduleKind::exponential, 1.0 / 3.0, 0.5, 0.99};
  CHECK(s.rate(10, 50) == doctest::Approx(1e-4 * std::pow(0.99, 10)).epsilon(1e-14));
}

TEST_CASE("schedule rate is positive and non-increasing") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 200; ++trial) {
    const auto kind = static_cast<ScheduleKind>(trial % 3);
    LrSchedule s{u(rng) * 2, kind, u(rng), u(rng), u(rng)};
    const int total = 1 + trial;
    double prev = s.rate(0, total);
    for (int e = 1; e < total + 5; ++e) {
      const double r = s.rate(e, total);
      CHECK(r > 0.0);
      CHECK(r <= prev);
      prev = r;
    }
  }
}

TEST_CASE("optimizer: zero gradient leaves parameters unchanged") {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::rmsprop}) {
    ParameterSet params;
    params.add("w", Tensor::from({3}, {0.1, -2.0, 3.5}));
    params.zero_grad();
    Optimizer opt({kind, 0.9, 0.95, 1e-8});
    opt.step(params, LrSchedule{1.0}, 0, 1);
    CHECK(params.get("w").tensor.at(0) == 0.1);
    CHECK(params.get("w").tensor.at(1) == -2.0);
    CHECK(params.get("w").tensor.at(2) == 3.5);
  }
}

TEST_CASE("optimizer: missing gradients are a usage error") {
  ParameterSet params;
  params.add("w", Tensor::zeros({2}));
  Optimizer opt;
  CHECK_THROWS_AS(opt.step(params, LrSchedule{0.1}, 0, 1), UsageError);
}

TEST_CASE("optimizer: momentum SGD update and frozen parameters") {
  ParameterSet params;
  params.add("w", Tensor::from({1}, {1.0}));
  params.add("frozen", Tensor::from({1}, {5.0}), false);
  Optimizer opt({OptimizerKind::sgd, 0.5});
  for (int step = 0; step < 2; ++step) {
    params.get("w").tensor.mutable_grad()[0] = 1.0;
    opt.step_at_rate(params, 0.1);
  }
  // v1 = 1, w = 0.9; v2 = 1.5, w = 0.75
  CHECK(params.get("w").tensor.at(0) == doctest::Approx(0.75));
  CHECK(params.get("frozen").tensor.at(0) == 5.0);
  CHECK(params.get("w").tensor.grad()[0] == 0.0);
}

TEST_CASE("clip_grad_norm rescales to the bound") {
  ParameterSet params;
  params.add("a", Tensor::zeros({2}));
  params.get("a").tensor.mutable_grad()[0] = 3.0;
  params.get("a").tensor.mutable_grad()[1] = 4.0;
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(params.get("a").tensor.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  std::mt19937_64 rng(5);
  ParameterSet params;
  params.add("enc.w", random_tensor({3, 2, 2}, rng));
  params.add("enc.bn.running_var", random_tensor({4}, rng), false);
  params.get("enc.w").tensor.mutable_values()[0] = -0.0;
  params.get("enc.w").tensor.mutable_values()[1] = 1e-310;
  const auto dir = std::filesystem::temp_directory_path() / "rnc_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir / "model", params, {{"kind", "test"}});
  auto loaded = load_checkpoint(dir / "model");
  CHECK(loaded.meta["kind"] == "test");
  REQUIRE(loaded.params.size() == 2);
  CHECK(hash_parameters(loaded.params) == hash_parameters(params));
  CHECK(std::signbit(loaded.params.get("enc.w").tensor.at(0)));
  CHECK_FALSE(loaded.params.get("enc.bn.running_var").trainable);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent"), MissingArtifactError);
  std::filesystem::remove_all(dir);
}
