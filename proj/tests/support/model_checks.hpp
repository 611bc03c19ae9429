#pragma once

// Finite-difference checks of whole cells and of a small encoder.

#include <string>
#include <vector>

#include "rnc/decoder.hpp"
#include "rnc/encoder.hpp"
#include "support/gradcheck.hpp"

namespace rnc::testing {

inline LstmParams zero_lstm(std::size_t d) {
  auto W = [&] { return Tensor::zeros({d, d}); };
  auto b = [&] { return Tensor::zeros({d}); };
  return {W(), W(), b(), W(), W(), b(), W(), W(), b(), W(), W(), b()};
}

inline GruParams zero_gru(std::size_t d) {
  auto W = [&] { return Tensor::zeros({d, d}); };
  auto b = [&] { return Tensor::zeros({d}); };
  return {W(), W(), b(), W(), W(), b(), W(), W(), b()};
}

inline Tensor readout_dot(const Tensor& y, const Tensor& r) { return ops::sum(ops::hadamard(y, r)); }

inline LstmParams random_lstm(std::size_t in, std::size_t d, std::mt19937_64& rng) {
  auto W = [&] { return random_tensor({in, d}, rng, 0.8); };
  auto U = [&] { return random_tensor({d, d}, rng, 0.8); };
  auto b = [&] { return random_tensor({d}, rng, 0.5); };
  return {W(), U(), b(), W(), U(), b(), W(), U(), b(), W(), U(), b()};
}

inline GruParams random_gru(std::size_t in, std::size_t d, std::mt19937_64& rng) {
  auto W = [&] { return random_tensor({in, d}, rng, 0.8); };
  auto U = [&] { return random_tensor({d, d}, rng, 0.8); };
  auto b = [&] { return random_tensor({d}, rng, 0.5); };
  return {W(), U(), b(), W(), U(), b(), W(), U(), b()};
}

/// One LSTM step; the loss reads both h and m.
inline GradCheckResult check_lstm_step(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto p = random_lstm(3, 4, rng);
  auto x = random_tensor({2, 3}, rng), h = random_tensor({2, 4}, rng), m = random_tensor({2, 4}, rng);
  auto rh = random_tensor({2, 4}, rng, 1.0, false), rm = random_tensor({2, 4}, rng, 1.0, false);
  return check_gradients(
      [&] {
        auto s = lstm_step(p, x, h, m);
        return ops::add(readout_dot(s.h, rh), readout_dot(s.m, rm));
      },
      {{"W_i", p.W_i}, {"U_i", p.U_i}, {"b_i", p.b_i}, {"W_f", p.W_f}, {"U_f", p.U_f},
       {"b_f", p.b_f}, {"W_o", p.W_o}, {"U_o", p.U_o}, {"b_o", p.b_o}, {"W_h", p.W_h},
       {"U_h", p.U_h}, {"b_h", p.b_h}, {"x", x},       {"h_prev", h}, {"m_prev", m}});
}

inline GradCheckResult check_gru_step(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto p = random_gru(3, 4, rng);
  auto x = random_tensor({2, 3}, rng), h = random_tensor({2, 4}, rng);
  auto r = random_tensor({2, 4}, rng, 1.0, false);
  return check_gradients([&] { return readout_dot(gru_step(p, x, h).h, r); },
                         {{"W_z", p.W_z}, {"U_z", p.U_z}, {"b_z", p.b_z}, {"W_r", p.W_r},
                          {"U_r", p.U_r}, {"b_r", p.b_r}, {"W_h", p.W_h}, {"U_h", p.U_h},
                          {"b_h", p.b_h}, {"x", x}, {"h_prev", h}});
}

/// Two-block encoder with batch norm, cross-entropy over three classes. The
/// input is redrawn until no ReLU input sits within `margin` of the kink, so
/// the difference stencil never crosses it.
inline GradCheckResult check_encoder(std::uint64_t seed, double margin = 1e-3) {
  EncoderConfig cfg;
  cfg.image_side = 8;
  cfg.input_side = 8;
  cfg.channels = {3, 4};
  cfg.seed = seed;
  EncoderModel model(cfg, {"a", "b", "c"}, 0);
  std::mt19937_64 rng(seed * 7919 + 3);
  // Zero biases would put whole dead regions exactly on the ReLU kink; biases
  // and input are redrawn until every ReLU input is clear of it.
  std::uniform_real_distribution<double> shift(-0.5, 0.5);
  std::vector<int> targets{0, 2, 1};
  Tensor x;
  double clearance = 0.0;
  for (int attempt = 0; attempt < 2000 && clearance <= margin; ++attempt) {
    for (auto& p : model.params().items()) {
      const bool bias = p.name.ends_with(".b") || p.name.ends_with("bn.beta");
      if (bias) {
        for (auto& v : p.tensor.mutable_values()) v = shift(rng);
      }
    }
    x = random_tensor({3, 1, 8, 8}, rng);
    ReluMarginProbe probe;
    NoGradGuard guard;
    model.logits(model.embed(x, Mode::train));
    clearance = probe.min_abs_input();
  }
  if (clearance <= margin) return {1.0, "no input clear of the ReLU kink"};
  std::vector<std::pair<std::string, Tensor>> wrt;
  for (auto& p : model.params().items()) {
    if (p.trainable) wrt.emplace_back(p.name, p.tensor);
  }
  wrt.emplace_back("x", x);
  return check_gradients(
      [&] { return ops::softmax_cross_entropy(model.logits(model.embed(x, Mode::train)), targets); }, wrt);
}

}  // namespace rnc::testing
