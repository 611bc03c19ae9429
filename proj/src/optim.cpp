#include "rnc/optim.hpp"

#include <algorithm>
#include <cmath>

#include "rnc/errors.hpp"

namespace rnc {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "constant") return ScheduleKind::constant;
  if (name == "step_down") return ScheduleKind::step_down;
  if (name == "exponential") return ScheduleKind::exponential;
  throw ConfigError("unknown learning-rate schedule '" + name + "'");
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::step_down: return "step_down";
    case ScheduleKind::exponential: return "exponential";
  }
  return "constant";
}

void LrSchedule::validate() const {
  if (!(base_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (kind == ScheduleKind::step_down) {
    if (!(step_fraction > 0.0 && step_fraction <= 1.0))
      throw ConfigError("step_fraction must lie in (0,1]");
    if (!(step_multiplier > 0.0 && step_multiplier < 1.0))
      throw ConfigError("step_multiplier must lie in (0,1)");
  }
  if (kind == ScheduleKind::exponential && !(decay > 0.0 && decay <= 1.0)) {
    throw ConfigError("exponential decay must lie in (0,1]");
  }
}

double LrSchedule::rate(int epoch, int total_epochs) const {
  if (epoch < 0) throw UsageError("negative epoch");
  switch (kind) {
    case ScheduleKind::constant:
      return base_rate;
    case ScheduleKind::step_down: {
      const int step_len =
          std::max(1, static_cast<int>(std::floor(total_epochs * step_fraction + 1e-9)));
      const int max_drops = std::max(0, static_cast<int>(std::lround(1.0 / step_fraction)) - 1);
      const int drops = std::min(epoch / step_len, max_drops);
      return base_rate * std::pow(step_multiplier, drops);
    }
    case ScheduleKind::exponential:
      return base_rate * std::pow(decay, epoch);
  }
  return base_rate;
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "rmsprop";
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (config_.momentum < 0.0 || config_.momentum >= 1.0)
    throw ConfigError("momentum must lie in [0,1)");
  if (config_.kind == OptimizerKind::rmsprop &&
      !(config_.decay_rate > 0.0 && config_.decay_rate < 1.0))
    throw ConfigError("rmsprop decay rate must lie in (0,1)");
}

void Optimizer::step(ParameterSet& params, const LrSchedule& schedule, int epoch,
                     int total_epochs) {
  step_at_rate(params, schedule.rate(epoch, total_epochs));
}

void Optimizer::step_at_rate(ParameterSet& params, double rate) {
  for (auto& p : params.items()) {
    if (p.trainable && !p.tensor.has_grad()) {
      throw UsageError("optimizer step: parameter '" + p.name + "' has no gradient");
    }
  }
  for (auto& p : params.items()) {
    if (!p.trainable) continue;
    const double lr = rate * p.lr_scale;
    auto value = p.tensor.mutable_values();
    auto grad = p.tensor.mutable_grad();
    auto& buf = state_[p.name];
    if (buf.size() != value.size()) buf.assign(value.size(), 0.0);
    if (config_.kind == OptimizerKind::sgd) {
      if (config_.momentum > 0.0) {
        for (std::size_t i = 0; i < value.size(); ++i) {
          buf[i] = config_.momentum * buf[i] + grad[i];
          value[i] -= lr * buf[i];
        }
      } else {
        for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * grad[i];
      }
    } else {
      const double d = config_.decay_rate;
      for (std::size_t i = 0; i < value.size(); ++i) {
        buf[i] = d * buf[i] + (1.0 - d) * grad[i] * grad[i];
        value[i] -= lr * grad[i] / (std::sqrt(buf[i]) + config_.epsilon);
      }
    }
    for (double v : value) {
      if (!std::isfinite(v)) throw NumericError("optimizer step made '" + p.name + "' non-finite");
    }
    std::fill(grad.begin(), grad.end(), 0.0);
  }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params.items()) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params.items()) {
      if (!p.trainable || !p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace rnc
