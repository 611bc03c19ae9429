#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "rnc/tensor.hpp"

namespace rnc {

enum class ScheduleKind { constant, step_down, exponential };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Per-epoch learning rate.
///  - step_down: the rate is multiplied by `step_multiplier` every
///    floor(total_epochs * step_fraction) epochs, with at most
///    round(1/step_fraction) - 1 drops over the run.
///  - exponential: base_rate * decay^epoch.
struct LrSchedule {
  double base_rate = 1.0;
  ScheduleKind kind = ScheduleKind::constant;
  double step_fraction = 1.0 / 3.0;
  double step_multiplier = 0.5;
  double decay = 1.0;

  void validate() const;
  double rate(int epoch, int total_epochs) const;
};

enum class OptimizerKind { sgd, rmsprop };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  /// SGD momentum coefficient; 0 disables momentum.
  double momentum = 0.0;
  /// RMSprop squared-gradient accumulator decay.
  double decay_rate = 0.95;
  double epsilon = 1e-8;
};

/// Momentum SGD or RMSprop over a ParameterSet. Per-parameter state is
/// keyed by parameter name; each parameter's `lr_scale` multiplies the
/// schedule rate and frozen parameters are skipped.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  /// Applies one update at schedule.rate(epoch, total_epochs) and zeroes grads.
  /// Throws UsageError if a trainable parameter has no gradient.
  void step(ParameterSet& params, const LrSchedule& schedule, int epoch, int total_epochs);
  void step_at_rate(ParameterSet& params, double rate);

  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::unordered_map<std::string, std::vector<double>> state_;
};

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

}  // namespace rnc
