#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pianolab/nn.hpp"

namespace pianolab::opt {

enum class OptimizerKind { SGD, Momentum, Nesterov, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SGD;
  double learning_rate = 0.1;
  double momentum = 0.9;       // used by Momentum / Nesterov
  double beta1 = 0.9;          // Adam
  double beta2 = 0.999;        // Adam
  double eps_adam = 1e-8;      // Adam

  void validate() const;
};

enum class ScheduleKind { constant, step_multiply };

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double factor = 0.5;   // from {0.1, 0.25, 0.5, 0.75}
  int period = 10;       // epochs

  void validate() const;
};

/// step_multiply: base * factor^floor(epoch / period); constant: base.
double schedule_lr(double base_lr, int epoch, const Schedule& schedule);

/// Per-parameter auxiliary state: velocity for (Nesterov) momentum,
/// first/second moments for Adam. Shapes mirror the parameter enumeration.
struct OptimizerState {
  std::vector<nn::Tensor> slot_a;  // velocity / first moment
  std::vector<nn::Tensor> slot_b;  // second moment (Adam)
  std::int64_t step_count = 0;
};

OptimizerState make_state(const nn::Network& net, const OptimizerConfig& cfg);

/// One update over the network's parameter enumeration. Throws
/// DivergenceError (carrying the step index) on non-finite gradients.
void step(std::vector<nn::Tensor*>& params, const std::vector<const nn::Tensor*>& grads,
          OptimizerState& state, const OptimizerConfig& cfg);

void step(nn::Network& net, const nn::GradientSet& grads, OptimizerState& state,
          const OptimizerConfig& cfg);

}  // namespace pianolab::opt
