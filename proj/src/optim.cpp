#include "pianolab/optim.hpp"

#include <cmath>

#include "pianolab/errors.hpp"

namespace pianolab::opt {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::SGD: return "SGD";
    case OptimizerKind::Momentum: return "Momentum";
    case OptimizerKind::Nesterov: return "Nesterov";
    case OptimizerKind::Adam: return "Adam";
  }
  return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "SGD") return OptimizerKind::SGD;
  if (s == "Momentum") return OptimizerKind::Momentum;
  if (s == "Nesterov") return OptimizerKind::Nesterov;
  if (s == "Adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer: " + s);
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("adam betas must be in [0,1)");
  if (!(eps_adam > 0)) throw ConfigError("eps_adam must be positive");
}

void Schedule::validate() const {
  if (!(factor > 0) || factor > 1) throw ConfigError("schedule factor must be in (0,1]");
  if (period < 1) throw ConfigError("schedule period must be >= 1");
}

double schedule_lr(double base_lr, int epoch, const Schedule& schedule) {
  schedule.validate();
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  if (schedule.kind == ScheduleKind::constant) return base_lr;
  return base_lr * std::pow(schedule.factor, static_cast<double>(epoch / schedule.period));
}

OptimizerState make_state(const nn::Network& net, const OptimizerConfig& cfg) {
  OptimizerState st;
  const auto tensors = net.param_tensors();
  const bool needs_a = cfg.kind != OptimizerKind::SGD;
  const bool needs_b = cfg.kind == OptimizerKind::Adam;
  for (const nn::Tensor* t : tensors) {
    if (needs_a) st.slot_a.emplace_back(t->shape);
    if (needs_b) st.slot_b.emplace_back(t->shape);
  }
  return st;
}

void step(std::vector<nn::Tensor*>& params, const std::vector<const nn::Tensor*>& grads,
          OptimizerState& state, const OptimizerConfig& cfg) {
  cfg.validate();
  if (params.size() != grads.size())
    throw ShapeError("optimizer step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]))
      throw ShapeError("optimizer step: shape mismatch at tensor " + std::to_string(i));
    for (double g : grads[i]->v)
      if (!std::isfinite(g))
        throw DivergenceError("non-finite gradient at step " + std::to_string(state.step_count),
                              state.step_count);
  }

  const double lr = cfg.learning_rate;
  state.step_count += 1;
  switch (cfg.kind) {
    case OptimizerKind::SGD:
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->v;
        const auto& g = grads[i]->v;
        for (std::size_t q = 0; q < p.size(); ++q) p[q] -= lr * g[q];
      }
      break;
    case OptimizerKind::Momentum:
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->v;
        const auto& g = grads[i]->v;
        auto& v = state.slot_a[i].v;
        for (std::size_t q = 0; q < p.size(); ++q) {
          v[q] = cfg.momentum * v[q] - lr * g[q];
          p[q] += v[q];
        }
      }
      break;
    case OptimizerKind::Nesterov:
      // Lookahead form: the applied update previews the next velocity.
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->v;
        const auto& g = grads[i]->v;
        auto& v = state.slot_a[i].v;
        for (std::size_t q = 0; q < p.size(); ++q) {
          v[q] = cfg.momentum * v[q] - lr * g[q];
          p[q] += cfg.momentum * v[q] - lr * g[q];
        }
      }
      break;
    case OptimizerKind::Adam: {
      const double t = static_cast<double>(state.step_count);
      const double bc1 = 1.0 - std::pow(cfg.beta1, t);
      const double bc2 = 1.0 - std::pow(cfg.beta2, t);
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->v;
        const auto& g = grads[i]->v;
        auto& m = state.slot_a[i].v;
        auto& v = state.slot_b[i].v;
        for (std::size_t q = 0; q < p.size(); ++q) {
          m[q] = cfg.beta1 * m[q] + (1.0 - cfg.beta1) * g[q];
          v[q] = cfg.beta2 * v[q] + (1.0 - cfg.beta2) * g[q] * g[q];
          const double mhat = m[q] / bc1;
          const double vhat = v[q] / bc2;
          p[q] -= lr * mhat / (std::sqrt(vhat) + cfg.eps_adam);
        }
      }
      break;
    }
  }
}

void step(nn::Network& net, const nn::GradientSet& grads, OptimizerState& state,
          const OptimizerConfig& cfg) {
  auto params = net.param_tensors();
  auto gtensors = grads.tensors();
  std::vector<const nn::Tensor*> gview(gtensors.begin(), gtensors.end());
  step(params, gview, state, cfg);
}

}  // namespace pianolab::opt
