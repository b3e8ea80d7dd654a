#include "flute/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "flute/error.hpp"

namespace flute::optim {

void Schedule::validate() const {
  if (!(initial_lr >= 0.0)) throw ConfigError("schedule: initial_lr must be >= 0");
  if (first_decay_steps == 0) throw ConfigError("schedule: first_decay_steps must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("schedule: alpha must lie in [0,1]");
  if (!(m_mul > 0.0)) throw ConfigError("schedule: m_mul must be positive");
  if (!(t_mul >= 1.0)) throw ConfigError("schedule: t_mul must be >= 1");
}

double cosine_decay_restarts(std::size_t step, const Schedule& s) {
  double start = 0.0;
  double length = static_cast<double>(s.first_decay_steps);
  double peak = s.initial_lr;
  const double t = static_cast<double>(step);
  if (s.t_mul == 1.0) {
    const double round = std::floor(t / length);
    start = round * length;
    peak = s.initial_lr * std::pow(s.m_mul, round);
  } else {
    while (t >= start + length) {
      start += length;
      length *= s.t_mul;
      peak *= s.m_mul;
    }
  }
  const double frac = (t - start) / length;
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  return peak * (s.alpha + (1.0 - s.alpha) * cosine);
}

double cosine_decay(std::size_t step, double initial_lr, std::size_t decay_steps, double alpha) {
  if (decay_steps == 0) return initial_lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(decay_steps));
  return initial_lr * (alpha + (1.0 - alpha) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

void sgd_momentum_step(Tensor& param, std::vector<double>& velocity, double lr, double momentum, double decay,
                       double decay_target) {
  auto& p = param.values();
  if (velocity.size() != p.size()) velocity.assign(p.size(), 0.0);
  const std::vector<double>* g = param.has_grad() ? &param.grad() : nullptr;
  for (std::size_t i = 0; i < p.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (g ? (*g)[i] : 0.0);
    p[i] -= lr * (velocity[i] + decay * (p[i] - decay_target));
  }
}

void adam_update(std::span<Tensor* const> params, AdamState& state, double lr) {
  if (state.first.empty()) {
    for (auto* p : params) {
      state.first.emplace_back(p->numel(), 0.0);
      state.second.emplace_back(p->numel(), 0.0);
    }
  }
  if (state.first.size() != params.size()) throw ShapeError("adam_update: parameter list changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.first[k].size() != params[k]->numel()) throw ShapeError("adam_update: parameter shape changed");
    if (!params[k]->has_grad()) continue;
    for (double g : params[k]->grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_update: non-finite gradient in parameter " + std::to_string(k));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->has_grad()) continue;
    const auto& g = params[k]->grad();
    auto& p = params[k]->values();
    auto& m = state.first[k];
    auto& v = state.second[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

}  // namespace flute::optim
