#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flute/tensor.hpp"

namespace flute::optim {

/// Cosine decay with warm restarts. Round r lasts first_decay_steps * t_mul^r
/// steps and peaks at initial_lr * m_mul^r; within a round the rate falls to
/// alpha times the peak.
struct Schedule {
  double initial_lr = 0.01;
  std::size_t first_decay_steps = 1000;
  double alpha = 0.0;
  double m_mul = 1.0;
  double t_mul = 2.0;

  void validate() const;
};

double cosine_decay_restarts(std::size_t step, const Schedule& s);

/// Single cosine decay from initial_lr to alpha * initial_lr over
/// decay_steps, constant afterwards.
double cosine_decay(std::size_t step, double initial_lr, std::size_t decay_steps, double alpha = 0.0);

/// v <- momentum * v + grad;  p <- p - lr * (v + decay * (p - target)).
/// Missing gradients count as zero.
void sgd_momentum_step(Tensor& param, std::vector<double>& velocity, double lr, double momentum, double decay,
                       double decay_target);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
};

/// Bias-corrected Adam step on every tensor's gradient buffer. Moments are
/// created on first use and must keep their shapes afterwards. Throws
/// NumericError on a non-finite gradient before touching any parameter.
void adam_update(std::span<Tensor* const> params, AdamState& state, double lr);

}  // namespace flute::optim
