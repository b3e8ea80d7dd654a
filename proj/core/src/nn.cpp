#include "flute/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flute/error.hpp"
#include "flute/ops.hpp"

namespace flute::nn {

FilmLayerParams FilmLayerParams::identity(std::size_t channels) {
  return FilmLayerParams{Tensor({channels}, 1.0), Tensor({channels}, 0.0)};
}

BatchNormState BatchNormState::fresh(std::size_t channels) {
  BatchNormState s;
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

namespace {

double sorted_sum(std::vector<double>& parts) {
  std::sort(parts.begin(), parts.end());
  double acc = 0.0;
  for (double v : parts) acc += v;
  return acc;
}

}  // namespace

Var film_batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, const NormOptions& opt) {
  if (!x.valid()) throw TapeError("film_batchnorm: unbound input");
  Tape& t = *x.tape();
  t.check_owned(gamma, "film_batchnorm");
  t.check_owned(beta, "film_batchnorm");
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("film_batchnorm: expected NCHW input, got " + shape_string(xs));
  const std::size_t batch = xs[0], channels = xs[1], plane = xs[2] * xs[3];
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("film_batchnorm: FiLM parameters " + shape_string(gamma.shape()) + "/" +
                     shape_string(beta.shape()) + " do not match " + std::to_string(channels) + " channels");
  }
  if (state.channels() != channels || state.running_var.size() != channels) {
    throw ShapeError("film_batchnorm: normalization state has " + std::to_string(state.channels()) +
                     " channels, input has " + std::to_string(channels));
  }
  const bool batch_stats = opt.mode == NormMode::BatchStats;
  const std::size_t stat_rows = (opt.stat_rows == 0) ? batch : opt.stat_rows;
  if (stat_rows > batch) throw ShapeError("film_batchnorm: stat_rows exceeds batch size");
  const std::size_t n = stat_rows * plane;

  const auto& xv = x.value().values();
  const auto& g = gamma.value().values();
  const auto& b = beta.value().values();
  std::vector<double> mean(channels), inv_std(channels);
  std::vector<double> parts(stat_rows);
  for (std::size_t c = 0; c < channels; ++c) {
    if (!batch_stats) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
      continue;
    }
    for (std::size_t r = 0; r < stat_rows; ++r) {
      const double* p = xv.data() + (r * channels + c) * plane;
      double acc = 0.0;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      parts[r] = acc;
    }
    const double mu = sorted_sum(parts) / static_cast<double>(n);
    for (std::size_t r = 0; r < stat_rows; ++r) {
      const double* p = xv.data() + (r * channels + c) * plane;
      double acc = 0.0;
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = p[k] - mu;
        acc += d * d;
      }
      parts[r] = acc;
    }
    const double var = sorted_sum(parts) / static_cast<double>(n);
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + state.eps);
    if (opt.update_running) {
      const double unbiased = n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  }

  Tensor out(xs);
  std::vector<double> xhat(xv.size());
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (r * channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double h = (xv[base + k] - mean[c]) * inv_std[c];
        xhat[base + k] = h;
        out[base + k] = g[c] * h + b[c];
      }
    }
  }

  return t.record(
      std::move(out), {x.id(), gamma.id(), beta.id()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, plane, stat_rows, batch_stats, n](
          Tape& tp, std::size_t self) {
        const auto& gy = tp.adjoint(self);
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t r = 0; r < batch; ++r) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (r * channels + c) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              sum_g[c] += gy[base + k];
              sum_gx[c] += gy[base + k] * xhat[base + k];
            }
          }
        }
        const auto gid = tp.input(self, 1);
        if (tp.needs_grad(gid)) {
          auto& d = tp.adjoint(gid);
          for (std::size_t c = 0; c < channels; ++c) d[c] += sum_gx[c];
        }
        const auto bid = tp.input(self, 2);
        if (tp.needs_grad(bid)) {
          auto& d = tp.adjoint(bid);
          for (std::size_t c = 0; c < channels; ++c) d[c] += sum_g[c];
        }
        const auto xid = tp.input(self, 0);
        if (!tp.needs_grad(xid)) return;
        const auto& gv = tp.value(gid).values();
        auto& dx = tp.adjoint(xid);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < batch; ++r) {
          const bool in_stats = batch_stats && r < stat_rows;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (r * channels + c) * plane;
            const double k0 = gv[c] * inv_std[c];
            if (in_stats) {
              const double mg = sum_g[c] * inv_n;
              const double mgx = sum_gx[c] * inv_n;
              for (std::size_t k = 0; k < plane; ++k) {
                dx[base + k] += k0 * (gy[base + k] - mg - xhat[base + k] * mgx);
              }
            } else {
              for (std::size_t k = 0; k < plane; ++k) dx[base + k] += k0 * gy[base + k];
            }
          }
        }
      });
}

Var residual_block(const Var& x, const ResidualKernels& kernels, std::size_t stride, const FilmVars& film1,
                   const FilmVars& film2, BatchNormState& state1, BatchNormState& state2, const NormOptions& opt) {
  Var h = ops::conv2d(x, kernels.conv1, stride, 1);
  h = film_batchnorm(h, film1.gamma, film1.beta, state1, opt);
  h = ops::relu(h);
  h = ops::conv2d(h, kernels.conv2, 1, 1);
  h = film_batchnorm(h, film2.gamma, film2.beta, state2, opt);
  Var skip = kernels.projection ? ops::conv2d(x, *kernels.projection, stride, 0) : x;
  if (skip.shape() != h.shape()) {
    throw ShapeError("residual_block: skip path " + shape_string(skip.shape()) + " does not match main path " +
                     shape_string(h.shape()) + "; a projection kernel is required");
  }
  return ops::relu(ops::add(h, skip));
}

Var cosine_readout(const Var& features, const Var& weights, const Var& temperature) {
  if (temperature.numel() != 1) throw ShapeError("cosine_readout: temperature must be a scalar");
  if (!(temperature.value()[0] > 0.0)) throw NumericError("cosine_readout: temperature must be positive");
  Var f = ops::l2_normalize(features, 1);
  Var w = ops::l2_normalize(weights, 1);
  return ops::mul_scalar(ops::matmul_nt(f, w), temperature);
}

Tensor he_uniform_kernel(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw,
                         std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_ch * kh * kw);
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor k({out_ch, in_ch, kh, kw});
  for (auto& v : k.values()) v = dist(rng);
  return k;
}

SetEncoderParams SetEncoderParams::init(std::size_t in_channels, std::size_t width, std::size_t depth,
                                        std::mt19937_64& rng) {
  if (depth == 0 || width == 0) throw ConfigError("set encoder needs positive depth and width");
  SetEncoderParams p;
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < depth; ++i) {
    p.kernels.push_back(he_uniform_kernel(width, cin, 3, 3, rng));
    p.norms.push_back(FilmLayerParams::identity(width));
    p.stats.push_back(BatchNormState::fresh(width));
    cin = width;
  }
  return p;
}

std::size_t SetEncoderParams::minimum_input_size() const { return std::size_t{1} << depth(); }

namespace {

template <typename Params>
Var encode_impl(Tape& tape, const Var& batch, Params& params, std::vector<BatchNormState>& stats, bool update) {
  const auto& s = batch.shape();
  if (s.size() != 4) throw ShapeError("set_encode: expected [B,C,H,W], got " + shape_string(s));
  const auto need = params.minimum_input_size();
  if (s[2] < need || s[3] < need) {
    throw ShapeError("set_encode: spatial size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                     " too small for " + std::to_string(params.depth()) + " pooling blocks");
  }
  const NormOptions opt{NormMode::BatchStats, 0, update};
  Var h = batch;
  for (std::size_t i = 0; i < params.depth(); ++i) {
    h = ops::conv2d(h, tape.param(params.kernels[i]), 1, 1);
    h = film_batchnorm(h, tape.param(params.norms[i].gamma), tape.param(params.norms[i].beta), stats[i], opt);
    h = ops::relu(h);
    h = ops::max_pool2x2(h);
  }
  return ops::mean_over_rows(ops::global_avg_pool(h));
}

}  // namespace

Var set_encode(Tape& tape, const Var& batch, SetEncoderParams& params, bool update_running) {
  return encode_impl(tape, batch, params, params.stats, update_running);
}

Var set_encode(Tape& tape, const Var& batch, const SetEncoderParams& params) {
  auto stats = params.stats;
  return encode_impl(tape, batch, params, stats, false);
}

}  // namespace flute::nn
